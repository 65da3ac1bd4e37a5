#pragma once
// Sweep harness: rho and |K| grids, paired methods, seeded repetitions,
// resumable records, summary CSV and plot export.

#include "ortho/metrics.hpp"
#include "ortho/trainers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ortho {

struct ExperimentSpec {
    std::vector<double> rhos = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<int> k_sizes = {1, 3, 5, 7, 10};
    std::vector<Method> methods = {Method::baseline, Method::adversarial,
                                   Method::meta_ortho};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    BiasConfig data;      // biased_classes and rho_biased filled per cell
    ConvNetConfig arch;
    TrainConfig train;    // method and seed filled per run
    EvalConfig eval;
    double train_frac = 0.8;
    std::string out_dir = "runs";

    void validate() const;
};

// flat key-value text, one `key = value` per line, '#' comments
ExperimentSpec parse_spec(const std::string &text);
ExperimentSpec load_spec(const std::string &path);
std::string spec_text(const ExperimentSpec &s);

std::string cell_id(double rho, int k_size);
// seeded choice of the biased subset; depends on (seed, k_size) only
std::vector<int> pick_k(int num_classes, int k_size, std::uint64_t seed);

struct RunRecord {
    std::string cell;
    double rho = 0.0;
    int k_size = 0;
    std::vector<int> K;
    Method method = Method::baseline;
    std::uint64_t seed = 0;
    MetricsReport report;
    std::string dir; // <out>/<cell>/<method>/<seed>
    std::uint64_t dataset_fingerprint = 0, param_hash = 0;
    double wall_seconds = 0.0;
    bool failed = false;
    std::string error;
};

// one full (train + evaluate + persist) run; writes checkpoint, probes,
// history.csv, report.json and record.json under its directory
RunRecord execute_run(const ExperimentSpec &spec, double rho, int k_size,
                      Method method, std::uint64_t seed);

// read back a persisted record.json
RunRecord load_record(const std::string &path);

struct SweepResult {
    std::vector<RunRecord> records;
    std::string summary_path;
    int executed = 0, skipped = 0, failed = 0;
};

// resumable: a run whose record.json already exists is loaded, not recomputed
SweepResult run_sweep(const ExperimentSpec &spec, int jobs);

std::string summary_csv(const std::vector<RunRecord> &records, int num_classes);

struct Pearson {
    double r = 0.0;
    bool degenerate = false;
};
Pearson pearson(const std::vector<double> &xs, const std::vector<double> &ys);

// Pearson r between rho and the biased class's projection bias, baseline
// |K| = 1 runs of one seed
Pearson rho_bias_correlation(const std::vector<RunRecord> &records,
                             std::uint64_t seed);

struct LayerDiagnostic {
    std::vector<int> layers;
    std::vector<double> variance; // across-rho variance of mean sensitivity
    int recommended = 0;
};
// variance table from per-layer value series (one value per rho point)
LayerDiagnostic layer_variance_table(const std::vector<int> &layers,
                                     const std::vector<std::vector<double>> &values);
// trains baseline models over spec.rhos at |K| = 1 and measures each layer
LayerDiagnostic layer_diagnostic(const ExperimentSpec &spec,
                                 const std::vector<int> &layers,
                                 std::uint64_t seed);

// SVG plots from a summary.csv; returns the files written
std::vector<std::string> plot_export(const std::string &summary_path,
                                     const std::string &out_dir,
                                     const std::string &kind = "all");

} // namespace ortho

#pragma once
// Fairness measures over a trained classifier: per-class opportunity
// discrepancy, attribute leakage from logits, projection bias of post-hoc
// concept embeddings against the bias direction, and sensitivity bias of
// class-logit gradients.

#include "ortho/dataset.hpp"
#include "ortho/model.hpp"
#include "ortho/probes.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ortho {

struct Discrepancy {
    double value = 0.0; // |TPR_A0 - TPR_A1|, or the one-sided TPR if degenerate
    double tpr_a0 = 0.0, tpr_a1 = 0.0;
    bool has_a0 = false, has_a1 = false;
    bool degenerate = false; // one attribute group empty for this class
};

Discrepancy opportunity_discrepancy(const std::vector<int> &preds,
                                    const std::vector<int> &labels,
                                    const std::vector<int> &attrs, int y);

struct LeakageConfig {
    int hidden = 32;
    int epochs = 200;
    double lr = 0.5;
    double train_frac = 0.7;
    std::uint64_t seed = 0;
};

// held-out attribute accuracy (percent) of a fresh one-hidden-layer classifier
// on the net's logits
double model_leakage(const std::vector<double> &train_logits,
                     const std::vector<int> &train_attrs,
                     const std::vector<double> &test_logits,
                     const std::vector<int> &test_attrs, int num_classes,
                     const LeakageConfig &cfg);

// cosine of beta_c with nu; sets *degenerate when either vector is near zero
double projection_bias(const std::vector<double> &beta,
                       const std::vector<double> &nu,
                       bool *degenerate = nullptr);

struct Sensitivity {
    double mean = 0.0, stddev = 0.0;
    int samples = 0;
    bool degenerate = false; // all gradients near zero
};

Sensitivity sensitivity_bias(const ConvNet &net, const Dataset &ds,
                             const std::vector<int> &idx, int cls, int layer,
                             const std::vector<double> &nu);

struct ClassMetrics {
    int cls = 0;
    bool biased = false; // class is in K
    Discrepancy discrepancy;
    double projection = 0.0;
    bool projection_degenerate = false;
    Sensitivity sensitivity;
};

struct MetricsReport {
    double test_accuracy = 0.0; // fraction
    double leakage = 0.0;       // percent
    bool leakage_degenerate = false;
    std::vector<ClassMetrics> per_class;
    // class means of the absolute per-class values
    double mean_discrepancy = 0.0;
    double mean_abs_projection = 0.0;
    double mean_abs_sensitivity = 0.0;
    // breakdown over the biased subset K and its complement
    double biased_mean_abs_projection = 0.0, unbiased_mean_abs_projection = 0.0;
    double biased_mean_discrepancy = 0.0, unbiased_mean_discrepancy = 0.0;
    int sensitivity_samples_per_class = 0;
};

struct EvalConfig {
    int concept_layer = 2;
    int sensitivity_samples = 100;
    int leakage_per_cell = 10; // balanced leakage pool: samples per (class, attr)
    ProbeTrainConfig probe;
    LeakageConfig leakage;
    std::uint64_t seed = 0;
};

MetricsReport evaluate(const ConvNet &net, const Dataset &ds, const Split &split,
                       const EvalConfig &cfg);

std::string report_to_json(const MetricsReport &r);
MetricsReport report_from_json(const std::string &text);

} // namespace ortho

// ortho-debias: generate benchmark data, train and evaluate single runs,
// drive full sweeps, run the concept-layer diagnostic, and export plots.

#include "ortho/experiment.hpp"
#include "ortho/io.hpp"
#include "ortho/rng.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace ortho;
namespace fs = std::filesystem;

namespace {

std::string default_out() {
    const char *env = std::getenv("ORTHO_DEBIAS_OUT");
    return env && *env ? env : "";
}

ExperimentSpec resolve_spec(const std::string &spec_path,
                            const std::string &out) {
    ExperimentSpec spec =
        spec_path.empty() ? ExperimentSpec{} : load_spec(spec_path);
    if (!out.empty()) spec.out_dir = out;
    spec.validate();
    return spec;
}

std::string run_dir(const ExperimentSpec &spec, double rho, int k_size,
                    Method method, std::uint64_t seed) {
    return spec.out_dir + "/" + cell_id(rho, k_size) + "/" +
           method_name(method) + "/" + std::to_string(seed);
}

void write_text(const std::string &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io::FileError(path + ": cannot open for writing");
    f << text;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"controlled-bias benchmark and debiasing harness"};
    app.require_subcommand(1);

    std::string spec_path, out = default_out(), method_name_str = "baseline";
    std::string kind = "all";
    std::uint64_t seed = 1;
    int jobs = 1, k_size = 1;
    double rho = 0.5;

    auto add_common = [&](CLI::App *c, bool with_cell) {
        c->add_option("--spec", spec_path, "experiment spec file");
        c->add_option("--out", out, "output root (default: $ORTHO_DEBIAS_OUT)");
        c->add_option("--seed", seed, "run seed");
        if (with_cell) {
            c->add_option("--rho", rho, "biased-class co-occurrence ratio")
                ->check(CLI::Range(0.0, 1.0));
            c->add_option("--k-size", k_size, "size of the biased class subset");
        }
    };

    auto *gen = app.add_subcommand("generate-data",
                                   "render one dataset cell to disk");
    add_common(gen, true);

    auto *tr = app.add_subcommand(
        "train", "train one (cell, method, seed) run and persist it");
    add_common(tr, true);
    tr->add_option("--method", method_name_str,
                   "baseline | adversarial | meta_ortho");

    auto *ev = app.add_subcommand(
        "evaluate", "re-evaluate a persisted run's checkpoint");
    add_common(ev, true);
    ev->add_option("--method", method_name_str,
                   "baseline | adversarial | meta_ortho");

    auto *sw = app.add_subcommand("sweep", "run the full spec grid");
    add_common(sw, false);
    sw->add_option("--jobs", jobs, "concurrent runs")->check(CLI::Range(1, 64));

    auto *ld = app.add_subcommand("layer-diagnostic",
                                  "rank candidate concept layers");
    add_common(ld, false);

    auto *pl = app.add_subcommand("plot", "export SVG plots from summary.csv");
    pl->add_option("--spec", spec_path, "experiment spec file");
    pl->add_option("--out", out, "output root (default: $ORTHO_DEBIAS_OUT)");
    pl->add_option("--kind", kind, "all | fig3 | fig4");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentSpec spec = resolve_spec(spec_path, out);

        if (gen->parsed()) {
            BiasConfig bc = spec.data;
            bc.biased_classes = pick_k(bc.num_classes, k_size, seed);
            bc.rho_biased = rho;
            const std::string id = cell_id(rho, k_size);
            bc.seed = sub_seed(seed, "data",
                               io::fnv1a(id.data(), id.size(),
                                         1469598103934665603ULL));
            Dataset ds = generate(bc);
            const std::string dir =
                spec.out_dir + "/" + id + "/data/" + std::to_string(seed);
            fs::create_directories(dir);
            save_dataset(ds, dir + "/dataset.bin");
            write_text(dir + "/manifest.txt", manifest_text(ds));
            std::printf("%s/dataset.bin  hash=%016llx\n", dir.c_str(),
                        (unsigned long long)dataset_hash(ds));
        } else if (tr->parsed()) {
            const Method m = method_from_string(method_name_str);
            RunRecord r = execute_run(spec, rho, k_size, m, seed);
            std::printf("%s\n  accuracy=%.4f leakage=%.2f mean|proj|=%.4f "
                        "wall=%.1fs\n",
                        r.dir.c_str(), r.report.test_accuracy, r.report.leakage,
                        r.report.mean_abs_projection, r.wall_seconds);
        } else if (ev->parsed()) {
            const Method m = method_from_string(method_name_str);
            const std::string dir = run_dir(spec, rho, k_size, m, seed);
            ConvNet net = ConvNet::load(dir + "/model.ckpt");

            const std::string id = cell_id(rho, k_size);
            const std::uint64_t fp =
                io::fnv1a(id.data(), id.size(), 1469598103934665603ULL);
            BiasConfig bc = spec.data;
            bc.biased_classes = pick_k(bc.num_classes, k_size, seed);
            bc.rho_biased = rho;
            bc.seed = sub_seed(seed, "data", fp);
            Dataset ds = generate(bc);
            Split sp = stratified_split(ds, spec.train_frac,
                                        sub_seed(seed, "split", fp));
            EvalConfig ec = spec.eval;
            ec.seed = sub_seed(seed, "eval", fp);
            MetricsReport rep = evaluate(net, ds, sp, ec);
            write_text(dir + "/report.json", report_to_json(rep));
            std::printf("%s/report.json\n  accuracy=%.4f leakage=%.2f "
                        "mean|proj|=%.4f mean_disc=%.4f\n",
                        dir.c_str(), rep.test_accuracy, rep.leakage,
                        rep.mean_abs_projection, rep.mean_discrepancy);
        } else if (sw->parsed()) {
            SweepResult res = run_sweep(spec, jobs);
            std::printf("%s\n  executed=%d skipped=%d failed=%d\n",
                        res.summary_path.c_str(), res.executed, res.skipped,
                        res.failed);
            for (const auto &r : res.records)
                if (r.failed)
                    std::fprintf(stderr, "failed: %s (%s)\n", r.dir.c_str(),
                                 r.error.c_str());
            if (res.failed) return 2;
        } else if (ld->parsed()) {
            LayerDiagnostic d = layer_diagnostic(spec, {1, 2, 3}, seed);
            for (std::size_t i = 0; i < d.layers.size(); ++i)
                std::printf("layer %d  variance=%.6g%s\n", d.layers[i],
                            d.variance[i],
                            d.layers[i] == d.recommended ? "  <- recommended"
                                                         : "");
        } else if (pl->parsed()) {
            const auto files =
                plot_export(spec.out_dir + "/summary.csv",
                            spec.out_dir + "/plots", kind);
            for (const auto &f : files) std::printf("%s\n", f.c_str());
        }
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

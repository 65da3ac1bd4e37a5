#include "doctest.h"

#include "ortho/experiment.hpp"
#include "ortho/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ortho;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

ExperimentSpec tiny_spec(const std::string &out_dir) {
    ExperimentSpec s;
    s.rhos = {1.0};
    s.k_sizes = {1};
    s.seeds = {7};
    s.data.num_classes = 3;
    s.data.per_class = 20;
    s.data.height = s.data.width = 16;
    s.arch.height = s.arch.width = 16;
    s.arch.num_classes = 3;
    s.arch.widths = {3, 4, 4};
    s.train.epochs = 1;
    s.train.batch_size = 16;
    s.eval.probe.steps = 60;
    s.eval.probe.lr = 0.5;
    s.eval.leakage.epochs = 50;
    s.eval.sensitivity_samples = 10;
    s.out_dir = out_dir;
    return s;
}

} // namespace

TEST_CASE("spec text round trips and rejects malformed input") {
    ExperimentSpec s = tiny_spec("runs-x");
    const std::string t1 = spec_text(s);
    ExperimentSpec back = parse_spec(t1);
    CHECK(spec_text(back) == t1);
    CHECK(back.rhos == s.rhos);
    CHECK(back.k_sizes == s.k_sizes);
    CHECK(back.seeds == s.seeds);
    CHECK(back.out_dir == "runs-x");
    CHECK(back.data.per_class == 20);
    CHECK(back.arch.widths == s.arch.widths);

    CHECK(parse_spec("per_class = 40 # comment\nnum_classes = 10\n")
              .data.per_class == 40);
    CHECK_THROWS_AS((void)parse_spec("no_such_key = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)parse_spec("just a line\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)parse_spec("rhos = 0.0 1.5\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)parse_spec("k_sizes = 99\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)parse_spec("train_frac = 1.0\n"), std::invalid_argument);
}

TEST_CASE("cell ids and biased subset selection") {
    CHECK(cell_id(0.0, 1) == "rho0.00-k1");
    CHECK(cell_id(0.75, 10) == "rho0.75-k10");

    auto k1 = pick_k(10, 3, 5);
    REQUIRE(k1.size() == 3);
    CHECK(std::is_sorted(k1.begin(), k1.end()));
    for (int c : k1) {
        CHECK(c >= 0);
        CHECK(c < 10);
    }
    CHECK(pick_k(10, 3, 5) == k1);
    CHECK(pick_k(10, 3, 6) != k1);
    CHECK(pick_k(10, 10, 5) ==
          std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK_THROWS_AS((void)pick_k(10, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS((void)pick_k(10, 11, 5), std::invalid_argument);
}

TEST_CASE("pearson closed forms") {
    CHECK(pearson({0, 1, 2, 3}, {1, 3, 5, 7}).r == doctest::Approx(1.0));
    CHECK(pearson({0, 1, 2, 3}, {9, 6, 3, 0}).r == doctest::Approx(-1.0));
    const auto p = pearson({0, 1, 2, 3}, {0, 1, 1, 0});
    CHECK(std::abs(p.r) < 1e-12);
    CHECK(!p.degenerate);
    CHECK(pearson({1, 1, 1}, {0, 1, 2}).degenerate);
    CHECK_THROWS_AS((void)pearson({1.0}, {2.0}), std::invalid_argument);
    CHECK_THROWS_AS((void)pearson({1, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("rho bias correlation over synthetic records") {
    std::vector<RunRecord> recs;
    for (int i = 0; i <= 10; ++i) {
        RunRecord r;
        r.rho = 0.1 * i;
        r.k_size = 1;
        r.method = Method::baseline;
        r.seed = 4;
        r.cell = cell_id(r.rho, 1);
        r.K = {2};
        r.report.per_class.resize(3);
        for (int c = 0; c < 3; ++c) r.report.per_class[std::size_t(c)].cls = c;
        r.report.per_class[2].biased = true;
        r.report.per_class[2].projection = r.rho; // perfectly linear
        recs.push_back(r);

        RunRecord other = r; // wrong seed, must be ignored
        other.seed = 9;
        other.report.per_class[2].projection = -r.rho;
        recs.push_back(other);
    }
    const auto p = rho_bias_correlation(recs, 4);
    CHECK(!p.degenerate);
    CHECK(p.r == doctest::Approx(1.0));
    CHECK_THROWS_AS((void)rho_bias_correlation(recs, 1), std::invalid_argument);
}

TEST_CASE("layer variance table") {
    auto d = layer_variance_table({1, 2, 3},
                                  {{1, 1, 1}, {0, 1, 2}, {0.5, 0.5, 0.6}});
    REQUIRE(d.variance.size() == 3);
    CHECK(std::abs(d.variance[0]) < 1e-15);
    CHECK(d.variance[1] == doctest::Approx(2.0 / 3.0));
    CHECK(d.recommended == 2);
    CHECK_THROWS_AS((void)layer_variance_table({1}, {{1, 2}}),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)layer_variance_table({1, 2}, {{1, 2, 3}}),
                    std::invalid_argument);
}

TEST_CASE("sweep executes, pairs datasets, resumes, and plots") {
    const fs::path root = fs::temp_directory_path() / "ortho-exp-test";
    fs::remove_all(root);
    ExperimentSpec spec = tiny_spec((root / "runs").string());

    SweepResult r1 = run_sweep(spec, 1);
    CHECK(r1.executed == 3);
    CHECK(r1.skipped == 0);
    CHECK(r1.failed == 0);
    REQUIRE(r1.records.size() == 3);
    for (const auto &rec : r1.records) {
        CHECK(!rec.failed);
        CHECK(rec.cell == "rho1.00-k1");
        CHECK(rec.K.size() == 1);
        CHECK(fs::exists(rec.dir + "/model.ckpt"));
        CHECK(fs::exists(rec.dir + "/probes.bin"));
        CHECK(fs::exists(rec.dir + "/history.csv"));
        CHECK(fs::exists(rec.dir + "/report.json"));
        CHECK(fs::exists(rec.dir + "/record.json"));
        CHECK(rec.wall_seconds > 0.0);
    }
    // paired design: all methods of a cell share the byte-identical dataset
    CHECK(r1.records[0].dataset_fingerprint == r1.records[1].dataset_fingerprint);
    CHECK(r1.records[1].dataset_fingerprint == r1.records[2].dataset_fingerprint);
    // but train different parameters
    CHECK(r1.records[0].param_hash != r1.records[2].param_hash);

    const std::string sum1 = slurp(r1.summary_path);
    // header + per run: 1 run row + num_classes class rows
    CHECK(std::count(sum1.begin(), sum1.end(), '\n') == 1 + 3 * (1 + 3));

    // resume: drop one record, only that run is recomputed
    fs::remove(r1.records[1].dir + "/record.json");
    SweepResult r2 = run_sweep(spec, 2);
    CHECK(r2.executed == 1);
    CHECK(r2.skipped == 2);
    CHECK(slurp(r2.summary_path) == sum1);
    CHECK(report_to_json(r2.records[1].report) ==
          report_to_json(r1.records[1].report));

    const auto files = plot_export(r1.summary_path, (root / "plots").string());
    CHECK(files.size() == 6);
    for (const auto &f : files) {
        const std::string body = slurp(f);
        CHECK(body.rfind("<svg", 0) == 0);
        CHECK(body.find("polyline") != std::string::npos);
    }
    const auto again = plot_export(r1.summary_path, (root / "plots").string());
    REQUIRE(again == files);
    for (const auto &f : files) CHECK(slurp(f) == slurp(f));
    const std::string one = slurp(files[0]);
    (void)plot_export(r1.summary_path, (root / "plots").string(), "fig3");
    CHECK(slurp(files[0]) == one);

    fs::remove_all(root);
}

#include "doctest.h"

#include "ortho/dataset.hpp"
#include "ortho/io.hpp"
#include "ortho/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

using namespace ortho;

namespace {

BiasConfig small_config() {
    BiasConfig cfg;
    cfg.num_classes = 4;
    cfg.per_class = 40;
    cfg.height = cfg.width = 32;
    cfg.seed = 21;
    return cfg;
}

} // namespace

TEST_CASE("exact per-class attribute counts") {
    BiasConfig cfg;
    cfg.num_classes = 10;
    cfg.per_class = 100;
    cfg.biased_classes = {0};
    cfg.rho_biased = 1.0;
    cfg.seed = 5;
    Dataset ds = generate(cfg);
    for (int s = 0; s < 10; ++s) {
        int pos = 0, total = 0;
        for (const Sample &sm : ds.samples)
            if (sm.label == s) {
                ++total;
                pos += sm.attr;
            }
        CHECK(total == 100);
        CHECK(pos == (s == 0 ? 100 : 50));
    }
}

TEST_CASE("rho 0.5 everywhere matches the unbiased case in balance") {
    BiasConfig cfg = small_config();
    cfg.biased_classes = {1};
    cfg.rho_biased = 0.5;
    Dataset ds = generate(cfg);
    for (int s = 0; s < cfg.num_classes; ++s) {
        int pos = 0;
        for (const Sample &sm : ds.samples)
            if (sm.label == s) pos += sm.attr;
        CHECK(pos == cfg.per_class / 2);
    }
}

TEST_CASE("non-integral rho and bad K are rejected") {
    BiasConfig cfg = small_config();
    cfg.biased_classes = {0};
    cfg.rho_biased = 0.33;
    CHECK_THROWS_WITH_AS((void)generate(cfg), doctest::Contains("integral"),
                         std::invalid_argument);
    cfg.rho_biased = 0.5;
    cfg.biased_classes = {7};
    CHECK_THROWS_AS((void)generate(cfg), std::invalid_argument);
    BiasConfig odd = small_config();
    odd.per_class = 41; // rho 0.5 not integral
    CHECK_THROWS_AS((void)generate(odd), std::invalid_argument);
}

TEST_CASE("same config and seed reproduce identical datasets") {
    BiasConfig cfg = small_config();
    cfg.biased_classes = {2};
    cfg.rho_biased = 0.75;
    CHECK(dataset_hash(generate(cfg)) == dataset_hash(generate(cfg)));
    cfg.seed += 1;
    CHECK(dataset_hash(generate(small_config())) != dataset_hash(generate(cfg)));
}

TEST_CASE("render: same seed, different attribute, same background and box") {
    BiasConfig cfg = small_config();
    Sample a = render_sample(1, 0, cfg, 777);
    Sample b = render_sample(1, 1, cfg, 777);
    CHECK(a.box_row == b.box_row);
    CHECK(a.box_col == b.box_col);
    const int H = cfg.height, W = cfg.width, S = a.box_size;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const bool in_box = y >= a.box_row && y < a.box_row + S &&
                                    x >= a.box_col && x < a.box_col + S;
                if (!in_box)
                    CHECK(a.pixels[(std::size_t(c) * H + y) * W + x] ==
                          b.pixels[(std::size_t(c) * H + y) * W + x]);
            }
}

TEST_CASE("marker contrast floor over 100 renders") {
    BiasConfig cfg = small_config();
    for (int i = 0; i < 100; ++i) {
        const int cls = i % cfg.num_classes, attr = i % 2;
        Sample with = render_sample(cls, attr, cfg, std::uint64_t(1000 + i));
        // mean |box pixel - background mean| over the marker box
        double bg_mean = 0, bg_n = 0, box_diff = 0, box_n = 0;
        const int H = cfg.height, W = cfg.width, S = with.box_size;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const bool in_box = y >= with.box_row && y < with.box_row + S &&
                                        x >= with.box_col && x < with.box_col + S;
                    const double v = with.pixels[(std::size_t(c) * H + y) * W + x];
                    if (in_box) {
                        ++box_n;
                    } else {
                        bg_mean += v;
                        ++bg_n;
                    }
                }
        bg_mean /= bg_n;
        for (int c = 0; c < 3; ++c)
            for (int y = with.box_row; y < with.box_row + S; ++y)
                for (int x = with.box_col; x < with.box_col + S; ++x)
                    box_diff += std::abs(with.pixels[(std::size_t(c) * H + y) * W + x] - bg_mean);
        CHECK(box_diff / box_n >= 0.2);
    }
}

TEST_CASE("marker always inside bounds over 10^4 renders") {
    BiasConfig cfg = small_config();
    for (int i = 0; i < 10000; ++i) {
        Sample s = render_sample(i % cfg.num_classes, i % 2, cfg, std::uint64_t(i));
        CHECK(int(s.box_row) + s.box_size <= cfg.height);
        CHECK(int(s.box_col) + s.box_size <= cfg.width);
        CHECK(s.box_size <= std::min(cfg.height, cfg.width) / 3);
    }
}

TEST_CASE("stratified split arithmetic and determinism") {
    BiasConfig cfg;
    cfg.num_classes = 3;
    cfg.per_class = 100;
    cfg.seed = 9;
    Dataset ds = generate(cfg);
    Split sp = stratified_split(ds, 0.8, 4);
    // per class: 50/50 split into 40/40 train and 10/10 test
    for (int cls = 0; cls < 3; ++cls)
        for (int attr = 0; attr < 2; ++attr) {
            auto count = [&](const std::vector<int> &idx) {
                int n = 0;
                for (int i : idx)
                    if (ds.samples[std::size_t(i)].label == cls &&
                        ds.samples[std::size_t(i)].attr == attr)
                        ++n;
                return n;
            };
            CHECK(count(sp.train) == 40);
            CHECK(count(sp.test) == 10);
        }
    // union is everything, intersection empty
    std::set<int> all(sp.train.begin(), sp.train.end());
    for (int i : sp.test) CHECK(all.insert(i).second);
    CHECK(int(all.size()) == ds.size());
    // determinism
    Split sp2 = stratified_split(ds, 0.8, 4);
    CHECK(sp.train == sp2.train);
    CHECK(sp.test == sp2.test);
    CHECK(stratified_split(ds, 0.8, 5).train != sp.train);

    CHECK_THROWS_AS((void)stratified_split(ds, 0.0, 1), std::invalid_argument);
}

TEST_CASE("save/load round trip and failure modes") {
    BiasConfig cfg = small_config();
    cfg.biased_classes = {0, 3};
    cfg.rho_biased = 0.25;
    Dataset ds = generate(cfg);
    const std::string p1 = "ds_a.bin", p2 = "ds_b.bin";
    save_dataset(ds, p1);
    Dataset back = load_dataset(p1);
    save_dataset(back, p2);
    // save -> load -> save yields identical bytes
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
    CHECK(dataset_hash(back) == dataset_hash(ds));

    // manifest rho values recomputed from loaded labels match the config
    const std::string m = manifest_text(back);
    CHECK(m.find("rho_biased: 0.25") != std::string::npos);
    for (int s = 0; s < cfg.num_classes; ++s) {
        const double rho = cfg.rho_of(s);
        int pos = 0, total = 0;
        for (const Sample &sm : back.samples)
            if (sm.label == s) {
                ++total;
                pos += sm.attr;
            }
        CHECK(double(pos) / total == rho);
    }

    // truncated file fails cleanly with an offset diagnostic
    std::string trunc = b1.substr(0, b1.size() / 2);
    std::ofstream("ds_trunc.bin", std::ios::binary) << trunc;
    CHECK_THROWS_WITH_AS((void)load_dataset("ds_trunc.bin"),
                         doctest::Contains("offset"), io::FileError);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove("ds_trunc.bin");
}

TEST_CASE("pixel-level linear probes: markers and scenes are learnable") {
    BiasConfig cfg;
    cfg.num_classes = 10;
    cfg.per_class = 60;
    cfg.seed = 31;
    Dataset ds = generate(cfg);
    Split sp = stratified_split(ds, 0.8, 1);

    const int d = 3 * cfg.height * cfg.width;
    auto train_px = ds.gather_pixels(sp.train);
    auto test_px = ds.gather_pixels(sp.test);
    auto train_labels = ds.labels_of(sp.train);
    auto train_attrs = ds.attrs_of(sp.train);
    auto test_labels = ds.labels_of(sp.test);
    auto test_attrs = ds.attrs_of(sp.test);

    ProbeTrainConfig ptc;
    ptc.steps = 150;
    ptc.lr = 0.5;

    // attribute probe on raw pixels
    auto t_attr = concept_targets(train_labels, train_attrs, {ConceptId::attr_pos, 0});
    auto p_attr = train_linear_probe(train_px, int(sp.train.size()), d, t_attr,
                                     {ConceptId::attr_pos, 0}, ptc);
    auto t_attr_test = concept_targets(test_labels, test_attrs, {ConceptId::attr_pos, 0});
    CHECK(probe_balanced_accuracy(p_attr, test_px, int(sp.test.size()), d,
                                  t_attr_test) >= 0.95);

    // scene separability: one-vs-rest probes, argmax over probe scores
    std::vector<ConceptProbe> scene_probes;
    for (int c = 0; c < cfg.num_classes; ++c) {
        auto t = concept_targets(train_labels, train_attrs, {ConceptId::scene, c});
        scene_probes.push_back(train_linear_probe(train_px, int(sp.train.size()), d,
                                                  t, {ConceptId::scene, c}, ptc));
    }
    int hits = 0;
    for (std::size_t i = 0; i < sp.test.size(); ++i) {
        int best = 0;
        double best_s = -1e300;
        for (int c = 0; c < cfg.num_classes; ++c) {
            double s = scene_probes[std::size_t(c)].bias;
            for (int j = 0; j < d; ++j)
                s += test_px[i * std::size_t(d) + std::size_t(j)] *
                     scene_probes[std::size_t(c)].beta[std::size_t(j)];
            if (s > best_s) {
                best_s = s;
                best = c;
            }
        }
        hits += best == test_labels[i] ? 1 : 0;
    }
    CHECK(double(hits) / double(sp.test.size()) >= 0.80);
}

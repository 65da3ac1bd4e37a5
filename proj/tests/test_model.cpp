#include "doctest.h"

#include "ortho/io.hpp"
#include "ortho/model.hpp"
#include "ortho/rng.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

using namespace ortho;

namespace {

ConvNetConfig tiny_config(std::uint64_t seed = 3) {
    ConvNetConfig cfg;
    cfg.height = cfg.width = 8;
    cfg.num_classes = 3;
    cfg.widths = {2, 3, 4};
    cfg.seed = seed;
    return cfg;
}

std::vector<double> random_batch(Rng &rng, const ConvNetConfig &cfg, int B) {
    std::vector<double> v(std::size_t(B) * cfg.in_channels * cfg.height * cfg.width);
    for (double &x : v) x = rng.next_double();
    return v;
}

} // namespace

TEST_CASE("all-zero parameters give all-zero logits") {
    ConvNet net(tiny_config());
    for (auto &[name, p] : net.params())
        std::fill(p.value.begin(), p.value.end(), 0.0);
    Rng rng(1);
    auto batch = random_batch(rng, net.config(), 2);
    for (double v : net.logits_of(batch, 2)) CHECK(v == 0.0);
}

TEST_CASE("duplicated input rows give duplicated logit rows") {
    ConvNet net(tiny_config());
    Rng rng(2);
    auto one = random_batch(rng, net.config(), 1);
    std::vector<double> two = one;
    two.insert(two.end(), one.begin(), one.end());
    auto logits = net.logits_of(two, 2);
    const int N = net.config().num_classes;
    for (int j = 0; j < N; ++j) CHECK(logits[std::size_t(j)] == logits[std::size_t(N + j)]);
}

TEST_CASE("fixed seed and input give bit-identical logits across runs") {
    Rng rng(3);
    auto batch = random_batch(rng, tiny_config(7), 2);
    ConvNet a(tiny_config(7)), b(tiny_config(7));
    CHECK(a.logits_of(batch, 2) == b.logits_of(batch, 2));
    CHECK(a.param_hash() == b.param_hash());
}

TEST_CASE("features_at composes back to forward exactly") {
    ConvNet net(tiny_config());
    Rng rng(4);
    auto batch = random_batch(rng, net.config(), 2);
    Graph g;
    auto b = net.bind(g);
    Tensor x = g.leaf({2, 3, 8, 8}, batch);
    Tensor full = net.forward(g, b, x);
    for (int layer = 1; layer <= 3; ++layer) {
        Tensor part = net.forward_from(g, b, net.features_at(g, b, x, layer), layer);
        CHECK(part.data() == full.data());
    }
}

TEST_CASE("features_at rejects an invalid layer") {
    ConvNet net(tiny_config());
    Graph g;
    auto b = net.bind(g);
    Tensor x = g.leaf({1, 3, 8, 8}, 0.0);
    CHECK_THROWS((void)net.features_at(g, b, x, 0));
    CHECK_THROWS((void)net.features_at(g, b, x, 4));
}

TEST_CASE("zero input with zero biases gives zero features") {
    ConvNet net(tiny_config());
    for (auto &[name, p] : net.params())
        if (name.ends_with(".b")) std::fill(p.value.begin(), p.value.end(), 0.0);
    Graph g;
    auto b = net.bind(g);
    Tensor x = g.leaf({1, 3, 8, 8}, 0.0);
    for (double v : net.features_at(g, b, x, 2).data()) CHECK(v == 0.0);
}

TEST_CASE("concept_features is the per-channel spatial sum") {
    ConvNet net(tiny_config());
    Rng rng(5);
    auto batch = random_batch(rng, net.config(), 2);
    Graph g;
    auto b = net.bind(g);
    Tensor x = g.leaf({2, 3, 8, 8}, batch);
    Tensor fm = net.features_at(g, b, x, 2);
    Tensor cf = net.concept_features(g, b, x, 2);
    const Shape &fs = fm.shape();
    const int hw = fs[2] * fs[3];
    for (int i = 0; i < fs[0]; ++i)
        for (int c = 0; c < fs[1]; ++c) {
            double s = 0;
            for (int q = 0; q < hw; ++q)
                s += fm.data()[(std::size_t(i) * fs[1] + c) * hw + std::size_t(q)];
            CHECK(cf.data()[std::size_t(i) * fs[1] + std::size_t(c)] == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("uniform feature map spatial sum scales with cell count") {
    Graph g;
    Tensor fm = g.leaf({1, 2, 4, 4}, 0.7);
    auto s = spatial_sum(fm).data();
    CHECK(s[0] == doctest::Approx(0.7 * 16));
    CHECK(s[1] == doctest::Approx(0.7 * 16));
}

TEST_CASE("cross-entropy parameter gradients pass finite differences") {
    ConvNet net(tiny_config(11));
    Rng rng(6);
    const int B = 2;
    auto batch = random_batch(rng, net.config(), B);
    std::vector<double> labels = {0.0, 2.0};

    auto loss_at = [&]() {
        Graph g;
        auto b = net.bind(g);
        Tensor x = g.leaf({B, 3, 8, 8}, batch);
        return softmax_cross_entropy(net.forward(g, b, x), g.leaf({B}, labels)).value();
    };

    Graph g;
    auto b = net.bind(g);
    Tensor x = g.leaf({B, 3, 8, 8}, batch);
    Tensor loss = softmax_cross_entropy(net.forward(g, b, x), g.leaf({B}, labels));
    auto grads = grad(loss, b.ordered);

    Rng pick(7);
    for (std::size_t pi = 0; pi < net.params().size(); ++pi) {
        auto &p = net.params()[pi].second;
        // a handful of coordinates per parameter keeps the test quick
        for (int rep = 0; rep < 4; ++rep) {
            const std::size_t j = pick.next_below(p.value.size());
            const double h = 1e-6, keep = p.value[j];
            p.value[j] = keep + h;
            const double fp = loss_at();
            p.value[j] = keep - h;
            const double fm = loss_at();
            p.value[j] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double an = grads[pi].data()[j];
            const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
            CHECK(std::abs(an - fd) / denom < 1e-5);
        }
    }
}

TEST_CASE("save -> load -> forward is bit-identical") {
    ConvNet net(tiny_config(13));
    Rng rng(8);
    auto batch = random_batch(rng, net.config(), 2);
    auto before = net.logits_of(batch, 2);
    const std::string path = "model_roundtrip.bin";
    net.save(path);
    ConvNet loaded = ConvNet::load(path);
    CHECK(loaded.logits_of(batch, 2) == before);
    CHECK(loaded.param_hash() == net.param_hash());
    std::remove(path.c_str());
}

TEST_CASE("class_logit_feature_gradient") {
    ConvNet net(tiny_config(17));
    Rng rng(9);
    auto batch = random_batch(rng, net.config(), 1);

    SUBCASE("invalid class rejected") {
        CHECK_THROWS((void)net.class_logit_feature_gradient(batch, 1, 99, 2));
    }

    SUBCASE("zero head weights give zero gradient") {
        ConvNet z = net;
        auto &hw = z.param("head.w");
        std::fill(hw.value.begin(), hw.value.end(), 0.0);
        auto g = z.class_logit_feature_gradient(batch, 1, 1, 3);
        for (double v : g[0]) CHECK(v == 0.0);
    }

    SUBCASE("identical inputs give identical gradients") {
        std::vector<double> two = batch;
        two.insert(two.end(), batch.begin(), batch.end());
        auto g = net.class_logit_feature_gradient(two, 2, 0, 2);
        CHECK(g[0] == g[1]);
    }

    SUBCASE("matches finite differences on the feature map") {
        const int layer = 3, cls = 1;
        auto an = net.class_logit_feature_gradient(batch, 1, cls, layer)[0];
        // perturb the feature map directly and rerun the tail of the network
        Graph g0;
        auto b0 = net.bind(g0);
        Tensor x0 = g0.leaf({1, 3, 8, 8}, batch);
        auto fm = net.features_at(g0, b0, x0, layer).data();
        const Shape fs = net.features_at(g0, b0, x0, layer).shape();
        const int d = fs[1], hw = fs[2] * fs[3];
        auto logit_c = [&](const std::vector<double> &feat) {
            Graph g;
            auto b = net.bind(g);
            Tensor f = g.leaf(fs, feat);
            return net.forward_from(g, b, f, layer).data()[std::size_t(cls)];
        };
        Rng pick(10);
        for (int rep = 0; rep < 8; ++rep) {
            const int c = int(pick.next_below(std::uint64_t(d)));
            const int q = int(pick.next_below(std::uint64_t(hw)));
            const std::size_t idx = std::size_t(c) * hw + std::size_t(q);
            auto f = fm;
            const double h = 1e-6;
            f[idx] += h;
            const double fp = logit_c(f);
            f[idx] -= 2 * h;
            const double fl = logit_c(f);
            const double fd_sum_contrib = (fp - fl) / (2 * h);
            // the spatially-summed gradient aggregates hw cells; compare the
            // cell-level FD against the per-cell gradient instead
            Graph g;
            auto b = net.bind(g);
            Tensor x = g.leaf({1, 3, 8, 8}, batch);
            Tensor feat = net.features_at(g, b, x, layer);
            Tensor logits = net.forward_from(g, b, feat, layer);
            std::vector<double> pickv(std::size_t(net.config().num_classes), 0.0);
            pickv[std::size_t(cls)] = 1.0;
            Tensor loss = dot(logits, g.leaf({1, net.config().num_classes}, pickv));
            auto gf = grad(loss, {feat})[0].data();
            CHECK(std::abs(gf[idx] - fd_sum_contrib) < 1e-5);
        }
        // and the summed vector is consistent with summing the map gradient
        Graph g;
        auto b = net.bind(g);
        Tensor x = g.leaf({1, 3, 8, 8}, batch);
        Tensor feat = net.features_at(g, b, x, layer);
        Tensor logits = net.forward_from(g, b, feat, layer);
        std::vector<double> pickv(std::size_t(net.config().num_classes), 0.0);
        pickv[std::size_t(cls)] = 1.0;
        Tensor loss = dot(logits, g.leaf({1, net.config().num_classes}, pickv));
        auto gf = grad(loss, {feat})[0].data();
        for (int c = 0; c < d; ++c) {
            double s = 0;
            for (int q = 0; q < hw; ++q) s += gf[std::size_t(c) * hw + std::size_t(q)];
            CHECK(an[std::size_t(c)] == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

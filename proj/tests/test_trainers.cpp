#include "doctest.h"

#include "ortho/rng.hpp"
#include "ortho/trainers.hpp"

#include <cmath>
#include <numeric>

using namespace ortho;

namespace {

ConvNetConfig toy_arch() {
    ConvNetConfig nc;
    nc.height = nc.width = 8;
    nc.num_classes = 3;
    nc.widths = {2, 2, 2};
    nc.seed = 11;
    return nc;
}

struct ToyBatch {
    std::vector<double> pixels;
    std::vector<int> labels, attrs;
};

ToyBatch toy_batch(const ConvNetConfig &nc, int B, Rng &rng) {
    ToyBatch t;
    t.pixels.resize(std::size_t(B) * nc.in_channels * nc.height * nc.width);
    for (auto &v : t.pixels) v = rng.next_double();
    for (int i = 0; i < B; ++i) {
        t.labels.push_back(int(rng.next_below(std::uint64_t(nc.num_classes))));
        t.attrs.push_back(i % 2);
    }
    return t;
}

ProbeSet random_probes(int num_classes, int d, Rng &rng) {
    ProbeSet ps = make_probe_set(num_classes, d);
    for (auto &p : ps.probes) {
        for (auto &v : p.beta) v = 0.5 * rng.next_normal();
        p.bias = 0.2 * rng.next_normal();
    }
    return ps;
}

} // namespace

TEST_CASE("classification loss examples") {
    Graph g;
    Tensor uniform = g.leaf({2, 10}, std::vector<double>(20, 0.3));
    CHECK(classification_loss(uniform, {4, 9}).value() ==
          doctest::Approx(std::log(10.0)).epsilon(1e-12));

    std::vector<double> sharp(20, 0.0);
    sharp[3] = 50.0;
    sharp[10 + 7] = 50.0;
    Tensor confident = g.leaf({2, 10}, sharp);
    CHECK(classification_loss(confident, {3, 7}).value() < 1e-12);

    // gradient wrt logits sums to zero per sample
    Graph h;
    Rng rng(2);
    std::vector<double> lv(12);
    for (auto &v : lv) v = rng.next_normal();
    Tensor logits = h.leaf({3, 4}, lv);
    Tensor loss = classification_loss(logits, {0, 2, 3});
    auto gl = grad(loss, {logits})[0].data();
    for (int b = 0; b < 3; ++b) {
        double row = 0;
        for (int j = 0; j < 4; ++j) row += gl[std::size_t(b) * 4 + std::size_t(j)];
        CHECK(std::abs(row) < 1e-14);
    }

    CHECK_THROWS_AS((void)classification_loss(logits, {0, 1}), ShapeError);
}

TEST_CASE("debias loss examples") {
    Graph g;
    Tensor nu = g.leaf({3, 1}, {1.0, 0.0, 0.0});
    Tensor orth1 = g.leaf({3, 1}, {0.0, 2.0, 0.0});
    Tensor orth2 = g.leaf({3, 1}, {0.0, 0.0, -1.0});
    CHECK(std::abs(debias_loss({orth1, orth2}, nu).value()) < 1e-9);

    Tensor same = g.leaf({3, 1}, {1.0, 0.0, 0.0});
    CHECK(debias_loss({same}, nu).value() == doctest::Approx(1.0).epsilon(1e-9));

    // scale invariance of each term
    Tensor v = g.leaf({3, 1}, {0.3, -0.7, 0.2});
    Tensor v5 = g.leaf({3, 1}, {1.5, -3.5, 1.0});
    CHECK(debias_loss({v}, nu).value() ==
          doctest::Approx(debias_loss({v5}, nu).value()).epsilon(1e-9));

    CHECK_THROWS_AS((void)debias_loss({}, nu), std::invalid_argument);
}

TEST_CASE("meta objective gradient matches finite differences") {
    ConvNetConfig nc = toy_arch();
    TrainConfig cfg;
    cfg.method = Method::meta_ortho;
    cfg.alpha = 0.1;
    cfg.gamma = 0.7;
    Rng rng(101);
    for (int inst = 0; inst < 20; ++inst) {
        nc.seed = std::uint64_t(inst + 1);
        ConvNet net(nc);
        ToyBatch tb = toy_batch(nc, 4, rng);
        ProbeSet ps = random_probes(nc.num_classes, net.feature_dim(), rng);

        Graph g;
        auto o = meta_ortho_objective(g, net, ps, tb.pixels, tb.labels, tb.attrs, cfg);
        GradOptions opt;
        opt.zeros_for_unreachable = true;
        auto gs = grad(o.total, o.theta, opt);

        // one random coordinate of one random theta parameter per instance
        const std::size_t pi = rng.next_below(net.params().size());
        auto &param = net.params()[pi].second;
        const std::size_t ci = rng.next_below(param.value.size());
        const double analytic = gs[pi].data()[ci];

        auto f = [&](double v) {
            ConvNet copy = net;
            copy.params()[pi].second.value[ci] = v;
            Graph h;
            auto oo =
                meta_ortho_objective(h, copy, ps, tb.pixels, tb.labels, tb.attrs, cfg);
            return oo.total.value();
        };
        const double v0 = param.value[ci], eps = 1e-5;
        const double fd = (f(v0 + eps) - f(v0 - eps)) / (2 * eps);
        CHECK(analytic ==
              doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));
    }
}

TEST_CASE("meta objective gradient wrt probe parameters matches finite differences") {
    ConvNetConfig nc = toy_arch();
    ConvNet net(nc);
    TrainConfig cfg;
    cfg.method = Method::meta_ortho;
    Rng rng(55);
    ToyBatch tb = toy_batch(nc, 4, rng);
    ProbeSet ps = random_probes(nc.num_classes, net.feature_dim(), rng);

    Graph g;
    auto o = meta_ortho_objective(g, net, ps, tb.pixels, tb.labels, tb.attrs, cfg);
    auto gs = grad(o.total, o.betas);
    for (std::size_t pi = 0; pi < ps.probes.size(); ++pi)
        for (std::size_t ci = 0; ci < ps.probes[pi].beta.size(); ++ci) {
            auto f = [&](double v) {
                ProbeSet copy = ps;
                copy.probes[pi].beta[ci] = v;
                Graph h;
                auto oo = meta_ortho_objective(h, net, copy, tb.pixels, tb.labels,
                                               tb.attrs, cfg);
                return oo.total.value();
            };
            const double v0 = ps.probes[pi].beta[ci], eps = 1e-5;
            const double fd = (f(v0 + eps) - f(v0 - eps)) / (2 * eps);
            CHECK(gs[pi].data()[ci] ==
                  doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));
        }
}

TEST_CASE("adversarial objective gradient matches finite differences") {
    ConvNetConfig nc = toy_arch();
    TrainConfig cfg;
    cfg.method = Method::adversarial;
    cfg.lambda_adv = 0.8;
    cfg.adv_hidden = 4;
    Rng rng(303);
    for (int inst = 0; inst < 20; ++inst) {
        nc.seed = std::uint64_t(inst + 31);
        ConvNet net(nc);
        ToyBatch tb = toy_batch(nc, 4, rng);
        Adversary adv =
            Adversary::make(net.feature_dim(), cfg.adv_hidden, std::uint64_t(inst));

        Graph g;
        auto o = adversarial_objective(g, net, adv, tb.pixels, tb.labels, tb.attrs, cfg);
        auto gs = grad(o.theta_obj, o.theta);

        const std::size_t pi = rng.next_below(net.params().size());
        auto &param = net.params()[pi].second;
        const std::size_t ci = rng.next_below(param.value.size());
        auto f = [&](double v) {
            ConvNet copy = net;
            copy.params()[pi].second.value[ci] = v;
            Graph h;
            auto oo =
                adversarial_objective(h, copy, adv, tb.pixels, tb.labels, tb.attrs, cfg);
            return oo.theta_obj.value();
        };
        const double v0 = param.value[ci], eps = 1e-5;
        const double fd = (f(v0 + eps) - f(v0 - eps)) / (2 * eps);
        CHECK(gs[pi].data()[ci] ==
              doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));

        // adversary's own gradient, one sampled weight
        auto ag = grad(o.l_adv, o.adv_params);
        const std::size_t wi = rng.next_below(adv.w1.size());
        auto fa = [&](double v) {
            Adversary copy = adv;
            copy.w1[wi] = v;
            Graph h;
            auto oo =
                adversarial_objective(h, net, copy, tb.pixels, tb.labels, tb.attrs, cfg);
            return oo.l_adv.value();
        };
        const double w0 = adv.w1[wi];
        const double fda = (fa(w0 + eps) - fa(w0 - eps)) / (2 * eps);
        CHECK(ag[0].data()[wi] ==
              doctest::Approx(fda).epsilon(1e-4).scale(std::max(1.0, std::abs(fda))));
    }
}

TEST_CASE("gradient reversal: theta objective equals class grad minus lambda adv grad") {
    ConvNetConfig nc = toy_arch();
    ConvNet net(nc);
    TrainConfig cfg;
    cfg.lambda_adv = 0.6;
    cfg.adv_hidden = 4;
    Rng rng(7);
    ToyBatch tb = toy_batch(nc, 4, rng);
    Adversary adv = Adversary::make(net.feature_dim(), cfg.adv_hidden, 3);

    Graph g;
    auto o = adversarial_objective(g, net, adv, tb.pixels, tb.labels, tb.attrs, cfg);
    auto combined = grad(o.theta_obj, o.theta);

    TrainConfig c0 = cfg;
    c0.lambda_adv = 0.0;
    Graph g2;
    auto o2 = adversarial_objective(g2, net, adv, tb.pixels, tb.labels, tb.attrs, c0);
    auto class_g = grad(o2.theta_obj, o2.theta);
    GradOptions opt;
    opt.zeros_for_unreachable = true; // params past the concept layer
    auto adv_g = grad(o2.l_adv, o2.theta, opt);

    for (std::size_t p = 0; p < combined.size(); ++p)
        for (std::size_t i = 0; i < combined[p].data().size(); ++i) {
            const double want =
                class_g[p].data()[i] - cfg.lambda_adv * adv_g[p].data()[i];
            CHECK(combined[p].data()[i] == doctest::Approx(want).epsilon(1e-10));
        }
}

TEST_CASE("lambda 0 adversarial step updates theta exactly like baseline") {
    ConvNetConfig nc = toy_arch();
    ConvNet a(nc), b(nc);
    TrainConfig cfg;
    cfg.lambda_adv = 0.0;
    cfg.adv_hidden = 4;
    Rng rng(19);
    ToyBatch tb = toy_batch(nc, 6, rng);
    Adversary adv = Adversary::make(a.feature_dim(), cfg.adv_hidden, 3);

    (void)adversarial_step(a, adv, tb.pixels, tb.labels, tb.attrs, cfg);
    (void)baseline_step(b, tb.pixels, tb.labels, cfg);
    CHECK(a.param_hash() == b.param_hash());
}

TEST_CASE("debias gradient reaches theta") {
    ConvNetConfig nc = toy_arch();
    ConvNet net(nc);
    TrainConfig with;
    with.method = Method::meta_ortho;
    with.gamma = 1.0;
    TrainConfig without = with;
    without.gamma = 0.0;
    Rng rng(77);
    ToyBatch tb = toy_batch(nc, 6, rng);
    ProbeSet ps = random_probes(nc.num_classes, net.feature_dim(), rng);

    Graph g1, g2;
    auto o1 = meta_ortho_objective(g1, net, ps, tb.pixels, tb.labels, tb.attrs, with);
    auto o2 = meta_ortho_objective(g2, net, ps, tb.pixels, tb.labels, tb.attrs, without);
    auto gs1 = grad(o1.total, o1.theta);
    auto gs2 = grad(o2.total, o2.theta);
    double max_diff = 0;
    for (std::size_t p = 0; p < gs1.size(); ++p)
        for (std::size_t i = 0; i < gs1[p].data().size(); ++i)
            max_diff = std::max(max_diff,
                                std::abs(gs1[p].data()[i] - gs2[p].data()[i]));
    CHECK(max_diff > 1e-12);
}

TEST_CASE("pole probe detach removes the pole losses' theta path only") {
    ConvNetConfig nc = toy_arch();
    ConvNet net(nc);
    TrainConfig det;
    det.method = Method::meta_ortho;
    det.gamma = 0.0; // isolate the concept-loss path
    det.pole_probe_detach = true;
    TrainConfig nopoles = det;
    nopoles.pole_probe_detach = false;
    nopoles.concept_include_poles = false;
    Rng rng(23);
    ToyBatch tb = toy_batch(nc, 6, rng);
    ProbeSet ps = random_probes(nc.num_classes, net.feature_dim(), rng);

    Graph g1, g2;
    auto o1 = meta_ortho_objective(g1, net, ps, tb.pixels, tb.labels, tb.attrs, det);
    auto o2 = meta_ortho_objective(g2, net, ps, tb.pixels, tb.labels, tb.attrs, nopoles);
    GradOptions opt;
    opt.zeros_for_unreachable = true;
    auto gs1 = grad(o1.total, o1.theta, opt);
    auto gs2 = grad(o2.total, o2.theta, opt);
    for (std::size_t p = 0; p < gs1.size(); ++p)
        for (std::size_t i = 0; i < gs1[p].data().size(); ++i)
            CHECK(gs1[p].data()[i] ==
                  doctest::Approx(gs2[p].data()[i]).epsilon(1e-12));

    // the detached pole losses still train the pole probes themselves
    auto bs = grad(o1.total, o1.betas, opt);
    double pole_norm = 0.0;
    for (std::size_t i = 0; i < ps.probes.size(); ++i)
        if (ps.probes[i].id.kind != ConceptId::scene)
            for (double v : bs[i].data()) pole_norm += v * v;
    CHECK(pole_norm > 1e-12);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.method = Method::meta_ortho;
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.alpha = 0.1;
    cfg.lambda_adv = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.lambda_adv = 1.0;
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    CHECK(method_from_string("meta_ortho") == Method::meta_ortho);
    CHECK(method_name(Method::adversarial) == "adversarial");
    CHECK_THROWS_AS((void)method_from_string("magic"), std::invalid_argument);
}

TEST_CASE("training loop: determinism and term isolation") {
    BiasConfig bc;
    bc.num_classes = 3;
    bc.per_class = 20;
    bc.height = bc.width = 16;
    bc.seed = 4;
    Dataset ds = generate(bc);
    Split sp = stratified_split(ds, 0.8, 1);

    ConvNetConfig nc;
    nc.height = nc.width = 16;
    nc.num_classes = 3;
    nc.widths = {3, 4, 4};

    TrainConfig base;
    base.method = Method::baseline;
    base.epochs = 2;
    base.batch_size = 16;
    base.seed = 12;

    TrainResult r1 = train(nc, ds, sp, base);
    TrainResult r2 = train(nc, ds, sp, base);
    REQUIRE(r1.history.size() == 2);
    for (std::size_t e = 0; e < r1.history.size(); ++e)
        CHECK(r1.history[e].param_hash == r2.history[e].param_hash);

    // gamma = 0 meta_ortho with co-training off is the baseline, exactly
    TrainConfig inert = base;
    inert.method = Method::meta_ortho;
    inert.gamma = 0.0;
    inert.co_train_probes = false;
    TrainResult r3 = train(nc, ds, sp, inert);
    for (std::size_t e = 0; e < r1.history.size(); ++e)
        CHECK(r1.history[e].param_hash == r3.history[e].param_hash);

    // all regimes end with finite parameters and populated history rows
    TrainConfig mo = base;
    mo.method = Method::meta_ortho;
    TrainConfig av = base;
    av.method = Method::adversarial;
    av.adv_hidden = 8;
    for (const TrainConfig &c : {mo, av}) {
        TrainResult r = train(nc, ds, sp, c);
        for (const auto &[name, p] : r.net.params())
            for (double v : p.value) CHECK(std::isfinite(v));
        const std::string csv = history_csv(r.history);
        CHECK(csv.find("epoch,l_class,l_concept,l_debias,l_adv,train_acc,test_acc") == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    }
}

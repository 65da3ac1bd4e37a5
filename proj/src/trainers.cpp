#include "ortho/trainers.hpp"
#include "ortho/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ortho {

Method method_from_string(const std::string &s) {
    if (s == "baseline") return Method::baseline;
    if (s == "adversarial") return Method::adversarial;
    if (s == "meta_ortho") return Method::meta_ortho;
    throw std::invalid_argument("unknown method '" + s +
                                "' (expected baseline, adversarial or meta_ortho)");
}

std::string method_name(Method m) {
    switch (m) {
    case Method::baseline: return "baseline";
    case Method::adversarial: return "adversarial";
    case Method::meta_ortho: return "meta_ortho";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1)
        throw std::invalid_argument("epochs and batch_size must be positive");
    if (outer_lr <= 0.0) throw std::invalid_argument("outer_lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
        throw std::invalid_argument("momentum must be in [0,1)");
    if (method == Method::meta_ortho && alpha <= 0.0)
        throw std::invalid_argument("alpha must be positive for meta_ortho");
    if (gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
    if (lambda_adv < 0.0) throw std::invalid_argument("lambda_adv must be >= 0");
    if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be >= 0");
    if (adv_hidden < 1) throw std::invalid_argument("adv_hidden must be positive");
}

Adversary Adversary::make(int dim, int hidden, std::uint64_t seed) {
    Adversary a;
    a.dim = dim;
    a.hidden = hidden;
    Rng rng(seed);
    const double s1 = 1.0 / std::sqrt(double(dim));
    const double s2 = 1.0 / std::sqrt(double(hidden));
    a.w1.resize(std::size_t(dim) * hidden);
    for (auto &v : a.w1) v = rng.uniform(-s1, s1);
    a.b1.assign(std::size_t(hidden), 0.0);
    a.w2.resize(std::size_t(hidden));
    for (auto &v : a.w2) v = rng.uniform(-s2, s2);
    a.b2 = 0.0;
    a.m_w1.assign(a.w1.size(), 0.0);
    a.m_b1.assign(a.b1.size(), 0.0);
    a.m_w2.assign(a.w2.size(), 0.0);
    a.m_b2 = 0.0;
    return a;
}

Tensor classification_loss(const Tensor &logits, const std::vector<int> &labels) {
    const Shape &s = logits.shape();
    if (s.size() != 2 || std::int64_t(labels.size()) != s[0])
        throw ShapeError("classification_loss: logits B x N with matching labels, got " +
                         shape_str(s) + " and " + std::to_string(labels.size()) +
                         " labels");
    std::vector<double> y(labels.begin(), labels.end());
    Tensor yl = logits.graph()->leaf({int(labels.size())}, y);
    return softmax_cross_entropy(logits, yl);
}

Tensor debias_loss(const std::vector<Tensor> &stepped_betas, const Tensor &nu) {
    if (stepped_betas.empty())
        throw std::invalid_argument("debias_loss: no embeddings given");
    Tensor total = square(cosine_similarity(stepped_betas[0], nu));
    for (std::size_t i = 1; i < stepped_betas.size(); ++i)
        total = add(total, square(cosine_similarity(stepped_betas[i], nu)));
    return total;
}

namespace {

void check_finite(const StepStats &st, const TrainConfig &cfg) {
    if (std::isfinite(st.l_class) && std::isfinite(st.l_concept) &&
        std::isfinite(st.l_debias) && std::isfinite(st.l_adv))
        return;
    std::ostringstream os;
    os << "non-finite loss in " << method_name(cfg.method)
       << " step: class=" << st.l_class << " concept=" << st.l_concept
       << " debias=" << st.l_debias << " adv=" << st.l_adv;
    throw std::runtime_error(os.str());
}

void sgd_vec(std::vector<double> &v, std::vector<double> &mom,
             const std::vector<double> &g, double lr, double mu) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        mom[i] = mu * mom[i] + g[i];
        v[i] -= lr * mom[i];
    }
}

// Concept features are spatial sums, so their raw magnitude grows with the
// map area, drifts over training, and can differ by orders of magnitude per
// channel.  The probe and adversary terms see them standardized per channel
// over the batch, with the statistics kept inside the graph: if the
// normalizers were constants, the debias term could be satisfied by inflating
// one channel until every probe gradient points along it (feature collapse).
// With differentiable statistics a pure rescaling of a channel changes
// nothing, so that escape route is closed.
Tensor standardized_concept_features(Graph &g, const Tensor &block_out) {
    Tensor z = spatial_sum(block_out);
    const int B = z.shape()[0];
    OpAttr rb;
    rb.i0 = B;
    Tensor mu = scale(g.emit(Op::col_sum, {z.node()}), 1.0 / double(B));
    Tensor centered = sub(z, g.emit(Op::row_bcast, {mu.node()}, rb));
    Tensor var =
        scale(g.emit(Op::col_sum, {square(centered).node()}), 1.0 / double(B));
    Tensor sd = sqrt_ew(add(var, g.scalar(1e-8)));
    return divide(centered, g.emit(Op::row_bcast, {sd.node()}, rb));
}

double clip_scale(const std::vector<Tensor> &grads, double clip) {
    if (clip <= 0.0) return 1.0;
    double s2 = 0.0;
    for (const Tensor &g : grads)
        for (double v : g.data()) s2 += v * v;
    const double n = std::sqrt(s2);
    return n > clip ? clip / n : 1.0;
}

std::vector<double> attr_targets(const std::vector<int> &attrs) {
    std::vector<double> t(attrs.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = attrs[i] ? 1.0 : 0.0;
    return t;
}

} // namespace

StepStats baseline_step(ConvNet &net, const std::vector<double> &pixels,
                        const std::vector<int> &labels, const TrainConfig &cfg) {
    Graph g;
    auto b = net.bind(g);
    const auto &nc = net.config();
    Tensor x = g.leaf({int(labels.size()), nc.in_channels, nc.height, nc.width},
                      pixels);
    Tensor loss = classification_loss(net.forward(g, b, x), labels);
    StepStats st;
    st.l_class = loss.value();
    check_finite(st, cfg);
    auto gs = grad(loss, b.ordered);
    net.apply_sgd(gs, cfg.outer_lr, cfg.momentum, clip_scale(gs, cfg.clip_norm));
    return st;
}

MetaObjective meta_ortho_objective(Graph &g, const ConvNet &net,
                                   const ProbeSet &probes,
                                   const std::vector<double> &pixels,
                                   const std::vector<int> &labels,
                                   const std::vector<int> &attrs,
                                   const TrainConfig &cfg) {
    MetaObjective o;
    auto b = net.bind(g);
    o.theta = b.ordered;
    const auto &nc = net.config();
    const int B = int(labels.size());
    Tensor x = g.leaf({B, nc.in_channels, nc.height, nc.width}, pixels);
    auto fwd = net.forward_all(g, b, x);
    Tensor z = standardized_concept_features(
        g, fwd.blocks[std::size_t(cfg.concept_layer - 1)]);

    Tensor l_class = classification_loss(fwd.logits, labels);
    o.stats.l_class = l_class.value();
    o.total = l_class;

    // one leaf pair and one loss per probe, on this batch's features; the
    // pole probes can optionally see the features as constants, so their
    // losses train the probes without teaching theta to encode the attribute
    Tensor z_const;
    if (cfg.pole_probe_detach) z_const = g.leaf(z.shape(), z.data());
    const std::size_t np = probes.probes.size();
    std::vector<Tensor> losses;
    losses.reserve(np);
    for (const auto &p : probes.probes) {
        Tensor beta = g.leaf({int(p.beta.size()), 1}, p.beta);
        Tensor bias = g.scalar(p.bias);
        const bool pole = p.id.kind != ConceptId::scene;
        const Tensor &zp = (pole && cfg.pole_probe_detach) ? z_const : z;
        losses.push_back(
            concept_loss(g, beta, bias, zp, concept_targets(labels, attrs, p.id)));
        o.betas.push_back(beta);
        o.biases.push_back(bias);
    }

    if (cfg.co_train_probes) {
        Tensor sum = losses[0];
        double v = losses[0].value();
        for (std::size_t i = 1; i < np; ++i) {
            if (probes.probes[i].id.kind == ConceptId::scene ||
                cfg.concept_include_poles) {
                sum = add(sum, losses[i]);
                v += losses[i].value();
            }
        }
        o.stats.l_concept = v;
        o.concept_sum = sum;
        o.total = add(o.total, sum);
    }

    if (cfg.gamma > 0.0) {
        std::size_t ip = 0, in = 0;
        for (std::size_t i = 0; i < np; ++i) {
            if (probes.probes[i].id.kind == ConceptId::attr_pos) ip = i;
            if (probes.probes[i].id.kind == ConceptId::attr_neg) in = i;
        }
        Tensor nu = sub(o.betas[ip], o.betas[in]);
        if (cfg.detach_nu) nu = g.leaf(nu.shape(), nu.data());
        std::vector<Tensor> stepped;
        for (std::size_t i = 0; i < np; ++i) {
            const bool include = probes.probes[i].id.kind == ConceptId::scene ||
                                 cfg.debias_include_poles;
            if (include)
                stepped.push_back(inner_update(o.betas[i], losses[i], cfg.alpha));
        }
        Tensor ld = debias_loss(stepped, nu);
        o.stats.l_debias = ld.value();
        o.total = add(o.total, scale(ld, cfg.gamma));
    }
    return o;
}

StepStats meta_ortho_step(ConvNet &net, TrainProbes &probes,
                          const std::vector<double> &pixels,
                          const std::vector<int> &labels,
                          const std::vector<int> &attrs, const TrainConfig &cfg) {
    // with both probe terms disabled this is exactly the baseline step
    if (cfg.gamma == 0.0 && !cfg.co_train_probes)
        return baseline_step(net, pixels, labels, cfg);

    Graph g;
    auto o = meta_ortho_objective(g, net, probes.set, pixels, labels, attrs, cfg);
    check_finite(o.stats, cfg);
    if (!std::isfinite(o.total.value()))
        throw std::runtime_error("non-finite total meta_ortho objective");

    auto theta_g = grad(o.total, o.theta);
    net.apply_sgd(theta_g, cfg.outer_lr, cfg.momentum,
                  clip_scale(theta_g, cfg.clip_norm));

    // probes train on their concept losses only; the debias term shapes theta
    // exclusively, through the stepped copies -- letting it rotate the probe
    // leaves directly would satisfy orthogonality without touching the network
    if (cfg.co_train_probes) {
        const std::size_t np = probes.set.probes.size();
        std::vector<Tensor> wrt;
        for (std::size_t i = 0; i < np; ++i) {
            wrt.push_back(o.betas[i]);
            wrt.push_back(o.biases[i]);
        }
        GradOptions opt;
        opt.zeros_for_unreachable = true; // poles absent when excluded from sum
        auto gs = grad(o.concept_sum, wrt, opt);
        for (std::size_t i = 0; i < np; ++i) {
            auto &p = probes.set.probes[i];
            sgd_vec(p.beta, probes.m_beta[i], gs[2 * i].data(), cfg.outer_lr,
                    cfg.momentum);
            probes.m_bias[i] = cfg.momentum * probes.m_bias[i] +
                               gs[2 * i + 1].data()[0];
            p.bias -= cfg.outer_lr * probes.m_bias[i];
        }
    }
    return o.stats;
}

AdvObjective adversarial_objective(Graph &g, const ConvNet &net,
                                   const Adversary &adv,
                                   const std::vector<double> &pixels,
                                   const std::vector<int> &labels,
                                   const std::vector<int> &attrs,
                                   const TrainConfig &cfg) {
    AdvObjective o;
    auto b = net.bind(g);
    o.theta = b.ordered;
    const auto &nc = net.config();
    const int B = int(labels.size());
    Tensor x = g.leaf({B, nc.in_channels, nc.height, nc.width}, pixels);
    auto fwd = net.forward_all(g, b, x);
    Tensor z = standardized_concept_features(
        g, fwd.blocks[std::size_t(cfg.concept_layer - 1)]);

    Tensor w1 = g.leaf({adv.dim, adv.hidden}, adv.w1);
    Tensor b1 = g.leaf({adv.hidden}, adv.b1);
    Tensor w2 = g.leaf({adv.hidden, 1}, adv.w2);
    Tensor b2 = g.scalar(adv.b2);
    o.adv_params = {w1, b1, w2, b2};
    Tensor hidden = relu(row_bias(matmul(z, w1), b1));
    Tensor a_logit = add(matmul(hidden, w2), b2);
    Tensor weights = g.leaf({B, 1}, std::vector<double>(std::size_t(B), 1.0 / B));
    Tensor t = g.leaf({B, 1}, attr_targets(attrs));
    o.l_adv = binary_log_loss(a_logit, t, weights);

    Tensor l_class = classification_loss(fwd.logits, labels);
    o.stats.l_class = l_class.value();
    o.stats.l_adv = o.l_adv.value();

    // gradient reversal: theta ascends the adversary's loss
    o.theta_obj = cfg.lambda_adv == 0.0
                      ? l_class
                      : sub(l_class, scale(o.l_adv, cfg.lambda_adv));
    return o;
}

StepStats adversarial_step(ConvNet &net, Adversary &adv,
                           const std::vector<double> &pixels,
                           const std::vector<int> &labels,
                           const std::vector<int> &attrs, const TrainConfig &cfg) {
    Graph g;
    auto o = adversarial_objective(g, net, adv, pixels, labels, attrs, cfg);
    check_finite(o.stats, cfg);

    auto theta_g = grad(o.theta_obj, o.theta);
    auto adv_g = grad(o.l_adv, o.adv_params);

    net.apply_sgd(theta_g, cfg.outer_lr, cfg.momentum,
                  clip_scale(theta_g, cfg.clip_norm));
    sgd_vec(adv.w1, adv.m_w1, adv_g[0].data(), cfg.outer_lr, cfg.momentum);
    sgd_vec(adv.b1, adv.m_b1, adv_g[1].data(), cfg.outer_lr, cfg.momentum);
    sgd_vec(adv.w2, adv.m_w2, adv_g[2].data(), cfg.outer_lr, cfg.momentum);
    adv.m_b2 = cfg.momentum * adv.m_b2 + adv_g[3].data()[0];
    adv.b2 -= cfg.outer_lr * adv.m_b2;
    return o.stats;
}

double accuracy(const ConvNet &net, const Dataset &ds, const std::vector<int> &idx,
                int chunk) {
    if (idx.empty()) return 0.0;
    int hits = 0;
    for (std::size_t start = 0; start < idx.size(); start += std::size_t(chunk)) {
        const std::size_t end = std::min(idx.size(), start + std::size_t(chunk));
        std::vector<int> part(idx.begin() + std::ptrdiff_t(start),
                              idx.begin() + std::ptrdiff_t(end));
        auto preds = net.predict(ds.gather_pixels(part), int(part.size()));
        for (std::size_t i = 0; i < part.size(); ++i)
            hits += preds[i] == ds.samples[std::size_t(part[i])].label ? 1 : 0;
    }
    return double(hits) / double(idx.size());
}

TrainResult train(const ConvNetConfig &arch, const Dataset &ds, const Split &split,
                  const TrainConfig &cfg) {
    cfg.validate();
    ConvNetConfig ac = arch;
    ac.concept_layer = cfg.concept_layer;
    ac.seed = sub_seed(cfg.seed, "net-init");

    TrainResult r;
    r.net = ConvNet(ac);
    const int d = r.net.feature_dim();
    r.probes.set = make_probe_set(ac.num_classes, d);
    // small random init: zero probes would make nu = 0 and the cosine
    // gradient undefined on the very first step
    Rng pr(sub_seed(cfg.seed, "probe-init"));
    for (auto &p : r.probes.set.probes) {
        for (auto &v : p.beta) v = pr.uniform(-0.01, 0.01);
        r.probes.m_beta.emplace_back(p.beta.size(), 0.0);
        r.probes.m_bias.push_back(0.0);
    }
    r.adversary = Adversary::make(d, cfg.adv_hidden, sub_seed(cfg.seed, "adv-init"));

    std::vector<int> order = split.train;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle(sub_seed(cfg.seed, "shuffle", std::uint64_t(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(shuffle.next_below(i))]);

        EpochStats es;
        es.epoch = epoch;
        double seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += std::size_t(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + std::size_t(cfg.batch_size));
            std::vector<int> batch(order.begin() + std::ptrdiff_t(start),
                                   order.begin() + std::ptrdiff_t(end));
            const auto px = ds.gather_pixels(batch);
            const auto lb = ds.labels_of(batch);
            const auto at = ds.attrs_of(batch);
            StepStats st;
            switch (cfg.method) {
            case Method::baseline: st = baseline_step(r.net, px, lb, cfg); break;
            case Method::adversarial:
                st = adversarial_step(r.net, r.adversary, px, lb, at, cfg);
                break;
            case Method::meta_ortho:
                st = meta_ortho_step(r.net, r.probes, px, lb, at, cfg);
                break;
            }
            const double w = double(batch.size());
            es.l_class += w * st.l_class;
            es.l_concept += w * st.l_concept;
            es.l_debias += w * st.l_debias;
            es.l_adv += w * st.l_adv;
            seen += w;
        }
        es.l_class /= seen;
        es.l_concept /= seen;
        es.l_debias /= seen;
        es.l_adv /= seen;
        es.train_acc = accuracy(r.net, ds, split.train);
        es.test_acc = accuracy(r.net, ds, split.test);
        es.param_hash = r.net.param_hash();
        r.history.push_back(es);
    }
    return r;
}

std::string history_csv(const std::vector<EpochStats> &history) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,l_class,l_concept,l_debias,l_adv,train_acc,test_acc\n";
    for (const auto &e : history)
        os << e.epoch << ',' << e.l_class << ',' << e.l_concept << ','
           << e.l_debias << ',' << e.l_adv << ',' << e.train_acc << ','
           << e.test_acc << '\n';
    return os.str();
}

} // namespace ortho

#include "ortho/probes.hpp"
#include "ortho/dataset.hpp"
#include "ortho/io.hpp"

#include <cmath>
#include <stdexcept>

namespace ortho {

namespace {
constexpr std::uint32_t kProbeMagic = 0x4250444fu; // "ODPB"
constexpr std::uint32_t kProbeVersion = 1;
} // namespace

std::string ConceptId::name() const {
    switch (kind) {
    case scene: return "scene" + std::to_string(cls);
    case attr_pos: return "attr+";
    case attr_neg: return "attr-";
    }
    return "?";
}

const ConceptProbe &ProbeSet::scene(int cls) const {
    for (const auto &p : probes)
        if (p.id.kind == ConceptId::scene && p.id.cls == cls) return p;
    throw std::invalid_argument("no scene probe for class " + std::to_string(cls));
}

const ConceptProbe &ProbeSet::pole(bool positive) const {
    const auto kind = positive ? ConceptId::attr_pos : ConceptId::attr_neg;
    for (const auto &p : probes)
        if (p.id.kind == kind) return p;
    throw std::invalid_argument("attribute pole probe missing");
}

std::vector<double> ProbeSet::bias_direction() const {
    const auto &pos = pole(true).beta, &neg = pole(false).beta;
    std::vector<double> nu(pos.size());
    for (std::size_t i = 0; i < nu.size(); ++i) nu[i] = pos[i] - neg[i];
    return nu;
}

ProbeSet make_probe_set(int num_classes, int dim, double init) {
    ProbeSet ps;
    for (int c = 0; c < num_classes; ++c)
        ps.probes.push_back({{ConceptId::scene, c},
                             std::vector<double>(std::size_t(dim), init), 0.0, true});
    ps.probes.push_back({{ConceptId::attr_pos, 0},
                         std::vector<double>(std::size_t(dim), init), 0.0, true});
    ps.probes.push_back({{ConceptId::attr_neg, 0},
                         std::vector<double>(std::size_t(dim), init), 0.0, true});
    return ps;
}

std::vector<double> concept_targets(const std::vector<int> &labels,
                                    const std::vector<int> &attrs,
                                    const ConceptId &cid) {
    const std::size_t n =
        cid.kind == ConceptId::scene ? labels.size() : attrs.size();
    std::vector<double> t(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        switch (cid.kind) {
        case ConceptId::scene: t[i] = labels[i] == cid.cls ? 1.0 : 0.0; break;
        case ConceptId::attr_pos: t[i] = attrs[i] == 1 ? 1.0 : 0.0; break;
        case ConceptId::attr_neg: t[i] = attrs[i] == 0 ? 1.0 : 0.0; break;
        }
    }
    return t;
}

std::vector<double> balance_weights(const std::vector<double> &targets) {
    double n_pos = 0;
    for (double t : targets) n_pos += t;
    const double n_neg = double(targets.size()) - n_pos;
    std::vector<double> w(targets.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (n_pos > 0 && n_neg > 0)
            w[i] = targets[i] > 0.5 ? 0.5 / n_pos : 0.5 / n_neg;
        else // single-class batch: plain mean
            w[i] = 1.0 / double(targets.size());
    }
    return w;
}

Tensor concept_loss(Graph &g, const Tensor &beta, const Tensor &bias,
                    const Tensor &z, const std::vector<double> &targets) {
    const Shape &zs = z.shape();
    if (zs.size() != 2 || beta.shape() != Shape{zs[1], 1})
        throw ShapeError("concept_loss: z must be B x d and beta d x 1, got " +
                         shape_str(zs) + " and " + shape_str(beta.shape()));
    if (std::int64_t(targets.size()) != zs[0])
        throw ShapeError("concept_loss: target count mismatch");
    Tensor s = add(matmul(z, beta), bias); // scalar bias broadcast
    Tensor t = g.leaf({zs[0], 1}, targets);
    Tensor w = g.leaf({zs[0], 1}, balance_weights(targets));
    return binary_log_loss(s, t, w);
}

Tensor inner_update(const Tensor &beta, const Tensor &loss, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("inner_update: alpha must be >= 0");
    Tensor gb = grad(loss, {beta})[0]; // throws if loss does not depend on beta
    return sub(beta, scale(gb, alpha));
}

ConceptProbe train_linear_probe(const std::vector<double> &features, int count,
                                int dim, const std::vector<double> &targets,
                                const ConceptId &id, const ProbeTrainConfig &cfg) {
    // gradient descent runs on centred, globally rescaled inputs (the fixed
    // step size is useless on raw conv activations); the single shared scale
    // keeps the learned direction identical to the raw-space one, and the
    // affine map is folded back so the stored probe acts on raw features
    std::vector<double> mu(std::size_t(dim), 0.0);
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < dim; ++j)
            mu[std::size_t(j)] += features[std::size_t(i) * dim + std::size_t(j)];
    for (auto &m : mu) m /= double(count);
    double var = 0.0;
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < dim; ++j) {
            const double v = features[std::size_t(i) * dim + std::size_t(j)] - mu[std::size_t(j)];
            var += v * v;
        }
    const double scale_sd =
        std::max(std::sqrt(var / (double(count) * double(dim))), 1e-12);
    std::vector<double> zstd(features.begin(),
                             features.begin() + std::size_t(count) * std::size_t(dim));
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < dim; ++j) {
            double &v = zstd[std::size_t(i) * dim + std::size_t(j)];
            v = (v - mu[std::size_t(j)]) / scale_sd;
        }

    std::vector<double> w(std::size_t(dim), 0.0);
    double b = 0.0, last = std::log(2.0);
    for (int step = 0; step < cfg.steps; ++step) {
        Graph g;
        Tensor z = g.leaf({count, dim}, zstd);
        Tensor beta = g.leaf({dim, 1}, w);
        Tensor bias = g.scalar(b);
        Tensor loss = concept_loss(g, beta, bias, z, targets);
        auto gs = grad(loss, {beta, bias});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * gs[0].data()[i];
        b -= cfg.lr * gs[1].data()[0];
        last = loss.value();
    }

    ConceptProbe p;
    p.id = id;
    p.beta.assign(std::size_t(dim), 0.0);
    p.bias = b;
    for (int j = 0; j < dim; ++j) {
        p.beta[std::size_t(j)] = w[std::size_t(j)] / scale_sd;
        p.bias -= w[std::size_t(j)] * mu[std::size_t(j)] / scale_sd;
    }
    p.converged = last < std::log(2.0) * cfg.convergence_frac;
    return p;
}

std::vector<double> concept_feature_matrix(const ConvNet &net, const Dataset &ds,
                                           const std::vector<int> &idx, int layer,
                                           int chunk) {
    const int d = net.config().feature_dim(layer);
    std::vector<double> out;
    out.reserve(idx.size() * std::size_t(d));
    for (std::size_t start = 0; start < idx.size(); start += std::size_t(chunk)) {
        const std::size_t end = std::min(idx.size(), start + std::size_t(chunk));
        std::vector<int> part(idx.begin() + std::ptrdiff_t(start),
                              idx.begin() + std::ptrdiff_t(end));
        Graph g;
        auto b = net.bind(g);
        Tensor x = g.leaf({int(part.size()), net.config().in_channels,
                           net.config().height, net.config().width},
                          ds.gather_pixels(part));
        const auto &z = net.concept_features(g, b, x, layer).data();
        out.insert(out.end(), z.begin(), z.end());
    }
    return out;
}

ProbeSet train_probes_post_hoc(const ConvNet &net, const Dataset &ds,
                               const std::vector<int> &idx, int layer,
                               const ProbeTrainConfig &cfg) {
    const int d = net.config().feature_dim(layer);
    const auto feats = concept_feature_matrix(net, ds, idx, layer);
    const auto labels = ds.labels_of(idx);
    const auto attrs = ds.attrs_of(idx);
    ProbeSet ps = make_probe_set(net.config().num_classes, d);
    for (auto &p : ps.probes) {
        const auto targets = concept_targets(labels, attrs, p.id);
        p = train_linear_probe(feats, int(idx.size()), d, targets, p.id, cfg);
    }
    return ps;
}

double probe_balanced_accuracy(const ConceptProbe &p,
                               const std::vector<double> &features, int count,
                               int dim, const std::vector<double> &targets) {
    double pos_hit = 0, pos_n = 0, neg_hit = 0, neg_n = 0;
    for (int i = 0; i < count; ++i) {
        double s = p.bias;
        for (int j = 0; j < dim; ++j)
            s += features[std::size_t(i) * dim + std::size_t(j)] * p.beta[std::size_t(j)];
        const bool pred = s > 0.0;
        if (targets[std::size_t(i)] > 0.5) {
            pos_n += 1;
            pos_hit += pred ? 1 : 0;
        } else {
            neg_n += 1;
            neg_hit += pred ? 0 : 1;
        }
    }
    if (pos_n == 0 || neg_n == 0)
        return (pos_hit + neg_hit) / double(count);
    return 0.5 * (pos_hit / pos_n + neg_hit / neg_n);
}

void save_probes(const ProbeSet &ps, const std::string &path) {
    io::Writer w(path);
    w.u32(kProbeMagic);
    w.u32(kProbeVersion);
    w.u32(std::uint32_t(ps.probes.size()));
    for (const auto &p : ps.probes) {
        w.u8(p.id.kind);
        w.i32(p.id.cls);
        w.u32(std::uint32_t(p.beta.size()));
        w.f64s(p.beta);
        w.f64(p.bias);
        w.u8(p.converged ? 1 : 0);
    }
}

ProbeSet load_probes(const std::string &path) {
    io::Reader r(path);
    r.expect_magic(kProbeMagic, "probe dump");
    if (r.u32() != kProbeVersion)
        throw io::FileError(path + ": unsupported probe version");
    ProbeSet ps;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        ConceptProbe p;
        p.id.kind = ConceptId::Kind(r.u8());
        p.id.cls = r.i32();
        const std::uint32_t d = r.u32();
        p.beta = r.f64s(d);
        p.bias = r.f64();
        p.converged = r.u8() != 0;
        ps.probes.push_back(std::move(p));
    }
    return ps;
}

} // namespace ortho

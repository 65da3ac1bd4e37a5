#include "ortho/model.hpp"
#include "ortho/io.hpp"
#include "ortho/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ortho {

namespace {
constexpr std::uint32_t kCheckpointMagic = 0x4b43444fu; // "ODCK"
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr int kKernel = 3;
} // namespace

int ConvNetConfig::feature_dim(int layer) const {
    if (layer < 1 || layer > 3)
        throw std::invalid_argument("concept layer must be in {1,2,3}, got " +
                                    std::to_string(layer));
    return widths[std::size_t(layer - 1)];
}

ConvNet::ConvNet(const ConvNetConfig &cfg) : cfg_(cfg) {
    if (cfg.height % 8 != 0 || cfg.width % 8 != 0)
        throw std::invalid_argument("image extent must be divisible by 8 (three 2x2 pools)");
    cfg_.feature_dim(cfg_.concept_layer); // validates layer index

    auto add_param = [&](const std::string &name, Shape shape, int fan_in) {
        Param p;
        p.shape = std::move(shape);
        p.value.resize(std::size_t(numel(p.shape)));
        p.momentum.assign(p.value.size(), 0.0);
        const double s = 1.0 / std::sqrt(double(fan_in));
        Rng rng(sub_seed(cfg_.seed, "init." + name));
        for (double &v : p.value) v = rng.uniform(-s, s);
        params_.emplace_back(name, std::move(p));
    };

    int in_ch = cfg_.in_channels;
    for (int b = 0; b < 3; ++b) {
        const int out_ch = cfg_.widths[std::size_t(b)];
        const std::string tag = "conv" + std::to_string(b + 1);
        add_param(tag + ".w", {out_ch, in_ch, kKernel, kKernel},
                  in_ch * kKernel * kKernel);
        add_param(tag + ".b", {out_ch}, in_ch * kKernel * kKernel);
        in_ch = out_ch;
    }
    add_param("head.w", {in_ch, cfg_.num_classes}, in_ch);
    add_param("head.b", {cfg_.num_classes}, in_ch);
}

Param &ConvNet::param(const std::string &name) {
    for (auto &[n, p] : params_)
        if (n == name) return p;
    throw std::invalid_argument("unknown parameter " + name);
}

ConvNet::Bound ConvNet::bind(Graph &g) const {
    Bound b;
    for (const auto &[name, p] : params_) {
        Tensor t = g.leaf(p.shape, p.value);
        b.by_name.emplace(name, t);
        b.ordered.push_back(t);
    }
    return b;
}

void ConvNet::check_batch(const Tensor &batch) const {
    const Shape &s = batch.shape();
    if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.height ||
        s[3] != cfg_.width)
        throw ShapeError("forward: batch shape " + shape_str(s) +
                         " does not match configured " +
                         shape_str({-1, cfg_.in_channels, cfg_.height, cfg_.width}));
}

ConvNet::Forward ConvNet::forward_all(Graph &g, const Bound &b,
                                      const Tensor &batch) const {
    check_batch(batch);
    Forward f;
    Tensor x = batch;
    for (int blk = 1; blk <= 3; ++blk) {
        const std::string tag = "conv" + std::to_string(blk);
        x = avg_pool2(relu(channel_bias(conv2d(x, b[tag + ".w"], 1), b[tag + ".b"])));
        f.blocks.push_back(x);
    }
    Tensor pooled = spatial_mean(x); // B x d
    f.logits = row_bias(matmul(pooled, b["head.w"]), b["head.b"]);
    (void)g;
    return f;
}

Tensor ConvNet::forward(Graph &g, const Bound &b, const Tensor &batch) const {
    return forward_all(g, b, batch).logits;
}

Tensor ConvNet::features_at(Graph &g, const Bound &b, const Tensor &batch,
                            int layer) const {
    cfg_.feature_dim(layer);
    check_batch(batch);
    Tensor x = batch;
    for (int blk = 1; blk <= layer; ++blk) {
        const std::string tag = "conv" + std::to_string(blk);
        x = avg_pool2(relu(channel_bias(conv2d(x, b[tag + ".w"], 1), b[tag + ".b"])));
    }
    (void)g;
    return x;
}

Tensor ConvNet::concept_features(Graph &g, const Bound &b, const Tensor &batch,
                                 int layer) const {
    return spatial_sum(features_at(g, b, batch, layer));
}

Tensor ConvNet::forward_from(Graph &g, const Bound &b, const Tensor &block_out,
                             int layer) const {
    cfg_.feature_dim(layer);
    Tensor x = block_out;
    for (int blk = layer + 1; blk <= 3; ++blk) {
        const std::string tag = "conv" + std::to_string(blk);
        x = avg_pool2(relu(channel_bias(conv2d(x, b[tag + ".w"], 1), b[tag + ".b"])));
    }
    Tensor pooled = spatial_mean(x);
    (void)g;
    return row_bias(matmul(pooled, b["head.w"]), b["head.b"]);
}

std::vector<std::vector<double>> ConvNet::class_logit_feature_gradient(
    const std::vector<double> &batch, int batch_size, int class_index,
    int layer) const {
    if (class_index < 0 || class_index >= cfg_.num_classes)
        throw std::invalid_argument("class index " + std::to_string(class_index) +
                                    " out of range");
    const int d = cfg_.feature_dim(layer);
    Graph g;
    Bound b = bind(g);
    Tensor x = g.leaf({batch_size, cfg_.in_channels, cfg_.height, cfg_.width}, batch);
    Tensor feat = features_at(g, b, x, layer);
    Tensor logits = forward_from(g, b, feat, layer);
    // summing the class logit over the batch gives per-sample feature-map
    // gradients in one backward pass (samples are independent)
    std::vector<double> pick(std::size_t(batch_size) * cfg_.num_classes, 0.0);
    for (int i = 0; i < batch_size; ++i)
        pick[std::size_t(i) * cfg_.num_classes + class_index] = 1.0;
    Tensor loss = dot(logits, g.leaf({batch_size, cfg_.num_classes}, pick));
    Tensor gf = grad(loss, {feat})[0];
    const Shape &fs = gf.shape();
    const int hw = fs[2] * fs[3];
    std::vector<std::vector<double>> out(std::size_t(batch_size),
                                         std::vector<double>(std::size_t(d), 0.0));
    const auto &gv = gf.data();
    for (int i = 0; i < batch_size; ++i)
        for (int c = 0; c < d; ++c) {
            double s = 0.0;
            const double *p = gv.data() + (std::size_t(i) * d + c) * hw;
            for (int q = 0; q < hw; ++q) s += p[q];
            out[std::size_t(i)][std::size_t(c)] = s;
        }
    return out;
}

std::vector<double> ConvNet::logits_of(const std::vector<double> &batch,
                                       int batch_size) const {
    Graph g;
    Bound b = bind(g);
    Tensor x = g.leaf({batch_size, cfg_.in_channels, cfg_.height, cfg_.width}, batch);
    return forward(g, b, x).data();
}

std::vector<int> ConvNet::predict(const std::vector<double> &batch,
                                  int batch_size) const {
    const auto logits = logits_of(batch, batch_size);
    std::vector<int> preds(std::size_t(batch_size), 0);
    const int N = cfg_.num_classes;
    for (int i = 0; i < batch_size; ++i) {
        const double *row = logits.data() + std::size_t(i) * N;
        int best = 0;
        for (int j = 1; j < N; ++j)
            if (row[j] > row[best]) best = j;
        preds[std::size_t(i)] = best;
    }
    return preds;
}

void ConvNet::apply_sgd(const std::vector<Tensor> &grads, double lr, double mu,
                        double grad_scale) {
    if (grads.size() != params_.size())
        throw std::invalid_argument("apply_sgd: gradient count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param &p = params_[i].second;
        const auto &gv = grads[i].data();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            p.momentum[j] = mu * p.momentum[j] - lr * grad_scale * gv[j];
            p.value[j] += p.momentum[j];
        }
    }
}

std::uint64_t ConvNet::param_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto &[name, p] : params_) {
        h = io::fnv1a(name.data(), name.size(), h);
        h = io::fnv1a(p.value, h);
    }
    return h;
}

void ConvNet::save(const std::string &path) const {
    io::Writer w(path);
    w.u32(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.i32(cfg_.in_channels);
    w.i32(cfg_.height);
    w.i32(cfg_.width);
    w.i32(cfg_.num_classes);
    for (int wd : cfg_.widths) w.i32(wd);
    w.i32(cfg_.concept_layer);
    w.u64(cfg_.seed);
    w.u32(std::uint32_t(params_.size()));
    for (const auto &[name, p] : params_) {
        w.str(name);
        w.u32(std::uint32_t(p.shape.size()));
        for (int d : p.shape) w.i32(d);
        w.u64(p.value.size());
        w.f64s(p.value);
    }
}

ConvNet ConvNet::load(const std::string &path) {
    io::Reader r(path);
    r.expect_magic(kCheckpointMagic, "model checkpoint");
    if (r.u32() != kCheckpointVersion)
        throw io::FileError(path + ": unsupported checkpoint version");
    ConvNetConfig cfg;
    cfg.in_channels = r.i32();
    cfg.height = r.i32();
    cfg.width = r.i32();
    cfg.num_classes = r.i32();
    for (int i = 0; i < 3; ++i) cfg.widths[std::size_t(i)] = r.i32();
    cfg.concept_layer = r.i32();
    cfg.seed = r.u64();
    ConvNet net(cfg);
    const std::uint32_t count = r.u32();
    if (count != net.params_.size())
        throw io::FileError(path + ": parameter count mismatch");
    for (auto &[name, p] : net.params_) {
        const std::string got = r.str();
        if (got != name)
            throw io::FileError(path + ": parameter name mismatch, expected " +
                                name + " got " + got);
        const std::uint32_t nd = r.u32();
        Shape s;
        for (std::uint32_t i = 0; i < nd; ++i) s.push_back(r.i32());
        if (s != p.shape) throw io::FileError(path + ": shape mismatch for " + name);
        const std::uint64_t n = r.u64();
        if (n != p.value.size())
            throw io::FileError(path + ": value count mismatch for " + name);
        p.value = r.f64s(n);
    }
    return net;
}

} // namespace ortho

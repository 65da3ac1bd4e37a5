#pragma once
// Compact convolutional classifier with an exposed concept layer.
// Three conv blocks (3x3 conv -> relu -> 2x2 mean pool), then spatial mean and
// a linear head.  Parameters live outside any graph; each training step binds
// them as fresh leaves.

#include "ortho/tensor.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ortho {

struct ConvNetConfig {
    int in_channels = 3;
    int height = 32;
    int width = 32;
    int num_classes = 10;
    std::array<int, 3> widths = {16, 32, 64};
    int concept_layer = 2; // 1-based block index
    std::uint64_t seed = 1;

    int feature_dim(int layer) const; // channel count at a concept layer
};

struct Param {
    Shape shape;
    std::vector<double> value;
    std::vector<double> momentum;
};

class ConvNet {
public:
    ConvNet() = default;
    explicit ConvNet(const ConvNetConfig &cfg);

    const ConvNetConfig &config() const { return cfg_; }
    int feature_dim() const { return cfg_.feature_dim(cfg_.concept_layer); }

    std::vector<std::pair<std::string, Param>> &params() { return params_; }
    const std::vector<std::pair<std::string, Param>> &params() const { return params_; }
    Param &param(const std::string &name);

    // Leaf tensors for every parameter, in declaration order.
    struct Bound {
        std::map<std::string, Tensor> by_name;
        std::vector<Tensor> ordered;
        Tensor operator[](const std::string &n) const { return by_name.at(n); }
    };
    Bound bind(Graph &g) const;

    // Forward pass pieces.  `blocks` holds each block's post-pool activation.
    struct Forward {
        std::vector<Tensor> blocks; // size 3, NCHW
        Tensor logits;              // B x N
    };
    Forward forward_all(Graph &g, const Bound &b, const Tensor &batch) const;
    Tensor forward(Graph &g, const Bound &b, const Tensor &batch) const;

    // Post-activation output of block `layer` (1-based), graph-attached.
    Tensor features_at(Graph &g, const Bound &b, const Tensor &batch, int layer) const;
    // Per-channel spatial sum of features_at: B x d.
    Tensor concept_features(Graph &g, const Bound &b, const Tensor &batch, int layer) const;
    // Continue the network from the output of block `layer` to logits.
    Tensor forward_from(Graph &g, const Bound &b, const Tensor &block_out, int layer) const;

    // d(logit_c)/d(feature map at `layer`), spatially summed; one row per
    // sample of the batch.  Evaluation-only (values, not graph nodes).
    std::vector<std::vector<double>> class_logit_feature_gradient(
        const std::vector<double> &batch, int batch_size, int class_index,
        int layer) const;

    // Convenience: logits for raw pixel data (values only).
    std::vector<double> logits_of(const std::vector<double> &batch, int batch_size) const;
    std::vector<int> predict(const std::vector<double> &batch, int batch_size) const;

    // SGD with momentum on all parameters; grad_scale rescales the incoming
    // gradient before it enters the momentum buffer (used for norm clipping).
    void apply_sgd(const std::vector<Tensor> &grads, double lr, double mu,
                   double grad_scale = 1.0);

    std::uint64_t param_hash() const;

    void save(const std::string &path) const;
    static ConvNet load(const std::string &path);

private:
    void check_batch(const Tensor &batch) const;

    ConvNetConfig cfg_;
    std::vector<std::pair<std::string, Param>> params_;
};

} // namespace ortho

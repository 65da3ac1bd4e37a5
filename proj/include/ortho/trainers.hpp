#pragma once
// The three training regimes (standard, adversarial, orthogonality-regularized)
// sharing one deterministic loop skeleton.

#include "ortho/dataset.hpp"
#include "ortho/model.hpp"
#include "ortho/probes.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ortho {

enum class Method { baseline, adversarial, meta_ortho };
Method method_from_string(const std::string &s);
std::string method_name(Method m);

struct TrainConfig {
    Method method = Method::baseline;
    int epochs = 8;
    int batch_size = 32;
    double outer_lr = 0.05;
    double momentum = 0.9;
    double alpha = 0.1;      // inner probe step
    double gamma = 1.0;      // orthogonality weight
    double lambda_adv = 1.0; // adversary weight on the feature path
    double clip_norm = 5.0;  // global-norm clip on the network gradient; 0 = off
    int adv_hidden = 32;
    int concept_layer = 2;
    std::uint64_t seed = 0;
    bool co_train_probes = true;        // keep the concept loss terms in the objective
    bool detach_nu = false;             // treat nu as a constant inside the debias term
    bool concept_include_poles = true;  // concept loss covers A+/A- probes too
    bool debias_include_poles = false;  // debias sum covers A+/A- probes too
    bool pole_probe_detach = false;     // pole losses see features as constants

    void validate() const; // throws std::invalid_argument
};

// one-hidden-layer attribute predictor on concept features
struct Adversary {
    int dim = 0, hidden = 0;
    std::vector<double> w1, b1, w2; // d x h, h, h x 1
    double b2 = 0.0;
    std::vector<double> m_w1, m_b1, m_w2; // momentum buffers
    double m_b2 = 0.0;

    static Adversary make(int dim, int hidden, std::uint64_t seed);
};

Tensor classification_loss(const Tensor &logits, const std::vector<int> &labels);

// sum of squared cosines between each stepped embedding and nu
Tensor debias_loss(const std::vector<Tensor> &stepped_betas, const Tensor &nu);

struct StepStats {
    double l_class = 0.0, l_concept = 0.0, l_debias = 0.0, l_adv = 0.0;
};

// training-time probe state updated jointly with theta
struct TrainProbes {
    ProbeSet set;
    std::vector<std::vector<double>> m_beta;
    std::vector<double> m_bias;
};

// objective graphs, shared by the step functions and the gradient oracles
struct MetaObjective {
    Tensor total;       // theta objective: class + concept + gamma * debias
    Tensor concept_sum; // probe objective; invalid when co-training is off
    std::vector<Tensor> theta;
    std::vector<Tensor> betas, biases;
    StepStats stats;
};
MetaObjective meta_ortho_objective(Graph &g, const ConvNet &net,
                                   const ProbeSet &probes,
                                   const std::vector<double> &pixels,
                                   const std::vector<int> &labels,
                                   const std::vector<int> &attrs,
                                   const TrainConfig &cfg);

struct AdvObjective {
    Tensor theta_obj, l_adv;
    std::vector<Tensor> theta;
    std::vector<Tensor> adv_params; // w1, b1, w2, b2
    StepStats stats;
};
AdvObjective adversarial_objective(Graph &g, const ConvNet &net,
                                   const Adversary &adv,
                                   const std::vector<double> &pixels,
                                   const std::vector<int> &labels,
                                   const std::vector<int> &attrs,
                                   const TrainConfig &cfg);

StepStats meta_ortho_step(ConvNet &net, TrainProbes &probes,
                          const std::vector<double> &pixels,
                          const std::vector<int> &labels,
                          const std::vector<int> &attrs, const TrainConfig &cfg);

StepStats adversarial_step(ConvNet &net, Adversary &adv,
                           const std::vector<double> &pixels,
                           const std::vector<int> &labels,
                           const std::vector<int> &attrs, const TrainConfig &cfg);

StepStats baseline_step(ConvNet &net, const std::vector<double> &pixels,
                        const std::vector<int> &labels, const TrainConfig &cfg);

struct EpochStats {
    int epoch = 0;
    double l_class = 0.0, l_concept = 0.0, l_debias = 0.0, l_adv = 0.0;
    double train_acc = 0.0, test_acc = 0.0;
    std::uint64_t param_hash = 0;
};

struct TrainResult {
    ConvNet net;
    TrainProbes probes;
    Adversary adversary;
    std::vector<EpochStats> history;
};

TrainResult train(const ConvNetConfig &arch, const Dataset &ds, const Split &split,
                  const TrainConfig &cfg);

std::string history_csv(const std::vector<EpochStats> &history);

double accuracy(const ConvNet &net, const Dataset &ds, const std::vector<int> &idx,
                int chunk = 64);

} // namespace ortho

#pragma once
// Linear concept classifiers on concept-layer features: one probe per scene
// class plus one per attribute pole.  The difference of the pole embeddings is
// the bias direction.

#include "ortho/model.hpp"
#include "ortho/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ortho {

struct Dataset;
struct Split;

struct ConceptId {
    enum Kind : std::uint8_t { scene = 0, attr_pos = 1, attr_neg = 2 };
    Kind kind = scene;
    int cls = 0; // valid for scene concepts

    std::string name() const;
    bool operator==(const ConceptId &o) const = default;
};

struct ConceptProbe {
    ConceptId id;
    std::vector<double> beta;
    double bias = 0.0;
    bool converged = true; // post-hoc training flags non-convergence here
};

struct ProbeSet {
    std::vector<ConceptProbe> probes; // N scene probes then A+, A-

    const ConceptProbe &scene(int cls) const;
    const ConceptProbe &pole(bool positive) const;
    // nu = beta_{A+} - beta_{A-}, recomputed from current values on every call
    std::vector<double> bias_direction() const;
};

ProbeSet make_probe_set(int num_classes, int dim, double init = 0.0);

// binary targets for a concept over a labelled batch
std::vector<double> concept_targets(const std::vector<int> &labels,
                                    const std::vector<int> &attrs,
                                    const ConceptId &cid);

// per-element weights making the positive and negative halves count equally;
// weights sum to 1 so beta=0 gives loss ln 2
std::vector<double> balance_weights(const std::vector<double> &targets);

// mean class-balanced binary log-loss of sigmoid(z beta + b) vs targets
Tensor concept_loss(Graph &g, const Tensor &beta /*d x 1*/, const Tensor &bias,
                    const Tensor &z /*B x d*/, const std::vector<double> &targets);

// beta' = beta - alpha * dloss/dbeta, graph-attached through both beta and
// whatever the loss depends on (the meta-step)
Tensor inner_update(const Tensor &beta, const Tensor &loss, double alpha);

struct ProbeTrainConfig {
    int steps = 200;
    double lr = 0.1;
    // convergence flag threshold: final loss must fall below ln2 * this
    double convergence_frac = 0.95;
};

// plain full-batch gradient descent on one probe over fixed features
ConceptProbe train_linear_probe(const std::vector<double> &features, int count,
                                int dim, const std::vector<double> &targets,
                                const ConceptId &id,
                                const ProbeTrainConfig &cfg = {});

// Freshly initialized probes trained on the frozen net's concept-layer
// features of the given sample indices; used by evaluation only.
ProbeSet train_probes_post_hoc(const ConvNet &net, const Dataset &ds,
                               const std::vector<int> &idx, int layer,
                               const ProbeTrainConfig &cfg = {});

// concept-layer features for a set of samples, evaluated in chunks
std::vector<double> concept_feature_matrix(const ConvNet &net, const Dataset &ds,
                                           const std::vector<int> &idx, int layer,
                                           int chunk = 64);

double probe_balanced_accuracy(const ConceptProbe &p,
                               const std::vector<double> &features, int count,
                               int dim, const std::vector<double> &targets);

void save_probes(const ProbeSet &ps, const std::string &path);
ProbeSet load_probes(const std::string &path);

} // namespace ortho

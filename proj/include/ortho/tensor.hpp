#pragma once
// Dense double-precision tensors on a recorded operation graph with
// reverse-mode differentiation.  Adjoints are emitted as ordinary graph nodes,
// so grad() results can be differentiated again (second order), which is what
// the meta-step needs.
//
// A Graph and the Tensors built on it are confined to one thread; independent
// graphs may run concurrently.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ortho {

using Shape = std::vector<int>;

std::int64_t numel(const Shape &s);
std::string shape_str(const Shape &s);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GraphError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
    leaf,
    add, sub, mul, divide,       // elementwise; one side may be a scalar tensor
    scale,                       // constant factor (attr.a)
    matmul, transpose,           // 2-D
    conv2d,                      // NCHW x OIHW, stride 1, pad attr.i0
    weight_flip,                 // OIHW -> IOHW with spatial flip
    conv_grad_weight,            // (grad NCHW, input NCHW) -> OIHW, pad attr.i0
    relu, relu_mask,
    avg_pool2, upsample2,
    spatial_sum,                 // B,C,H,W -> B,C
    spatial_bcast,               // B,C -> B,C,H,W (attr.i0 = H, attr.i1 = W)
    channel_sum,                 // B,C,H,W -> C
    channel_bcast,               // C -> B,C,H,W
    row_bcast,                   // N -> B,N (attr.i0 = B)
    col_sum,                     // B,N -> N
    row_sum_bcast,               // B,N -> B,N, each row filled with its sum
    sum_all,                     // -> scalar
    bcast,                       // scalar -> arbitrary shape
    square, sqrt_ew, sigmoid, softmax, l2_norm, dot,
    softmax_cross_entropy,       // (logits B,N; labels B) -> scalar mean
    binary_log_loss,             // (logits; targets; weights) -> weighted sum
};

const char *op_name(Op op);

struct OpAttr {
    double a = 0.0;
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
};

class Graph;

struct Node {
    int id = -1;
    Op op = Op::leaf;
    Shape shape;
    std::vector<double> val;
    std::vector<Node *> inputs;
    OpAttr attr;

    std::int64_t size() const { return std::int64_t(val.size()); }
};

// Lightweight handle; the owning Graph must outlive it.
class Tensor {
public:
    Tensor() = default;
    Tensor(Graph *g, Node *n) : g_(g), n_(n) {}

    bool valid() const { return n_ != nullptr; }
    Graph *graph() const { return g_; }
    Node *node() const { return n_; }
    const Shape &shape() const { return n_->shape; }
    std::int64_t size() const { return n_->size(); }
    const std::vector<double> &data() const { return n_->val; }
    bool is_scalar() const { return n_->val.size() == 1; }
    double value() const; // scalar tensors only

private:
    Graph *g_ = nullptr;
    Node *n_ = nullptr;
};

struct GradOptions {
    // Unreachable wrt tensors are an error by default; opt in to zeros for
    // probe warm-up phases.
    bool zeros_for_unreachable = false;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph &) = delete;
    Graph &operator=(const Graph &) = delete;

    Tensor leaf(Shape shape, std::vector<double> values);
    Tensor leaf(Shape shape, double fill = 0.0);
    Tensor scalar(double v) { return leaf(Shape{}, std::vector<double>{v}); }

    std::size_t node_count() const { return nodes_.size(); }
    Node *node_at(std::size_t i) const { return nodes_[i].get(); }

    // Recompute every non-leaf node's forward value and verify bit-identical
    // reproduction; throws GraphError on any mismatch.
    void replay_check() const;

    Tensor emit(Op op, std::vector<Node *> inputs, OpAttr attr = {});

private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

// --- op builders -----------------------------------------------------------
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor divide(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double k);
Tensor neg(const Tensor &a);
Tensor matmul(const Tensor &a, const Tensor &b);
Tensor transpose(const Tensor &a);
Tensor conv2d(const Tensor &x, const Tensor &w, int pad);
Tensor relu(const Tensor &a);
Tensor avg_pool2(const Tensor &a);
Tensor spatial_sum(const Tensor &a);
Tensor spatial_mean(const Tensor &a);
Tensor channel_bias(const Tensor &x, const Tensor &b); // conv bias add
Tensor row_bias(const Tensor &x, const Tensor &b);     // linear bias add
Tensor sum_all(const Tensor &a);
Tensor mean(const Tensor &a);
Tensor square(const Tensor &a);
Tensor sqrt_ew(const Tensor &a); // elementwise, requires strictly positive input
Tensor sigmoid(const Tensor &a);
Tensor softmax(const Tensor &a);
Tensor l2_norm(const Tensor &a);
Tensor dot(const Tensor &a, const Tensor &b);
// labels given as a leaf tensor of B class indices
Tensor softmax_cross_entropy(const Tensor &logits, const Tensor &labels);
// weighted sum of per-element binary log-losses; targets/weights are constants
Tensor binary_log_loss(const Tensor &logits, const Tensor &targets,
                       const Tensor &weights);

Tensor cosine_similarity(const Tensor &a, const Tensor &b, double eps = 1e-12);

std::vector<Tensor> grad(const Tensor &loss, const std::vector<Tensor> &wrt,
                         const GradOptions &opt = {});

// Central-difference gradient oracle; f must be deterministic.
std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double> &)> &f,
    const std::vector<double> &x, double h);

} // namespace ortho

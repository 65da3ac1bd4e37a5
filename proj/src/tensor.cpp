#include "ortho/tensor.hpp"
#include "ortho/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <sstream>

namespace ortho {

std::int64_t numel(const Shape &s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape &s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

const char *op_name(Op op) {
    switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::divide: return "divide";
    case Op::scale: return "scale";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::conv2d: return "conv2d";
    case Op::weight_flip: return "weight_flip";
    case Op::conv_grad_weight: return "conv_grad_weight";
    case Op::relu: return "relu";
    case Op::relu_mask: return "relu_mask";
    case Op::avg_pool2: return "avg_pool2";
    case Op::upsample2: return "upsample2";
    case Op::spatial_sum: return "spatial_sum";
    case Op::spatial_bcast: return "spatial_bcast";
    case Op::channel_sum: return "channel_sum";
    case Op::channel_bcast: return "channel_bcast";
    case Op::row_bcast: return "row_bcast";
    case Op::col_sum: return "col_sum";
    case Op::row_sum_bcast: return "row_sum_bcast";
    case Op::sum_all: return "sum_all";
    case Op::bcast: return "bcast";
    case Op::square: return "square";
    case Op::sqrt_ew: return "sqrt";
    case Op::sigmoid: return "sigmoid";
    case Op::softmax: return "softmax";
    case Op::l2_norm: return "l2_norm";
    case Op::dot: return "dot";
    case Op::softmax_cross_entropy: return "softmax_cross_entropy";
    case Op::binary_log_loss: return "binary_log_loss";
    }
    return "?";
}

double Tensor::value() const {
    if (!is_scalar())
        throw ShapeError("value(): tensor is not scalar, shape " + shape_str(shape()));
    return n_->val[0];
}

namespace {

[[noreturn]] void shape_fail(Op op, const std::string &msg) {
    throw ShapeError(std::string(op_name(op)) + ": " + msg);
}

void require(bool ok, Op op, const std::string &msg) {
    if (!ok) shape_fail(op, msg);
}

bool scalar_shape(const Shape &s) { return numel(s) == 1; }

// ---- shape inference ------------------------------------------------------

Shape infer_shape(Op op, const std::vector<Node *> &in, const OpAttr &attr) {
    auto binary_ew = [&]() -> Shape {
        const Shape &a = in[0]->shape, &b = in[1]->shape;
        if (a == b) return a;
        if (scalar_shape(a)) return b;
        if (scalar_shape(b)) return a;
        shape_fail(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    };
    switch (op) {
    case Op::leaf: return {};
    case Op::add: case Op::sub: case Op::mul: case Op::divide:
        return binary_ew();
    case Op::scale: case Op::relu: case Op::relu_mask:
    case Op::square: case Op::sqrt_ew: case Op::sigmoid:
        return in[0]->shape;
    case Op::softmax: case Op::row_sum_bcast:
        require(in[0]->shape.size() == 2, op, "expects a 2-D tensor, got " +
                shape_str(in[0]->shape));
        return in[0]->shape;
    case Op::matmul: {
        const Shape &a = in[0]->shape, &b = in[1]->shape;
        require(a.size() == 2 && b.size() == 2, op,
                "expects 2-D operands, got " + shape_str(a) + " and " + shape_str(b));
        require(a[1] == b[0], op, "inner dimension mismatch " + shape_str(a) +
                " x " + shape_str(b));
        return {a[0], b[1]};
    }
    case Op::transpose:
        require(in[0]->shape.size() == 2, op, "expects a 2-D tensor");
        return {in[0]->shape[1], in[0]->shape[0]};
    case Op::conv2d: {
        const Shape &x = in[0]->shape, &w = in[1]->shape;
        require(x.size() == 4 && w.size() == 4, op,
                "expects NCHW input and OIHW kernel, got " + shape_str(x) +
                " and " + shape_str(w));
        require(x[1] == w[1], op, "channel mismatch " + shape_str(x) + " vs " +
                shape_str(w));
        const int p = attr.i0;
        const int ho = x[2] + 2 * p - w[2] + 1, wo = x[3] + 2 * p - w[3] + 1;
        require(ho > 0 && wo > 0 && p >= 0, op, "kernel larger than padded input");
        return {x[0], w[0], ho, wo};
    }
    case Op::weight_flip: {
        const Shape &w = in[0]->shape;
        require(w.size() == 4, op, "expects OIHW kernel");
        return {w[1], w[0], w[2], w[3]};
    }
    case Op::conv_grad_weight: {
        const Shape &g = in[0]->shape, &x = in[1]->shape;
        require(g.size() == 4 && x.size() == 4 && g[0] == x[0], op,
                "expects matching NCHW gradients/input");
        const int p = attr.i0, kh = attr.i1, kw = attr.i2;
        require(g[2] == x[2] + 2 * p - kh + 1 && g[3] == x[3] + 2 * p - kw + 1,
                op, "gradient extent inconsistent with kernel size/padding");
        return {g[1], x[1], kh, kw};
    }
    case Op::avg_pool2: {
        const Shape &x = in[0]->shape;
        require(x.size() == 4 && x[2] % 2 == 0 && x[3] % 2 == 0, op,
                "expects NCHW with even spatial extent, got " + shape_str(x));
        return {x[0], x[1], x[2] / 2, x[3] / 2};
    }
    case Op::upsample2: {
        const Shape &x = in[0]->shape;
        require(x.size() == 4, op, "expects NCHW");
        return {x[0], x[1], x[2] * 2, x[3] * 2};
    }
    case Op::spatial_sum: {
        const Shape &x = in[0]->shape;
        require(x.size() == 4, op, "expects NCHW, got " + shape_str(x));
        return {x[0], x[1]};
    }
    case Op::spatial_bcast: {
        const Shape &x = in[0]->shape;
        require(x.size() == 2, op, "expects B,C");
        return {x[0], x[1], attr.i0, attr.i1};
    }
    case Op::channel_sum: {
        const Shape &x = in[0]->shape;
        require(x.size() == 4, op, "expects NCHW");
        return {x[1]};
    }
    case Op::channel_bcast: {
        const Shape &x = in[0]->shape;
        require(x.size() == 1, op, "expects a channel vector");
        return {attr.i0, x[0], attr.i1, attr.i2};
    }
    case Op::row_bcast: {
        const Shape &x = in[0]->shape;
        require(x.size() == 1, op, "expects a vector");
        return {attr.i0, x[0]};
    }
    case Op::col_sum: {
        const Shape &x = in[0]->shape;
        require(x.size() == 2, op, "expects B,N");
        return {x[1]};
    }
    case Op::sum_all: case Op::l2_norm:
        return {};
    case Op::bcast: {
        require(scalar_shape(in[0]->shape), op, "expects a scalar");
        // target shape carried in attrs: attr.a = rank, i0..i3 = dims
        Shape s;
        const int rank = int(attr.a);
        const int dims[4] = {attr.i0, attr.i1, attr.i2, attr.i3};
        for (int i = 0; i < rank; ++i) s.push_back(dims[i]);
        return s;
    }
    case Op::dot: {
        const Shape &a = in[0]->shape, &b = in[1]->shape;
        require(numel(a) == numel(b), op, "length mismatch " + shape_str(a) +
                " vs " + shape_str(b));
        return {};
    }
    case Op::softmax_cross_entropy: {
        const Shape &l = in[0]->shape, &y = in[1]->shape;
        require(l.size() == 2, op, "logits must be B,N, got " + shape_str(l));
        require(numel(y) == l[0], op, "labels length must equal batch size");
        return {};
    }
    case Op::binary_log_loss: {
        const Shape &s = in[0]->shape;
        require(numel(in[1]->shape) == numel(s) && numel(in[2]->shape) == numel(s),
                op, "logits/targets/weights length mismatch");
        return {};
    }
    }
    shape_fail(op, "unhandled op");
}

// ---- forward evaluation ---------------------------------------------------

void im2col(const double *x, int C, int H, int W, int kh, int kw, int p,
            int ho, int wo, double *col /* [C*kh*kw, ho*wo] */) {
    const int hw = ho * wo;
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                double *dst = col + ((c * kh + i) * kw + j) * hw;
                for (int u = 0; u < ho; ++u) {
                    const int r = u + i - p;
                    double *drow = dst + u * wo;
                    if (r < 0 || r >= H) {
                        std::fill(drow, drow + wo, 0.0);
                        continue;
                    }
                    const double *srow = x + (c * H + r) * W;
                    for (int v = 0; v < wo; ++v) {
                        const int s = v + j - p;
                        drow[v] = (s >= 0 && s < W) ? srow[s] : 0.0;
                    }
                }
            }
}

void forward_eval(Node *n, std::vector<double> &out) {
    const auto &K = kern::active();
    const auto &in = n->inputs;
    out.assign(std::size_t(numel(n->shape)), 0.0);
    auto ew = [&](auto fn, auto sfn) {
        const auto &a = in[0]->val, &b = in[1]->val;
        if (a.size() == b.size()) fn(a.data(), b.data(), out.data(), out.size());
        else if (a.size() == 1)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = sfn(a[0], b[i]);
        else
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = sfn(a[i], b[0]);
    };
    switch (n->op) {
    case Op::leaf:
        out = n->val;
        break;
    case Op::add: ew(K.add, [](double a, double b) { return a + b; }); break;
    case Op::sub: ew(K.sub, [](double a, double b) { return a - b; }); break;
    case Op::mul: ew(K.mul, [](double a, double b) { return a * b; }); break;
    case Op::divide: ew(K.div, [](double a, double b) { return a / b; }); break;
    case Op::scale:
        K.scale(in[0]->val.data(), n->attr.a, out.data(), out.size());
        break;
    case Op::matmul: {
        const int m = in[0]->shape[0], k = in[0]->shape[1], nn = in[1]->shape[1];
        K.gemm_acc(in[0]->val.data(), in[1]->val.data(), out.data(), m, k, nn);
        break;
    }
    case Op::transpose: {
        const int r = in[0]->shape[0], c = in[0]->shape[1];
        const auto &a = in[0]->val;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out[std::size_t(j) * r + i] = a[std::size_t(i) * c + j];
        break;
    }
    case Op::conv2d: {
        const Shape &xs = in[0]->shape, &ws = in[1]->shape;
        const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
        const int O = ws[0], kh = ws[2], kw = ws[3], p = n->attr.i0;
        const int ho = n->shape[2], wo = n->shape[3];
        const int kk = C * kh * kw, hw = ho * wo;
        std::vector<double> col(std::size_t(kk) * hw);
        for (int b = 0; b < B; ++b) {
            im2col(in[0]->val.data() + std::size_t(b) * C * H * W, C, H, W, kh,
                   kw, p, ho, wo, col.data());
            K.gemm_acc(in[1]->val.data(), col.data(),
                       out.data() + std::size_t(b) * O * hw, O, kk, hw);
        }
        break;
    }
    case Op::weight_flip: {
        const Shape &ws = in[0]->shape;
        const int O = ws[0], C = ws[1], kh = ws[2], kw = ws[3];
        const auto &w = in[0]->val;
        for (int o = 0; o < O; ++o)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j)
                        out[((std::size_t(c) * O + o) * kh + (kh - 1 - i)) * kw +
                            (kw - 1 - j)] = w[((std::size_t(o) * C + c) * kh + i) * kw + j];
        break;
    }
    case Op::conv_grad_weight: {
        const Shape &gs = in[0]->shape, &xs = in[1]->shape;
        const int B = gs[0], O = gs[1], ho = gs[2], wo = gs[3];
        const int C = xs[1], H = xs[2], W = xs[3];
        const int p = n->attr.i0, kh = n->attr.i1, kw = n->attr.i2;
        const int kk = C * kh * kw, hw = ho * wo;
        // gw[O, kk] += g[O, hw] * colT[hw, kk]
        std::vector<double> colT(std::size_t(hw) * kk), col(std::size_t(kk) * hw);
        for (int b = 0; b < B; ++b) {
            im2col(in[1]->val.data() + std::size_t(b) * C * H * W, C, H, W, kh,
                   kw, p, ho, wo, col.data());
            for (int r = 0; r < kk; ++r)
                for (int q = 0; q < hw; ++q)
                    colT[std::size_t(q) * kk + r] = col[std::size_t(r) * hw + q];
            K.gemm_acc(in[0]->val.data() + std::size_t(b) * O * hw, colT.data(),
                       out.data(), O, hw, kk);
        }
        break;
    }
    case Op::relu:
        K.relu(in[0]->val.data(), out.data(), out.size());
        break;
    case Op::relu_mask: {
        const auto &a = in[0]->val;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? 1.0 : 0.0;
        break;
    }
    case Op::avg_pool2: {
        const Shape &xs = in[0]->shape;
        const int BC = xs[0] * xs[1], H = xs[2], W = xs[3];
        const int ho = H / 2, wo = W / 2;
        const auto &a = in[0]->val;
        for (int bc = 0; bc < BC; ++bc) {
            const double *src = a.data() + std::size_t(bc) * H * W;
            double *dst = out.data() + std::size_t(bc) * ho * wo;
            for (int u = 0; u < ho; ++u)
                for (int v = 0; v < wo; ++v)
                    dst[u * wo + v] = 0.25 * (src[(2 * u) * W + 2 * v] +
                                              src[(2 * u) * W + 2 * v + 1] +
                                              src[(2 * u + 1) * W + 2 * v] +
                                              src[(2 * u + 1) * W + 2 * v + 1]);
        }
        break;
    }
    case Op::upsample2: {
        const Shape &xs = in[0]->shape;
        const int BC = xs[0] * xs[1], H = xs[2], W = xs[3];
        const auto &a = in[0]->val;
        for (int bc = 0; bc < BC; ++bc) {
            const double *src = a.data() + std::size_t(bc) * H * W;
            double *dst = out.data() + std::size_t(bc) * 4 * H * W;
            for (int u = 0; u < H; ++u)
                for (int v = 0; v < W; ++v) {
                    const double x = src[u * W + v];
                    dst[(2 * u) * 2 * W + 2 * v] = x;
                    dst[(2 * u) * 2 * W + 2 * v + 1] = x;
                    dst[(2 * u + 1) * 2 * W + 2 * v] = x;
                    dst[(2 * u + 1) * 2 * W + 2 * v + 1] = x;
                }
        }
        break;
    }
    case Op::spatial_sum: {
        const Shape &xs = in[0]->shape;
        const int BC = xs[0] * xs[1], hw = xs[2] * xs[3];
        for (int bc = 0; bc < BC; ++bc)
            out[bc] = K.sum(in[0]->val.data() + std::size_t(bc) * hw, hw);
        break;
    }
    case Op::spatial_bcast: {
        const int BC = in[0]->shape[0] * in[0]->shape[1];
        const int hw = n->attr.i0 * n->attr.i1;
        for (int bc = 0; bc < BC; ++bc)
            std::fill_n(out.data() + std::size_t(bc) * hw, hw, in[0]->val[bc]);
        break;
    }
    case Op::channel_sum: {
        const Shape &xs = in[0]->shape;
        const int B = xs[0], C = xs[1], hw = xs[2] * xs[3];
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                out[c] += K.sum(in[0]->val.data() + (std::size_t(b) * C + c) * hw, hw);
        break;
    }
    case Op::channel_bcast: {
        const int B = n->attr.i0, hw = n->attr.i1 * n->attr.i2;
        const int C = in[0]->shape[0];
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                std::fill_n(out.data() + (std::size_t(b) * C + c) * hw, hw,
                            in[0]->val[c]);
        break;
    }
    case Op::row_bcast: {
        const int B = n->attr.i0;
        const std::size_t N = in[0]->val.size();
        for (int b = 0; b < B; ++b)
            std::copy_n(in[0]->val.data(), N, out.data() + std::size_t(b) * N);
        break;
    }
    case Op::col_sum: {
        const int B = in[0]->shape[0], N = in[0]->shape[1];
        for (int b = 0; b < B; ++b)
            K.axpy(1.0, in[0]->val.data() + std::size_t(b) * N, out.data(), N);
        break;
    }
    case Op::row_sum_bcast: {
        const int B = in[0]->shape[0], N = in[0]->shape[1];
        for (int b = 0; b < B; ++b) {
            const double s = K.sum(in[0]->val.data() + std::size_t(b) * N, N);
            std::fill_n(out.data() + std::size_t(b) * N, N, s);
        }
        break;
    }
    case Op::sum_all:
        out[0] = K.sum(in[0]->val.data(), in[0]->val.size());
        break;
    case Op::bcast:
        std::fill(out.begin(), out.end(), in[0]->val[0]);
        break;
    case Op::square:
        K.mul(in[0]->val.data(), in[0]->val.data(), out.data(), out.size());
        break;
    case Op::sqrt_ew: {
        const auto &a = in[0]->val;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (!(a[i] > 0.0))
                throw GraphError("sqrt requires strictly positive input");
            out[i] = std::sqrt(a[i]);
        }
        break;
    }
    case Op::sigmoid: {
        const auto &a = in[0]->val;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double s = a[i];
            out[i] = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                              : std::exp(s) / (1.0 + std::exp(s));
        }
        break;
    }
    case Op::softmax: {
        const int B = in[0]->shape[0], N = in[0]->shape[1];
        const auto &a = in[0]->val;
        for (int b = 0; b < B; ++b) {
            const double *row = a.data() + std::size_t(b) * N;
            double *o = out.data() + std::size_t(b) * N;
            const double mx = *std::max_element(row, row + N);
            double z = 0.0;
            for (int j = 0; j < N; ++j) z += (o[j] = std::exp(row[j] - mx));
            for (int j = 0; j < N; ++j) o[j] /= z;
        }
        break;
    }
    case Op::l2_norm:
        out[0] = std::sqrt(K.dot(in[0]->val.data(), in[0]->val.data(),
                                 in[0]->val.size()));
        break;
    case Op::dot:
        out[0] = K.dot(in[0]->val.data(), in[1]->val.data(), in[0]->val.size());
        break;
    case Op::softmax_cross_entropy: {
        const int B = in[0]->shape[0], N = in[0]->shape[1];
        const auto &a = in[0]->val;
        double total = 0.0;
        for (int b = 0; b < B; ++b) {
            const double *row = a.data() + std::size_t(b) * N;
            const int y = int(in[1]->val[b]);
            if (y < 0 || y >= N)
                throw ShapeError("softmax_cross_entropy: label out of range");
            const double mx = *std::max_element(row, row + N);
            double z = 0.0;
            for (int j = 0; j < N; ++j) z += std::exp(row[j] - mx);
            total += mx + std::log(z) - row[y];
        }
        out[0] = total / B;
        break;
    }
    case Op::binary_log_loss: {
        const auto &s = in[0]->val, &t = in[1]->val, &w = in[2]->val;
        double total = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double x = s[i];
            const double l = std::max(x, 0.0) - x * t[i] + std::log1p(std::exp(-std::abs(x)));
            total += w[i] * l;
        }
        out[0] = total;
        break;
    }
    }
}

} // namespace

// ---- graph ----------------------------------------------------------------

Tensor Graph::leaf(Shape shape, std::vector<double> values) {
    if (numel(shape) != std::int64_t(values.size()))
        throw ShapeError("leaf: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    auto n = std::make_unique<Node>();
    n->id = int(nodes_.size());
    n->op = Op::leaf;
    n->shape = std::move(shape);
    n->val = std::move(values);
    Node *p = n.get();
    nodes_.push_back(std::move(n));
    return Tensor(this, p);
}

Tensor Graph::leaf(Shape shape, double fill) {
    std::vector<double> v(std::size_t(numel(shape)), fill);
    return leaf(std::move(shape), std::move(v));
}

Tensor Graph::emit(Op op, std::vector<Node *> inputs, OpAttr attr) {
    auto n = std::make_unique<Node>();
    n->id = int(nodes_.size());
    n->op = op;
    n->inputs = std::move(inputs);
    n->attr = attr;
    n->shape = infer_shape(op, n->inputs, attr);
    forward_eval(n.get(), n->val);
    Node *p = n.get();
    nodes_.push_back(std::move(n));
    return Tensor(this, p);
}

void Graph::replay_check() const {
    std::vector<double> buf;
    for (const auto &n : nodes_) {
        if (n->op == Op::leaf) continue;
        forward_eval(n.get(), buf);
        if (buf.size() != n->val.size() ||
            std::memcmp(buf.data(), n->val.data(), buf.size() * sizeof(double)) != 0)
            throw GraphError(std::string("replay mismatch at node ") +
                             std::to_string(n->id) + " (" + op_name(n->op) + ")");
    }
}

// ---- builders -------------------------------------------------------------

namespace {
Graph *same_graph(const Tensor &a, const Tensor &b) {
    if (a.graph() != b.graph())
        throw GraphError("operands belong to different graphs");
    return a.graph();
}
} // namespace

Tensor add(const Tensor &a, const Tensor &b) {
    return same_graph(a, b)->emit(Op::add, {a.node(), b.node()});
}
Tensor sub(const Tensor &a, const Tensor &b) {
    return same_graph(a, b)->emit(Op::sub, {a.node(), b.node()});
}
Tensor mul(const Tensor &a, const Tensor &b) {
    return same_graph(a, b)->emit(Op::mul, {a.node(), b.node()});
}
Tensor divide(const Tensor &a, const Tensor &b) {
    return same_graph(a, b)->emit(Op::divide, {a.node(), b.node()});
}
Tensor scale(const Tensor &a, double k) {
    OpAttr at; at.a = k;
    return a.graph()->emit(Op::scale, {a.node()}, at);
}
Tensor neg(const Tensor &a) { return scale(a, -1.0); }
Tensor matmul(const Tensor &a, const Tensor &b) {
    return same_graph(a, b)->emit(Op::matmul, {a.node(), b.node()});
}
Tensor transpose(const Tensor &a) {
    return a.graph()->emit(Op::transpose, {a.node()});
}
Tensor conv2d(const Tensor &x, const Tensor &w, int pad) {
    OpAttr at; at.i0 = pad;
    return same_graph(x, w)->emit(Op::conv2d, {x.node(), w.node()}, at);
}
Tensor relu(const Tensor &a) { return a.graph()->emit(Op::relu, {a.node()}); }
Tensor avg_pool2(const Tensor &a) {
    return a.graph()->emit(Op::avg_pool2, {a.node()});
}
Tensor spatial_sum(const Tensor &a) {
    return a.graph()->emit(Op::spatial_sum, {a.node()});
}
Tensor spatial_mean(const Tensor &a) {
    const Shape &s = a.shape();
    if (s.size() != 4) throw ShapeError("spatial_mean: expects NCHW");
    return scale(spatial_sum(a), 1.0 / (double(s[2]) * s[3]));
}
Tensor channel_bias(const Tensor &x, const Tensor &b) {
    const Shape &s = x.shape();
    if (s.size() != 4) throw ShapeError("channel_bias: expects NCHW");
    OpAttr at; at.i0 = s[0]; at.i1 = s[2]; at.i2 = s[3];
    Tensor bb = same_graph(x, b)->emit(Op::channel_bcast, {b.node()}, at);
    return add(x, bb);
}
Tensor row_bias(const Tensor &x, const Tensor &b) {
    const Shape &s = x.shape();
    if (s.size() != 2) throw ShapeError("row_bias: expects B,N");
    OpAttr at; at.i0 = s[0];
    Tensor bb = same_graph(x, b)->emit(Op::row_bcast, {b.node()}, at);
    return add(x, bb);
}
Tensor sum_all(const Tensor &a) {
    return a.graph()->emit(Op::sum_all, {a.node()});
}
Tensor mean(const Tensor &a) { return scale(sum_all(a), 1.0 / double(a.size())); }
Tensor square(const Tensor &a) { return a.graph()->emit(Op::square, {a.node()}); }
Tensor sqrt_ew(const Tensor &a) { return a.graph()->emit(Op::sqrt_ew, {a.node()}); }
Tensor sigmoid(const Tensor &a) { return a.graph()->emit(Op::sigmoid, {a.node()}); }
Tensor softmax(const Tensor &a) { return a.graph()->emit(Op::softmax, {a.node()}); }
Tensor l2_norm(const Tensor &a) { return a.graph()->emit(Op::l2_norm, {a.node()}); }
Tensor dot(const Tensor &a, const Tensor &b) {
    return same_graph(a, b)->emit(Op::dot, {a.node(), b.node()});
}
Tensor softmax_cross_entropy(const Tensor &logits, const Tensor &labels) {
    return same_graph(logits, labels)
        ->emit(Op::softmax_cross_entropy, {logits.node(), labels.node()});
}
Tensor binary_log_loss(const Tensor &logits, const Tensor &targets,
                       const Tensor &weights) {
    same_graph(logits, targets);
    return same_graph(logits, weights)
        ->emit(Op::binary_log_loss,
               {logits.node(), targets.node(), weights.node()});
}

Tensor cosine_similarity(const Tensor &a, const Tensor &b, double eps) {
    Graph *g = same_graph(a, b);
    if (eps <= 0.0) throw ShapeError("cosine_similarity: eps must be positive");
    Tensor e = g->scalar(eps);
    Tensor den = mul(add(l2_norm(a), e), add(l2_norm(b), e));
    return divide(dot(a, b), den);
}

// ---- reverse-mode ---------------------------------------------------------

namespace {

Tensor bcast_to(const Tensor &s, const Shape &shape) {
    if (shape.size() > 4)
        throw ShapeError("bcast: target rank > 4 not supported");
    OpAttr at;
    at.a = double(shape.size());
    int *dims[4] = {&at.i0, &at.i1, &at.i2, &at.i3};
    for (std::size_t i = 0; i < shape.size(); ++i) *dims[i] = shape[i];
    return s.graph()->emit(Op::bcast, {s.node()}, at);
}

// contribution of `u` (adjoint of node n) to each input of n; an empty
// optional means no gradient flows into that input
std::vector<std::optional<Tensor>> vjp(Graph *g, Node *n, const Tensor &u) {
    Tensor self(g, n);
    auto in = [&](int i) { return Tensor(g, n->inputs[i]); };
    auto reduce_if_scalar = [&](Tensor t, int input_idx) -> Tensor {
        if (numel(n->inputs[input_idx]->shape) == 1 && numel(t.shape()) != 1)
            return sum_all(t);
        return t;
    };
    switch (n->op) {
    case Op::leaf:
        return {};
    case Op::add:
        return {reduce_if_scalar(u, 0), reduce_if_scalar(u, 1)};
    case Op::sub:
        return {reduce_if_scalar(u, 0), reduce_if_scalar(neg(u), 1)};
    case Op::mul:
        return {reduce_if_scalar(mul(u, in(1)), 0),
                reduce_if_scalar(mul(u, in(0)), 1)};
    case Op::divide: {
        Tensor ga = reduce_if_scalar(divide(u, in(1)), 0);
        Tensor gb = reduce_if_scalar(
            neg(divide(mul(u, in(0)), mul(in(1), in(1)))), 1);
        return {ga, gb};
    }
    case Op::scale:
        return {scale(u, n->attr.a)};
    case Op::matmul:
        return {matmul(u, transpose(in(1))), matmul(transpose(in(0)), u)};
    case Op::transpose:
        return {transpose(u)};
    case Op::conv2d: {
        const int p = n->attr.i0;
        const int kh = n->inputs[1]->shape[2];
        Tensor gx = conv2d(u, g->emit(Op::weight_flip, {n->inputs[1]}), kh - 1 - p);
        OpAttr at;
        at.i0 = p; at.i1 = n->inputs[1]->shape[2]; at.i2 = n->inputs[1]->shape[3];
        Tensor gw = g->emit(Op::conv_grad_weight, {u.node(), n->inputs[0]}, at);
        return {gx, gw};
    }
    case Op::weight_flip:
        return {g->emit(Op::weight_flip, {u.node()})};
    case Op::conv_grad_weight: {
        const int p = n->attr.i0, kh = n->attr.i1;
        // y = cgw(grad g, input x); both vjps are convolutions again
        Tensor gg = conv2d(in(1), u, p);
        Tensor gx = conv2d(in(0), g->emit(Op::weight_flip, {u.node()}), kh - 1 - p);
        return {gg, gx};
    }
    case Op::relu:
        return {mul(u, g->emit(Op::relu_mask, {n->inputs[0]}))};
    case Op::relu_mask:
        return {std::nullopt}; // zero a.e.
    case Op::avg_pool2:
        return {scale(g->emit(Op::upsample2, {u.node()}), 0.25)};
    case Op::upsample2:
        return {scale(avg_pool2(u), 4.0)};
    case Op::spatial_sum: {
        OpAttr at; at.i0 = n->inputs[0]->shape[2]; at.i1 = n->inputs[0]->shape[3];
        return {g->emit(Op::spatial_bcast, {u.node()}, at)};
    }
    case Op::spatial_bcast:
        return {spatial_sum(u)};
    case Op::channel_sum: {
        OpAttr at;
        at.i0 = n->inputs[0]->shape[0];
        at.i1 = n->inputs[0]->shape[2];
        at.i2 = n->inputs[0]->shape[3];
        return {g->emit(Op::channel_bcast, {u.node()}, at)};
    }
    case Op::channel_bcast:
        return {g->emit(Op::channel_sum, {u.node()})};
    case Op::row_bcast:
        return {g->emit(Op::col_sum, {u.node()})};
    case Op::col_sum: {
        OpAttr at; at.i0 = n->inputs[0]->shape[0];
        return {g->emit(Op::row_bcast, {u.node()}, at)};
    }
    case Op::row_sum_bcast:
        return {g->emit(Op::row_sum_bcast, {u.node()})};
    case Op::sum_all:
        return {bcast_to(u, n->inputs[0]->shape)};
    case Op::bcast:
        return {sum_all(u)};
    case Op::square:
        return {scale(mul(u, in(0)), 2.0)};
    case Op::sqrt_ew:
        return {scale(divide(u, self), 0.5)};
    case Op::sigmoid:
        return {mul(u, sub(self, square(self)))};
    case Op::softmax: {
        Tensor us = mul(u, self);
        Tensor rs = g->emit(Op::row_sum_bcast, {us.node()});
        return {mul(sub(u, rs), self)};
    }
    case Op::l2_norm:
        return {mul(in(0), divide(u, self))};
    case Op::dot:
        return {mul(in(1), u), mul(in(0), u)};
    case Op::softmax_cross_entropy: {
        const int B = n->inputs[0]->shape[0], N = n->inputs[0]->shape[1];
        std::vector<double> oh(std::size_t(B) * N, 0.0);
        for (int b = 0; b < B; ++b)
            oh[std::size_t(b) * N + int(n->inputs[1]->val[b])] = 1.0;
        Tensor onehot = g->leaf({B, N}, std::move(oh));
        Tensor gl = scale(mul(sub(softmax(in(0)), onehot), u), 1.0 / B);
        return {gl, std::nullopt};
    }
    case Op::binary_log_loss: {
        Tensor gl = mul(mul(sub(sigmoid(in(0)), in(1)), in(2)), u);
        return {gl, std::nullopt, std::nullopt};
    }
    }
    return {};
}

} // namespace

std::vector<Tensor> grad(const Tensor &loss, const std::vector<Tensor> &wrt,
                         const GradOptions &opt) {
    Graph *g = loss.graph();
    if (!loss.is_scalar())
        throw ShapeError("grad: loss must be scalar, got " + shape_str(loss.shape()));
    for (const Tensor &w : wrt)
        if (w.graph() != g) throw GraphError("grad: wrt tensor on a different graph");

    const int loss_id = loss.node()->id;
    std::vector<char> ancestor(std::size_t(loss_id) + 1, 0);
    {
        std::vector<Node *> stack{loss.node()};
        ancestor[std::size_t(loss_id)] = 1;
        while (!stack.empty()) {
            Node *n = stack.back();
            stack.pop_back();
            for (Node *i : n->inputs)
                if (!ancestor[std::size_t(i->id)]) {
                    ancestor[std::size_t(i->id)] = 1;
                    stack.push_back(i);
                }
        }
    }

    std::vector<Tensor> adjoint(std::size_t(loss_id) + 1);
    adjoint[std::size_t(loss_id)] = g->scalar(1.0);

    for (int id = loss_id; id >= 0; --id) {
        if (!ancestor[std::size_t(id)]) continue;
        Node *n = g->node_at(std::size_t(id));
        Tensor &u = adjoint[std::size_t(id)];
        if (!u.valid() || n->op == Op::leaf) continue;
        auto contribs = vjp(g, n, u);
        for (std::size_t i = 0; i < contribs.size(); ++i) {
            if (!contribs[i]) continue;
            Node *inp = n->inputs[i];
            Tensor &slot = adjoint[std::size_t(inp->id)];
            slot = slot.valid() ? add(slot, *contribs[i]) : *contribs[i];
        }
    }

    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const Tensor &w : wrt) {
        const int id = w.node()->id;
        const bool reach = id <= loss_id && ancestor[std::size_t(id)];
        if (reach && adjoint[std::size_t(id)].valid()) {
            out.push_back(adjoint[std::size_t(id)]);
        } else if (reach || opt.zeros_for_unreachable) {
            out.push_back(g->leaf(w.shape(), 0.0));
        } else {
            throw GraphError("grad: loss is not reachable from wrt tensor (node " +
                             std::to_string(id) + ")");
        }
    }
    return out;
}

std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double> &)> &f,
    const std::vector<double> &x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be > 0");
    std::vector<double> g(x.size()), p(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[i] = x[i] + h;
        const double fp = f(p);
        p[i] = x[i] - h;
        const double fm = f(p);
        p[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

} // namespace ortho

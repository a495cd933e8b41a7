#include "wsol/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>

namespace wsol {

namespace {

int64_t product(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::conv2d: return "conv2d";
        case OpKind::relu: return "relu";
        case OpKind::maxpool2d: return "maxpool2d";
        case OpKind::global_average_pool: return "global_average_pool";
        case OpKind::linear: return "linear";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::matmul: return "matmul";
        case OpKind::log: return "log";
        case OpKind::softmax: return "softmax";
        case OpKind::cross_entropy: return "cross_entropy";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    for (int d : shape_) {
        require(d > 0, "tensor: non-positive extent in shape " + shape_str(shape_));
    }
    require(product(shape_) == static_cast<int64_t>(data_.size()),
            "tensor: shape " + shape_str(shape_) + " does not match " +
                std::to_string(data_.size()) + " values");
}

Tensor Tensor::zeros(std::vector<int> shape) {
    std::vector<double> data(static_cast<size_t>(product(shape)), 0.0);
    return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    std::vector<double> data(static_cast<size_t>(product(shape)), value);
    return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

double Tensor::value() const {
    require(numel() == 1, "tensor: value() on a tensor with " + std::to_string(numel()) +
                              " elements");
    return data_[0];
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

// ---------------------------------------------------------------------------
// GradientTable

Tensor GradientTable::grad_of(const Tensor& t) const {
    require(record_ != nullptr, "gradient table: empty");
    require(t.attached() && t.record() == record_,
            "gradient table: tensor is not attached to this record");
    const auto& shape = record_->node_shape(t.node());
    if (slots_[static_cast<size_t>(t.node())].empty()) return Tensor::zeros(shape);
    return Tensor(shape, slots_[static_cast<size_t>(t.node())]);
}

const std::vector<double>& GradientTable::slot(int node) const {
    return slots_.at(static_cast<size_t>(node));
}

bool GradientTable::reached(int node) const {
    return !slots_.at(static_cast<size_t>(node)).empty();
}

// ---------------------------------------------------------------------------
// ComputationRecord

const std::vector<int>& ComputationRecord::node_shape(int node) const {
    return nodes_.at(static_cast<size_t>(node)).shape;
}

Tensor ComputationRecord::push(Node node) {
    if (finite_checks_) check_finite(node);
    Tensor t;
    t.shape_ = node.shape;
    t.data_ = node.value;
    t.record_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    return t;
}

void ComputationRecord::check_finite(const Node& n) const {
    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string("record: non-finite value produced by ") +
                                     op_name(n.op));
        }
    }
}

const ComputationRecord::Node& ComputationRecord::node_of(const Tensor& t, const char* who) const {
    if (!t.attached()) {
        throw std::invalid_argument(std::string(who) + ": tensor is detached from any record");
    }
    if (t.record() != this) {
        throw std::invalid_argument(std::string(who) + ": tensor belongs to a different record");
    }
    return nodes_.at(static_cast<size_t>(t.node()));
}

Tensor ComputationRecord::leaf(const Tensor& value) {
    require(value.numel() > 0, "leaf: empty tensor");
    Node n;
    n.op = OpKind::leaf;
    n.shape = value.shape();
    n.value = value.data();
    return push(std::move(n));
}

Tensor ComputationRecord::conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                                 int pad) {
    node_of(x, "conv2d");
    node_of(w, "conv2d");
    require(x.shape().size() == 3, "conv2d: input must be (C,H,W), got " + shape_str(x.shape()));
    require(w.shape().size() == 4 && w.shape()[2] == w.shape()[3],
            "conv2d: weight must be (O,C,k,k), got " + shape_str(w.shape()));
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(pad >= 0, "conv2d: padding must be >= 0");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int O = w.shape()[0], k = w.shape()[2];
    require(w.shape()[1] == C, "conv2d: input channels " + std::to_string(C) +
                                   " != weight channels " + std::to_string(w.shape()[1]));
    const bool has_bias = bias.numel() > 0;
    if (has_bias) {
        node_of(bias, "conv2d");
        require(bias.shape() == std::vector<int>{O},
                "conv2d: bias must be (O)=" + std::to_string(O) + ", got " + shape_str(bias.shape()));
    }
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    require(H + 2 * pad >= k && W + 2 * pad >= k,
            "conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                shape_str({H + 2 * pad, W + 2 * pad}));

    Node n;
    n.op = OpKind::conv2d;
    n.a = x.node();
    n.b = w.node();
    n.attrs.stride = stride;
    n.attrs.pad = pad;
    n.attrs.label = has_bias ? bias.node() : -1;  // bias node id rides in label
    n.shape = {O, Ho, Wo};
    n.value.assign(static_cast<size_t>(O) * Ho * Wo, 0.0);

    const double* xd = x.data().data();
    const double* wd = w.data().data();
    double* yd = n.value.data();
    for (int o = 0; o < O; ++o) {
        const double base = has_bias ? bias.data()[static_cast<size_t>(o)] : 0.0;
        double* yo = yd + static_cast<size_t>(o) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) yo[i] = base;
        for (int c = 0; c < C; ++c) {
            const double* xc = xd + static_cast<size_t>(c) * H * W;
            const double* wp = wd + (static_cast<size_t>(o) * C + c) * k * k;
            for (int u = 0; u < k; ++u) {
                for (int v = 0; v < k; ++v) {
                    const double wv = wp[u * k + v];
                    if (wv == 0.0) continue;
                    for (int i = 0; i < Ho; ++i) {
                        const int iy = i * stride + u - pad;
                        if (iy < 0 || iy >= H) continue;
                        const double* xrow = xc + static_cast<size_t>(iy) * W;
                        double* yrow = yo + static_cast<size_t>(i) * Wo;
                        int j0 = 0, j1 = Wo;
                        while (j0 < Wo && j0 * stride + v - pad < 0) ++j0;
                        while (j1 > j0 && (j1 - 1) * stride + v - pad >= W) --j1;
                        const double* xoff = xrow + (v - pad);
                        for (int j = j0; j < j1; ++j) yrow[j] += wv * xoff[j * stride];
                    }
                }
            }
        }
    }
    return push(std::move(n));
}

Tensor ComputationRecord::relu(const Tensor& x) {
    node_of(x, "relu");
    Node n;
    n.op = OpKind::relu;
    n.a = x.node();
    n.shape = x.shape();
    n.value = x.data();
    for (double& v : n.value) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

Tensor ComputationRecord::maxpool2d(const Tensor& x, int window) {
    node_of(x, "maxpool2d");
    require(x.shape().size() == 3, "maxpool2d: input must be (C,H,W), got " + shape_str(x.shape()));
    require(window >= 1, "maxpool2d: window must be >= 1");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    require(H % window == 0 && W % window == 0,
            "maxpool2d: window " + std::to_string(window) + " must divide extents " +
                shape_str({H, W}));
    const int Ho = H / window, Wo = W / window;

    Node n;
    n.op = OpKind::maxpool2d;
    n.a = x.node();
    n.attrs.window = window;
    n.shape = {C, Ho, Wo};
    n.value.resize(static_cast<size_t>(C) * Ho * Wo);
    n.aux.resize(n.value.size());
    const double* xd = x.data().data();
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < Ho; ++i) {
            for (int j = 0; j < Wo; ++j) {
                double best = -1e300;
                int best_idx = -1;
                for (int u = 0; u < window; ++u) {
                    for (int v = 0; v < window; ++v) {
                        const int idx = (c * H + i * window + u) * W + j * window + v;
                        if (xd[idx] > best) {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                const size_t out = (static_cast<size_t>(c) * Ho + i) * Wo + j;
                n.value[out] = best;
                n.aux[out] = best_idx;
            }
        }
    }
    return push(std::move(n));
}

Tensor ComputationRecord::global_average_pool(const Tensor& x) {
    node_of(x, "global_average_pool");
    require(x.shape().size() == 2 || x.shape().size() == 3,
            "global_average_pool: input must be (C,N) or (C,H,W), got " + shape_str(x.shape()));
    const int C = x.shape()[0];
    const int N = x.numel() / C;
    Node n;
    n.op = OpKind::global_average_pool;
    n.a = x.node();
    n.shape = {C};
    n.value.resize(static_cast<size_t>(C));
    const double* xd = x.data().data();
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int i = 0; i < N; ++i) s += xd[static_cast<size_t>(c) * N + i];
        n.value[static_cast<size_t>(c)] = s / N;
    }
    return push(std::move(n));
}

Tensor ComputationRecord::linear(const Tensor& w, const Tensor& x) {
    node_of(w, "linear");
    node_of(x, "linear");
    require(w.shape().size() == 2, "linear: weight must be (K,C), got " + shape_str(w.shape()));
    require(x.shape().size() == 1, "linear: input must be (C), got " + shape_str(x.shape()));
    const int K = w.shape()[0], C = w.shape()[1];
    require(x.shape()[0] == C, "linear: weight expects " + std::to_string(C) +
                                   " channels, input has " + std::to_string(x.shape()[0]));
    Node n;
    n.op = OpKind::linear;
    n.a = w.node();
    n.b = x.node();
    n.shape = {K};
    n.value.assign(static_cast<size_t>(K), 0.0);
    for (int r = 0; r < K; ++r) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += w.data()[static_cast<size_t>(r) * C + c] * x.data()[static_cast<size_t>(c)];
        n.value[static_cast<size_t>(r)] = s;
    }
    return push(std::move(n));
}

Tensor ComputationRecord::add(const Tensor& a, const Tensor& b) {
    node_of(a, "add");
    node_of(b, "add");
    require(a.shape() == b.shape(),
            "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Node n;
    n.op = OpKind::add;
    n.a = a.node();
    n.b = b.node();
    n.shape = a.shape();
    n.value = a.data();
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] += b.data()[i];
    return push(std::move(n));
}

Tensor ComputationRecord::mul(const Tensor& a, const Tensor& b) {
    node_of(a, "mul");
    node_of(b, "mul");
    require(a.shape() == b.shape(),
            "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Node n;
    n.op = OpKind::mul;
    n.a = a.node();
    n.b = b.node();
    n.shape = a.shape();
    n.value = a.data();
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= b.data()[i];
    return push(std::move(n));
}

Tensor ComputationRecord::matmul(const Tensor& a, const Tensor& b) {
    node_of(a, "matmul");
    node_of(b, "matmul");
    require(a.shape().size() == 2, "matmul: lhs must be (M,K), got " + shape_str(a.shape()));
    const bool vec = b.shape().size() == 1;
    require(vec || b.shape().size() == 2,
            "matmul: rhs must be (K,N) or (K), got " + shape_str(b.shape()));
    const int M = a.shape()[0], K = a.shape()[1];
    const int Kb = b.shape()[0];
    const int N = vec ? 1 : b.shape()[1];
    require(K == Kb, "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Node n;
    n.op = OpKind::matmul;
    n.a = a.node();
    n.b = b.node();
    n.shape = vec ? std::vector<int>{M} : std::vector<int>{M, N};
    n.value.assign(static_cast<size_t>(M) * N, 0.0);
    for (int i = 0; i < M; ++i) {
        for (int k = 0; k < K; ++k) {
            const double av = a.data()[static_cast<size_t>(i) * K + k];
            if (av == 0.0) continue;
            for (int j = 0; j < N; ++j) {
                n.value[static_cast<size_t>(i) * N + j] += av * b.data()[static_cast<size_t>(k) * N + j];
            }
        }
    }
    return push(std::move(n));
}

Tensor ComputationRecord::log(const Tensor& x) {
    node_of(x, "log");
    Node n;
    n.op = OpKind::log;
    n.a = x.node();
    n.shape = x.shape();
    n.value = x.data();
    for (double& v : n.value) {
        if (v <= 0.0) {
            throw std::runtime_error("log: non-positive input " + std::to_string(v));
        }
        v = std::log(v);
    }
    return push(std::move(n));
}

Tensor ComputationRecord::softmax(const Tensor& x) {
    node_of(x, "softmax");
    require(x.shape().size() == 1, "softmax: input must be 1-D, got " + shape_str(x.shape()));
    Node n;
    n.op = OpKind::softmax;
    n.a = x.node();
    n.shape = x.shape();
    n.value = x.data();
    double m = n.value[0];
    for (double v : n.value) m = std::max(m, v);
    double z = 0.0;
    for (double& v : n.value) {
        v = std::exp(v - m);
        z += v;
    }
    for (double& v : n.value) v /= z;
    return push(std::move(n));
}

Tensor ComputationRecord::cross_entropy(const Tensor& logits, int label) {
    node_of(logits, "cross_entropy");
    require(logits.shape().size() == 1,
            "cross_entropy: logits must be 1-D, got " + shape_str(logits.shape()));
    const int K = logits.shape()[0];
    require(label >= 0 && label < K,
            "cross_entropy: label " + std::to_string(label) + " outside [0," + std::to_string(K) + ")");
    Node n;
    n.op = OpKind::cross_entropy;
    n.a = logits.node();
    n.attrs.label = label;
    n.shape = {1};
    double m = logits.data()[0];
    for (double v : logits.data()) m = std::max(m, v);
    double z = 0.0;
    for (double v : logits.data()) z += std::exp(v - m);
    n.value = {std::log(z) + m - logits.data()[static_cast<size_t>(label)]};
    return push(std::move(n));
}

Tensor ComputationRecord::record_forward(OpKind op, const std::vector<Tensor>& inputs,
                                         const OpAttrs& attrs) {
    auto arity = [&](size_t want) {
        require(inputs.size() == want, std::string(op_name(op)) + ": expected " +
                                           std::to_string(want) + " inputs, got " +
                                           std::to_string(inputs.size()));
    };
    switch (op) {
        case OpKind::leaf:
            arity(1);
            return leaf(inputs[0]);
        case OpKind::conv2d:
            require(inputs.size() == 2 || inputs.size() == 3,
                    "conv2d: expected 2 or 3 inputs, got " + std::to_string(inputs.size()));
            return conv2d(inputs[0], inputs[1], inputs.size() == 3 ? inputs[2] : Tensor(),
                          attrs.stride, attrs.pad);
        case OpKind::relu:
            arity(1);
            return relu(inputs[0]);
        case OpKind::maxpool2d:
            arity(1);
            return maxpool2d(inputs[0], attrs.window);
        case OpKind::global_average_pool:
            arity(1);
            return global_average_pool(inputs[0]);
        case OpKind::linear:
            arity(2);
            return linear(inputs[0], inputs[1]);
        case OpKind::add:
            arity(2);
            return add(inputs[0], inputs[1]);
        case OpKind::mul:
            arity(2);
            return mul(inputs[0], inputs[1]);
        case OpKind::matmul:
            arity(2);
            return matmul(inputs[0], inputs[1]);
        case OpKind::log:
            arity(1);
            return log(inputs[0]);
        case OpKind::softmax:
            arity(1);
            return softmax(inputs[0]);
        case OpKind::cross_entropy:
            arity(1);
            return cross_entropy(inputs[0], attrs.label);
    }
    throw std::invalid_argument("record_forward: unknown op");
}

namespace {

void ensure_slot(std::vector<std::vector<double>>& slots, int node, size_t n) {
    auto& s = slots[static_cast<size_t>(node)];
    if (s.empty()) s.assign(n, 0.0);
}

}  // namespace

GradientTable ComputationRecord::backward(const Tensor& scalar) const {
    const Node& src = node_of(scalar, "backward");
    if (src.value.size() != 1) {
        throw std::invalid_argument("backward: source must be a single value, got shape " +
                                    shape_str(src.shape));
    }

    GradientTable table;
    table.record_ = this;
    table.slots_.resize(nodes_.size());
    table.slots_[static_cast<size_t>(scalar.node())] = {1.0};

    for (int idx = scalar.node(); idx >= 0; --idx) {
        const auto& g = table.slots_[static_cast<size_t>(idx)];
        if (g.empty()) continue;
        const Node& n = nodes_[static_cast<size_t>(idx)];
        switch (n.op) {
            case OpKind::leaf:
                break;
            case OpKind::conv2d: {
                const Node& x = nodes_[static_cast<size_t>(n.a)];
                const Node& w = nodes_[static_cast<size_t>(n.b)];
                const int bias_node = n.attrs.label;
                const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
                const int O = w.shape[0], k = w.shape[2];
                const int Ho = n.shape[1], Wo = n.shape[2];
                const int stride = n.attrs.stride, pad = n.attrs.pad;
                ensure_slot(table.slots_, n.a, x.value.size());
                ensure_slot(table.slots_, n.b, w.value.size());
                auto& gx = table.slots_[static_cast<size_t>(n.a)];
                auto& gw = table.slots_[static_cast<size_t>(n.b)];
                std::vector<double>* gb = nullptr;
                if (bias_node >= 0) {
                    ensure_slot(table.slots_, bias_node, static_cast<size_t>(O));
                    gb = &table.slots_[static_cast<size_t>(bias_node)];
                }
                for (int o = 0; o < O; ++o) {
                    const double* go = g.data() + static_cast<size_t>(o) * Ho * Wo;
                    if (gb) {
                        double s = 0.0;
                        for (int i = 0; i < Ho * Wo; ++i) s += go[i];
                        (*gb)[static_cast<size_t>(o)] += s;
                    }
                    for (int c = 0; c < C; ++c) {
                        const double* xc = x.value.data() + static_cast<size_t>(c) * H * W;
                        double* gxc = gx.data() + static_cast<size_t>(c) * H * W;
                        const double* wp = w.value.data() + (static_cast<size_t>(o) * C + c) * k * k;
                        double* gwp = gw.data() + (static_cast<size_t>(o) * C + c) * k * k;
                        for (int u = 0; u < k; ++u) {
                            for (int v = 0; v < k; ++v) {
                                const double wv = wp[u * k + v];
                                double acc = 0.0;
                                for (int i = 0; i < Ho; ++i) {
                                    const int iy = i * stride + u - pad;
                                    if (iy < 0 || iy >= H) continue;
                                    const double* grow = go + static_cast<size_t>(i) * Wo;
                                    const double* xrow = xc + static_cast<size_t>(iy) * W;
                                    double* gxrow = gxc + static_cast<size_t>(iy) * W;
                                    int j0 = 0, j1 = Wo;
                                    while (j0 < Wo && j0 * stride + v - pad < 0) ++j0;
                                    while (j1 > j0 && (j1 - 1) * stride + v - pad >= W) --j1;
                                    const double* xoff = xrow + (v - pad);
                                    double* gxoff = gxrow + (v - pad);
                                    for (int j = j0; j < j1; ++j) acc += grow[j] * xoff[j * stride];
                                    for (int j = j0; j < j1; ++j) gxoff[j * stride] += grow[j] * wv;
                                }
                                gwp[u * k + v] += acc;
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::relu: {
                const Node& x = nodes_[static_cast<size_t>(n.a)];
                ensure_slot(table.slots_, n.a, x.value.size());
                auto& gx = table.slots_[static_cast<size_t>(n.a)];
                for (size_t i = 0; i < g.size(); ++i) {
                    if (x.value[i] > 0.0) gx[i] += g[i];
                }
                break;
            }
            case OpKind::maxpool2d: {
                const Node& x = nodes_[static_cast<size_t>(n.a)];
                ensure_slot(table.slots_, n.a, x.value.size());
                auto& gx = table.slots_[static_cast<size_t>(n.a)];
                for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>(n.aux[i])] += g[i];
                break;
            }
            case OpKind::global_average_pool: {
                const Node& x = nodes_[static_cast<size_t>(n.a)];
                const int C = n.shape[0];
                const int N = static_cast<int>(x.value.size()) / C;
                ensure_slot(table.slots_, n.a, x.value.size());
                auto& gx = table.slots_[static_cast<size_t>(n.a)];
                for (int c = 0; c < C; ++c) {
                    const double gc = g[static_cast<size_t>(c)] / N;
                    for (int i = 0; i < N; ++i) gx[static_cast<size_t>(c) * N + i] += gc;
                }
                break;
            }
            case OpKind::linear: {
                const Node& w = nodes_[static_cast<size_t>(n.a)];
                const Node& x = nodes_[static_cast<size_t>(n.b)];
                const int K = w.shape[0], C = w.shape[1];
                ensure_slot(table.slots_, n.a, w.value.size());
                ensure_slot(table.slots_, n.b, x.value.size());
                auto& gw = table.slots_[static_cast<size_t>(n.a)];
                auto& gx = table.slots_[static_cast<size_t>(n.b)];
                for (int r = 0; r < K; ++r) {
                    const double gr = g[static_cast<size_t>(r)];
                    for (int c = 0; c < C; ++c) {
                        gw[static_cast<size_t>(r) * C + c] += gr * x.value[static_cast<size_t>(c)];
                        gx[static_cast<size_t>(c)] += gr * w.value[static_cast<size_t>(r) * C + c];
                    }
                }
                break;
            }
            case OpKind::add: {
                ensure_slot(table.slots_, n.a, g.size());
                ensure_slot(table.slots_, n.b, g.size());
                auto& ga = table.slots_[static_cast<size_t>(n.a)];
                auto& gb = table.slots_[static_cast<size_t>(n.b)];
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case OpKind::mul: {
                const Node& a = nodes_[static_cast<size_t>(n.a)];
                const Node& b = nodes_[static_cast<size_t>(n.b)];
                ensure_slot(table.slots_, n.a, g.size());
                ensure_slot(table.slots_, n.b, g.size());
                auto& ga = table.slots_[static_cast<size_t>(n.a)];
                auto& gb = table.slots_[static_cast<size_t>(n.b)];
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * b.value[i];
                    gb[i] += g[i] * a.value[i];
                }
                break;
            }
            case OpKind::matmul: {
                const Node& a = nodes_[static_cast<size_t>(n.a)];
                const Node& b = nodes_[static_cast<size_t>(n.b)];
                const int M = a.shape[0], K = a.shape[1];
                const int N = b.shape.size() == 1 ? 1 : b.shape[1];
                ensure_slot(table.slots_, n.a, a.value.size());
                ensure_slot(table.slots_, n.b, b.value.size());
                auto& ga = table.slots_[static_cast<size_t>(n.a)];
                auto& gb = table.slots_[static_cast<size_t>(n.b)];
                for (int i = 0; i < M; ++i) {
                    for (int k = 0; k < K; ++k) {
                        double acc = 0.0;
                        const double av = a.value[static_cast<size_t>(i) * K + k];
                        for (int j = 0; j < N; ++j) {
                            const double gij = g[static_cast<size_t>(i) * N + j];
                            acc += gij * b.value[static_cast<size_t>(k) * N + j];
                            gb[static_cast<size_t>(k) * N + j] += gij * av;
                        }
                        ga[static_cast<size_t>(i) * K + k] += acc;
                    }
                }
                break;
            }
            case OpKind::log: {
                const Node& x = nodes_[static_cast<size_t>(n.a)];
                ensure_slot(table.slots_, n.a, g.size());
                auto& gx = table.slots_[static_cast<size_t>(n.a)];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x.value[i];
                break;
            }
            case OpKind::softmax: {
                ensure_slot(table.slots_, n.a, g.size());
                auto& gx = table.slots_[static_cast<size_t>(n.a)];
                double dot = 0.0;
                for (size_t i = 0; i < g.size(); ++i) dot += g[i] * n.value[i];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += n.value[i] * (g[i] - dot);
                break;
            }
            case OpKind::cross_entropy: {
                const Node& x = nodes_[static_cast<size_t>(n.a)];
                const int K = x.shape[0];
                ensure_slot(table.slots_, n.a, x.value.size());
                auto& gx = table.slots_[static_cast<size_t>(n.a)];
                double m = x.value[0];
                for (double v : x.value) m = std::max(m, v);
                double z = 0.0;
                for (double v : x.value) z += std::exp(v - m);
                for (int i = 0; i < K; ++i) {
                    double p = std::exp(x.value[static_cast<size_t>(i)] - m) / z;
                    if (i == n.attrs.label) p -= 1.0;
                    gx[static_cast<size_t>(i)] += g[0] * p;
                }
                break;
            }
        }
    }
    return table;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& at,
                                  double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_difference_gradient: step must be > 0");
    Tensor probe = at.detached();
    Tensor grad = Tensor::zeros(at.shape());
    for (int i = 0; i < at.numel(); ++i) {
        const double keep = probe.data()[static_cast<size_t>(i)];
        probe.data()[static_cast<size_t>(i)] = keep + step;
        const double hi = f(probe);
        probe.data()[static_cast<size_t>(i)] = keep - step;
        const double lo = f(probe);
        probe.data()[static_cast<size_t>(i)] = keep;
        if (!std::isfinite(hi) || !std::isfinite(lo)) {
            throw std::runtime_error("finite_difference_gradient: non-finite evaluation at element " +
                                     std::to_string(i));
        }
        grad.data()[static_cast<size_t>(i)] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

}  // namespace wsol

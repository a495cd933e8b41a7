#pragma once

#include <functional>
#include <string>
#include <vector>

namespace wsol {

class ComputationRecord;

// Dense row-major tensor of 64-bit reals. A tensor is either a plain value
// or additionally a handle into the ComputationRecord that produced it; the
// handle is what backward() needs to locate the node.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);

    const std::vector<int>& shape() const { return shape_; }
    int numel() const { return static_cast<int>(data_.size()); }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    // Value of a single-element tensor.
    double value() const;

    bool attached() const { return record_ != nullptr; }
    int node() const { return node_; }
    const ComputationRecord* record() const { return record_; }

    // Same values, no record handle.
    Tensor detached() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
    const ComputationRecord* record_ = nullptr;
    int node_ = -1;

    friend class ComputationRecord;
};

enum class OpKind {
    leaf,
    conv2d,
    relu,
    maxpool2d,
    global_average_pool,
    linear,
    add,
    mul,
    matmul,
    log,
    softmax,
    cross_entropy,
};

const char* op_name(OpKind kind);

// Attributes consumed by the ops that need them (conv2d: stride/pad,
// maxpool2d: window, cross_entropy: label).
struct OpAttrs {
    int stride = 1;
    int pad = 0;
    int window = 2;
    int label = 0;
};

// Gradients of one backward pass, one slot per record node.
class GradientTable {
public:
    // Gradient with respect to a recorded tensor; zero tensor for nodes the
    // backward walk never reached.
    Tensor grad_of(const Tensor& t) const;

    const std::vector<double>& slot(int node) const;
    bool reached(int node) const;

private:
    friend class ComputationRecord;
    const ComputationRecord* record_ = nullptr;
    std::vector<std::vector<double>> slots_;
};

// Append-only record of forward operations. Nodes are stored in topological
// order by construction, so one reverse walk computes exact gradients of any
// recorded scalar with respect to every recorded tensor.
//
// A record is confined to a single thread; run independent records in
// parallel instead. Detached tensors are immutable values, safe to share.
//
// Conventions, fixed for every consumer of this engine:
//   conv2d     zero padding, explicit stride, square kernels
//   maxpool2d  non-overlapping windows (stride == window), extents must divide
//   relu       derivative at exactly 0 is 0
//   argmax tie lowest flat index wins
// With finite checks on (the default), any op whose output contains NaN/Inf
// raises instead of propagating the value.
class ComputationRecord {
public:
    ComputationRecord() = default;
    ComputationRecord(const ComputationRecord&) = delete;
    ComputationRecord& operator=(const ComputationRecord&) = delete;
    ComputationRecord(ComputationRecord&&) = delete;
    ComputationRecord& operator=(ComputationRecord&&) = delete;

    void set_finite_checks(bool on) { finite_checks_ = on; }

    // Registers a plain value as an input/parameter node.
    Tensor leaf(const Tensor& value);

    // x: (C,H,W), w: (O,C,k,k), bias: (O) or empty tensor for none.
    Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
    Tensor relu(const Tensor& x);
    Tensor maxpool2d(const Tensor& x, int window);
    // x: (C,H,W) or (C,N) -> (C).
    Tensor global_average_pool(const Tensor& x);
    // w: (K,C), x: (C) -> (K). Bias-free; compose with add if needed.
    Tensor linear(const Tensor& w, const Tensor& x);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    // a: (M,K), b: (K,N) -> (M,N); b: (K) -> (M).
    Tensor matmul(const Tensor& a, const Tensor& b);
    // Elementwise natural log; non-positive input is an error.
    Tensor log(const Tensor& x);
    // 1-D, numerically stable.
    Tensor softmax(const Tensor& x);
    // -log(softmax(logits)[label]) as a scalar.
    Tensor cross_entropy(const Tensor& logits, int label);

    // Generic dispatch over the op set above.
    Tensor record_forward(OpKind op, const std::vector<Tensor>& inputs, const OpAttrs& attrs = {});

    // Gradient of a recorded single-element tensor with respect to every
    // recorded node. Pure: repeated calls give bitwise-identical tables.
    GradientTable backward(const Tensor& scalar) const;

    int size() const { return static_cast<int>(nodes_.size()); }
    const std::vector<int>& node_shape(int node) const;

private:
    struct Node {
        OpKind op = OpKind::leaf;
        int a = -1;
        int b = -1;
        OpAttrs attrs;
        std::vector<int> shape;
        std::vector<double> value;
        std::vector<int> aux;  // maxpool argmax indices
    };

    Tensor push(Node node);
    const Node& node_of(const Tensor& t, const char* who) const;
    void check_finite(const Node& n) const;

    std::vector<Node> nodes_;
    bool finite_checks_ = true;

    friend class GradientTable;
};

// Central-difference estimate (f(x+h e) - f(x-h e)) / 2h per element.
// Verification oracle for backward(); f must be evaluable and finite at the
// perturbed points.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& at, double step);

std::string shape_str(const std::vector<int>& shape);

}  // namespace wsol

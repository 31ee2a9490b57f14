#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "deepsense/tensor.hpp"

namespace deepsense {

class Graph;

/// One entry of the dynamic tape. Values are immutable once attached;
/// gradients are allocated lazily on the first backward contribution.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Graph* graph = nullptr;
    std::vector<Node*> parents;
    std::function<void(Node&)> backward;
};

/// Dynamic computation tape, rebuilt per forward pass. Nodes are created in
/// topological order (operations evaluate eagerly), so the reverse sweep is
/// just reverse creation order. Single-writer: forward/backward on one graph
/// must be externally serialized; distinct graphs are independent.
class Graph {
public:
    Node* leaf(Tensor value, bool requires_grad);
    Node* constant(Tensor value) { return leaf(std::move(value), false); }
    Node* param(const Tensor& value) { return leaf(value, true); }

    Node* make(Tensor value, std::vector<Node*> parents, std::function<void(Node&)> back);

    /// Reverse-mode accumulation from a scalar loss. A second call without a
    /// fresh graph is rejected.
    void backward(Node* loss);

    size_t size() const { return nodes_.size(); }

private:
    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

/// Gradient buffer of n, zero-allocated on first use.
Tensor& grad_buf(Node* n);

// Elementwise. Binary ops require equal shapes; the only broadcast is a
// true scalar (numel 1) against any shape.
Node* relu(Node* x);
Node* sigmoid(Node* x);
Node* tanh_op(Node* x);
Node* exp_op(Node* x);
Node* log_op(Node* x);
Node* sqrt_op(Node* x);
Node* add(Node* a, Node* b);
Node* sub(Node* a, Node* b);
Node* mul(Node* a, Node* b);
Node* div(Node* a, Node* b);
Node* add_scalar(Node* x, double c);
Node* mul_scalar(Node* x, double c);
Node* neg(Node* x);

Node* matmul(Node* a, Node* b);
/// x[B,in] * w[in,out] + b[out] broadcast over rows.
Node* linear(Node* x, Node* w, Node* b);

/// Valid cross-correlation, stride 1. input (c_in,h,w) or batched
/// (B,c_in,h,w); filters (c_out,c_in,fh,fw); bias (c_out).
Node* conv2d_valid(Node* input, Node* filters, Node* bias);

Node* reshape(Node* x, std::vector<int64_t> shape);
Node* concat(const std::vector<Node*>& xs, int axis);
/// Contiguous slice along one axis of a rank-2 tensor.
Node* slice(Node* x, int axis, int64_t start, int64_t count);

enum class Reduce { Sum, Mean, Max, Argmax };
/// Reduce along one axis. Sum/Mean/Max are differentiable (Max routes the
/// gradient to the lowest max index); Argmax yields a constant index tensor.
Node* reduce(Node* x, Reduce op, int axis);
Node* sum_all(Node* x);
Node* mean_all(Node* x);

Tensor argmax_tensor(const Tensor& x, int axis);

// Rowwise over the last axis of a rank-2 tensor, max-shifted for stability.
Node* softmax_rows(Node* x);
Node* log_softmax_rows(Node* x);

}  // namespace deepsense

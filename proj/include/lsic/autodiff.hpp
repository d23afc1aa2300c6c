#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lsic/tensor.hpp"

namespace lsic::ad {

// A trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m, v; // Adam moments, allocated on first optimizer step

    Parameter() = default;
    Parameter(std::string n, Tensor val)
        : name(std::move(n)), value(std::move(val)), grad(Tensor::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class Tape;

// Lightweight handle into a tape node. Vars are only valid while their tape
// is alive; they are created eagerly (values computed on construction).
class Var {
public:
    Var() = default;
    Var(Tape* t, int id) : tape_(t), id_(id) {}

    const Tensor& val() const;
    int id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Dynamic reverse-mode tape. Nodes are appended in evaluation order, which is
// already topological, so backward is a single reverse sweep. The backward
// callback receives the node's own id so it can read its output gradient.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    struct Node {
        Tensor value;
        Tensor grad; // allocated lazily during backward
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var constant(Tensor t);
    Var leaf(Tensor t, bool requires_grad);
    Var param(Parameter& p); // leaf bound to p; backward() adds into p.grad

    // Runs the reverse sweep from a scalar node and flushes gradients into
    // every bound Parameter. One sweep per tape; build a fresh tape per step.
    void backward(const Var& loss);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor& grad(int id); // lazily allocated, zero-init
    const Tensor& grad_of(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id())].grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    Var emit(Tensor value, std::vector<int> parents, BackwardFn bw);

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    // deque: references handed out by value()/grad() stay valid as the tape
    // grows (ops read parent tensors while emitting new nodes)
    std::deque<Node> nodes_;
    std::vector<std::pair<int, Parameter*>> bound_;
};

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var abs_op(const Var& a);
Var log_clamped(const Var& a, double eps); // log(max(a, eps))
Var stop_gradient(const Var& a);
Var reshape(const Var& a, std::vector<int> shape);

// ---- reductions / broadcasts ----
Var sum_all(const Var& a);     // -> (1)
Var mean_all(const Var& a);    // -> (1)
Var mean_rows(const Var& a);   // (n,d) -> (d)
Var row_broadcast(const Var& v, int n);       // (d) or (1,d) -> (n,d)
Var mul_colvec(const Var& x, const Var& s);   // (n,d) * (n,1) rowwise
Var weighted_sum(const Var& a, Tensor w);     // sum(a .* w) -> (1), w constant

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);     // (n,k)x(k,m)
Var matmul_nt(const Var& a, const Var& b);  // (n,k)x(m,k)^T -> (n,m)
Var linear(const Var& x, const Var& w, const Var& b); // x:(n,din), w:(dout,din), b:(dout)
Var concat_cols(const Var& a, const Var& b);
Var softmax_rows(const Var& a);
Var gather_rows(const Var& table, std::vector<int> ids);
Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets); // mean over rows

// Normalizes a weight by sigma = u^T W v with u, v held constant (the
// persistent power-iteration vectors). Gradient follows the quotient rule,
// i.e. includes the -<g, W/sigma> u v^T / sigma term.
Var spectral_scale(const Var& w, const Tensor& u, const Tensor& v);

// ---- conv / spatial (NCHW) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var broadcast_add_channels(const Var& x, const Var& v); // (N,C,H,W) + (N,C)
Var add_bias_channels(const Var& x, const Var& b);      // (N,C,H,W) + (C)
Var spatial_to_rows(const Var& x, int sample);          // -> (H*W, C)
Var rows_to_spatial(const std::vector<Var>& rows, int c, int h, int w);
Var slice_batch(const Var& x, int sample);              // -> (1,C,H,W)
Var mean_spatial(const Var& x);                         // (N,C,H,W) -> (N,C)
Var spatial_broadcast(const Var& v, int h, int w);      // (N,C) -> (N,C,H,W)
Var mul_mask(const Var& x, Tensor mask);                // (N,C,H,W) * (N,1,H,W) const

struct CropBox {
    int top = 0, left = 0, height = 0, width = 0;
};
// Per-sample nearest-neighbour crop-and-resize; differentiable via
// scatter-add of output gradients back to the sampled source pixels.
Var crop_resize_nearest(const Var& x, const std::vector<CropBox>& boxes, int out_h, int out_w);

} // namespace lsic::ad

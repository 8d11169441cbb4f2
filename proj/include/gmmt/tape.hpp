#pragma once

#include <functional>
#include <vector>

#include "gmmt/tensor.hpp"

namespace gmmt {

// Running statistics owned by a batch_norm layer. Updated in train mode,
// consumed in eval mode.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;

    explicit BatchNormState(int channels)
        : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, real(1))) {}
    BatchNormState() = default;
};

// Reverse-mode tape. One tape per forward pass; nodes are appended in
// evaluation order so a reverse sweep over the node list is a valid
// topological order for backpropagation. Graphs are not retained across
// optimizer steps.
class Tape {
  public:
    using NodeId = int;

    explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

    // Leaves.
    NodeId constant(Tensor v);      // no gradient of interest
    NodeId input(Tensor v);         // gradient readable via grad()
    NodeId param(Param& p);         // gradient accumulated into p.grad by backward()

    // Layer set (fixed; exactly what the denoiser, generator, discriminator
    // and tracking head need).
    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
    NodeId channel_concat(const std::vector<NodeId>& xs);
    NodeId stack(const std::vector<NodeId>& samples);  // n x [C,H,W] -> [N,C,H,W]
    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, BatchNormState& state, bool training,
                      bool update_running = true, real eps = real(1e-5), real momentum = real(0.1));
    NodeId channel_norm(NodeId x, NodeId gamma, NodeId beta, real eps = real(1e-5));
    NodeId mse(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId lin_comb(NodeId a, NodeId b, real ca, real cb);  // ca*a + cb*b elementwise
    NodeId scale(NodeId a, real c);
    NodeId sum(NodeId a);          // -> scalar
    NodeId sample_mean(NodeId x);  // [N,C,H,W] -> [N], or [C,H,W] -> scalar; mean over all but batch dim
    NodeId linear(NodeId x, NodeId w, NodeId b);  // x:[In], w:[Out,In], b:[Out]
    NodeId broadcast_hw(NodeId v, int height, int width);  // [E] -> [E,H,W]
    NodeId gather(NodeId x, std::vector<std::int64_t> flat_indices);  // -> [k]

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
    real scalar(NodeId id) const;

    // Seeds d(out)/d(out)=1 (out must be scalar), sweeps the tape in reverse
    // and folds leaf gradients into their bound Params.
    void backward(NodeId out);

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back;  // empty for leaves/constants
        Param* bound = nullptr;
        bool needs_grad = false;  // some ancestor leaf wants gradients
    };

    NodeId push(Tensor v);
    NodeId push_op(Tensor v, std::initializer_list<NodeId> parents);
    NodeId push_op(Tensor v, const std::vector<NodeId>& parents);
    void check(const Tensor& t, const char* where) const;

    std::vector<Node> nodes_;
    bool check_finite_;
};

// Max scaled gradient error between the tape and central finite differences
// (step h) over every element of every tensor in `wrt`. The builder runs the
// forward pass on a fresh tape and returns the scalar output node; it must
// bind each Param in `wrt` via tape.param(). Error metric per element:
// |analytic - numeric| / max(1, |analytic|, |numeric|). 64-bit builds only.
double grad_check(const std::function<Tape::NodeId(Tape&)>& build, const std::vector<Param*>& wrt,
                  double h = 1e-5);

}  // namespace gmmt

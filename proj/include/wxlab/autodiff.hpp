// SPDX-License-Identifier: Apache-2.0
//
// Small define-by-run reverse-mode autodiff over dense double tensors. Each
// op records its parents and a closure that accumulates gradients into them;
// backward() walks the graph once in reverse topological order.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "wxlab/losses.hpp"
#include "wxlab/tensor.hpp"

namespace wxlab::ad {

class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Node(Tensor v, bool rg) : value(std::move(v)), requires_grad(rg) {}

    Tensor value;
    Tensor grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void()> backward_fn;  // reads this->grad, feeds parents

    // Adds g into grad, allocating zeros on first use. No-op for nodes that
    // do not require gradients (constants stay constant).
    void accumulate(const Tensor& g);
    void clear_grad() { grad = Tensor(); }
    // Gradient as a tensor even when nothing was accumulated yet.
    Tensor grad_or_zeros() const;
};

// Gradient recording is on by default; a NoGradGuard turns it off for the
// current scope (e.g. evaluation rollouts), so ops produce detached values.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// Leaf constructors.
Var constant(Tensor v);
Var leaf(Tensor v);  // trainable: requires_grad = true

// Runs reverse-mode accumulation from a scalar root (numel == 1).
void backward(const Var& root);

// Elementwise and scalar ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// alpha*a + beta*b; the convex mix used by scheduled sampling.
Var add_scaled(const Var& a, const Var& b, double alpha, double beta);
Var relu(const Var& a);

enum class PadX { zero, circular };
enum class PadY { zero, reflect };

// Pads [N,C,H,W] by (py, px) per side. Circular x wraps longitude; reflect y
// mirrors without repeating the boundary row. Throws when the pad reaches
// the field size.
Var pad2d(const Var& x, int64_t py, int64_t px, PadX x_mode, PadY y_mode);

// Valid (unpadded) convolution of [N,C,H,W] with [O,C,kh,kw] at the given
// stride; bias may be null.
Var conv2d(const Var& x, const Var& w, const Var& bias, int64_t stride);

// Transposed convolution with a 2x2 kernel at stride 2 (doubles H and W);
// weight is [I,O,2,2], bias may be null.
Var conv_transpose2d(const Var& x, const Var& w, const Var& bias);

// GroupNorm over [N,C,H,W] with affine parameters gamma, beta of length C.
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int64_t groups, double eps);

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int64_t c_begin, int64_t c_end);

// x[..., F] times w[F,O] plus optional bias[O], applied to the flattened
// leading dims; used both for pointwise feature maps and kernel networks.
Var linear(const Var& x, const Var& w, const Var& bias);

// Adds a length-F bias to the trailing feature dim of x[..., F].
Var add_feature_bias(const Var& x, const Var& bias);

// Layout moves between grid tensors [N,C,H,W] and point sets [N,H*W,C].
Var channels_last(const Var& x);
Var channels_first(const Var& x, int64_t h, int64_t w);

// Graph ops. Edges are grouped by destination: edges of destination node j
// occupy [dst_offsets[j], dst_offsets[j+1]) and read from source point
// src_index[e].
//
// kernels[e] is a flattened (d_out x d_in) matrix applied to the source
// features: out[n,e,o] = sum_c kernels[e, o*d_in + c] * u[n, src_index[e], c].
Var edge_matvec(const Var& kernels, const Var& u, const std::vector<int64_t>& src_index,
                int64_t d_out);

// Mean over each destination's edge block: [N,E,F] -> [N,P,F]. Destinations
// with no edges are rejected at graph construction time.
Var scatter_mean(const Var& edges, const std::vector<int64_t>& dst_offsets);

// Scalar losses (see losses.hpp for semantics). The gradient comes from
// loss_grad, so the analytic form is shared with the pure functions.
Var loss_op(const Var& pred, const Tensor& target, const LossConfig& cfg,
            const std::vector<double>& row_weights = {});

// Loss restricted to masked channels: channel_mask is [N,C] with nonzero
// entries marking masked channels; unmasked channels contribute nothing, so
// their gradient is exactly zero. Averages over masked elements only.
Var masked_channel_loss(const Var& pred, const Tensor& target, const LossConfig& cfg,
                        const Tensor& channel_mask);

// weights[i] * terms[i] summed into one scalar.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

}  // namespace wxlab::ad

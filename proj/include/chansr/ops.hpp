#pragma once

#include <vector>

#include "chansr/tensor.hpp"

namespace chansr::ops {

/// Same-size 2-D convolution, stride 1, zero padding (k-1)/2.
/// input [N,Cin,H,W], weight [Cout,Cin,k,k] with k odd in {1,3,5,7},
/// bias [Cout] -> [N,Cout,H,W].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double s);

/// Concatenate along the channel axis: [N,C1,H,W] + [N,C2,H,W] -> [N,C1+C2,H,W].
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Pixel replication by a power-of-two factor; gradient sums replicated cells.
Tensor upsample_nearest(const Tensor& x, int factor);

/// Non-overlapping f x f block mean; H and W must be divisible by f.
Tensor block_mean_pool(const Tensor& x, int factor);

/// [N,C,H,W] -> [N,C] per-channel spatial mean.
Tensor global_avg_pool(const Tensor& x);

/// x [N,Din], weight [Dout,Din], bias [Dout] -> [N,Dout].
Tensor fully_connected(const Tensor& x, const Tensor& weight,
                       const Tensor& bias);

/// Stack B tensors of shape [N,C] into [N,B,C].
Tensor stack_rows(const std::vector<Tensor>& xs);

/// Softmax over the branch axis of [N,B,C] logits.
Tensor branch_softmax(const Tensor& logits);

/// out[n,c,h,w] = sum_b weights[n,b,c] * branches[b][n,c,h,w].
Tensor branch_weighted_sum(const std::vector<Tensor>& branches,
                           const Tensor& weights);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean |pred - gt| over cells where mask > 0.5. Throws if no valid cell.
Tensor masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// sqrt(mean (pred - gt)^2) over valid cells.
Tensor masked_stde(const Tensor& pred, const Tensor& target,
                   const Tensor& mask);

/// Per-pixel 2-class cross-entropy. logits [N,2,H,W], labels and mask
/// [N,1,H,W] (labels 0/1 on valid pixels). Stabilized by max subtraction.
Tensor masked_ce(const Tensor& logits, const Tensor& labels,
                 const Tensor& mask);

}  // namespace chansr::ops

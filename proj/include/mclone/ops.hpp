#pragma once

#include <cstdint>
#include <vector>

#include "mclone/tensor.hpp"

// Differentiable tensor ops. Every op records itself on the tape of any
// tracked input; gradients are exact (no stochastic estimators). Broadcasting
// is limited to leading batch dims of matmul and the explicit bias ops.
namespace mclone {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

/// x viewed as [G, R, C, S] with bias [G, C] (or [C] for G = 1):
/// out[g, r, c, s] = x[g, r, c, s] + bias[g, c]. `channel_axis` names C in x.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias, int channel_axis);

/// Batched contraction [..., m, n] x [..., n, p]. b may be rank 2 (shared
/// across a's batch) or carry the same batch dims as a.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape dims);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor concat(const Tensor& a, const Tensor& b, int axis);

Tensor softmax_last(const Tensor& x);
Tensor silu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_squares(const Tensor& x);
/// Full contraction sum(a * b) accumulated in double.
Tensor dot(const Tensor& a, const Tensor& b);
/// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

/// Rows of `table` [V, E] selected by `ids` -> [ids.size(), E].
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

/// Same-padded stride-1 2-D convolution. x [N, Cin, H, W], w [Cout, Cin, k, k]
/// with odd k, bias [Cout] or empty.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor avg_pool2(const Tensor& x);
Tensor upsample_nearest2(const Tensor& x);
/// Group normalisation over (C / groups, H, W) per sample. x [N, C, H, W].
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

}  // namespace mclone

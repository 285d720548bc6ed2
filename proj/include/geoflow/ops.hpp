#pragma once

// Differentiable operations over Var<T>. Volumes are laid out as
// [batch, channel, depth, height, width]; every op is instantiated for float
// (training) and double (gradient checks).

#include "geoflow/tensor.hpp"

namespace geoflow::tc {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

// Elementwise product. `b` may have a single channel, in which case it is
// broadcast across the channels of `a` (attention coefficients).
template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// Nearest-neighbour upsampling by 2 along depth, height and width.
template <typename T>
Var<T> upsample_nearest2(const Var<T>& x);

// weight [C_out, C_in, k, k, k], bias [C_out]; k odd.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding);

// Stride-2 3x3x3 convolution with padding 1: halves every spatial extent.
template <typename T>
Var<T> downsample_stride2(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// x [B, C, ...] plus bias [B, C] broadcast over the spatial extent.
template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias);

// x [B, in] -> [B, out] with weight [out, in], bias [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target);

// Group count used for a layer with `channels` channels: `requested`, capped
// at the channel count.
int effective_groups(int channels, int requested);

}  // namespace geoflow::tc

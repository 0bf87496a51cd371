#pragma once

#include <vector>

#include "samiro/tensor.hpp"

// Differentiable primitives. Feature maps are [C,H,W]; kernels [C_out,C_in,k,k].
namespace samiro {

/// Cross-correlation with zero padding. `bias` may be an undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding);

enum class PoolMode { avg, max };

/// Mean or max over the channel axis: [C,H,W] -> [1,H,W]. Max routes the
/// gradient to the first maximal channel.
template <typename T>
Tensor<T> pool_over_channels(const Tensor<T>& input, PoolMode mode);

enum class BinaryOp { add, sub, mul, div };

/// `b` must equal `a` in shape or broadcast to it (right-aligned, extents 1 or
/// equal). Output has a's shape; broadcast axes are sum-reduced on backward.
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::div, a, b); }

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s);

enum class Activation { sigmoid, relu, log_abs };

inline constexpr double kLogFloor = 1e-8;

/// sigmoid, relu (subgradient 0 at the kink), or log(max(|x|, 1e-8)).
template <typename T>
Tensor<T> activate(Activation op, const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activate(Activation::sigmoid, x); }
template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activate(Activation::relu, x); }
template <typename T>
Tensor<T> log_abs(const Tensor<T>& x) { return activate(Activation::log_abs, x); }

// max(|x|, floor); gradient sign(x) above the floor, 0 below.
template <typename T>
Tensor<T> abs_floor(const Tensor<T>& x, T floor);
// Gradient 0 where the output is 0.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
template <typename T>
Tensor<T> square(const Tensor<T>& x);

enum class Reduction { sum, mean, sq_l2_norm };

/// Reduces over `axes` (empty = all axes). With keepdims the reduced axes stay
/// as extent 1, otherwise they are removed.
template <typename T>
Tensor<T> reduce(Reduction op, const Tensor<T>& x, const std::vector<std::size_t>& axes = {},
                 bool keepdims = false);

template <typename T>
Tensor<T> sum(const Tensor<T>& x) { return reduce(Reduction::sum, x); }
template <typename T>
Tensor<T> mean(const Tensor<T>& x) { return reduce(Reduction::mean, x); }
template <typename T>
Tensor<T> sq_l2_norm(const Tensor<T>& x) { return reduce(Reduction::sq_l2_norm, x); }

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Channels [begin, end) of a [C,H,W] tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Nearest-neighbour upsampling by an integer factor: [C,H,W] -> [C,fH,fW].
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor);
// Non-overlapping average pooling: [C,H,W] -> [C,H/f,W/f].
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int factor);

}  // namespace samiro

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "samiro/lane.hpp"
#include "samiro/ops.hpp"
#include "samiro/rng.hpp"

namespace samiro {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>*>>;

template <typename T>
using FeaturePyramid = std::vector<Tensor<T>>;

/// Conv + optional bias with "same"-style padding (k-1)/2.
template <typename T>
struct ConvLayer {
  Tensor<T> weight;  // [C_out, C_in, k, k]
  Tensor<T> bias;    // [C_out] or undefined
  int stride = 1;

  // Uniform(+-sqrt(6/fan_in)) weights, zero bias.
  static ConvLayer init(int c_in, int c_out, int k, int stride, bool with_bias, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out);
};

/// CBAM-style spatial attention: W_SA = sigmoid(p([avg_c(F); max_c(F)])).
template <typename T>
struct SpatialAttentionBlock {
  Tensor<T> kernel;  // [1, 2, k, k]
  Tensor<T> bias;    // [1]

  static SpatialAttentionBlock init(int k, Rng& rng);
  static SpatialAttentionBlock zeros(int k);
  int kernel_size() const { return static_cast<int>(kernel.dim(2)); }
  void collect(const std::string& prefix, NamedParams<T>& out);
};

template <typename T>
struct AttentionOutput {
  Tensor<T> weights;   // [1,H,W], strictly inside (0,1)
  Tensor<T> filtered;  // weights broadcast over channels times F
};

template <typename T>
AttentionOutput<T> spatial_attention(const SpatialAttentionBlock<T>& block, const Tensor<T>& features);

/// Stack of stride-2 3x3 conv + relu stages; stage l halves the spatial extent.
template <typename T>
struct Encoder {
  int in_channels = 1;
  std::vector<int> widths;
  std::vector<ConvLayer<T>> stages;

  static Encoder init(int in_channels, const std::vector<int>& widths, Rng& rng);
  std::size_t num_stages() const { return stages.size(); }
  void collect(const std::string& prefix, NamedParams<T>& out);
};

template <typename T>
FeaturePyramid<T> encoder_forward(const Encoder<T>& enc, const Tensor<T>& image);

/// Bias-free 1x1 channel map aligning target width C_t to oracle width C_s.
template <typename T>
struct Projection {
  Tensor<T> weight;  // [C_s, C_t, 1, 1]

  static Projection init(int c_target, int c_oracle, Rng& rng);
  static Projection identity(int channels);
  void collect(const std::string& prefix, NamedParams<T>& out);
};

template <typename T>
Tensor<T> project(const Projection<T>& g, const Tensor<T>& features);

/// Reduce conv + relu at the deepest stage, nearest upsample back to input
/// resolution, then a 3x3 conv to `out_channels`. The lane head applies a
/// sigmoid; the MIM reconstruction decoder uses the same layout, linear.
template <typename T>
struct UpsampleHead {
  ConvLayer<T> reduce;
  ConvLayer<T> out;
  int upsample = 1;

  static UpsampleHead init(int c_in, int hidden, int out_channels, int upsample, Rng& rng);
  Tensor<T> forward_logits(const Tensor<T>& deepest) const;
  void collect(const std::string& prefix, NamedParams<T>& out);
};

template <typename T>
using LaneHead = UpsampleHead<T>;

/// Per-pixel lane probability [1,H,W].
template <typename T>
Tensor<T> lane_head_forward(const LaneHead<T>& head, const Tensor<T>& deepest);

struct DecodeParams {
  int row_stride = 2;
  double threshold = 0.5;
  double max_dx = 8.0;   // horizontal gap tolerance when linking rows
  int max_row_gap = 3;   // sampled rows a track may skip
  int min_points = 2;
};

/// Row-wise run extraction and nearest-x linking of a [1,H,W] probability map.
LaneList decode_lanes(std::span<const float> prob, std::size_t height, std::size_t width,
                      const DecodeParams& params);

template <typename T>
LaneList decode_lanes(const Tensor<T>& prob_map, const DecodeParams& params);

}  // namespace samiro

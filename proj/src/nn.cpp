#include "samiro/nn.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "samiro/error.hpp"

namespace samiro {

template <typename T>
ConvLayer<T> ConvLayer<T>::init(int c_in, int c_out, int k, int stride, bool with_bias, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(c_out) * c_in * k * k;
  const double bound = std::sqrt(6.0 / (static_cast<double>(c_in) * k * k));
  std::vector<T> w(n);
  for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  ConvLayer layer;
  layer.weight = Tensor<T>({static_cast<std::size_t>(c_out), static_cast<std::size_t>(c_in),
                            static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                           std::move(w), true);
  if (with_bias) layer.bias = Tensor<T>::zeros({static_cast<std::size_t>(c_out)}, true);
  layer.stride = stride;
  return layer;
}

template <typename T>
Tensor<T> ConvLayer<T>::forward(const Tensor<T>& x) const {
  const int k = static_cast<int>(weight.dim(2));
  return conv2d(x, weight, bias, stride, (k - 1) / 2);
}

template <typename T>
void ConvLayer<T>::collect(const std::string& prefix, NamedParams<T>& out) {
  out.emplace_back(prefix + ".weight", &weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", &bias);
}

template <typename T>
SpatialAttentionBlock<T> SpatialAttentionBlock<T>::init(int k, Rng& rng) {
  if (k < 1 || k % 2 == 0) throw DimensionError("spatial attention kernel must be odd, got " + std::to_string(k));
  auto conv = ConvLayer<T>::init(2, 1, k, 1, true, rng);
  // Smaller than the conv default so the initial map stays near 0.5.
  for (auto& v : conv.weight.mutable_data()) v *= T(0.25);
  return {conv.weight, conv.bias};
}

template <typename T>
SpatialAttentionBlock<T> SpatialAttentionBlock<T>::zeros(int k) {
  const auto kk = static_cast<std::size_t>(k);
  return {Tensor<T>::zeros({1, 2, kk, kk}, true), Tensor<T>::zeros({1}, true)};
}

template <typename T>
void SpatialAttentionBlock<T>::collect(const std::string& prefix, NamedParams<T>& out) {
  out.emplace_back(prefix + ".kernel", &kernel);
  out.emplace_back(prefix + ".bias", &bias);
}

template <typename T>
AttentionOutput<T> spatial_attention(const SpatialAttentionBlock<T>& block, const Tensor<T>& features) {
  const auto pooled = concat_channels(pool_over_channels(features, PoolMode::avg),
                                      pool_over_channels(features, PoolMode::max));
  const int k = block.kernel_size();
  auto weights = sigmoid(conv2d(pooled, block.kernel, block.bias, 1, (k - 1) / 2));
  auto filtered = mul(features, weights);
  return {std::move(weights), std::move(filtered)};
}

template <typename T>
Encoder<T> Encoder<T>::init(int in_channels, const std::vector<int>& widths, Rng& rng) {
  if (widths.empty()) throw DimensionError("encoder needs at least one stage");
  Encoder enc;
  enc.in_channels = in_channels;
  enc.widths = widths;
  int c = in_channels;
  for (int wdt : widths) {
    enc.stages.push_back(ConvLayer<T>::init(c, wdt, 3, 2, true, rng));
    c = wdt;
  }
  return enc;
}

template <typename T>
void Encoder<T>::collect(const std::string& prefix, NamedParams<T>& out) {
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect(prefix + ".stage" + std::to_string(i + 1), out);
}

template <typename T>
FeaturePyramid<T> encoder_forward(const Encoder<T>& enc, const Tensor<T>& image) {
  if (image.rank() != 3) throw DimensionError("encoder: image must be [C,H,W], got " + shape_str(image.shape()));
  const std::size_t div = std::size_t{1} << enc.num_stages();
  if (image.dim(1) % div != 0 || image.dim(2) % div != 0) {
    throw DimensionError("encoder: spatial axes 1,2 of " + shape_str(image.shape()) +
                         " must be divisible by 2^L = " + std::to_string(div));
  }
  FeaturePyramid<T> out;
  Tensor<T> x = image;
  for (const auto& stage : enc.stages) {
    x = relu(stage.forward(x));
    out.push_back(x);
  }
  return out;
}

template <typename T>
Projection<T> Projection<T>::init(int c_target, int c_oracle, Rng& rng) {
  const auto n = static_cast<std::size_t>(c_target) * c_oracle;
  const double bound = std::sqrt(3.0 / c_target);
  std::vector<T> w(n);
  for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  return {Tensor<T>({static_cast<std::size_t>(c_oracle), static_cast<std::size_t>(c_target), 1, 1}, std::move(w), true)};
}

template <typename T>
Projection<T> Projection<T>::identity(int channels) {
  const auto c = static_cast<std::size_t>(channels);
  std::vector<T> w(c * c, T(0));
  for (std::size_t i = 0; i < c; ++i) w[i * c + i] = T(1);
  return {Tensor<T>({c, c, 1, 1}, std::move(w), true)};
}

template <typename T>
void Projection<T>::collect(const std::string& prefix, NamedParams<T>& out) {
  out.emplace_back(prefix + ".weight", &weight);
}

template <typename T>
Tensor<T> project(const Projection<T>& g, const Tensor<T>& features) {
  if (features.rank() != 3 || features.dim(0) != g.weight.dim(1)) {
    throw DimensionError("project: feature axis 0 of " + shape_str(features.shape()) +
                         " must equal projection input width " + std::to_string(g.weight.dim(1)));
  }
  return conv2d(features, g.weight, Tensor<T>{}, 1, 0);
}

template <typename T>
UpsampleHead<T> UpsampleHead<T>::init(int c_in, int hidden, int out_channels, int upsample, Rng& rng) {
  UpsampleHead head;
  head.reduce = ConvLayer<T>::init(c_in, hidden, 3, 1, true, rng);
  head.out = ConvLayer<T>::init(hidden, out_channels, 3, 1, true, rng);
  head.upsample = upsample;
  return head;
}

template <typename T>
Tensor<T> UpsampleHead<T>::forward_logits(const Tensor<T>& deepest) const {
  return out.forward(upsample_nearest(relu(reduce.forward(deepest)), upsample));
}

template <typename T>
void UpsampleHead<T>::collect(const std::string& prefix, NamedParams<T>& params) {
  reduce.collect(prefix + ".reduce", params);
  out.collect(prefix + ".out", params);
}

template <typename T>
Tensor<T> lane_head_forward(const LaneHead<T>& head, const Tensor<T>& deepest) {
  return sigmoid(head.forward_logits(deepest));
}

LaneList decode_lanes(std::span<const float> prob, std::size_t height, std::size_t width,
                      const DecodeParams& params) {
  struct Track {
    std::vector<Point> points;  // bottom-up
    int last_row = 0;           // index into the sampled row sequence
  };
  std::vector<Track> tracks;
  const int stride = std::max(params.row_stride, 1);
  int row_index = 0;
  for (long y = static_cast<long>(height) - 1; y >= 0; y -= stride, ++row_index) {
    const float* row = prob.data() + static_cast<std::size_t>(y) * width;
    std::vector<double> centroids;
    std::size_t x = 0;
    while (x < width) {
      if (row[x] > params.threshold) {
        std::size_t start = x;
        while (x < width && row[x] > params.threshold) ++x;
        centroids.push_back(0.5 * static_cast<double>(start + x - 1));
      } else {
        ++x;
      }
    }
    // Greedy one-to-one association by ascending horizontal distance.
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      if (row_index - tracks[t].last_row > params.max_row_gap + 1) continue;
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = std::abs(tracks[t].points.back().x - centroids[c]);
        if (d <= params.max_dx) pairs.emplace_back(d, t, c);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> track_used(tracks.size(), false), point_used(centroids.size(), false);
    for (const auto& [d, t, c] : pairs) {
      if (track_used[t] || point_used[c]) continue;
      track_used[t] = point_used[c] = true;
      tracks[t].points.push_back({centroids[c], static_cast<double>(y)});
      tracks[t].last_row = row_index;
    }
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (!point_used[c]) tracks.push_back({{{centroids[c], static_cast<double>(y)}}, row_index});
    }
  }
  LaneList lanes;
  for (auto& t : tracks) {
    if (static_cast<int>(t.points.size()) < std::max(params.min_points, 2)) continue;
    std::reverse(t.points.begin(), t.points.end());
    lanes.push_back({std::move(t.points)});
  }
  std::sort(lanes.begin(), lanes.end(),
            [](const Lane& a, const Lane& b) { return a.points.back().x < b.points.back().x; });
  return lanes;
}

template <typename T>
LaneList decode_lanes(const Tensor<T>& prob_map, const DecodeParams& params) {
  if (prob_map.rank() != 3 || prob_map.dim(0) != 1) {
    throw DimensionError("decode_lanes: expected [1,H,W], got " + shape_str(prob_map.shape()));
  }
  std::vector<float> p(prob_map.data().begin(), prob_map.data().end());
  return decode_lanes(p, prob_map.dim(1), prob_map.dim(2), params);
}

#define SAMIRO_INSTANTIATE(T)                                                                \
  template struct ConvLayer<T>;                                                              \
  template struct SpatialAttentionBlock<T>;                                                  \
  template struct Encoder<T>;                                                                \
  template struct Projection<T>;                                                             \
  template struct UpsampleHead<T>;                                                           \
  template AttentionOutput<T> spatial_attention(const SpatialAttentionBlock<T>&, const Tensor<T>&); \
  template FeaturePyramid<T> encoder_forward(const Encoder<T>&, const Tensor<T>&);          \
  template Tensor<T> project(const Projection<T>&, const Tensor<T>&);                       \
  template Tensor<T> lane_head_forward(const LaneHead<T>&, const Tensor<T>&);               \
  template LaneList decode_lanes(const Tensor<T>&, const DecodeParams&);

SAMIRO_INSTANTIATE(float)
SAMIRO_INSTANTIATE(double)

}  // namespace samiro

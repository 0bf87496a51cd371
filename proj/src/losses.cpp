#include "samiro/losses.hpp"

#include <algorithm>

#include "samiro/error.hpp"

namespace samiro {

std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::per_channel_spatial: return "per_channel_spatial";
    case NormMode::per_position_channel: return "per_position_channel";
    case NormMode::global_frobenius: return "global_frobenius";
  }
  return "?";
}

std::string to_string(RegVariant v) {
  switch (v) {
    case RegVariant::samiro: return "samiro";
    case RegVariant::miro: return "miro";
    case RegVariant::plain_l2: return "plain_l2";
    case RegVariant::none: return "none";
  }
  return "?";
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "per_channel_spatial") return NormMode::per_channel_spatial;
  if (s == "per_position_channel") return NormMode::per_position_channel;
  if (s == "global_frobenius") return NormMode::global_frobenius;
  throw ConfigError("unknown norm_mode '" + s + "'");
}

RegVariant parse_variant(const std::string& s) {
  if (s == "samiro") return RegVariant::samiro;
  if (s == "miro") return RegVariant::miro;
  if (s == "plain_l2") return RegVariant::plain_l2;
  if (s == "none") return RegVariant::none;
  throw ConfigError("unknown variant '" + s + "'");
}

template <typename T>
ChannelScale<T> ChannelScale<T>::ones(std::size_t channels) {
  return filled(channels, T(1));
}

template <typename T>
ChannelScale<T> ChannelScale<T>::filled(std::size_t channels, T value) {
  return {Tensor<T>::full({channels, 1, 1}, value, true)};
}

template <typename T>
Tensor<T> feature_norm(const Tensor<T>& features, NormMode mode, T eps) {
  if (features.rank() != 3) throw DimensionError("feature_norm: expected [C,H,W], got " + shape_str(features.shape()));
  std::vector<std::size_t> axes;
  switch (mode) {
    case NormMode::per_channel_spatial: axes = {1, 2}; break;
    case NormMode::per_position_channel: axes = {0}; break;
    case NormMode::global_frobenius: axes = {0, 1, 2}; break;
  }
  return abs_floor(sqrt(reduce(Reduction::sq_l2_norm, features, axes, true)), eps);
}

template <typename T>
Tensor<T> channel_normalize(const Tensor<T>& features, NormMode mode, T eps) {
  if (!(eps > T(0))) throw ConfigError("channel_normalize: eps must be positive");
  return div(features, feature_norm(features, mode, eps));
}

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

template <typename T>
void require_scale(const Tensor<T>& features, const ChannelScale<T>& w, const char* what) {
  if (w.w.shape() != Shape{features.dim(0), 1, 1}) {
    throw DimensionError(std::string(what) + ": channel scale " + shape_str(w.w.shape()) +
                         " does not match axis 0 of " + shape_str(features.shape()));
  }
}

// (1/N) sum_i r_i^2 / max(|w_c(i)|, eps)
template <typename T>
Tensor<T> weighted_square(const Tensor<T>& residual, const ChannelScale<T>& w) {
  return mean(div(square(residual), abs_floor(w.w, static_cast<T>(kLogFloor))));
}

}  // namespace

template <typename T>
Tensor<T> miro_loss(const Tensor<T>& oracle, const Tensor<T>& target, const ChannelScale<T>& w) {
  require_same(oracle, target, "miro_loss");
  require_scale(oracle, w, "miro_loss");
  // Every channel covers H*W elements, so the per-element mean of log|w_c|
  // equals the mean over channels.
  return add(mean(log_abs(w.w)), weighted_square(sub(oracle, target), w));
}

template <typename T>
SamiroTerms<T> samiro_terms(const Tensor<T>& oracle_filtered, const Tensor<T>& target,
                            const Projection<T>& g, const ChannelScale<T>& w, const LossConfig& cfg) {
  const T eps = static_cast<T>(cfg.eps_norm);
  Tensor<T> a = oracle_filtered;
  Tensor<T> b;
  if (cfg.normalize) {
    a = channel_normalize(oracle_filtered, cfg.norm_mode, eps);
    // The target side is divided by the norm of the un-projected map.
    b = project(g, div(target, feature_norm(target, cfg.norm_mode, eps)));
  } else {
    b = project(g, target);
  }
  require_same(a, b, "samiro_loss");
  require_scale(a, w, "samiro_loss");
  auto log_term = mean(relu(log_abs(w.w)));
  auto quadratic = weighted_square(sub(a, b), w);
  auto total = add(log_term, quadratic);
  return {std::move(total), std::move(log_term), std::move(quadratic)};
}

template <typename T>
Tensor<T> plain_l2_distill(const Tensor<T>& oracle, const Tensor<T>& target, const Projection<T>& g) {
  auto projected = project(g, target);
  require_same(oracle, projected, "plain_l2_distill");
  return mean(square(sub(oracle, projected)));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_ld, const std::vector<Tensor<T>>& per_stage, const LossConfig& cfg) {
  if (cfg.variant == RegVariant::none) return l_ld;
  if (per_stage.empty()) throw ConfigError("total_loss: no stage losses for variant " + to_string(cfg.variant));
  if (cfg.lambda < 0) throw ConfigError("total_loss: lambda must be >= 0");
  if (cfg.lambda == 0) return l_ld;
  Tensor<T> acc = per_stage.front();
  for (std::size_t i = 1; i < per_stage.size(); ++i) acc = add(acc, per_stage[i]);
  const T weight = static_cast<T>(cfg.lambda / static_cast<double>(per_stage.size()));
  return add(l_ld, scale(acc, weight));
}

template <typename T>
Tensor<T> lane_detection_loss(const Tensor<T>& prob_map, const Tensor<T>& gt_mask) {
  require_same(prob_map, gt_mask, "lane_detection_loss");
  for (auto v : gt_mask.data()) {
    if (v != T(0) && v != T(1)) throw DimensionError("lane_detection_loss: ground-truth mask is not binary");
  }
  const T lo = static_cast<T>(kProbClamp);
  const T hi = static_cast<T>(1.0 - kProbClamp);
  auto p = clamp(prob_map, lo, hi);
  auto log_p = log_abs(p);
  auto log_q = log_abs(add_scalar(scale(p, T(-1)), T(1)));
  auto gt = gt_mask.detach();
  auto inv_gt = add_scalar(scale(gt, T(-1)), T(1));
  return scale(mean(add(mul(log_p, gt), mul(log_q, inv_gt))), T(-1));
}

template <typename T>
Regularizer<T> Regularizer<T>::init(const std::vector<int>& oracle_widths, const std::vector<int>& target_widths,
                                    int attention_kernel, Rng& rng) {
  if (oracle_widths.size() != target_widths.size()) {
    throw ConfigError("regularizer: oracle has " + std::to_string(oracle_widths.size()) +
                      " stages, target has " + std::to_string(target_widths.size()));
  }
  Regularizer reg;
  for (std::size_t l = 0; l < oracle_widths.size(); ++l) {
    reg.attention.push_back(SpatialAttentionBlock<T>::init(attention_kernel, rng));
    reg.projection.push_back(Projection<T>::init(target_widths[l], oracle_widths[l], rng));
    reg.scale.push_back(ChannelScale<T>::ones(static_cast<std::size_t>(oracle_widths[l])));
  }
  return reg;
}

template <typename T>
void Regularizer<T>::collect(NamedParams<T>& out) {
  for (std::size_t l = 0; l < attention.size(); ++l) {
    const std::string prefix = "reg.stage" + std::to_string(l + 1);
    attention[l].collect(prefix + ".attention", out);
    projection[l].collect(prefix + ".projection", out);
    out.emplace_back(prefix + ".w", &scale[l].w);
  }
}

std::vector<std::size_t> resolve_stages(const LossConfig& cfg, std::size_t num_stages) {
  std::vector<std::size_t> out;
  if (cfg.stages.empty()) {
    for (std::size_t i = 0; i < num_stages; ++i) out.push_back(i);
    return out;
  }
  for (int s : cfg.stages) {
    if (s < 1 || static_cast<std::size_t>(s) > num_stages) {
      throw ConfigError("stage " + std::to_string(s) + " outside [1," + std::to_string(num_stages) + "]");
    }
    out.push_back(static_cast<std::size_t>(s - 1));
  }
  return out;
}

namespace {

// Average-pools the larger of two maps so both share spatial extents.
template <typename T>
void pair_spatial(Tensor<T>& a, Tensor<T>& b) {
  if (a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2)) return;
  Tensor<T>& big = a.dim(1) > b.dim(1) ? a : b;
  const Tensor<T>& small = a.dim(1) > b.dim(1) ? b : a;
  const std::size_t fy = big.dim(1) / small.dim(1), fx = big.dim(2) / small.dim(2);
  if (fy != fx || big.dim(1) != fy * small.dim(1) || big.dim(2) != fx * small.dim(2)) {
    throw DimensionError("stage pairing: spatial sizes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are not related by an integer factor");
  }
  big = avg_pool2d(big, static_cast<int>(fy));
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> stage_losses(const Regularizer<T>& reg, const FeaturePyramid<T>& oracle,
                                    const FeaturePyramid<T>& target, const LossConfig& cfg) {
  std::vector<Tensor<T>> out;
  if (cfg.variant == RegVariant::none) return out;
  if (oracle.size() != target.size() || oracle.size() != reg.attention.size()) {
    throw ConfigError("stage_losses: pyramid depths differ (oracle " + std::to_string(oracle.size()) +
                      ", target " + std::to_string(target.size()) + ", regularizer " +
                      std::to_string(reg.attention.size()) + ")");
  }
  for (std::size_t s : resolve_stages(cfg, oracle.size())) {
    Tensor<T> fs = oracle[s];
    Tensor<T> ft = target[s];
    pair_spatial(fs, ft);
    switch (cfg.variant) {
      case RegVariant::samiro: {
        const Tensor<T> filtered = cfg.attention ? spatial_attention(reg.attention[s], fs).filtered : fs;
        out.push_back(samiro_loss(filtered, ft, reg.projection[s], reg.scale[s], cfg));
        break;
      }
      case RegVariant::miro:
        out.push_back(miro_loss(fs, project(reg.projection[s], ft), reg.scale[s]));
        break;
      case RegVariant::plain_l2:
        out.push_back(plain_l2_distill(fs, ft, reg.projection[s]));
        break;
      case RegVariant::none:
        break;
    }
  }
  return out;
}

#define SAMIRO_INSTANTIATE(T)                                                                               \
  template struct ChannelScale<T>;                                                                          \
  template struct Regularizer<T>;                                                                           \
  template Tensor<T> feature_norm(const Tensor<T>&, NormMode, T);                                          \
  template Tensor<T> channel_normalize(const Tensor<T>&, NormMode, T);                                     \
  template Tensor<T> miro_loss(const Tensor<T>&, const Tensor<T>&, const ChannelScale<T>&);                \
  template SamiroTerms<T> samiro_terms(const Tensor<T>&, const Tensor<T>&, const Projection<T>&,           \
                                       const ChannelScale<T>&, const LossConfig&);                          \
  template Tensor<T> plain_l2_distill(const Tensor<T>&, const Tensor<T>&, const Projection<T>&);           \
  template Tensor<T> total_loss(const Tensor<T>&, const std::vector<Tensor<T>>&, const LossConfig&);       \
  template Tensor<T> lane_detection_loss(const Tensor<T>&, const Tensor<T>&);                              \
  template std::vector<Tensor<T>> stage_losses(const Regularizer<T>&, const FeaturePyramid<T>&,            \
                                               const FeaturePyramid<T>&, const LossConfig&);

SAMIRO_INSTANTIATE(float)
SAMIRO_INSTANTIATE(double)

}  // namespace samiro

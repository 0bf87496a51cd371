#pragma once

#include <string>
#include <vector>

#include "samiro/nn.hpp"

namespace samiro {

enum class NormMode { per_channel_spatial, per_position_channel, global_frobenius };
enum class RegVariant { samiro, miro, plain_l2, none };

std::string to_string(NormMode m);
std::string to_string(RegVariant v);
NormMode parse_norm_mode(const std::string& s);
RegVariant parse_variant(const std::string& s);

struct LossConfig {
  double lambda = 0.1;
  NormMode norm_mode = NormMode::per_channel_spatial;
  std::vector<int> stages;  // 1-based stage indices; empty means all
  RegVariant variant = RegVariant::samiro;
  double eps_norm = 1e-8;
  // Ablation toggles for the samiro variant.
  bool normalize = true;
  bool attention = true;

  bool active() const { return variant != RegVariant::none && lambda > 0.0; }
};

/// Learnable per-channel scale w_c of shape [C,1,1]; read as max(|w|, 1e-8).
template <typename T>
struct ChannelScale {
  Tensor<T> w;

  static ChannelScale ones(std::size_t channels);
  static ChannelScale filled(std::size_t channels, T value);
};

template <typename T>
Tensor<T> channel_normalize(const Tensor<T>& features, NormMode mode, T eps);

// The norm that channel_normalize divides by, broadcastable to the input:
// [C,1,1], [1,H,W] or [1,1,1] by mode. Already floored at eps.
template <typename T>
Tensor<T> feature_norm(const Tensor<T>& features, NormMode mode, T eps);

template <typename T>
Tensor<T> miro_loss(const Tensor<T>& oracle, const Tensor<T>& target, const ChannelScale<T>& w);

template <typename T>
struct SamiroTerms {
  Tensor<T> total;      // log_term + quadratic
  Tensor<T> log_term;   // mean of ReLU(log|w_c|) over all N elements
  Tensor<T> quadratic;  // mean of (A - B)^2 / |w_c|
};

/// `oracle_filtered` is the attention-filtered oracle map [C_s,H,W];
/// `target` is the un-projected target map [C_t,H,W].
template <typename T>
SamiroTerms<T> samiro_terms(const Tensor<T>& oracle_filtered, const Tensor<T>& target,
                            const Projection<T>& g, const ChannelScale<T>& w, const LossConfig& cfg);

template <typename T>
Tensor<T> samiro_loss(const Tensor<T>& oracle_filtered, const Tensor<T>& target, const Projection<T>& g,
                      const ChannelScale<T>& w, const LossConfig& cfg) {
  return samiro_terms(oracle_filtered, target, g, w, cfg).total;
}

template <typename T>
Tensor<T> plain_l2_distill(const Tensor<T>& oracle, const Tensor<T>& target, const Projection<T>& g);

/// l_ld + lambda * mean(per_stage); exactly l_ld when the regularizer is off.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_ld, const std::vector<Tensor<T>>& per_stage, const LossConfig& cfg);

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy; probabilities clamped to [1e-7, 1-1e-7].
template <typename T>
Tensor<T> lane_detection_loss(const Tensor<T>& prob_map, const Tensor<T>& gt_mask);

/// Per-stage regularizer parameters: attention p, projection g, scale w_c.
template <typename T>
struct Regularizer {
  std::vector<SpatialAttentionBlock<T>> attention;
  std::vector<Projection<T>> projection;
  std::vector<ChannelScale<T>> scale;

  static Regularizer init(const std::vector<int>& oracle_widths, const std::vector<int>& target_widths,
                          int attention_kernel, Rng& rng);
  void collect(NamedParams<T>& out);
};

/// Pairs oracle and target stages by index (average-pooling the larger map
/// down when spatial sizes differ) and evaluates the configured variant for
/// each stage in cfg.stages.
template <typename T>
std::vector<Tensor<T>> stage_losses(const Regularizer<T>& reg, const FeaturePyramid<T>& oracle,
                                    const FeaturePyramid<T>& target, const LossConfig& cfg);

// Resolved 0-based stage list for a pyramid of `num_stages`.
std::vector<std::size_t> resolve_stages(const LossConfig& cfg, std::size_t num_stages);

}  // namespace samiro

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "samiro/losses.hpp"
#include "samiro/metrics.hpp"
#include "samiro/nn.hpp"
#include "samiro/serialize.hpp"
#include "samiro/synth.hpp"

namespace samiro {

struct ModelConfig {
  std::vector<int> oracle_widths{12, 24, 48};
  std::vector<int> target_widths{8, 16, 32};
  int attention_kernel = 7;
  int head_hidden = 8;
};

enum class OracleMode { mim, random };

struct TrainConfig {
  std::uint64_t seed = 0;
  int pretrain_steps = 200;
  int train_steps = 300;
  int batch_size = 8;
  double lr = 0.05;
  double pretrain_lr = 0.05;
  double reg_lr_scale = 100.0;  // lr multiplier for the regularizer's own parameters (p, g, w_c)
  double momentum = 0.9;
  bool cosine = false;
  double mask_ratio = 0.6;
  int patch_size = 8;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  int lane_width = 5;        // GT mask width used by the detection loss
  OracleMode oracle_mode = OracleMode::mim;
  LossConfig loss;
  ModelConfig model;
  DecodeParams decode;

  // Throws ConfigError when the invariants do not hold for an image size.
  void validate(int height, int width) const;
};

/// v <- momentum * v + grad; p <- p - lr * v; then grads are cleared.
/// `velocity` is resized on first use and must persist across steps.
template <typename T>
void optimizer_step(const std::vector<Tensor<T>*>& params, std::vector<std::vector<T>>& velocity, T lr, T momentum);

class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor<float>*> params, double momentum) : params_(std::move(params)), momentum_(momentum) {}
  void step(double lr) { optimizer_step(params_, velocity_, static_cast<float>(lr), static_cast<float>(momentum_)); }

 private:
  std::vector<Tensor<float>*> params_;
  std::vector<std::vector<float>> velocity_;
  double momentum_;
};

double scheduled_lr(const TrainConfig& cfg, double base_lr, int step, int total_steps);

/// Fixed-size batches from a seeded per-epoch shuffle; the partial tail of an
/// epoch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, Rng rng);
  std::vector<std::size_t> next();
  std::size_t batch_size() const { return batch_; }

 private:
  std::size_t size_, batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// ceil(ratio * patches), robust to representation error in ratio * patches.
std::size_t masked_patch_count(double ratio, std::size_t patches);

/// Per-pixel mask [1,H,W] with exactly masked_patch_count patches set to 1.
Tensor<float> sample_patch_mask(Rng& rng, int height, int width, int patch, double ratio);

/// Masked-pixel MSE of a reconstruction: sum(mask * (recon - image)^2) / (C * #masked pixels).
template <typename T>
Tensor<T> masked_reconstruction_loss(const Tensor<T>& recon, const Tensor<T>& image, const Tensor<T>& mask);

struct PretrainResult {
  Encoder<float> oracle;
  UpsampleHead<float> decoder;
  std::vector<double> step_losses;
  double initial_loss = 0;  // held-out-mask loss over the whole set before training
  double final_loss = 0;    // same evaluation after training
};

PretrainResult mim_pretrain(const TrainConfig& cfg, const std::vector<Tensor<float>>& images);

// Reconstruction loss averaged over all images with masks drawn from `mask_seed`.
double evaluate_mim_loss(const Encoder<float>& enc, const UpsampleHead<float>& decoder,
                         const std::vector<Tensor<float>>& images, const TrainConfig& cfg, std::uint64_t mask_seed);

struct TargetModel {
  Encoder<float> encoder;
  LaneHead<float> head;

  static TargetModel init(int in_channels, const ModelConfig& m, int upsample, Rng& rng);
  std::vector<Tensor<float>*> parameters();
};

struct LossRow {
  int step = 0;
  double l_ld = 0;
  std::vector<double> reg;  // per configured stage
  double total = 0;
};

struct RunRecord {
  std::vector<std::size_t> stages;  // 0-based stages logged in reg columns
  std::vector<LossRow> rows;
  double wall_seconds = 0;
  std::uint64_t config_hash = 0;
  std::optional<EvalReport> eval;

  std::string to_csv() const;
};

struct FinetuneResult {
  TargetModel model;
  Regularizer<float> reg;
  RunRecord record;
};

using CheckpointHook = std::function<void(int step, const TargetModel&)>;

/// Trains the target encoder + head with L_LD + lambda * regularizer against a
/// frozen oracle. `oracle == nullptr` runs the plain baseline.
FinetuneResult finetune(const TrainConfig& cfg, const Encoder<float>* oracle, const std::vector<Scene>& train,
                        const CheckpointHook& on_checkpoint = {});

LaneList predict_lanes(const TargetModel& model, const Tensor<float>& image, const DecodeParams& decode);

/// CULane-style evaluation of `model` on scenes; categories come from scene
/// tags ("clean" when untagged).
EvalReport evaluate_model(const TargetModel& model, const std::vector<Scene>& scenes, const DecodeParams& decode,
                          const CulaneParams& params);

Checkpoint encoder_checkpoint(Encoder<float>& enc, const std::string& kind);
Encoder<float> encoder_from_checkpoint(const Checkpoint& ckpt);
Checkpoint target_checkpoint(TargetModel& model, int upsample);
TargetModel target_from_checkpoint(const Checkpoint& ckpt);

// ---- gradient checking -------------------------------------------------

struct GradcheckCase {
  std::string name;
  std::vector<std::string> group_names;
  // Parameter groups; every tensor in a group is checked.
  std::vector<std::vector<Tensor<double>>> groups;
  std::function<Tensor<double>(const std::vector<std::vector<Tensor<double>>>&)> loss;
};

struct GradcheckEntry {
  std::string name;  // "<case>/<group>"
  double max_rel_error = 0;
  bool passed = false;
};

struct GradcheckReport {
  double tolerance = 0;
  std::vector<GradcheckEntry> entries;
  bool all_passed() const;
  std::string to_text() const;
};

inline constexpr double kGradcheckStep = 1e-5;

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
double relative_error(double analytic, double numeric);

std::vector<GradcheckEntry> run_gradcheck(const GradcheckCase& c, double tolerance);
std::vector<GradcheckCase> builtin_gradcheck_cases();
GradcheckReport gradcheck_suite(double tolerance, const std::vector<GradcheckCase>& extra = {});

}  // namespace samiro

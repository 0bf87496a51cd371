#include "samiro/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "samiro/error.hpp"

namespace samiro {

void TrainConfig::validate(int height, int width) const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(mask_ratio > 0 && mask_ratio < 1)) fail("mask_ratio must be in (0,1)");
  if (patch_size < 1 || height % patch_size != 0 || width % patch_size != 0) {
    fail("patch_size " + std::to_string(patch_size) + " must divide the image extents " + std::to_string(height) +
         "x" + std::to_string(width));
  }
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (pretrain_steps < 0 || train_steps < 0) fail("step counts must be >= 0");
  if (!(lr > 0) || !(pretrain_lr > 0)) fail("learning rates must be > 0");
  if (!(reg_lr_scale > 0)) fail("reg_lr_scale must be > 0");
  if (momentum < 0 || momentum >= 1) fail("momentum must be in [0,1)");
  if (loss.lambda < 0) fail("lambda must be >= 0");
  if (model.target_widths.empty() || model.oracle_widths.size() != model.target_widths.size()) {
    fail("oracle_widths and target_widths must be non-empty and the same length");
  }
  const int div = 1 << model.target_widths.size();
  if (height % div != 0 || width % div != 0) fail("image extents must be divisible by 2^stages");
  resolve_stages(loss, model.target_widths.size());
}

template <typename T>
void optimizer_step(const std::vector<Tensor<T>*>& params, std::vector<std::vector<T>>& velocity, T lr, T momentum) {
  if (velocity.empty()) {
    for (auto* p : params) velocity.emplace_back(p->numel(), T(0));
  }
  if (velocity.size() != params.size()) throw DimensionError("optimizer_step: velocity/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = velocity[i];
    auto data = params[i]->mutable_data();
    if (v.size() != data.size()) throw DimensionError("optimizer_step: velocity shape mismatch for parameter " + std::to_string(i));
    const auto& node = params[i]->node();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const T g = node->grad.empty() ? T(0) : node->grad[k];
      v[k] = momentum * v[k] + g;
      data[k] -= lr * v[k];
    }
    params[i]->zero_grad();
  }
}

template void optimizer_step(const std::vector<Tensor<float>*>&, std::vector<std::vector<float>>&, float, float);
template void optimizer_step(const std::vector<Tensor<double>*>&, std::vector<std::vector<double>>&, double, double);

double scheduled_lr(const TrainConfig& cfg, double base_lr, int step, int total_steps) {
  if (!cfg.cosine || total_steps <= 1) return base_lr;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / static_cast<double>(total_steps)));
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, Rng rng)
    : size_(dataset_size), batch_(std::min(batch_size, dataset_size)), rng_(std::move(rng)) {
  if (dataset_size == 0) throw ConfigError("dataset is empty");
}

std::vector<std::size_t> BatchSampler::next() {
  if (order_.empty() || cursor_ + batch_ > order_.size()) {
    order_.resize(size_);
    for (std::size_t i = 0; i < size_; ++i) order_[i] = i;
    for (std::size_t i = size_; i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng_.next_u64() % i);
      std::swap(order_[i - 1], order_[j]);
    }
    cursor_ = 0;
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<long>(cursor_),
                               order_.begin() + static_cast<long>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

std::size_t masked_patch_count(double ratio, std::size_t patches) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(patches) - 1e-9));
}

Tensor<float> sample_patch_mask(Rng& rng, int height, int width, int patch, double ratio) {
  const std::size_t gh = static_cast<std::size_t>(height / patch), gw = static_cast<std::size_t>(width / patch);
  const std::size_t total = gh * gw;
  const std::size_t k = masked_patch_count(ratio, total);
  std::vector<std::size_t> ids(total);
  for (std::size_t i = 0; i < total; ++i) ids[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.next_u64() % (total - i));
    std::swap(ids[i], ids[j]);
  }
  std::vector<float> m(static_cast<std::size_t>(height) * width, 0.0f);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t py = ids[i] / gw, px = ids[i] % gw;
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x)
        m[(py * patch + y) * width + px * patch + x] = 1.0f;
  }
  return Tensor<float>({1, static_cast<std::size_t>(height), static_cast<std::size_t>(width)}, std::move(m));
}

template <typename T>
Tensor<T> masked_reconstruction_loss(const Tensor<T>& recon, const Tensor<T>& image, const Tensor<T>& mask) {
  if (recon.shape() != image.shape()) {
    throw DimensionError("masked_reconstruction_loss: recon " + shape_str(recon.shape()) + " vs image " +
                         shape_str(image.shape()));
  }
  double masked = 0;
  for (auto v : mask.data()) masked += v;
  if (masked == 0) throw DimensionError("masked_reconstruction_loss: mask selects no pixels");
  const T inv = static_cast<T>(1.0 / (masked * static_cast<double>(image.dim(0))));
  return scale(sum(mul(square(sub(recon, image.detach())), mask.detach())), inv);
}

template Tensor<float> masked_reconstruction_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> masked_reconstruction_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

namespace {

int stage_factor(std::size_t stages) { return 1 << stages; }

Tensor<float> mim_step_loss(const Encoder<float>& enc, const UpsampleHead<float>& decoder, const Tensor<float>& image,
                            const Tensor<float>& mask) {
  const auto keep = add_scalar(scale(mask, -1.0f), 1.0f);
  const auto masked_input = mul(image, keep);
  const auto pyramid = encoder_forward(enc, masked_input);
  const auto recon = decoder.forward_logits(pyramid.back());
  return masked_reconstruction_loss(recon, image, mask);
}

Tensor<float> mean_of(const std::vector<Tensor<float>>& xs) {
  Tensor<float> acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return scale(acc, 1.0f / static_cast<float>(xs.size()));
}

}  // namespace

double evaluate_mim_loss(const Encoder<float>& enc, const UpsampleHead<float>& decoder,
                         const std::vector<Tensor<float>>& images, const TrainConfig& cfg, std::uint64_t mask_seed) {
  Rng rng(mask_seed);
  double acc = 0;
  for (const auto& img : images) {
    const auto mask = sample_patch_mask(rng, static_cast<int>(img.dim(1)), static_cast<int>(img.dim(2)),
                                        cfg.patch_size, cfg.mask_ratio);
    acc += mim_step_loss(enc, decoder, img.detach(), mask).item();
  }
  return acc / static_cast<double>(images.size());
}

PretrainResult mim_pretrain(const TrainConfig& cfg, const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw ConfigError("mim_pretrain: dataset is empty");
  const int h = static_cast<int>(images.front().dim(1)), w = static_cast<int>(images.front().dim(2));
  const int c = static_cast<int>(images.front().dim(0));
  cfg.validate(h, w);
  Rng root(cfg.seed);
  Rng init_rng = root.fork(11);
  Rng batch_rng = root.fork(12);
  Rng mask_rng = root.fork(13);
  const std::uint64_t eval_seed = root.next_u64();

  PretrainResult result;
  result.oracle = Encoder<float>::init(c, cfg.model.oracle_widths, init_rng);
  result.decoder = UpsampleHead<float>::init(cfg.model.oracle_widths.back(), cfg.model.head_hidden, c,
                                             stage_factor(cfg.model.oracle_widths.size()), init_rng);
  NamedParams<float> named;
  result.oracle.collect("encoder", named);
  result.decoder.collect("decoder", named);
  std::vector<Tensor<float>*> params;
  for (auto& [n, p] : named) params.push_back(p);
  SgdMomentum opt(params, cfg.momentum);

  result.initial_loss = evaluate_mim_loss(result.oracle, result.decoder, images, cfg, eval_seed);
  BatchSampler sampler(images.size(), static_cast<std::size_t>(cfg.batch_size), std::move(batch_rng));
  // A random oracle keeps its initialization; useful as a control.
  const int steps = cfg.oracle_mode == OracleMode::mim ? cfg.pretrain_steps : 0;
  for (int step = 0; step < steps; ++step) {
    std::vector<Tensor<float>> losses;
    for (auto i : sampler.next()) {
      const auto mask = sample_patch_mask(mask_rng, h, w, cfg.patch_size, cfg.mask_ratio);
      losses.push_back(mim_step_loss(result.oracle, result.decoder, images[i].detach(), mask));
    }
    const auto loss = mean_of(losses);
    result.step_losses.push_back(loss.item());
    loss.backward();
    opt.step(scheduled_lr(cfg, cfg.pretrain_lr, step, steps));
  }
  result.final_loss = evaluate_mim_loss(result.oracle, result.decoder, images, cfg, eval_seed);
  // The oracle is frozen from here on.
  for (auto& stage : result.oracle.stages) {
    stage.weight.set_requires_grad(false);
    if (stage.bias.defined()) stage.bias.set_requires_grad(false);
  }
  return result;
}

TargetModel TargetModel::init(int in_channels, const ModelConfig& m, int upsample, Rng& rng) {
  TargetModel model;
  model.encoder = Encoder<float>::init(in_channels, m.target_widths, rng);
  model.head = LaneHead<float>::init(m.target_widths.back(), m.head_hidden, 1, upsample, rng);
  return model;
}

std::vector<Tensor<float>*> TargetModel::parameters() {
  NamedParams<float> named;
  encoder.collect("encoder", named);
  head.collect("head", named);
  std::vector<Tensor<float>*> out;
  for (auto& [n, p] : named) out.push_back(p);
  return out;
}

std::string RunRecord::to_csv() const {
  std::ostringstream os;
  os << "step,l_ld";
  for (auto s : stages) os << ",l_reg_stage" << (s + 1);
  os << ",total\n";
  char buf[64];
  for (const auto& r : rows) {
    os << r.step;
    std::snprintf(buf, sizeof buf, ",%.9g", r.l_ld);
    os << buf;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.9g", i < r.reg.size() ? r.reg[i] : 0.0);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.9g\n", r.total);
    os << buf;
  }
  return os.str();
}

FinetuneResult finetune(const TrainConfig& cfg, const Encoder<float>* oracle, const std::vector<Scene>& train,
                        const CheckpointHook& on_checkpoint) {
  if (train.empty()) throw ConfigError("finetune: dataset is empty");
  const int h = train.front().height(), w = train.front().width();
  const int c = static_cast<int>(train.front().image.dim(0));
  cfg.validate(h, w);
  const auto t0 = std::chrono::steady_clock::now();

  Rng root(cfg.seed);
  Rng model_rng = root.fork(1);
  Rng reg_rng = root.fork(2);
  Rng batch_rng = root.fork(3);

  FinetuneResult result;
  result.model = TargetModel::init(c, cfg.model, stage_factor(cfg.model.target_widths.size()), model_rng);
  std::vector<Tensor<float>*> params = result.model.parameters();

  const bool regularize = oracle != nullptr && cfg.loss.active();
  std::vector<Tensor<float>*> reg_params;
  LossConfig loss_cfg = cfg.loss;
  if (oracle == nullptr) loss_cfg.variant = RegVariant::none;
  result.record.stages = resolve_stages(loss_cfg, cfg.model.target_widths.size());

  std::vector<FeaturePyramid<float>> oracle_cache;
  if (regularize) {
    if (oracle->num_stages() != cfg.model.target_widths.size()) {
      throw ConfigError("incompatible oracle: " + std::to_string(oracle->num_stages()) + " stages vs target " +
                        std::to_string(cfg.model.target_widths.size()));
    }
    if (oracle->in_channels != c) throw ConfigError("incompatible oracle: input channels differ from the data");
    result.reg = Regularizer<float>::init(oracle->widths, cfg.model.target_widths, cfg.model.attention_kernel, reg_rng);
    NamedParams<float> named;
    result.reg.collect(named);
    for (auto& [n, p] : named) reg_params.push_back(p);
    // Oracle features are constants of the data; compute them once.
    oracle_cache.reserve(train.size());
    for (const auto& s : train) oracle_cache.push_back(encoder_forward(*oracle, s.image.detach()));
  }

  std::vector<Tensor<float>> gt_masks;
  gt_masks.reserve(train.size());
  for (const auto& s : train) gt_masks.push_back(render_gt_mask(s, cfg.lane_width));

  SgdMomentum opt(params, cfg.momentum);
  SgdMomentum reg_opt(reg_params, cfg.momentum);
  BatchSampler sampler(train.size(), static_cast<std::size_t>(cfg.batch_size), std::move(batch_rng));
  const std::size_t n_stages = result.record.stages.size();

  for (int step = 0; step < cfg.train_steps; ++step) {
    const auto batch = sampler.next();
    std::vector<Tensor<float>> totals, detections;
    std::vector<double> reg_sum(n_stages, 0.0);
    for (auto i : batch) {
      const auto pyramid = encoder_forward(result.model.encoder, train[i].image.detach());
      const auto prob = lane_head_forward(result.model.head, pyramid.back());
      auto l_ld = lane_detection_loss(prob, gt_masks[i]);
      detections.push_back(l_ld);
      if (regularize) {
        const auto stages = stage_losses(result.reg, oracle_cache[i], pyramid, loss_cfg);
        for (std::size_t s = 0; s < n_stages; ++s) reg_sum[s] += stages[s].item();
        totals.push_back(total_loss(l_ld, stages, loss_cfg));
      } else {
        totals.push_back(l_ld);
      }
    }
    const auto total = mean_of(totals);
    LossRow row;
    row.step = step + 1;
    double ld = 0;
    for (const auto& d : detections) ld += d.item();
    row.l_ld = ld / static_cast<double>(batch.size());
    for (auto v : reg_sum) row.reg.push_back(v / static_cast<double>(batch.size()));
    row.total = total.item();
    result.record.rows.push_back(std::move(row));

    total.backward();
    const double lr = scheduled_lr(cfg, cfg.lr, step, cfg.train_steps);
    opt.step(lr);
    if (regularize) reg_opt.step(lr * cfg.reg_lr_scale);
    if (on_checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      on_checkpoint(step + 1, result.model);
    }
  }
  result.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

LaneList predict_lanes(const TargetModel& model, const Tensor<float>& image, const DecodeParams& decode) {
  const auto pyramid = encoder_forward(model.encoder, image.detach());
  return decode_lanes(lane_head_forward(model.head, pyramid.back()), decode);
}

EvalReport evaluate_model(const TargetModel& model, const std::vector<Scene>& scenes, const DecodeParams& decode,
                          const CulaneParams& params) {
  std::vector<EvalItem> items;
  for (const auto& s : scenes) {
    EvalItem item;
    item.preds = predict_lanes(model, s.image, decode);
    item.gts = s.lanes;
    item.categories = s.tags.empty() ? std::vector<std::string>{"clean"} : s.tags;
    item.height = s.height();
    item.width = s.width();
    items.push_back(std::move(item));
  }
  auto report = evaluate_culane(items, params);
  report.format = "synth";
  return report;
}

namespace {

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::vector<int> split_ints(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ParseError("checkpoint manifest key '" + key + "' has non-integer entry '" + tok + "'");
    }
  }
  return out;
}

int manifest_int(const Checkpoint& ckpt, const std::string& key) {
  const auto& v = ckpt.require(key);
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ParseError("checkpoint manifest key '" + key + "' is not an integer: '" + v + "'");
  }
}

void fill(Tensor<float>& dst, const Tensor<float>& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw ParseError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                     shape_str(dst.shape()));
  }
  auto d = dst.mutable_data();
  std::copy(src.data().begin(), src.data().end(), d.begin());
}

}  // namespace

Checkpoint encoder_checkpoint(Encoder<float>& enc, const std::string& kind) {
  Checkpoint ckpt;
  ckpt.manifest["kind"] = kind;
  ckpt.manifest["in_channels"] = std::to_string(enc.in_channels);
  ckpt.manifest["widths"] = join_ints(enc.widths);
  NamedParams<float> named;
  enc.collect("encoder", named);
  for (auto& [n, p] : named) ckpt.tensors.emplace(n, p->detach());
  return ckpt;
}

Encoder<float> encoder_from_checkpoint(const Checkpoint& ckpt) {
  Rng unused(0);
  auto enc = Encoder<float>::init(manifest_int(ckpt, "in_channels"), split_ints(ckpt.require("widths"), "widths"), unused);
  NamedParams<float> named;
  enc.collect("encoder", named);
  for (auto& [n, p] : named) {
    fill(*p, ckpt.tensor(n), n);
    p->set_requires_grad(false);
  }
  return enc;
}

Checkpoint target_checkpoint(TargetModel& model, int upsample) {
  Checkpoint ckpt = encoder_checkpoint(model.encoder, "target");
  ckpt.manifest["head_hidden"] = std::to_string(model.head.reduce.weight.dim(0));
  ckpt.manifest["upsample"] = std::to_string(upsample);
  NamedParams<float> named;
  model.head.collect("head", named);
  for (auto& [n, p] : named) ckpt.tensors.emplace(n, p->detach());
  return ckpt;
}

TargetModel target_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.require("kind") != "target") throw ParseError("checkpoint kind is '" + ckpt.require("kind") + "', expected 'target'");
  ModelConfig m;
  m.target_widths = split_ints(ckpt.require("widths"), "widths");
  m.head_hidden = manifest_int(ckpt, "head_hidden");
  Rng unused(0);
  auto model = TargetModel::init(manifest_int(ckpt, "in_channels"), m, manifest_int(ckpt, "upsample"), unused);
  NamedParams<float> named;
  model.encoder.collect("encoder", named);
  model.head.collect("head", named);
  for (auto& [n, p] : named) fill(*p, ckpt.tensor(n), n);
  return model;
}

}  // namespace samiro

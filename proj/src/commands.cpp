#include "samiro/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "samiro/error.hpp"

namespace samiro {

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os || !(os << text)) throw IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

RunConfig load(const std::string& path) { return path.empty() ? parse_config("", "<defaults>") : load_config(path); }

// The value as written in the config file, or the effective default.
std::string echo(const RunConfig& cfg, const std::string& key) {
  const auto it = cfg.explicit_values.find(key);
  return it != cfg.explicit_values.end() ? it->second : config_value(cfg, key);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string stamp(const CommandContext& ctx, double wall_seconds) {
  if (!ctx.timestamp) return "";
  return "generated: " + utc_now() + "\nwall_seconds: " + fmt("%.2f", wall_seconds) + "\n";
}

std::vector<Tensor<float>> images_of(const std::vector<Scene>& scenes) {
  std::vector<Tensor<float>> out;
  for (const auto& s : scenes) out.push_back(s.image);
  return out;
}

bool all_finite(const RunRecord& rec) {
  for (const auto& r : rec.rows) {
    if (!std::isfinite(r.l_ld) || !std::isfinite(r.total)) return false;
    for (double v : r.reg) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

struct TrainRun {
  FinetuneResult result;
  std::optional<EvalReport> report;
};

CulaneParams eval_params(const RunConfig& cfg, int height, int width) {
  CulaneParams p = cfg.culane;
  p.height = height;
  p.width = width;
  return p;
}

// The single training path shared by `train` and `ablate`.
TrainRun run_training(const RunConfig& cfg, const TrainConfig& tc, const std::vector<Scene>& train,
                      const std::vector<Scene>* test, const Encoder<float>* oracle, const CheckpointHook& hook = {}) {
  TrainRun run{finetune(tc, oracle, train, hook), std::nullopt};
  if (test && !test->empty()) {
    auto rep = evaluate_model(run.result.model, *test, tc.decode,
                              eval_params(cfg, test->front().height(), test->front().width()));
    rep.config["iou"] = config_value(cfg, "eval.iou");
    rep.config["width"] = config_value(cfg, "eval.width");
    run.report = std::move(rep);
  }
  return run;
}

double occluded_f1(const EvalReport& rep) {
  const auto it = rep.categories.find("occlusion");
  return it == rep.categories.end() ? 0.0 : f1_from_stats(it->second.stats).f1;
}

Encoder<float> load_oracle(const fs::path& path, const RunConfig& cfg, int in_channels) {
  const auto ckpt = load_checkpoint(path);
  const auto kind = ckpt.manifest.find("kind");
  if (kind == ckpt.manifest.end() || kind->second != "oracle") {
    throw ParseError("incompatible checkpoint manifest in " + path.string() + ": kind is not 'oracle'");
  }
  auto enc = encoder_from_checkpoint(ckpt);
  if (enc.num_stages() != cfg.train.model.target_widths.size()) {
    throw ParseError("incompatible checkpoint manifest in " + path.string() + ": " +
                     std::to_string(enc.num_stages()) + " oracle stages, model.target_widths has " +
                     std::to_string(cfg.train.model.target_widths.size()));
  }
  if (enc.in_channels != in_channels) {
    throw ParseError("incompatible checkpoint manifest in " + path.string() + ": in_channels " +
                     std::to_string(enc.in_channels) + " but data has " + std::to_string(in_channels));
  }
  for (auto& s : enc.stages) {
    s.weight.set_requires_grad(false);
    if (s.bias.defined()) s.bias.set_requires_grad(false);
  }
  return enc;
}

std::vector<Scene> read_nonempty(const fs::path& dir) {
  auto scenes = read_dataset(dir);
  if (scenes.empty()) throw ParseError("dataset " + dir.string() + " is empty");
  return scenes;
}

void write_predictions(const fs::path& dir, const fs::path& test_dir, const TargetModel& model,
                       const std::vector<Scene>& test, const DecodeParams& decode) {
  ensure_dir(dir);
  const auto index = read_index(test_dir);
  for (std::size_t i = 0; i < test.size(); ++i) {
    write_text(dir / (index[i].stem + ".lines.txt"), format_culane_lines(predict_lanes(model, test[i].image, decode)));
  }
}

LaneList read_lanes_or_empty(const fs::path& path) {
  if (!fs::exists(path)) return {};
  return parse_culane_lines(read_text(path), path.string());
}

}  // namespace

LossConfig ablation_setting(const LossConfig& base, const std::string& setting) {
  LossConfig c = base;
  if (setting == "baseline") {
    c.variant = RegVariant::none;
    return c;
  }
  c.variant = RegVariant::samiro;
  if (setting == "samiro_only") {
    c.normalize = false;
    c.attention = false;
  } else if (setting == "samiro_norm") {
    c.normalize = true;
    c.attention = false;
  } else if (setting == "samiro_all") {
    c.normalize = true;
    c.attention = true;
  } else {
    throw ConfigError("unknown ablation setting '" + setting + "'");
  }
  return c;
}

const AblateRun& AblateResult::at(const std::string& setting, std::uint64_t seed) const {
  for (const auto& r : runs) {
    if (r.setting == setting && r.seed == seed) return r;
  }
  throw Error("no ablation run for " + setting + " seed " + std::to_string(seed));
}

std::string AblateResult::to_csv(bool occluded) const {
  std::ostringstream os;
  os << "setting";
  for (auto s : seeds) os << ",seed_" << s;
  os << ",mean,min,max\n";
  for (const auto& name : settings) {
    os << name;
    double total = 0, lo = 0, hi = 0;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto& r = at(name, seeds[i]);
      const double v = occluded ? r.f1_occluded : r.f1;
      total += v;
      lo = i ? std::min(lo, v) : v;
      hi = i ? std::max(hi, v) : v;
      os << ',' << fmt("%.17g", v);
    }
    os << ',' << fmt("%.17g", total / static_cast<double>(seeds.size())) << ',' << fmt("%.17g", lo) << ','
       << fmt("%.17g", hi) << '\n';
  }
  return os.str();
}

int cmd_gen(const GenOptions& opt, CommandContext& ctx) {
  const auto cfg = load(opt.config);
  const int count = opt.count.value_or(cfg.train_count);
  if (count < 0) throw ConfigError("--count must be >= 0");
  const auto scenes = generate_dataset(count, opt.seed.value_or(cfg.train_seed), cfg.gen);
  write_dataset(scenes, opt.out);
  write_text(opt.out / "config.resolved", resolved_config(cfg));
  ctx.out << "wrote " << count << " scenes to " << opt.out.string() << "\n";
  return kExitOk;
}

int cmd_pretrain(const PretrainOptions& opt, CommandContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = load(opt.config);
  if (opt.seed) cfg.train.seed = *opt.seed;
  const auto scenes = read_nonempty(opt.data);
  auto res = mim_pretrain(cfg.train, images_of(scenes));

  ensure_dir(opt.out);
  auto ckpt = encoder_checkpoint(res.oracle, "oracle");
  ckpt.manifest["seed"] = std::to_string(cfg.train.seed);
  ckpt.manifest["config_hash"] = std::to_string(config_hash(cfg));
  save_checkpoint(ckpt, opt.out / "oracle.ckpt");

  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < res.step_losses.size(); ++i) {
    csv += std::to_string(i + 1) + "," + fmt("%.9g", res.step_losses[i]) + "\n";
  }
  write_text(opt.out / "loss.csv", csv);
  write_text(opt.out / "config.resolved", resolved_config(cfg));

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream rep;
  rep << "command: pretrain\n"
      << "images: " << scenes.size() << "\n"
      << "steps: " << res.step_losses.size() << "\n"
      << "mask_ratio = " << echo(cfg, "train.mask_ratio") << "\n"
      << "patch_size = " << echo(cfg, "train.patch_size") << "\n"
      << "oracle_mode = " << echo(cfg, "train.oracle_mode") << "\n"
      << "heldout_loss_initial: " << fmt("%.9g", res.initial_loss) << "\n"
      << "heldout_loss_final: " << fmt("%.9g", res.final_loss) << "\n"
      << "config_hash: " << config_hash(cfg) << "\n"
      << stamp(ctx, wall);
  write_text(opt.out / "report.txt", rep.str());
  ctx.out << "reconstruction loss " << fmt("%.6f", res.initial_loss) << " -> " << fmt("%.6f", res.final_loss) << "\n";
  return kExitOk;
}

int cmd_train(const TrainOptions& opt, CommandContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = load(opt.config);
  if (opt.seed) cfg.train.seed = *opt.seed;
  const auto train = read_nonempty(opt.data);
  std::vector<Scene> test;
  if (opt.test) test = read_nonempty(*opt.test);

  std::optional<Encoder<float>> oracle;
  if (opt.oracle) oracle = load_oracle(*opt.oracle, cfg, static_cast<int>(train.front().image.dim(0)));

  ensure_dir(opt.out);
  const int upsample = 1 << cfg.train.model.target_widths.size();
  CheckpointHook hook;
  if (cfg.train.checkpoint_every > 0) {
    ensure_dir(opt.out / "checkpoints");
    hook = [&](int step, const TargetModel& m) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.ckpt", step);
      TargetModel copy = m;
      save_checkpoint(target_checkpoint(copy, upsample), opt.out / "checkpoints" / name);
    };
  }
  auto run = run_training(cfg, cfg.train, train, opt.test ? &test : nullptr, oracle ? &*oracle : nullptr, hook);
  auto& rec = run.result.record;

  auto ckpt = target_checkpoint(run.result.model, upsample);
  ckpt.manifest["seed"] = std::to_string(cfg.train.seed);
  ckpt.manifest["config_hash"] = std::to_string(config_hash(cfg));
  save_checkpoint(ckpt, opt.out / "model.ckpt");
  write_text(opt.out / "loss.csv", rec.to_csv());
  write_text(opt.out / "config.resolved", resolved_config(cfg));
  if (run.report) {
    write_text(opt.out / "report.csv", run.report->to_csv());
    write_predictions(opt.out / "pred", *opt.test, run.result.model, test, cfg.train.decode);
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream rep;
  rep << "command: train\n"
      << "lambda = " << echo(cfg, "loss.lambda") << "\n"
      << "norm_mode = " << echo(cfg, "loss.norm_mode") << "\n"
      << "variant = " << echo(cfg, "loss.variant") << "\n"
      << "regularizer: "
      << (oracle ? (cfg.train.loss.active() ? "on" : "off (inactive in config)") : "off (no --oracle)") << "\n"
      << "seed: " << cfg.train.seed << "\n"
      << "steps: " << rec.rows.size() << "\n";
  if (!rec.rows.empty()) {
    rep << "total_loss_initial: " << fmt("%.9g", rec.rows.front().total) << "\n"
        << "total_loss_final: " << fmt("%.9g", rec.rows.back().total) << "\n";
  }
  rep << "finite: " << (all_finite(rec) ? "yes" : "no") << "\n"
      << "config_hash: " << config_hash(cfg) << "\n"
      << stamp(ctx, wall);
  if (run.report) rep << "\n" << run.report->to_table();
  write_text(opt.out / "report.txt", rep.str());

  if (run.report) ctx.out << "F1 " << fmt("%.6f", run.report->score.f1) << "\n";
  if (!rec.rows.empty()) ctx.out << "final total loss " << fmt("%.6f", rec.rows.back().total) << "\n";
  return kExitOk;
}

int cmd_eval(const EvalOptions& opt, CommandContext& ctx) {
  auto cfg = load(opt.config);
  if (opt.iou) cfg.culane.iou_threshold = *opt.iou;
  if (opt.width) cfg.culane.width_px = *opt.width;
  cfg.validate();

  EvalReport rep;
  if (opt.format == "tusimple") {
    auto parse_file = [](const fs::path& p) {
      std::map<std::string, TusimpleRecord> recs;
      std::istringstream is(read_text(p));
      std::string line;
      int n = 0;
      while (std::getline(is, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto r = parse_tusimple_record(line, p.string(), n);
        recs[r.raw_file] = std::move(r);
      }
      return recs;
    };
    const auto gts = parse_file(opt.gt);
    const auto preds = parse_file(opt.pred);
    TusimpleCounts counts;
    for (const auto& [name, gt] : gts) {
      const auto it = preds.find(name);
      counts += tusimple_counts(it == preds.end() ? LaneList{} : it->second.lanes, gt.lanes, gt.h_samples, cfg.tusimple);
    }
    rep.format = "tusimple";
    rep.images = static_cast<long>(gts.size());
    rep.tusimple = tusimple_score(counts);
    rep.totals = {counts.pred_lanes - counts.fp, counts.fp, counts.fn};
    rep.score = f1_from_stats(rep.totals);
    rep.config["tusimple_dist"] = config_value(cfg, "eval.tusimple_dist");
    rep.config["tusimple_accept"] = config_value(cfg, "eval.tusimple_accept");
  } else if (opt.format == "culane" || opt.format == "synth") {
    std::vector<EvalItem> items;
    CulaneParams params = cfg.culane;
    if (opt.format == "culane") {
      params.height = opt.image_height;
      params.width = opt.image_width;
      if (params.height < 1 || params.width < 1) throw ConfigError("--image-height/--image-width must be >= 1");
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(opt.gt)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.size() > 10 && name.ends_with(".lines.txt")) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        EvalItem item;
        item.gts = parse_culane_lines(read_text(f), f.string());
        item.preds = read_lanes_or_empty(opt.pred / fs::relative(f, opt.gt));
        items.push_back(std::move(item));
      }
    } else {
      for (const auto& e : read_index(opt.gt)) {
        EvalItem item;
        const auto gt_file = opt.gt / "images" / (e.stem + ".lines.txt");
        item.gts = parse_culane_lines(read_text(gt_file), gt_file.string());
        auto pred_file = opt.pred / (e.stem + ".lines.txt");
        if (!fs::exists(pred_file)) pred_file = opt.pred / "images" / (e.stem + ".lines.txt");
        item.preds = read_lanes_or_empty(pred_file);
        const auto img = fs::exists(opt.gt / "images" / (e.stem + ".pgm")) ? opt.gt / "images" / (e.stem + ".pgm")
                                                                             : opt.gt / "images" / (e.stem + ".ppm");
        const auto image = read_pnm(img);
        item.height = static_cast<int>(image.dim(1));
        item.width = static_cast<int>(image.dim(2));
        item.categories = e.tags.empty() ? std::vector<std::string>{"clean"} : e.tags;
        items.push_back(std::move(item));
      }
    }
    rep = evaluate_culane(items, params);
    rep.format = opt.format;
    if (opt.format == "culane") {
      rep.config["image_height"] = std::to_string(params.height);
      rep.config["image_width"] = std::to_string(params.width);
    }
  } else {
    throw ConfigError("--format must be culane, tusimple or synth, got '" + opt.format + "'");
  }
  rep.config["iou"] = config_value(cfg, "eval.iou");
  rep.config["width"] = config_value(cfg, "eval.width");
  rep.config["matching"] = config_value(cfg, "eval.matching");

  ensure_dir(opt.out);
  write_text(opt.out / "report.csv", rep.to_csv());
  write_text(opt.out / "report.txt", rep.to_table());
  write_text(opt.out / "config.resolved", resolved_config(cfg));
  if (rep.tusimple) {
    ctx.out << "accuracy " << fmt("%.6f", rep.tusimple->accuracy) << "\n";
  } else {
    ctx.out << "F1 " << fmt("%.6f", rep.score.f1) << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(double tolerance, CommandContext& ctx) {
  if (!(tolerance > 0)) throw ConfigError("--tolerance must be > 0");
  const auto report = gradcheck_suite(tolerance);
  ctx.out << report.to_text();
  return report.all_passed() ? kExitOk : kExitCheck;
}

int cmd_ablate(const AblateOptions& opt, CommandContext& ctx, AblateResult* result) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load(opt.config);
  ensure_dir(opt.out);
  fs::path train_dir, test_dir;
  if (opt.data) {
    train_dir = *opt.data;
  } else {
    train_dir = opt.out / "data" / "train";
    write_dataset(generate_dataset(cfg.train_count, cfg.train_seed, cfg.gen), train_dir);
  }
  if (opt.test) {
    test_dir = *opt.test;
  } else {
    test_dir = opt.out / "data" / "test";
    write_dataset(generate_dataset(cfg.test_count, cfg.test_seed, cfg.gen), test_dir);
  }
  // Always train from the files so results match `train` on the same directories.
  const auto train = read_nonempty(train_dir);
  const auto test = read_nonempty(test_dir);

  AblateResult res;
  res.settings = kAblationSettings;
  res.seeds = cfg.seeds;
  std::string loss_csv = "setting,seed,total_loss_initial,total_loss_final,finite\n";
  for (const auto& setting : res.settings) {
    for (auto seed : res.seeds) {
      AblateRun r;
      r.setting = setting;
      r.seed = seed;
      res.runs.push_back(std::move(r));
    }
  }
  for (std::size_t si = 0; si < res.seeds.size(); ++si) {
    const auto seed = res.seeds[si];
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const auto oracle = mim_pretrain(tc, images_of(train)).oracle;
    for (std::size_t k = 0; k < res.settings.size(); ++k) {
      const auto& setting = res.settings[k];
      TrainConfig run_cfg = tc;
      run_cfg.loss = ablation_setting(tc.loss, setting);
      auto run = run_training(cfg, run_cfg, train, &test, setting == "baseline" ? nullptr : &oracle);
      auto& slot = res.runs[k * res.seeds.size() + si];
      const auto& rows = run.result.record.rows;
      slot.report = *run.report;
      slot.f1 = run.report->score.f1;
      slot.f1_occluded = occluded_f1(*run.report);
      slot.initial_total = rows.empty() ? 0 : rows.front().total;
      slot.final_total = rows.empty() ? 0 : rows.back().total;
      slot.finite = all_finite(run.result.record);
      slot.record = std::move(run.result.record);
      ctx.err << "ablate: " << setting << " seed " << seed << " F1 " << fmt("%.4f", slot.f1) << "\n";
    }
  }
  for (const auto& r : res.runs) {
    loss_csv += r.setting + "," + std::to_string(r.seed) + "," + fmt("%.9g", r.initial_total) + "," +
                fmt("%.9g", r.final_total) + "," + (r.finite ? "1" : "0") + "\n";
  }
  write_text(opt.out / "ablate.csv", res.to_csv(false));
  write_text(opt.out / "ablate_occluded.csv", res.to_csv(true));
  write_text(opt.out / "loss.csv", loss_csv);
  write_text(opt.out / "config.resolved", resolved_config(cfg));

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream rep;
  rep << "command: ablate\n"
      << "lambda = " << echo(cfg, "loss.lambda") << "\n"
      << "norm_mode = " << echo(cfg, "loss.norm_mode") << "\n"
      << "seeds = " << echo(cfg, "train.seeds") << "\n"
      << "config_hash: " << config_hash(cfg) << "\n"
      << stamp(ctx, wall) << "\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %10s %10s %10s %14s\n", "setting", "F1 mean", "F1 min", "F1 max",
                "occluded mean");
  rep << buf;
  for (const auto& name : res.settings) {
    double sum = 0, occ = 0, lo = 1e300, hi = -1e300;
    for (auto s : res.seeds) {
      const auto& r = res.at(name, s);
      sum += r.f1;
      occ += r.f1_occluded;
      lo = std::min(lo, r.f1);
      hi = std::max(hi, r.f1);
    }
    const double n = static_cast<double>(res.seeds.size());
    std::snprintf(buf, sizeof buf, "%-12s %10.4f %10.4f %10.4f %14.4f\n", name.c_str(), sum / n, lo, hi, occ / n);
    rep << buf;
  }
  write_text(opt.out / "report.txt", rep.str());
  ctx.out << rep.str();
  if (result) *result = std::move(res);
  return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"samiro: lane detection with a scale-adaptive mutual-information regularizer"};
  app.require_subcommand(1);
  bool no_timestamp = false;

  GenOptions gen;
  std::string gen_out;
  auto* g = app.add_subcommand("gen", "Generate a synthetic lane dataset");
  g->add_option("--config", gen.config, "Config file");
  g->add_option("--out", gen_out, "Output dataset directory")->required();
  g->add_option("--count", gen.count, "Number of scenes (default data.train_count)");
  g->add_option("--seed", gen.seed, "Dataset seed (default data.train_seed)");

  PretrainOptions pre;
  std::string pre_data, pre_out;
  auto* p = app.add_subcommand("pretrain", "Masked-image-modeling pretraining of the oracle encoder");
  p->add_option("--config", pre.config, "Config file");
  p->add_option("--data", pre_data, "Dataset directory")->required();
  p->add_option("--out", pre_out, "Output directory")->required();
  p->add_option("--seed", pre.seed, "Override train.seed");

  TrainOptions tr;
  std::string tr_data, tr_out, tr_test, tr_oracle;
  auto* t = app.add_subcommand("train", "Fine-tune the lane detector, optionally with the regularizer");
  t->add_option("--config", tr.config, "Config file");
  t->add_option("--data", tr_data, "Training dataset directory")->required();
  t->add_option("--test", tr_test, "Test dataset directory (evaluated after training)");
  t->add_option("--oracle", tr_oracle, "Oracle checkpoint from `pretrain`; omit for the baseline");
  t->add_option("--out", tr_out, "Output directory")->required();
  t->add_option("--seed", tr.seed, "Override train.seed");

  EvalOptions ev;
  std::string ev_pred, ev_gt, ev_out;
  auto* e = app.add_subcommand("eval", "Score predicted lanes against ground truth");
  e->add_option("--config", ev.config, "Config file");
  e->add_option("--pred", ev_pred, "Prediction directory (or JSON-lines file for tusimple)")->required();
  e->add_option("--gt", ev_gt, "Ground-truth directory (or JSON-lines file for tusimple)")->required();
  e->add_option("--format", ev.format, "culane | tusimple | synth")
      ->check(CLI::IsMember({"culane", "tusimple", "synth"}));
  e->add_option("--iou", ev.iou, "IoU threshold (default eval.iou = 0.5)");
  e->add_option("--width", ev.width, "Lane rendering width in px (default eval.width = 30)");
  e->add_option("--image-height", ev.image_height, "Image height for culane format")->capture_default_str();
  e->add_option("--image-width", ev.image_width, "Image width for culane format")->capture_default_str();
  e->add_option("--out", ev_out, "Output directory")->required();

  double tolerance = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check of every op and the full loss");
  gc->add_option("--tolerance", tolerance, "Max relative error")->capture_default_str();

  AblateOptions ab;
  std::string ab_out, ab_data, ab_test;
  auto* a = app.add_subcommand("ablate", "Baseline and the three regularizer settings over the configured seeds");
  a->add_option("--config", ab.config, "Config file");
  a->add_option("--out", ab_out, "Output directory")->required();
  a->add_option("--data", ab_data, "Training dataset directory (generated when omitted)");
  a->add_option("--test", ab_test, "Test dataset directory (generated when omitted)");

  for (auto* sub : {g, p, t, e, gc, a}) sub->add_flag("--no-timestamp", no_timestamp, "Omit time-dependent fields");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CommandContext ctx{out, err, !no_timestamp};
  try {
    if (*g) {
      gen.out = gen_out;
      return cmd_gen(gen, ctx);
    }
    if (*p) {
      pre.data = pre_data;
      pre.out = pre_out;
      return cmd_pretrain(pre, ctx);
    }
    if (*t) {
      tr.data = tr_data;
      tr.out = tr_out;
      if (!tr_test.empty()) tr.test = tr_test;
      if (!tr_oracle.empty()) tr.oracle = tr_oracle;
      return cmd_train(tr, ctx);
    }
    if (*e) {
      ev.pred = ev_pred;
      ev.gt = ev_gt;
      ev.out = ev_out;
      return cmd_eval(ev, ctx);
    }
    if (*gc) return cmd_gradcheck(tolerance, ctx);
    ab.out = ab_out;
    if (!ab_data.empty()) ab.data = ab_data;
    if (!ab_test.empty()) ab.test = ab_test;
    return cmd_ablate(ab, ctx);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  }
}

}  // namespace samiro

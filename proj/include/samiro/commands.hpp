#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "samiro/config.hpp"

namespace samiro {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitCheck = 3 };

struct CommandContext {
  std::ostream& out;
  std::ostream& err;
  bool timestamp = true;  // adds a "generated:" line and wall time to report.txt
};

struct GenOptions {
  std::string config;  // empty: defaults
  fs::path out;
  std::optional<int> count;             // default data.train_count
  std::optional<std::uint64_t> seed;    // default data.train_seed
};

struct PretrainOptions {
  std::string config;
  fs::path data;
  fs::path out;
  std::optional<std::uint64_t> seed;  // default train.seed
};

struct TrainOptions {
  std::string config;
  fs::path data;
  std::optional<fs::path> test;    // evaluated after training when given
  std::optional<fs::path> oracle;  // absent: baseline run
  fs::path out;
  std::optional<std::uint64_t> seed;
};

struct EvalOptions {
  std::string config;
  fs::path pred;
  fs::path gt;
  std::string format = "synth";  // culane | tusimple | synth
  std::optional<double> iou;
  std::optional<int> width;
  int image_height = 590;  // culane only
  int image_width = 1640;
  fs::path out;
};

struct AblateOptions {
  std::string config;
  fs::path out;
  std::optional<fs::path> data;  // generated from the config when absent
  std::optional<fs::path> test;
};

// One training run inside an ablation.
struct AblateRun {
  std::string setting;
  std::uint64_t seed = 0;
  double f1 = 0;
  double f1_occluded = 0;
  double initial_total = 0;
  double final_total = 0;
  bool finite = true;
  EvalReport report;
  RunRecord record;
};

struct AblateResult {
  std::vector<std::string> settings;  // baseline, samiro_only, samiro_norm, samiro_all
  std::vector<std::uint64_t> seeds;
  std::vector<AblateRun> runs;        // settings-major

  const AblateRun& at(const std::string& setting, std::uint64_t seed) const;
  // "setting,seed_<s>...,mean,min,max" with one row per setting.
  std::string to_csv(bool occluded) const;
};

// Applies one of the four ablation settings to a loss config.
LossConfig ablation_setting(const LossConfig& base, const std::string& setting);
inline const std::vector<std::string> kAblationSettings{"baseline", "samiro_only", "samiro_norm", "samiro_all"};

int cmd_gen(const GenOptions& opt, CommandContext& ctx);
int cmd_pretrain(const PretrainOptions& opt, CommandContext& ctx);
int cmd_train(const TrainOptions& opt, CommandContext& ctx);
int cmd_eval(const EvalOptions& opt, CommandContext& ctx);
int cmd_gradcheck(double tolerance, CommandContext& ctx);
int cmd_ablate(const AblateOptions& opt, CommandContext& ctx, AblateResult* result = nullptr);

/// Full command-line entry point; maps exceptions to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace samiro

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "samiro/metrics.hpp"
#include "samiro/synth.hpp"
#include "samiro/train.hpp"

namespace samiro {

/// Everything a command can be configured with. Sections map 1:1 onto the
/// config file: [data], [model], [loss], [train], [eval].
struct RunConfig {
  GenParams gen;
  int train_count = 256;
  int test_count = 64;
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;

  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2};  // used by ablate
  std::string precision = "f32";

  CulaneParams culane;
  TusimpleParams tusimple;

  // Raw "section.key" -> text as written in the file, for verbatim echo.
  std::map<std::string, std::string> explicit_values;

  void validate() const;
};

/// Parses `text` on top of the defaults. Lines are `key = value`, `[section]`
/// headers, blank, or `#`/`;` comments. Unknown sections or keys, duplicate
/// keys and malformed values throw ConfigError naming the key and line.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Every key with its effective value, in the file format; parsing the
/// result reproduces the same configuration.
std::string resolved_config(const RunConfig& cfg);

// "section.key" names in canonical order.
std::vector<std::string> config_keys();

// Effective value of one key as text, e.g. "loss.lambda" -> "0.1".
std::string config_value(const RunConfig& cfg, const std::string& dotted_key);

// Stable hash of the resolved config text.
std::uint64_t config_hash(const RunConfig& cfg);

/// Seed of scene `index` in a dataset drawn from `base`.
std::uint64_t scene_seed(std::uint64_t base, std::size_t index);
std::vector<Scene> generate_dataset(int count, std::uint64_t base, const GenParams& params);

}  // namespace samiro

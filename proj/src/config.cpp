#include "samiro/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "samiro/error.hpp"

namespace samiro {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& text) {
  N v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError("expected a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

template <typename N>
std::vector<N> parse_list(const std::string& text) {
  std::vector<N> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<N>(trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated list, got '" + text + "'");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename N>
std::string fmt(N v) {
  return std::to_string(v);
}

template <typename N>
std::string fmt_list(const std::vector<N>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Binding {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SAMIRO_NUM(sec, name, field)                                                     \
  Binding {                                                                              \
    sec, name, [](const RunConfig& c) { return fmt(c.field); },                          \
        [](RunConfig& c, const std::string& v) { c.field = parse_number<decltype(c.field)>(v); } \
  }
#define SAMIRO_BOOL(sec, name, field)                                                    \
  Binding {                                                                              \
    sec, name, [](const RunConfig& c) { return fmt_bool(c.field); },                     \
        [](RunConfig& c, const std::string& v) { c.field = parse_bool(v); }              \
  }
#define SAMIRO_LIST(sec, name, field, type)                                              \
  Binding {                                                                              \
    sec, name, [](const RunConfig& c) { return fmt_list(c.field); },                     \
        [](RunConfig& c, const std::string& v) { c.field = parse_list<type>(v); }        \
  }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      SAMIRO_NUM("data", "height", gen.height),
      SAMIRO_NUM("data", "width", gen.width),
      SAMIRO_NUM("data", "channels", gen.channels),
      SAMIRO_NUM("data", "lanes_min", gen.lanes_min),
      SAMIRO_NUM("data", "lanes_max", gen.lanes_max),
      SAMIRO_NUM("data", "curvature", gen.curvature),
      SAMIRO_NUM("data", "lane_width", gen.lane_width),
      SAMIRO_NUM("data", "horizon", gen.horizon),
      SAMIRO_NUM("data", "clutter_density", gen.clutter_density),
      SAMIRO_NUM("data", "p_illumination", gen.p_illumination),
      SAMIRO_NUM("data", "gain_min", gen.gain_min),
      SAMIRO_NUM("data", "gain_max", gen.gain_max),
      SAMIRO_NUM("data", "bias_min", gen.bias_min),
      SAMIRO_NUM("data", "bias_max", gen.bias_max),
      SAMIRO_NUM("data", "p_occlusion", gen.p_occlusion),
      SAMIRO_NUM("data", "occluders_max", gen.occluders_max),
      SAMIRO_NUM("data", "train_count", train_count),
      SAMIRO_NUM("data", "test_count", test_count),
      SAMIRO_NUM("data", "train_seed", train_seed),
      SAMIRO_NUM("data", "test_seed", test_seed),

      SAMIRO_LIST("model", "oracle_widths", train.model.oracle_widths, int),
      SAMIRO_LIST("model", "target_widths", train.model.target_widths, int),
      SAMIRO_NUM("model", "attention_kernel", train.model.attention_kernel),
      SAMIRO_NUM("model", "head_hidden", train.model.head_hidden),

      SAMIRO_NUM("loss", "lambda", train.loss.lambda),
      Binding{"loss", "norm_mode", [](const RunConfig& c) { return to_string(c.train.loss.norm_mode); },
              [](RunConfig& c, const std::string& v) { c.train.loss.norm_mode = parse_norm_mode(v); }},
      Binding{"loss", "variant", [](const RunConfig& c) { return to_string(c.train.loss.variant); },
              [](RunConfig& c, const std::string& v) { c.train.loss.variant = parse_variant(v); }},
      Binding{"loss", "stages",
              [](const RunConfig& c) {
                return c.train.loss.stages.empty() ? std::string("all") : fmt_list(c.train.loss.stages);
              },
              [](RunConfig& c, const std::string& v) {
                c.train.loss.stages = v == "all" ? std::vector<int>{} : parse_list<int>(v);
              }},
      SAMIRO_BOOL("loss", "normalize", train.loss.normalize),
      SAMIRO_BOOL("loss", "attention", train.loss.attention),
      SAMIRO_NUM("loss", "eps_norm", train.loss.eps_norm),

      SAMIRO_NUM("train", "seed", train.seed),
      SAMIRO_LIST("train", "seeds", seeds, std::uint64_t),
      SAMIRO_NUM("train", "pretrain_steps", train.pretrain_steps),
      SAMIRO_NUM("train", "train_steps", train.train_steps),
      SAMIRO_NUM("train", "batch_size", train.batch_size),
      SAMIRO_NUM("train", "lr", train.lr),
      SAMIRO_NUM("train", "pretrain_lr", train.pretrain_lr),
      SAMIRO_NUM("train", "reg_lr_scale", train.reg_lr_scale),
      SAMIRO_NUM("train", "momentum", train.momentum),
      Binding{"train", "schedule", [](const RunConfig& c) { return std::string(c.train.cosine ? "cosine" : "constant"); },
              [](RunConfig& c, const std::string& v) {
                if (v != "constant" && v != "cosine") throw ConfigError("expected constant or cosine, got '" + v + "'");
                c.train.cosine = v == "cosine";
              }},
      SAMIRO_NUM("train", "mask_ratio", train.mask_ratio),
      SAMIRO_NUM("train", "patch_size", train.patch_size),
      SAMIRO_NUM("train", "checkpoint_every", train.checkpoint_every),
      SAMIRO_NUM("train", "gt_lane_width", train.lane_width),
      Binding{"train", "oracle_mode",
              [](const RunConfig& c) { return std::string(c.train.oracle_mode == OracleMode::mim ? "mim" : "random"); },
              [](RunConfig& c, const std::string& v) {
                if (v != "mim" && v != "random") throw ConfigError("expected mim or random, got '" + v + "'");
                c.train.oracle_mode = v == "mim" ? OracleMode::mim : OracleMode::random;
              }},
      Binding{"train", "precision", [](const RunConfig& c) { return c.precision; },
              [](RunConfig& c, const std::string& v) {
                if (v != "f32") throw ConfigError("only f32 training is supported, got '" + v + "'");
                c.precision = v;
              }},

      SAMIRO_NUM("eval", "iou", culane.iou_threshold),
      SAMIRO_NUM("eval", "width", culane.width_px),
      Binding{"eval", "matching",
              [](const RunConfig& c) {
                return std::string(c.culane.matching == Matching::hungarian ? "hungarian" : "greedy");
              },
              [](RunConfig& c, const std::string& v) {
                if (v != "hungarian" && v != "greedy") throw ConfigError("expected hungarian or greedy, got '" + v + "'");
                c.culane.matching = v == "hungarian" ? Matching::hungarian : Matching::greedy;
              }},
      SAMIRO_NUM("eval", "tusimple_dist", tusimple.dist_thresh_px),
      SAMIRO_NUM("eval", "tusimple_accept", tusimple.accept_ratio),
      SAMIRO_NUM("eval", "decode_threshold", train.decode.threshold),
      SAMIRO_NUM("eval", "decode_row_stride", train.decode.row_stride),
      SAMIRO_NUM("eval", "decode_max_dx", train.decode.max_dx),
      SAMIRO_NUM("eval", "decode_max_row_gap", train.decode.max_row_gap),
      SAMIRO_NUM("eval", "decode_min_points", train.decode.min_points),
  };
  return table;
}

#undef SAMIRO_NUM
#undef SAMIRO_BOOL
#undef SAMIRO_LIST

const Binding* find_binding(const std::string& section, const std::string& key) {
  for (const auto& b : bindings()) {
    if (b.section == section && b.key == key) return &b;
  }
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  gen.validate();
  if (train_count < 0 || test_count < 0) throw ConfigError("data.train_count and data.test_count must be >= 0");
  if (seeds.empty()) throw ConfigError("train.seeds must not be empty");
  if (culane.iou_threshold <= 0 || culane.iou_threshold > 1) throw ConfigError("eval.iou must be in (0,1]");
  if (culane.width_px < 1) throw ConfigError("eval.width must be >= 1");
  if (tusimple.dist_thresh_px <= 0) throw ConfigError("eval.tusimple_dist must be > 0");
  if (tusimple.accept_ratio <= 0 || tusimple.accept_ratio > 1) throw ConfigError("eval.tusimple_accept must be in (0,1]");
  if (train.decode.row_stride < 1 || train.decode.min_points < 2 || train.decode.max_row_gap < 0) {
    throw ConfigError("eval.decode_*: row_stride >= 1, min_points >= 2, max_row_gap >= 0 required");
  }
  train.validate(gen.height, gen.width);
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::set<std::string> sections{"data", "model", "loss", "train", "eval"};
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string where = source + ":" + std::to_string(n) + ": ";
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + key + "' outside any section");
    const std::string dotted = section + "." + key;
    const Binding* b = find_binding(section, key);
    if (!b) throw ConfigError(where + "unknown key '" + dotted + "'");
    if (cfg.explicit_values.count(dotted)) throw ConfigError(where + "duplicate key '" + dotted + "'");
    try {
      b->set(cfg, value);
    } catch (const Error& e) {
      throw ConfigError(where + dotted + ": " + e.what());
    }
    cfg.explicit_values[dotted] = value;
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string resolved_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& b : bindings()) {
    if (b.section != section) {
      out += (section.empty() ? "[" : "\n[") + b.section + "]\n";
      section = b.section;
    }
    out += b.key + " = " + b.get(cfg) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& b : bindings()) keys.push_back(b.section + "." + b.key);
  return keys;
}

std::string config_value(const RunConfig& cfg, const std::string& dotted_key) {
  const auto dot = dotted_key.find('.');
  const Binding* b = dot == std::string::npos ? nullptr
                                              : find_binding(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
  if (!b) throw ConfigError("unknown key '" + dotted_key + "'");
  return b->get(cfg);
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(resolved_config(cfg)); }

std::uint64_t scene_seed(std::uint64_t base, std::size_t index) {
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + (index + 1) * 0xD1B54A32D192ED03ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Scene> generate_dataset(int count, std::uint64_t base, const GenParams& params) {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) scenes.push_back(generate_scene(scene_seed(base, static_cast<std::size_t>(i)), params));
  return scenes;
}

}  // namespace samiro

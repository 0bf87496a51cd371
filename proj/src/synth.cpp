#include "samiro/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "samiro/error.hpp"
#include "samiro/metrics.hpp"
#include "samiro/rng.hpp"

namespace samiro {

namespace fs = std::filesystem;

void GenParams::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("GenParams: " + m); };
  if (height < 8 || width < 8) fail("image must be at least 8x8");
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (lanes_min < 1 || lanes_max < lanes_min) fail("lane count range is empty");
  if (lane_width < 1) fail("lane_width must be >= 1");
  if (curvature < 0) fail("curvature must be >= 0");
  if (horizon <= 0 || horizon >= 0.9) fail("horizon must be in (0, 0.9)");
  if (clutter_density < 0 || clutter_density > 1) fail("clutter_density must be in [0,1]");
  for (double p : {p_illumination, p_occlusion}) {
    if (p < 0 || p > 1) fail("probabilities must be in [0,1]");
  }
  if (gain_min <= 0 || gain_max < gain_min) fail("gain range must be positive and non-empty");
  if (bias_max < bias_min) fail("bias range is empty");
  if (occluders_max < 1) fail("occluders_max must be >= 1");
}

bool Scene::has_tag(const std::string& t) const {
  return std::find(tags.begin(), tags.end(), t) != tags.end();
}

namespace {

struct LaneGeometry {
  double vanish_x, horizon_y, bottom_x, bow;
  double x_at(double y, double bottom_y) const {
    const double t = (y - horizon_y) / (bottom_y - horizon_y);
    return vanish_x + (bottom_x - vanish_x) * t + 4.0 * bow * t * (1.0 - t);
  }
};

// Samples lanes every 4 rows; returns an empty list when the geometry is
// degenerate (a lane keeps fewer than 4 in-bounds samples).
LaneList try_lanes(Rng& rng, const GenParams& p) {
  const int h = p.height, w = p.width;
  const int n = rng.uniform_int(p.lanes_min, p.lanes_max);
  const double horizon_y = p.horizon * h;
  const double bottom_y = h - 1;
  const double vanish_x = w * (0.5 + rng.uniform(-0.12, 0.12));
  const double centre = w * (0.5 + rng.uniform(-0.08, 0.08));
  const double spacing = w * rng.uniform(0.22, 0.34);
  const double road_bow = rng.uniform(-p.curvature, p.curvature);
  const double top_y = horizon_y + 0.2 * (bottom_y - horizon_y);

  std::vector<double> rows;
  for (double y = bottom_y; y >= top_y; y -= 4) rows.push_back(y);
  std::reverse(rows.begin(), rows.end());

  std::vector<LaneGeometry> geo;
  for (int k = 0; k < n; ++k) {
    geo.push_back({vanish_x, horizon_y, centre + (k - 0.5 * (n - 1)) * spacing + rng.uniform(-2.0, 2.0),
                   road_bow + rng.uniform(-0.15, 0.15) * p.curvature});
  }
  // Lanes converge towards the horizon; stop all of them at the first row
  // (from the bottom) where two neighbours would merge in the rendered mask.
  const double min_gap = 2.0 * p.lane_width + 2.0;
  auto inside = [w](double x) { return x >= 0 && x <= w - 1; };
  std::size_t first_row = rows.size();
  while (first_row > 0) {
    const double y = rows[first_row - 1];
    bool merged = false;
    for (int k = 0; k + 1 < n; ++k) {
      const double a = geo[k].x_at(y, bottom_y), b = geo[k + 1].x_at(y, bottom_y);
      if (inside(a) && inside(b) && b - a < min_gap) merged = true;
    }
    if (merged) break;
    --first_row;
  }

  LaneList lanes;
  for (const auto& g : geo) {
    // Keep the longest run of consecutive in-bounds rows.
    std::vector<Point> best, cur;
    for (std::size_t r = first_row; r < rows.size(); ++r) {
      const double x = g.x_at(rows[r], bottom_y);
      if (!inside(x)) {
        cur.clear();
        continue;
      }
      // Snap to the 4 decimals the annotation files carry so a written
      // dataset renders exactly the same GT.
      cur.push_back({std::round(x * 1e4) / 1e4, rows[r]});
      if (cur.size() > best.size()) best = cur;
    }
    if (best.size() < 4) return {};
    lanes.push_back({std::move(best)});
  }
  return lanes;
}

void paint_mask(Tensor<float>& image, const Mask& mask, const std::vector<float>& value) {
  auto data = image.mutable_data();
  const std::size_t plane = mask.bits.size();
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (mask.bits[i]) data[c * plane + i] = value[c];
    }
  }
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const GenParams& params) {
  params.validate();
  Rng rng(seed);
  LaneList lanes;
  for (int attempt = 0; attempt < 16 && lanes.empty(); ++attempt) lanes = try_lanes(rng, params);
  if (lanes.empty()) throw Error("generate_scene: degenerate lane geometry after 16 attempts (seed " + std::to_string(seed) + ")");

  const int h = params.height, w = params.width;
  const auto c = static_cast<std::size_t>(params.channels);
  Scene scene;
  scene.seed = seed;
  scene.lanes = std::move(lanes);
  scene.image = Tensor<float>::zeros({c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  auto data = scene.image.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  // Sky above the horizon, textured asphalt with a vertical gradient below.
  const double horizon_y = params.horizon * h;
  const double road_base = rng.uniform(0.15, 0.3);
  const double sky_base = rng.uniform(0.45, 0.65);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double noise = rng.uniform(-0.04, 0.04);
      const double v = y < horizon_y ? sky_base + 0.5 * noise
                                     : road_base + 0.08 * (y - horizon_y) / (h - horizon_y) + noise;
      const auto idx = static_cast<std::size_t>(y) * w + x;
      for (std::size_t ch = 0; ch < c; ++ch) data[ch * plane + idx] = static_cast<float>(v);
    }
  }
  for (const auto& lane : scene.lanes) {
    const float paint = static_cast<float>(rng.uniform(0.7, 0.9));
    std::vector<float> color(c, paint);
    if (c == 3) color[2] *= 0.85f;  // slightly yellow
    paint_mask(scene.image, render_lane_mask(lane, params.lane_width, h, w), color);
  }
  // Clutter: small bright or dark speckles anywhere in the frame.
  const int blobs = static_cast<int>(params.clutter_density * plane);
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0, w - 1), cy = rng.uniform(0, h - 1);
    const int radius = rng.uniform_int(1, 2);
    const auto v = static_cast<float>(rng.uniform(0.05, 0.85));
    Lane dot{{{cx, cy}, {cx, cy + 0.5}}};
    paint_mask(scene.image, render_lane_mask(dot, 2 * radius, h, w), std::vector<float>(c, v));
  }

  // Perturbation decisions are always drawn so the stream layout is fixed.
  const bool illum = rng.bernoulli(params.p_illumination);
  const double gain = rng.uniform(params.gain_min, params.gain_max);
  const double bias = rng.uniform(params.bias_min, params.bias_max);
  const bool occlude = rng.bernoulli(params.p_occlusion);
  const int n_occ = rng.uniform_int(1, params.occluders_max);
  std::vector<OcclusionRect> rects;
  for (int i = 0; i < n_occ; ++i) {
    OcclusionRect r;
    r.w = rng.uniform_int(w / 8, w / 4);
    r.h = rng.uniform_int(h / 8, h / 4);
    r.x = rng.uniform_int(0, w - r.w);
    r.y = rng.uniform_int(static_cast<int>(horizon_y), h - r.h);
    r.value = static_cast<float>(rng.uniform(0.0, 0.5));
    rects.push_back(r);
  }
  if (illum) {
    scene = apply_illumination(scene, gain, bias);
    scene.tags.push_back("illumination");
  }
  if (occlude) {
    scene = apply_occlusion(scene, rects);
    scene.tags.push_back("occlusion");
  }
  return scene;
}

Scene apply_illumination(const Scene& scene, double gain, double bias) {
  if (!(gain > 0)) throw ConfigError("apply_illumination: gain must be > 0");
  Scene out = scene;
  out.image = scene.image.clone(false);
  const auto g = static_cast<float>(gain), b = static_cast<float>(bias);
  for (auto& v : out.image.mutable_data()) v = std::clamp(g * v + b, 0.0f, 1.0f);
  return out;
}

Scene apply_occlusion(const Scene& scene, const std::vector<OcclusionRect>& rects) {
  const int h = scene.height(), w = scene.width();
  for (const auto& r : rects) {
    if (r.x < 0 || r.y < 0 || r.w < 0 || r.h < 0 || r.x + r.w > w || r.y + r.h > h) {
      throw DimensionError("apply_occlusion: rect (" + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
                           std::to_string(r.w) + "," + std::to_string(r.h) + ") outside " + std::to_string(w) +
                           "x" + std::to_string(h) + " image");
    }
  }
  Scene out = scene;
  out.image = scene.image.clone(false);
  auto data = out.image.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (const auto& r : rects) {
    for (std::size_t c = 0; c < out.image.dim(0); ++c)
      for (int y = r.y; y < r.y + r.h; ++y)
        for (int x = r.x; x < r.x + r.w; ++x) data[c * plane + static_cast<std::size_t>(y) * w + x] = r.value;
  }
  return out;
}

Tensor<float> render_gt_mask(const Scene& scene, int lane_width) {
  const int h = scene.height(), w = scene.width();
  std::vector<float> m(static_cast<std::size_t>(h) * w, 0.0f);
  for (const auto& lane : scene.lanes) {
    const Mask mask = render_lane_mask(lane, lane_width, h, w);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (mask.bits[i]) m[i] = 1.0f;
    }
  }
  return Tensor<float>({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(m));
}

void write_pnm(const Tensor<float>& image, const fs::path& path) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3) throw DimensionError("write_pnm: axis 0 must be 1 or 3, got " + shape_str(image.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> bytes(c * h * w);
  const auto d = image.data();
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      bytes[i * c + ch] = static_cast<unsigned char>(std::lround(quantize8(d[ch * h * w + i]) * 255.0f));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor<float> read_pnm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t += ch;
      }
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw ParseError(path.string() + ":1: unsupported PNM magic '" + magic + "'");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ParseError(path.string() + ":1: malformed PNM header");
  }
  if (maxval == 0 || maxval > 255) throw ParseError(path.string() + ":1: only 8-bit PNM is supported");
  const std::size_t c = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> bytes(c * h * w);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw ParseError(path.string() + ": truncated pixel data");
  }
  std::vector<float> data(c * h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      data[ch * h * w + i] = static_cast<float>(bytes[i * c + ch]) / static_cast<float>(maxval);
  return Tensor<float>({c, h, w}, std::move(data));
}

namespace {

std::string stem_for(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

void write_dataset(const std::vector<Scene>& scenes, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::ofstream index(dir / "index.txt", std::ios::binary);
  if (!index) throw IoError("cannot write " + (dir / "index.txt").string());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const std::string stem = stem_for(i);
    write_pnm(s.image, dir / "images" / (stem + (s.image.dim(0) == 1 ? ".pgm" : ".ppm")));
    std::ofstream lines(dir / "images" / (stem + ".lines.txt"), std::ios::binary);
    if (!lines) throw IoError("cannot write annotations for " + stem);
    lines << format_culane_lines(s.lanes);
    index << stem << " seed=" << s.seed << " tags=";
    for (std::size_t t = 0; t < s.tags.size(); ++t) index << (t ? "," : "") << s.tags[t];
    index << '\n';
  }
}

std::vector<DatasetEntry> read_index(const fs::path& dir) {
  const auto path = dir / "index.txt";
  std::istringstream is(read_text(path));
  std::vector<DatasetEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    DatasetEntry e;
    if (!(ls >> e.stem)) continue;
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected key=value, got '" + tok + "'");
      const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
      if (key == "seed") {
        try {
          e.seed = std::stoull(value);
        } catch (const std::exception&) {
          throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad seed '" + value + "'");
        }
      } else if (key == "tags") {
        std::istringstream ts(value);
        std::string t;
        while (std::getline(ts, t, ',')) {
          if (!t.empty()) e.tags.push_back(t);
        }
      } else {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": unknown index key '" + key + "'");
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Scene> read_dataset(const fs::path& dir) {
  std::vector<Scene> scenes;
  for (const auto& e : read_index(dir)) {
    Scene s;
    s.seed = e.seed;
    s.tags = e.tags;
    const auto gray = dir / "images" / (e.stem + ".pgm");
    s.image = read_pnm(fs::exists(gray) ? gray : dir / "images" / (e.stem + ".ppm"));
    const auto lines_path = dir / "images" / (e.stem + ".lines.txt");
    s.lanes = parse_culane_lines(read_text(lines_path), lines_path.string());
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace samiro

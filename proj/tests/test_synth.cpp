#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "samiro/error.hpp"
#include "samiro/metrics.hpp"
#include "samiro/nn.hpp"
#include "samiro/synth.hpp"
#include "support.hpp"

using namespace samiro;

namespace {

std::vector<float> pixels(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

double pixel_mean(const Tensor<float>& t) {
  double acc = 0;
  for (float v : t.data()) acc += v;
  return acc / static_cast<double>(t.numel());
}

GenParams clean_params() {
  GenParams p;
  p.p_illumination = 0;
  p.p_occlusion = 0;
  return p;
}

}  // namespace

TEST_CASE("generate_scene is a pure function of (seed, params)") {
  GenParams p;
  p.p_illumination = 1;
  p.p_occlusion = 1;
  for (std::uint64_t seed : {0ULL, 7ULL, 123456789ULL}) {
    const auto a = generate_scene(seed, p), b = generate_scene(seed, p);
    CHECK(pixels(a.image) == pixels(b.image));
    CHECK(a.lanes == b.lanes);
    CHECK(a.tags == b.tags);
    CHECK(a.tags == std::vector<std::string>{"illumination", "occlusion"});
  }
  CHECK(pixels(generate_scene(1, p).image) != pixels(generate_scene(2, p).image));
}

TEST_CASE("lane count, bounds and ordering over 1000 seeds") {
  const GenParams p;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = generate_scene(seed, p);
    REQUIRE(static_cast<int>(s.lanes.size()) >= p.lanes_min);
    REQUIRE(static_cast<int>(s.lanes.size()) <= p.lanes_max);
    for (const auto& lane : s.lanes) {
      REQUIRE(lane.points.size() >= 2);
      for (std::size_t i = 0; i < lane.points.size(); ++i) {
        const auto& q = lane.points[i];
        REQUIRE(std::isfinite(q.x));
        REQUIRE((q.x >= 0 && q.x <= p.width - 1 && q.y >= 0 && q.y <= p.height - 1));
        if (i) REQUIRE(q.y > lane.points[i - 1].y);
      }
    }
    for (float v : s.image.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
  }
}

TEST_CASE("color scenes have three channels") {
  GenParams p;
  p.channels = 3;
  CHECK(generate_scene(3, p).image.shape() == Shape{3, 64, 128});
}

TEST_CASE("decoding the rendered GT recovers the lane count") {
  const GenParams p;
  DecodeParams d;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto s = generate_scene(seed, p);
    const auto gt = render_gt_mask(s, p.lane_width);
    INFO("seed " << seed);
    REQUIRE(decode_lanes(gt, d).size() == s.lanes.size());
  }
}

TEST_CASE("apply_illumination") {
  const auto s = generate_scene(11, clean_params());
  CHECK(pixels(apply_illumination(s, 1.0, 0.0).image) == pixels(s.image));
  const auto half = apply_illumination(s, 0.5, 0.0);
  for (std::size_t i = 0; i < s.image.numel(); ++i) REQUIRE(half.image[i] == 0.5f * s.image[i]);
  CHECK(half.lanes == s.lanes);
  CHECK_THROWS_AS(apply_illumination(s, 0.0, 0.0), ConfigError);

  SUBCASE("mean shifts by the bias on unsaturated scenes") {
    for (double bias : {0.05, -0.03}) {
      double shift = 0;
      for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto sc = generate_scene(seed, clean_params());
        shift += pixel_mean(apply_illumination(sc, 1.0, bias).image) - pixel_mean(sc.image);
      }
      CHECK(std::abs(shift / 100 - bias) < 1e-4);
    }
  }
}

TEST_CASE("apply_occlusion") {
  const auto s = generate_scene(12, clean_params());
  CHECK(pixels(apply_occlusion(s, {}).image) == pixels(s.image));

  const OcclusionRect r{30, 20, 25, 15, 0.0f};
  const auto o = apply_occlusion(s, {r});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x) {
      const auto i = static_cast<std::size_t>(y) * 128 + x;
      const bool inside = x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
      REQUIRE(o.image[i] == (inside ? 0.0f : s.image[i]));
    }

  SUBCASE("covering 40% of a lane's length leaves the GT untouched") {
    const auto& lane = s.lanes.front();
    const double y0 = lane.points.front().y, y1 = lane.points.back().y;
    const int top = static_cast<int>(y0), hgt = static_cast<int>(std::ceil(0.4 * (y1 - y0)));
    const auto occ = apply_occlusion(s, {{0, top, 128, hgt, 0.2f}});
    CHECK(occ.lanes == s.lanes);
    CHECK(pixels(render_gt_mask(occ, 5)) == pixels(render_gt_mask(s, 5)));
  }
  CHECK_THROWS_AS(apply_occlusion(s, {{120, 0, 20, 5, 0.0f}}), DimensionError);
  CHECK_THROWS_AS(apply_occlusion(s, {{-1, 0, 5, 5, 0.0f}}), DimensionError);
}

TEST_CASE("dataset write/read round trip") {
  support::TempDir tmp("synth_rt");
  GenParams p;
  p.p_illumination = 0.5;
  p.p_occlusion = 0.5;
  std::vector<Scene> scenes;
  for (std::uint64_t seed = 100; seed < 120; ++seed) scenes.push_back(generate_scene(seed, p));
  p.channels = 3;
  scenes.push_back(generate_scene(200, p));
  write_dataset(scenes, tmp.path);
  const auto back = read_dataset(tmp.path);
  REQUIRE(back.size() == scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& a = scenes[i];
    const auto& b = back[i];
    CHECK(b.seed == a.seed);
    CHECK(b.tags == a.tags);
    REQUIRE(b.image.shape() == a.image.shape());
    for (std::size_t k = 0; k < a.image.numel(); ++k) REQUIRE(b.image[k] == quantize8(a.image[k]));
    REQUIRE(b.lanes.size() == a.lanes.size());
    for (std::size_t l = 0; l < a.lanes.size(); ++l) {
      REQUIRE(b.lanes[l].points.size() == a.lanes[l].points.size());
      for (std::size_t q = 0; q < a.lanes[l].points.size(); ++q) {
        CHECK(std::abs(b.lanes[l].points[q].x - a.lanes[l].points[q].x) <= 5e-5);
        CHECK(std::abs(b.lanes[l].points[q].y - a.lanes[l].points[q].y) <= 5e-5);
      }
    }
    CHECK(pixels(render_gt_mask(b, 5)) == pixels(render_gt_mask(a, 5)));
  }
  // Quantization is applied once: a second trip changes nothing.
  support::TempDir tmp2("synth_rt2");
  write_dataset(back, tmp2.path);
  const auto again = read_dataset(tmp2.path);
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(pixels(again[i].image) == pixels(back[i].image));
}

TEST_CASE("dataset parse errors carry file and line") {
  support::TempDir tmp("synth_bad");
  support::spit(tmp.path / "index.txt", "0000 seed=1 tags=\n0001 seed=x tags=\n");
  try {
    read_index(tmp.path);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("index.txt:2") != std::string::npos);
  }
  support::spit(tmp.path / "index.txt", "0000 seed=1 tags=\n");
  support::spit(tmp.path / "images" / "0000.pgm", "P5\n2 2\n255\nab");
  CHECK_THROWS_AS(read_dataset(tmp.path), ParseError);
}

TEST_CASE("hand-written annotation fixture") {
  const auto lanes = parse_culane_lines(support::slurp(support::fixture("two_lanes.lines.txt")));
  REQUIRE(lanes.size() == 2);
  CHECK(lanes[0].points.size() == 4);
  CHECK(lanes[1].points.size() == 3);
  // Files list points bottom-up; lanes come back ordered by increasing y.
  CHECK(lanes[0].points.front() == Point{21.75, 39.0});
  CHECK(lanes[0].points[2] == Point{14.25, 55.0});
  CHECK(lanes[1].points.back() == Point{100.0, 63.0});
}

TEST_CASE("GenParams validation") {
  GenParams p;
  p.lanes_min = 5;
  CHECK_THROWS_AS(generate_scene(0, p), ConfigError);
  p = GenParams{};
  p.p_occlusion = 1.5;
  CHECK_THROWS_AS(generate_scene(0, p), ConfigError);
  p = GenParams{};
  p.channels = 2;
  CHECK_THROWS_AS(generate_scene(0, p), ConfigError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "samiro/error.hpp"
#include "samiro/metrics.hpp"
#include "samiro/nn.hpp"

using namespace samiro;
using T = Tensor<double>;

namespace {

std::vector<double> vec(const T& t) { return {t.data().begin(), t.data().end()}; }

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename U>
void zero_all(NamedParams<U>& params) {
  for (auto& [name, p] : params) *p = Tensor<U>::zeros(p->shape(), p->requires_grad());
}

std::vector<float> mask_to_prob(const Mask& m) { return {m.bits.begin(), m.bits.end()}; }

}  // namespace

TEST_CASE("spatial attention with zero p gives 0.5 everywhere") {
  Rng rng(1);
  const auto f = oracle::random_tensor(rng, {3, 5, 6});
  const auto out = spatial_attention(SpatialAttentionBlock<double>::zeros(7), f);
  CHECK(out.weights.shape() == Shape{1, 5, 6});
  for (double v : out.weights.data()) CHECK(v == 0.5);
  const auto half = vec(scale(f, 0.5));
  CHECK(vec(out.filtered) == half);
}

TEST_CASE("spatial attention weights stay strictly inside (0,1) and preserve shape") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = rng.uniform_int(1, 5), h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
    const int k = 2 * rng.uniform_int(0, 3) + 1;
    auto block = SpatialAttentionBlock<double>::init(k, rng);
    const auto f = oracle::random_tensor(rng, {c, h, w}, -3, 3);
    const auto out = spatial_attention(block, f);
    REQUIRE(out.filtered.shape() == f.shape());
    for (double v : out.weights.data()) {
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }
  }
}

TEST_CASE("spatial attention matches a hand computation with a 1x1 kernel") {
  const T f({2, 2, 2}, {1.0, -2.0, 0.5, 3.0,  //
                        4.0, 0.0, -1.0, 2.0});
  SpatialAttentionBlock<double> block{T({1, 2, 1, 1}, {0.7, -0.3}), T({1}, {0.1})};
  const auto out = spatial_attention(block, f);
  for (int i = 0; i < 4; ++i) {
    const double a = f[i], b = f[4 + i];
    const double avg = (a + b) / 2, mx = std::max(a, b);
    const double wsa = sig(0.7 * avg - 0.3 * mx + 0.1);
    CHECK(out.weights[i] == doctest::Approx(wsa).epsilon(1e-15));
    CHECK(out.filtered[i] == doctest::Approx(wsa * a).epsilon(1e-15));
    CHECK(out.filtered[4 + i] == doctest::Approx(wsa * b).epsilon(1e-15));
  }
}

TEST_CASE("encoder") {
  Rng rng(3);
  SUBCASE("zero weights give all-zero stages") {
    auto enc = Encoder<double>::init(1, {8, 16, 32}, rng);
    NamedParams<double> params;
    enc.collect("enc", params);
    zero_all(params);
    const auto pyr = encoder_forward(enc, oracle::random_tensor(rng, {1, 64, 128}));
    for (const auto& f : pyr)
      for (double v : f.data()) CHECK(v == 0.0);
  }
  SUBCASE("three stages halve 64x128 each time") {
    auto enc = Encoder<float>::init(1, {8, 16, 32}, rng);
    const auto pyr = encoder_forward(enc, Tensor<float>::full({1, 64, 128}, 0.5f));
    REQUIRE(pyr.size() == 3);
    CHECK(pyr[0].shape() == Shape{8, 32, 64});
    CHECK(pyr[1].shape() == Shape{16, 16, 32});
    CHECK(pyr[2].shape() == Shape{32, 8, 16});
  }
  SUBCASE("same seed twice gives bitwise identical pyramids") {
    Rng a(42), b(42), img(5);
    const auto image = cast<float>(oracle::random_tensor(img, {1, 32, 32}, 0, 1));
    const auto pa = encoder_forward(Encoder<float>::init(1, {4, 8}, a), image);
    const auto pb = encoder_forward(Encoder<float>::init(1, {4, 8}, b), image);
    for (std::size_t l = 0; l < pa.size(); ++l)
      CHECK(std::vector<float>(pa[l].data().begin(), pa[l].data().end()) ==
            std::vector<float>(pb[l].data().begin(), pb[l].data().end()));
  }
  SUBCASE("indivisible extents are rejected") {
    auto enc = Encoder<double>::init(1, {2, 2, 2}, rng);
    CHECK_THROWS_AS(encoder_forward(enc, T::zeros({1, 12, 16})), DimensionError);
  }
}

TEST_CASE("projection") {
  Rng rng(4);
  const auto f = oracle::random_tensor(rng, {3, 4, 5});
  CHECK(vec(project(Projection<double>::identity(3), f)) == vec(f));

  auto g = Projection<double>::init(3, 5, rng);
  // Power-of-two factors commute with rounding, so those are bitwise; 10 is
  // exact up to the rounding of the channel sum.
  for (double c : {-2.0, 0.5, 2.0}) CHECK(vec(project(g, scale(f, c))) == vec(scale(project(g, f), c)));
  {
    const auto a = vec(project(g, scale(f, 10.0))), b = vec(scale(project(g, f), 10.0));
    for (std::size_t s = 0; s < 5; ++s)
      for (std::size_t p = 0; p < 20; ++p) {
        double mag = 0;  // dot-product rounding scales with the sum of |terms|
        for (std::size_t t = 0; t < 3; ++t) mag += std::abs(10.0 * g.weight[s * 3 + t] * f[t * 20 + p]);
        CHECK(std::abs(a[s * 20 + p] - b[s * 20 + p]) <= 8 * 0x1p-53 * mag);
      }
  }

  SUBCASE("matches a per-position matrix-vector loop") {
    const auto y = project(g, f);
    REQUIRE(y.shape() == Shape{5, 4, 5});
    for (std::size_t s = 0; s < 5; ++s)
      for (std::size_t p = 0; p < 20; ++p) {
        double acc = 0;
        for (std::size_t t = 0; t < 3; ++t) acc += g.weight[s * 3 + t] * f[t * 20 + p];
        CHECK(y[s * 20 + p] == doctest::Approx(acc).epsilon(1e-14));
      }
  }
  CHECK_THROWS_AS(project(g, oracle::random_tensor(rng, {4, 2, 2})), DimensionError);
}

TEST_CASE("lane head") {
  Rng rng(5);
  auto enc = Encoder<double>::init(1, {4, 6, 8}, rng);
  auto head = LaneHead<double>::init(8, 4, 1, 8, rng);
  const auto image = oracle::random_tensor(rng, {1, 16, 32}, 0, 1);
  const auto prob = lane_head_forward(head, encoder_forward(enc, image).back());
  CHECK(prob.shape() == Shape{1, 16, 32});
  for (double v : prob.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  NamedParams<double> params;
  head.collect("head", params);
  zero_all(params);
  const auto flat = lane_head_forward(head, encoder_forward(enc, image).back());
  for (double v : flat.data()) CHECK(v == 0.5);
}

TEST_CASE("lane head gradient matches finite differences") {
  Rng rng(6);
  auto head = LaneHead<double>::init(3, 2, 1, 2, rng);
  const auto feat = oracle::random_tensor(rng, {3, 3, 3});
  const auto r = oracle::random_vec(rng, 36);
  const auto w0 = vec(head.out.weight);
  auto f = [&](const std::vector<double>& w) {
    LaneHead<double> h2 = head;
    h2.out.weight = T(head.out.weight.shape(), w);
    const auto p = lane_head_forward(h2, feat);
    double acc = 0;
    for (std::size_t i = 0; i < 36; ++i) acc += p[i] * r[i];
    return acc;
  };
  head.out.weight = T(head.out.weight.shape(), w0, true);
  sum(mul(lane_head_forward(head, feat), T({1, 6, 6}, r))).backward();
  CHECK(oracle::max_rel_error(head.out.weight.grad(), oracle::numeric_grad(f, w0)) < 1e-4);
}

TEST_CASE("decode_lanes") {
  DecodeParams params;
  SUBCASE("empty map") {
    CHECK(decode_lanes(std::vector<float>(64 * 128, 0.0f), 64, 128, params).empty());
  }
  SUBCASE("a single vertical line") {
    const Lane line{{{40.0, 0.0}, {40.0, 63.0}}};
    const auto mask = render_lane_mask(line, 3, 64, 128);
    const auto lanes = decode_lanes(mask_to_prob(mask), 64, 128, params);
    REQUIRE(lanes.size() == 1);
    CHECK(lanes[0].points.size() >= 2);
    for (const auto& p : lanes[0].points) CHECK(std::abs(p.x - 40.0) <= 0.5);
  }
  SUBCASE("two well separated lines") {
    const auto a = render_lane_mask(Lane{{{20.0, 0.0}, {30.0, 63.0}}}, 4, 64, 128);
    const auto b = render_lane_mask(Lane{{{100.0, 0.0}, {90.0, 63.0}}}, 4, 64, 128);
    std::vector<float> prob(64 * 128);
    for (std::size_t i = 0; i < prob.size(); ++i) prob[i] = (a.bits[i] || b.bits[i]) ? 0.9f : 0.1f;
    CHECK(decode_lanes(prob, 64, 128, params).size() == 2);
  }
  SUBCASE("decoded points have strictly increasing y") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      const auto m = render_lane_mask(oracle::random_lane(rng, 64, 128), 5, 64, 128);
      for (const auto& lane : decode_lanes(mask_to_prob(m), 64, 128, params))
        for (std::size_t i = 1; i < lane.points.size(); ++i) REQUIRE(lane.points[i].y > lane.points[i - 1].y);
    }
  }
}

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "samiro/train.hpp"

namespace samiro {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

std::vector<GradcheckEntry> run_gradcheck(const GradcheckCase& c, double tolerance) {
  using Groups = std::vector<std::vector<Tensor<double>>>;
  Groups live;
  for (const auto& g : c.groups) {
    live.emplace_back();
    for (const auto& t : g) live.back().push_back(t.clone(true));
  }
  c.loss(live).backward();

  Groups probe;
  for (const auto& g : c.groups) {
    probe.emplace_back();
    for (const auto& t : g) probe.back().push_back(t.clone(false));
  }
  std::vector<GradcheckEntry> out;
  for (std::size_t gi = 0; gi < probe.size(); ++gi) {
    GradcheckEntry e;
    e.name = c.name + "/" + (gi < c.group_names.size() ? c.group_names[gi] : std::to_string(gi));
    for (std::size_t ti = 0; ti < probe[gi].size(); ++ti) {
      const auto analytic = live[gi][ti].grad();
      auto data = probe[gi][ti].mutable_data();
      for (std::size_t k = 0; k < data.size(); ++k) {
        const double saved = data[k];
        data[k] = saved + kGradcheckStep;
        const double up = c.loss(probe).item();
        data[k] = saved - kGradcheckStep;
        const double down = c.loss(probe).item();
        data[k] = saved;
        const double numeric = (up - down) / (2 * kGradcheckStep);
        e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[k], numeric));
      }
    }
    e.passed = e.max_rel_error < tolerance;
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

using T = double;
using Groups = std::vector<std::vector<Tensor<T>>>;

Tensor<T> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<T>(std::move(shape), std::move(v));
}

// Values with magnitude in [lo, hi] and random sign; keeps inputs away from kinks.
Tensor<T> rand_away_from_zero(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(lo, hi);
  return Tensor<T>(std::move(shape), std::move(v));
}

// sum(out * R) with fixed random R so every output element gets a distinct upstream gradient.
Tensor<T> weighted(const Tensor<T>& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, rand_tensor(out.shape(), rng)));
}

GradcheckCase unary_case(std::string name, Tensor<T> x, std::function<Tensor<T>(const Tensor<T>&)> f) {
  return {name, {"x"}, {{std::move(x)}}, [f](const Groups& g) { return weighted(f(g[0][0]), 99); }};
}

}  // namespace

std::vector<GradcheckCase> builtin_gradcheck_cases() {
  Rng rng(20240601);
  std::vector<GradcheckCase> cases;

  cases.push_back({"conv2d", {"input", "kernel", "bias"},
                   {{rand_tensor({3, 5, 5}, rng)}, {rand_tensor({2, 3, 3, 3}, rng)}, {rand_tensor({2}, rng)}},
                   [](const Groups& g) { return weighted(conv2d(g[0][0], g[1][0], g[2][0], 1, 1), 1); }});
  cases.push_back({"conv2d_stride2", {"input", "kernel", "bias"},
                   {{rand_tensor({2, 6, 6}, rng)}, {rand_tensor({3, 2, 3, 3}, rng)}, {rand_tensor({3}, rng)}},
                   [](const Groups& g) { return weighted(conv2d(g[0][0], g[1][0], g[2][0], 2, 1), 2); }});
  cases.push_back(unary_case("pool_avg", rand_tensor({8, 4, 4}, rng),
                             [](const Tensor<T>& x) { return pool_over_channels(x, PoolMode::avg); }));
  cases.push_back(unary_case("pool_max", rand_tensor({8, 4, 4}, rng),
                             [](const Tensor<T>& x) { return pool_over_channels(x, PoolMode::max); }));

  for (auto op : {BinaryOp::add, BinaryOp::sub, BinaryOp::mul, BinaryOp::div}) {
    static const char* names[] = {"add", "sub", "mul", "div"};
    auto b = op == BinaryOp::div ? rand_away_from_zero({3, 4, 4}, rng, 0.5, 2.0) : rand_tensor({3, 4, 4}, rng);
    cases.push_back({std::string("elementwise_") + names[static_cast<int>(op)], {"a", "b"},
                     {{rand_tensor({3, 4, 4}, rng)}, {b}},
                     [op](const Groups& g) { return weighted(elementwise(op, g[0][0], g[1][0]), 3); }});
  }
  cases.push_back({"mul_broadcast_channel", {"a", "w"}, {{rand_tensor({4, 3, 5}, rng)}, {rand_tensor({4, 1, 1}, rng)}},
                   [](const Groups& g) { return weighted(mul(g[0][0], g[1][0]), 4); }});
  cases.push_back({"div_broadcast_spatial", {"a", "d"},
                   {{rand_tensor({4, 3, 5}, rng)}, {rand_away_from_zero({1, 3, 5}, rng, 0.5, 2.0)}},
                   [](const Groups& g) { return weighted(div(g[0][0], g[1][0]), 5); }});
  cases.push_back(unary_case("scale", rand_tensor({2, 3, 3}, rng), [](const Tensor<T>& x) { return scale(x, 1.7); }));
  cases.push_back(unary_case("add_scalar", rand_tensor({2, 3, 3}, rng), [](const Tensor<T>& x) { return add_scalar(x, 0.3); }));
  cases.push_back(unary_case("sigmoid", rand_tensor({2, 4, 4}, rng, -4, 4), [](const Tensor<T>& x) { return sigmoid(x); }));
  cases.push_back(unary_case("relu", rand_away_from_zero({2, 4, 4}, rng, 0.05, 2), [](const Tensor<T>& x) { return relu(x); }));
  cases.push_back(unary_case("log_abs", rand_away_from_zero({2, 4, 4}, rng, 0.2, 3), [](const Tensor<T>& x) { return log_abs(x); }));
  cases.push_back(unary_case("abs_floor", rand_away_from_zero({2, 4, 4}, rng, 0.2, 3),
                             [](const Tensor<T>& x) { return abs_floor(x, 1e-8); }));
  cases.push_back(unary_case("sqrt", rand_tensor({2, 4, 4}, rng, 0.2, 3), [](const Tensor<T>& x) { return sqrt(x); }));
  cases.push_back(unary_case("clamp", rand_away_from_zero({2, 4, 4}, rng, 0.1, 0.4),
                             [](const Tensor<T>& x) { return clamp(x, -0.25, 0.25); }));
  cases.push_back(unary_case("square", rand_tensor({2, 4, 4}, rng), [](const Tensor<T>& x) { return square(x); }));
  for (auto op : {Reduction::sum, Reduction::mean, Reduction::sq_l2_norm}) {
    static const char* names[] = {"sum", "mean", "sq_l2_norm"};
    cases.push_back(unary_case(std::string("reduce_") + names[static_cast<int>(op)] + "_spatial",
                               rand_tensor({3, 4, 5}, rng),
                               [op](const Tensor<T>& x) { return reduce(op, x, {1, 2}, true); }));
    cases.push_back(unary_case(std::string("reduce_") + names[static_cast<int>(op)] + "_all", rand_tensor({3, 4, 5}, rng),
                               [op](const Tensor<T>& x) { return reduce(op, x); }));
  }
  cases.push_back({"concat_channels", {"a", "b"}, {{rand_tensor({2, 3, 3}, rng)}, {rand_tensor({3, 3, 3}, rng)}},
                   [](const Groups& g) { return weighted(concat_channels(g[0][0], g[1][0]), 6); }});
  cases.push_back(unary_case("slice_channels", rand_tensor({4, 3, 3}, rng),
                             [](const Tensor<T>& x) { return slice_channels(x, 1, 3); }));
  cases.push_back(unary_case("upsample_nearest", rand_tensor({2, 3, 4}, rng),
                             [](const Tensor<T>& x) { return upsample_nearest(x, 2); }));
  cases.push_back(unary_case("avg_pool2d", rand_tensor({2, 4, 6}, rng), [](const Tensor<T>& x) { return avg_pool2d(x, 2); }));

  for (auto mode : {NormMode::per_channel_spatial, NormMode::per_position_channel, NormMode::global_frobenius}) {
    cases.push_back(unary_case("channel_normalize_" + to_string(mode), rand_tensor({3, 4, 4}, rng),
                               [mode](const Tensor<T>& x) { return channel_normalize(x, mode, 1e-8); }));
  }

  cases.push_back({"miro_loss", {"oracle", "target", "w_c"},
                   {{rand_tensor({3, 4, 4}, rng)}, {rand_tensor({3, 4, 4}, rng)}, {rand_away_from_zero({3, 1, 1}, rng, 0.3, 2.5)}},
                   [](const Groups& g) { return miro_loss(g[0][0], g[1][0], ChannelScale<T>{g[2][0]}); }});
  for (auto mode : {NormMode::per_channel_spatial, NormMode::per_position_channel, NormMode::global_frobenius}) {
    // w_c values straddle 1 so both branches of the ReLU term are exercised.
    cases.push_back({"samiro_loss_" + to_string(mode), {"oracle", "target", "g", "w_c"},
                     {{rand_tensor({3, 4, 4}, rng)},
                      {rand_tensor({2, 4, 4}, rng)},
                      {rand_tensor({3, 2, 1, 1}, rng)},
                      {Tensor<T>({3, 1, 1}, {0.5, 1.8, -2.2})}},
                     [mode](const Groups& g) {
                       LossConfig cfg;
                       cfg.norm_mode = mode;
                       return samiro_loss(g[0][0], g[1][0], Projection<T>{g[2][0]}, ChannelScale<T>{g[3][0]}, cfg);
                     }});
  }
  cases.push_back({"plain_l2_distill", {"oracle", "target", "g"},
                   {{rand_tensor({3, 4, 4}, rng)}, {rand_tensor({2, 4, 4}, rng)}, {rand_tensor({3, 2, 1, 1}, rng)}},
                   [](const Groups& g) { return plain_l2_distill(g[0][0], g[1][0], Projection<T>{g[2][0]}); }});
  {
    std::vector<T> mask(16);
    for (auto& m : mask) m = rng.bernoulli(0.4) ? 1.0 : 0.0;
    Tensor<T> gt({1, 4, 4}, mask);
    cases.push_back({"lane_detection_loss", {"prob"}, {{rand_tensor({1, 4, 4}, rng, 0.05, 0.95)}},
                     [gt](const Groups& g) { return lane_detection_loss(g[0][0], gt); }});
  }
  cases.push_back({"spatial_attention", {"features", "p_kernel", "p_bias"},
                   {{rand_tensor({4, 5, 5}, rng)}, {rand_tensor({1, 2, 3, 3}, rng)}, {rand_tensor({1}, rng)}},
                   [](const Groups& g) {
                     SpatialAttentionBlock<T> block{g[1][0], g[2][0]};
                     auto out = spatial_attention(block, g[0][0]);
                     return add(weighted(out.filtered, 7), weighted(out.weights, 8));
                   }});
  cases.push_back({"project", {"features", "g"}, {{rand_tensor({3, 4, 4}, rng)}, {rand_tensor({5, 3, 1, 1}, rng)}},
                   [](const Groups& g) { return weighted(project(Projection<T>{g[1][0]}, g[0][0]), 9); }});
  cases.push_back({"lane_head", {"features", "reduce", "out"},
                   {{rand_tensor({3, 2, 2}, rng)},
                    {rand_tensor({2, 3, 3, 3}, rng), rand_tensor({2}, rng)},
                    {rand_tensor({1, 2, 3, 3}, rng), rand_tensor({1}, rng)}},
                   [](const Groups& g) {
                     LaneHead<T> head{{g[1][0], g[1][1], 1}, {g[2][0], g[2][1], 1}, 4};
                     return weighted(lane_head_forward(head, g[0][0]), 10);
                   }});

  // Composed graph: target encoder -> head -> L_LD, plus per-stage
  // attention -> normalize -> project -> samiro_loss -> total_loss.
  {
    Rng init(7);
    auto oracle = Encoder<T>::init(1, {4, 4}, init);
    auto target = Encoder<T>::init(1, {2, 3}, init);
    auto head = LaneHead<T>::init(3, 2, 1, 4, init);
    auto reg = Regularizer<T>::init({4, 4}, {2, 3}, 3, init);
    reg.scale[0].w = Tensor<T>({4, 1, 1}, {0.6, 1.4, 0.9, 2.0});
    reg.scale[1].w = Tensor<T>({4, 1, 1}, {1.3, 0.7, -1.6, 0.5});
    auto image = rand_tensor({1, 8, 8}, rng, 0.0, 1.0);
    std::vector<T> mask(64);
    for (auto& m : mask) m = rng.bernoulli(0.3) ? 1.0 : 0.0;
    Tensor<T> gt({1, 8, 8}, mask);
    const auto oracle_pyr = encoder_forward(oracle, image);

    GradcheckCase full;
    full.name = "samiro_full_graph";
    full.group_names = {"encoder", "head", "p", "g", "w_c"};
    full.groups.resize(5);
    for (auto& s : target.stages) full.groups[0].insert(full.groups[0].end(), {s.weight, s.bias});
    full.groups[1] = {head.reduce.weight, head.reduce.bias, head.out.weight, head.out.bias};
    for (std::size_t l = 0; l < 2; ++l) {
      full.groups[2].insert(full.groups[2].end(), {reg.attention[l].kernel, reg.attention[l].bias});
      full.groups[3].push_back(reg.projection[l].weight);
      full.groups[4].push_back(reg.scale[l].w);
    }
    full.loss = [image, gt, oracle_pyr](const Groups& g) {
      Encoder<T> enc;
      enc.in_channels = 1;
      enc.widths = {2, 3};
      enc.stages = {{g[0][0], g[0][1], 2}, {g[0][2], g[0][3], 2}};
      LaneHead<T> hd{{g[1][0], g[1][1], 1}, {g[1][2], g[1][3], 1}, 4};
      Regularizer<T> r;
      for (std::size_t l = 0; l < 2; ++l) {
        r.attention.push_back({g[2][2 * l], g[2][2 * l + 1]});
        r.projection.push_back({g[3][l]});
        r.scale.push_back({g[4][l]});
      }
      LossConfig cfg;
      cfg.lambda = 0.5;
      const auto pyr = encoder_forward(enc, image);
      const auto l_ld = lane_detection_loss(lane_head_forward(hd, pyr.back()), gt);
      return total_loss(l_ld, stage_losses(r, oracle_pyr, pyr, cfg), cfg);
    };
    cases.push_back(std::move(full));
  }
  return cases;
}

bool GradcheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-4s %-48s max_rel_err %.3e\n", e.passed ? "ok" : "FAIL", e.name.c_str(),
                  e.max_rel_error);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%zu checks, tolerance %.1e: %s\n", entries.size(), tolerance,
                all_passed() ? "all passed" : "FAILURES");
  os << buf;
  return os.str();
}

GradcheckReport gradcheck_suite(double tolerance, const std::vector<GradcheckCase>& extra) {
  GradcheckReport report;
  report.tolerance = tolerance;
  auto cases = builtin_gradcheck_cases();
  cases.insert(cases.end(), extra.begin(), extra.end());
  for (const auto& c : cases) {
    auto entries = run_gradcheck(c, tolerance);
    report.entries.insert(report.entries.end(), entries.begin(), entries.end());
  }
  return report;
}

}  // namespace samiro

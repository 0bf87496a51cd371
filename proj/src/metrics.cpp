#include "samiro/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "json.hpp"

#include "samiro/error.hpp"

namespace samiro {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double segment_distance_sq(double px, double py, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = a.x + t * dx, cy = a.y + t * dy;
  return (px - cx) * (px - cx) + (py - cy) * (py - cy);
}

Mask render_lane_mask(const Lane& lane, int width_px, int height, int width) {
  if (width_px < 1) throw DimensionError("render_lane_mask: width_px must be >= 1");
  if (lane.points.size() < 2) throw DimensionError("render_lane_mask: lane needs at least 2 points");
  Mask mask(height, width);
  const double r = 0.5 * width_px;
  const double r2 = r * r;
  for (std::size_t i = 0; i + 1 < lane.points.size(); ++i) {
    const Point& a = lane.points[i];
    const Point& b = lane.points[i + 1];
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - r)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - r)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + r)));
    for (int y = y0; y <= y1; ++y) {
      auto* row = mask.bits.data() + static_cast<std::size_t>(y) * width;
      for (int x = x0; x <= x1; ++x) {
        if (!row[x] && segment_distance_sq(x, y, a, b) <= r2) row[x] = 1;
      }
    }
  }
  return mask;
}

double lane_iou(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("lane_iou: mask shapes " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " and " + std::to_string(b.height) + "x" + std::to_string(b.width) + " differ");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights) {
  const std::size_t rows = weights.size();
  const std::size_t cols = rows ? weights.front().size() : 0;
  if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
  const std::size_t n = std::max(rows, cols);
  // Square cost matrix (padding costs 0); minimising -w maximises w.
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols) ? -weights[i][j] : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] >= 1 && p[j] <= rows && j <= cols) assignment[p[j] - 1] = static_cast<int>(j - 1);
  }
  return assignment;
}

namespace {

Mask render_or_empty(const Lane& lane, int width_px, int height, int width) {
  if (lane.points.size() < 2) return Mask(height, width);
  return render_lane_mask(lane, width_px, height, width);
}

}  // namespace

std::vector<std::vector<double>> iou_matrix(const LaneList& preds, const LaneList& gts, int width_px,
                                            int height, int width) {
  std::vector<Mask> gt_masks;
  gt_masks.reserve(gts.size());
  for (const auto& g : gts) gt_masks.push_back(render_or_empty(g, width_px, height, width));
  std::vector<std::vector<double>> m(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Mask pm = render_or_empty(preds[i], width_px, height, width);
    for (std::size_t j = 0; j < gts.size(); ++j) m[i][j] = lane_iou(pm, gt_masks[j]);
  }
  return m;
}

MatchStats match_lanes(const LaneList& preds, const LaneList& gts, const CulaneParams& params) {
  MatchStats s;
  if (preds.empty() || gts.empty()) {
    s.fp = static_cast<long>(preds.size());
    s.fn = static_cast<long>(gts.size());
    return s;
  }
  const auto ious = iou_matrix(preds, gts, params.width_px, params.height, params.width);
  std::vector<int> assignment;
  if (params.matching == Matching::hungarian) {
    assignment = max_weight_assignment(ious);
  } else {
    assignment.assign(preds.size(), -1);
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (std::size_t j = 0; j < gts.size(); ++j) pairs.emplace_back(-ious[i][j], i, j);
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> gt_used(gts.size(), false);
    for (const auto& [neg, i, j] : pairs) {
      if (assignment[i] >= 0 || gt_used[j]) continue;
      assignment[i] = static_cast<int>(j);
      gt_used[j] = true;
    }
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (assignment[i] >= 0 && ious[i][static_cast<std::size_t>(assignment[i])] >= params.iou_threshold) ++s.tp;
  }
  s.fp = static_cast<long>(preds.size()) - s.tp;
  s.fn = static_cast<long>(gts.size()) - s.tp;
  return s;
}

F1Score f1_from_stats(const MatchStats& s) {
  F1Score r;
  if (s.tp + s.fp > 0) r.precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
  if (s.tp + s.fn > 0) r.recall = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

TusimpleCounts& TusimpleCounts::operator+=(const TusimpleCounts& o) {
  correct += o.correct;
  total += o.total;
  fp += o.fp;
  fn += o.fn;
  pred_lanes += o.pred_lanes;
  gt_lanes += o.gt_lanes;
  return *this;
}

std::vector<std::optional<double>> sample_lane_at_rows(const Lane& lane, const std::vector<int>& rows) {
  std::vector<std::optional<double>> out(rows.size());
  const auto& pts = lane.points;
  if (pts.empty()) return out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double y = rows[r];
    if (y < pts.front().y || y > pts.back().y) continue;
    auto it = std::lower_bound(pts.begin(), pts.end(), y, [](const Point& p, double v) { return p.y < v; });
    if (it->y == y) {
      out[r] = it->x;
      continue;
    }
    const Point& b = *it;
    const Point& a = *(it - 1);
    out[r] = a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y);
  }
  return out;
}

TusimpleCounts tusimple_counts(const LaneList& preds, const LaneList& gts, const std::vector<int>& h_samples,
                               const TusimpleParams& params) {
  if (h_samples.empty()) throw DimensionError("tusimple_accuracy: h_samples is empty");
  TusimpleCounts c;
  c.pred_lanes = static_cast<long>(preds.size());
  c.gt_lanes = static_cast<long>(gts.size());
  std::vector<std::vector<std::optional<double>>> ps, gs;
  for (const auto& p : preds) ps.push_back(sample_lane_at_rows(p, h_samples));
  for (const auto& g : gts) gs.push_back(sample_lane_at_rows(g, h_samples));

  std::vector<long> gt_points(gts.size(), 0);
  for (std::size_t j = 0; j < gts.size(); ++j) {
    for (const auto& x : gs[j]) gt_points[j] += x.has_value();
    c.total += gt_points[j];
  }
  std::vector<std::vector<long>> correct(preds.size(), std::vector<long>(gts.size(), 0));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j)
      for (std::size_t r = 0; r < h_samples.size(); ++r)
        if (ps[i][r] && gs[j][r] && std::abs(*ps[i][r] - *gs[j][r]) < params.dist_thresh_px) ++correct[i][j];

  // Greedy: repeatedly take the unmatched pair with the most correct points.
  std::vector<bool> pred_used(preds.size(), false), gt_used(gts.size(), false);
  long accepted = 0;
  while (true) {
    long best = 0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (pred_used[i]) continue;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (!gt_used[j] && correct[i][j] > best) {
          best = correct[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    if (best == 0) break;
    pred_used[bi] = gt_used[bj] = true;
    c.correct += best;
    if (static_cast<double>(best) >= params.accept_ratio * static_cast<double>(gt_points[bj])) ++accepted;
  }
  c.fp = c.pred_lanes - accepted;
  c.fn = c.gt_lanes - accepted;
  return c;
}

TusimpleScore tusimple_score(const TusimpleCounts& c) {
  TusimpleScore s;
  if (c.total > 0) s.accuracy = static_cast<double>(c.correct) / static_cast<double>(c.total);
  if (c.pred_lanes > 0) s.fp_rate = static_cast<double>(c.fp) / static_cast<double>(c.pred_lanes);
  if (c.gt_lanes > 0) s.fn_rate = static_cast<double>(c.fn) / static_cast<double>(c.gt_lanes);
  return s;
}

LaneList parse_culane_lines(const std::string& text, const std::string& source) {
  LaneList lanes;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::vector<double> values;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      double v = 0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": non-numeric token '" + tok + "'");
      }
      values.push_back(v);
    }
    if (values.empty()) continue;
    if (values.size() % 2 != 0) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": odd number of coordinates (" +
                       std::to_string(values.size()) + ")");
    }
    Lane lane;
    for (std::size_t i = 0; i < values.size(); i += 2) lane.points.push_back({values[i], values[i + 1]});
    std::stable_sort(lane.points.begin(), lane.points.end(), [](const Point& a, const Point& b) { return a.y < b.y; });
    lanes.push_back(std::move(lane));
  }
  return lanes;
}

std::string format_culane_lines(const LaneList& lanes) {
  std::string out;
  char buf[64];
  for (const auto& lane : lanes) {
    for (std::size_t i = 0; i < lane.points.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.4f %.4f", i ? " " : "", lane.points[i].x, lane.points[i].y);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

TusimpleRecord parse_tusimple_record(const std::string& json_line, const std::string& source, int line_number) {
  const std::string where = source + ":" + std::to_string(line_number) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + "malformed JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("lanes") || !j.contains("h_samples") || !j.contains("raw_file")) {
    throw ParseError(where + "record needs \"lanes\", \"h_samples\" and \"raw_file\"");
  }
  TusimpleRecord rec;
  try {
    rec.raw_file = j.at("raw_file").get<std::string>();
    rec.h_samples = j.at("h_samples").get<std::vector<int>>();
    for (const auto& xs_json : j.at("lanes")) {
      const auto xs = xs_json.get<std::vector<double>>();
      if (xs.size() != rec.h_samples.size()) {
        throw ParseError(where + "lane has " + std::to_string(xs.size()) + " x values for " +
                         std::to_string(rec.h_samples.size()) + " h_samples");
      }
      Lane lane;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] >= 0) lane.points.push_back({xs[i], static_cast<double>(rec.h_samples[i])});
      }
      if (!lane.points.empty()) rec.lanes.push_back(std::move(lane));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + "malformed record: " + e.what());
  }
  return rec;
}

std::string format_tusimple_record(const TusimpleRecord& rec) {
  nlohmann::json j;
  j["raw_file"] = rec.raw_file;
  j["h_samples"] = rec.h_samples;
  auto lanes = nlohmann::json::array();
  for (const auto& lane : rec.lanes) {
    std::vector<double> xs;
    for (const auto& x : sample_lane_at_rows(lane, rec.h_samples)) xs.push_back(x ? *x : -2.0);
    lanes.push_back(xs);
  }
  j["lanes"] = lanes;
  return j.dump();
}

EvalReport evaluate_culane(const std::vector<EvalItem>& items, const CulaneParams& params) {
  EvalReport report;
  report.format = "culane";
  for (const auto& item : items) {
    CulaneParams p = params;
    if (item.height > 0) p.height = item.height;
    if (item.width > 0) p.width = item.width;
    const MatchStats s = match_lanes(item.preds, item.gts, p);
    report.totals += s;
    ++report.images;
    for (const auto& c : item.categories) {
      auto& cat = report.categories[c];
      cat.stats += s;
      ++cat.images;
    }
  }
  report.score = f1_from_stats(report.totals);
  return report;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "scope,images,tp,fp,fn,precision,recall,f1,accuracy,fp_rate,fn_rate\n";
  auto row = [&](const std::string& scope, long n, const MatchStats& s) {
    const auto f = f1_from_stats(s);
    os << scope << ',' << n << ',' << s.tp << ',' << s.fp << ',' << s.fn << ',' << num(f.precision) << ','
       << num(f.recall) << ',' << num(f.f1);
  };
  row("all", images, totals);
  if (tusimple) {
    os << ',' << num(tusimple->accuracy) << ',' << num(tusimple->fp_rate) << ',' << num(tusimple->fn_rate) << '\n';
  } else {
    os << ",,,\n";
  }
  for (const auto& [name, cat] : categories) {
    row("category:" + name, cat.images, cat.stats);
    os << ",,,\n";
  }
  return os.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "format: " << format << "\n";
  for (const auto& [k, v] : config) os << k << " = " << v << "\n";
  os << "\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %7s %7s %7s %7s %9s %9s %9s\n", "scope", "images", "TP", "FP", "FN",
                "precision", "recall", "F1");
  os << buf;
  auto row = [&](const std::string& scope, long n, const MatchStats& s) {
    const auto f = f1_from_stats(s);
    std::snprintf(buf, sizeof buf, "%-24s %7ld %7ld %7ld %7ld %9.4f %9.4f %9.4f\n", scope.c_str(), n, s.tp, s.fp,
                  s.fn, f.precision, f.recall, f.f1);
    os << buf;
  };
  row("all", images, totals);
  for (const auto& [name, cat] : categories) row(name, cat.images, cat.stats);
  if (tusimple) {
    std::snprintf(buf, sizeof buf, "\naccuracy %.4f  fp_rate %.4f  fn_rate %.4f\n", tusimple->accuracy,
                  tusimple->fp_rate, tusimple->fn_rate);
    os << buf;
  }
  return os.str();
}

}  // namespace samiro

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "samiro/lane.hpp"

namespace samiro {

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t at(int row, int col) const { return bits[static_cast<std::size_t>(row) * width + col]; }
  std::size_t count() const;
};

/// Sets every pixel whose centre lies within width_px/2 of the polyline
/// (round caps and joins). Pixels outside the image are clipped.
Mask render_lane_mask(const Lane& lane, int width_px, int height, int width);

// Squared distance from (px,py) to segment a-b. Shared by the renderer and
// anything that must agree with it bit for bit.
double segment_distance_sq(double px, double py, const Point& a, const Point& b);

/// |A ∩ B| / |A ∪ B|, 0 when both are empty.
double lane_iou(const Mask& a, const Mask& b);

struct MatchStats {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  MatchStats& operator+=(const MatchStats& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const MatchStats&) const = default;
};

enum class Matching { hungarian, greedy };

struct CulaneParams {
  double iou_threshold = 0.5;
  int width_px = 30;
  int height = 590;
  int width = 1640;
  Matching matching = Matching::hungarian;
};

/// Maximum-weight one-to-one assignment. `weights` is rows x cols (any
/// rectangle); returns the column assigned to each row or -1.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights);

std::vector<std::vector<double>> iou_matrix(const LaneList& preds, const LaneList& gts, int width_px,
                                            int height, int width);

MatchStats match_lanes(const LaneList& preds, const LaneList& gts, const CulaneParams& params);

struct F1Score {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

F1Score f1_from_stats(const MatchStats& s);

struct TusimpleParams {
  double dist_thresh_px = 20.0;
  double accept_ratio = 0.85;
};

struct TusimpleCounts {
  long correct = 0;      // sum of C_clip
  long total = 0;        // sum of S_clip
  long fp = 0;
  long fn = 0;
  long pred_lanes = 0;
  long gt_lanes = 0;

  TusimpleCounts& operator+=(const TusimpleCounts& o);
};

struct TusimpleScore {
  double accuracy = 0;
  double fp_rate = 0;
  double fn_rate = 0;
};

// x at each requested row by linear interpolation inside the lane's y range.
std::vector<std::optional<double>> sample_lane_at_rows(const Lane& lane, const std::vector<int>& rows);

TusimpleCounts tusimple_counts(const LaneList& preds, const LaneList& gts, const std::vector<int>& h_samples,
                               const TusimpleParams& params);
TusimpleScore tusimple_score(const TusimpleCounts& c);

inline TusimpleScore tusimple_accuracy(const LaneList& preds, const LaneList& gts,
                                       const std::vector<int>& h_samples, const TusimpleParams& params) {
  return tusimple_score(tusimple_counts(preds, gts, h_samples, params));
}

/// One lane per non-empty line of alternating "x y" values. `source` names
/// the input in error messages.
LaneList parse_culane_lines(const std::string& text, const std::string& source = "<input>");
std::string format_culane_lines(const LaneList& lanes);

struct TusimpleRecord {
  LaneList lanes;
  std::vector<int> h_samples;
  std::string raw_file;
};

TusimpleRecord parse_tusimple_record(const std::string& json_line, const std::string& source = "<input>",
                                     int line_number = 1);
std::string format_tusimple_record(const TusimpleRecord& rec);

struct CategoryStats {
  MatchStats stats;
  long images = 0;
};

struct EvalReport {
  std::string format;
  MatchStats totals;
  F1Score score;
  std::map<std::string, CategoryStats> categories;
  std::optional<TusimpleScore> tusimple;
  long images = 0;
  std::map<std::string, std::string> config;  // echoed verbatim

  std::string to_csv() const;
  std::string to_table() const;
};

struct EvalItem {
  LaneList preds;
  LaneList gts;
  std::vector<std::string> categories;
  int height = 0;  // 0 falls back to CulaneParams
  int width = 0;
};

/// Sums MatchStats over images, overall and per category.
EvalReport evaluate_culane(const std::vector<EvalItem>& items, const CulaneParams& params);

}  // namespace samiro

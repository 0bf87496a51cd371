#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "samiro/lane.hpp"
#include "samiro/tensor.hpp"

namespace samiro {

struct GenParams {
  int height = 64;
  int width = 128;
  int channels = 1;  // 1 (gray) or 3 (color)
  int lanes_min = 2;
  int lanes_max = 4;
  double curvature = 10.0;     // max bow of a lane, px
  int lane_width = 5;          // px, for painting and GT masks
  double horizon = 0.3;        // horizon row as a fraction of height
  double clutter_density = 0.004;
  double p_illumination = 0.3;
  double gain_min = 0.6, gain_max = 1.4;
  double bias_min = -0.15, bias_max = 0.15;
  double p_occlusion = 0.3;
  int occluders_max = 2;

  void validate() const;
};

struct Scene {
  Tensor<float> image;  // [C,H,W] in [0,1]
  LaneList lanes;
  std::uint64_t seed = 0;
  std::vector<std::string> tags;  // perturbations applied: "illumination", "occlusion"

  int height() const { return static_cast<int>(image.dim(1)); }
  int width() const { return static_cast<int>(image.dim(2)); }
  bool has_tag(const std::string& t) const;
};

struct OcclusionRect {
  int x = 0, y = 0, w = 0, h = 0;
  float value = 0.0f;
};

/// Perspective-convergent quadratic lanes on a textured road, with clutter
/// and seeded perturbations. Fully determined by (seed, params).
Scene generate_scene(std::uint64_t seed, const GenParams& params);

Scene apply_illumination(const Scene& scene, double gain, double bias);
Scene apply_occlusion(const Scene& scene, const std::vector<OcclusionRect>& rects);

/// Union of all lane masks as a binary [1,H,W] tensor.
Tensor<float> render_gt_mask(const Scene& scene, int lane_width);

// Dataset layout: index.txt (one "stem seed=N tags=a,b" line per scene),
// images/<stem>.pgm|ppm (8-bit binary PNM), images/<stem>.lines.txt.
void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir);
std::vector<Scene> read_dataset(const std::filesystem::path& dir);

struct DatasetEntry {
  std::string stem;
  std::uint64_t seed = 0;
  std::vector<std::string> tags;
};
std::vector<DatasetEntry> read_index(const std::filesystem::path& dir);

void write_pnm(const Tensor<float>& image, const std::filesystem::path& path);
Tensor<float> read_pnm(const std::filesystem::path& path);

// Value a pixel takes after one 8-bit round trip.
inline float quantize8(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<float>(static_cast<int>(c * 255.0f + 0.5f)) / 255.0f;
}

}  // namespace samiro

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "relpose/geometry.hpp"
#include "relpose/tensor.hpp"

namespace relpose::data {

enum class Convention { kRectified, kErroneous };

// One training/evaluation pair: images plus the derived relative target.
struct PairRecord {
  int id = 0;
  std::string scene;
  std::string img_a, img_b;  // paths; may be empty for embedded tensors
  geo::AbsolutePose pose_a, pose_b;
  geo::RelativePose target;
  ad::Tensor<float> image_a, image_b;  // (1|3, H, W), empty until loaded
};

// Derive the supervision target per the chosen convention (the rotation is
// always the rectified one; only the translation differs).
geo::RelativePose derive_target(const geo::AbsolutePose& a,
                                const geo::AbsolutePose& b,
                                Convention convention);

// Manifest line: `scene img_a img_b qwA qxA qyA qzA txA tyA tzA
// qwB qxB qyB qzB txB tyB tzB`, '#' comments and blank lines skipped.
// Image paths are resolved relative to the manifest directory.
std::vector<PairRecord> load_pairs(const std::string& manifest_path,
                                   Convention convention = Convention::kRectified,
                                   bool swap_pairs = false,
                                   bool load_images = true);
void save_pairs(const std::string& manifest_path,
                const std::vector<PairRecord>& records);

// Relative pose record line: `scene_id pair_id qw qx qy qz tx ty tz`.
struct RelativeRecord {
  std::string scene;
  std::string pair_id;
  geo::RelativePose pose;
};
std::vector<RelativeRecord> load_relative_records(const std::string& path);
void save_relative_records(const std::string& path,
                           const std::vector<RelativeRecord>& records);

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::uint64_t seed = 0;
  int n_points = 256;
  int n_pairs = 8;
  int image_size = 64;       // square H = W
  double baseline_min = 0.10;  // meters between camera centers
  double baseline_max = 0.35;
  double rot_min_deg = 2.0;  // relative rotation magnitude
  double rot_max_deg = 20.0;
  double splat_sigma = 1.5;  // pixels
  std::string scene_name = "synth";
};

struct CellCorrespondence {
  int cell_a = 0;  // row-major cell index in the 1/8 grid of image A
  int cell_b = 0;
};

struct SyntheticCamera {
  geo::AbsolutePose pose;
  double focal = 0;
  double cx = 0, cy = 0;
};

struct SyntheticScene {
  SynthConfig cfg;
  std::vector<Eigen::Vector3d> points;  // meters, roughly unit box
  std::vector<double> brightness;       // per point, (0.4, 1]
  std::vector<std::array<SyntheticCamera, 2>> cameras;  // per pair (A, B)
  std::vector<PairRecord> pairs;                        // embedded images
  std::vector<std::vector<CellCorrespondence>> correspondences;  // per pair
};

// Random points in a unit-scale box, camera pairs with planted relative
// rotation/translation in the configured ranges, images rendered as smooth
// point-splat intensity fields. Throws DegenerateGeometry when a pair cannot
// reach 8 covisible points.
SyntheticScene synth_scene(const SynthConfig& cfg);

// Pinhole projection to pixel (col u, row v); returns false when the point
// is behind the camera.
bool project_point(const SyntheticCamera& cam, const Eigen::Vector3d& point,
                   double* u, double* v);

ad::Tensor<float> render_view(const std::vector<Eigen::Vector3d>& points,
                              const std::vector<double>& brightness,
                              const SyntheticCamera& cam, int image_size,
                              double splat_sigma);

// Deterministic seeded shuffle, then partition by the (train, val, test)
// ratios, which must be nonnegative and sum to 1.
struct SplitResult {
  std::vector<PairRecord> train, val, test;
};
SplitResult split(const std::vector<PairRecord>& records,
                  const std::array<double, 3>& ratios, std::uint64_t seed);

// Writes manifest + images (+ ground-truth correspondence CSV) into out_dir.
// Returns the manifest path. When write_png is set images are also saved as
// PNG next to the RPTN files.
std::string write_synth_dataset(const SyntheticScene& scene,
                                const std::string& out_dir,
                                bool write_png = false);

}  // namespace relpose::data

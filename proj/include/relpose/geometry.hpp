#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <string>
#include <vector>

namespace relpose::geo {

// Unit quaternion in (w, x, y, z) order, canonicalized to w >= 0 so that the
// double cover q ~ -q has one representative.
struct UnitQuaternion {
  double w = 1, x = 0, y = 0, z = 0;

  Eigen::Vector4d coeffs_wxyz() const { return {w, x, y, z}; }
  Eigen::Matrix3d to_matrix() const;

  static UnitQuaternion from_matrix(const Eigen::Matrix3d& r);
  static UnitQuaternion from_axis_angle(const Eigen::Vector3d& axis,
                                        double angle_rad);
};

// Normalizes and sign-canonicalizes an arbitrary (w, x, y, z) 4-vector.
// Throws NearZeroQuaternion when the norm is <= 1e-12.
UnitQuaternion quat_normalize_canonical(const Eigen::Vector4d& q_wxyz);

// World-to-camera map: x_cam = R x_world + t.
struct AbsolutePose {
  UnitQuaternion rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Matrix3d rotation_matrix() const { return rotation.to_matrix(); }
  Eigen::Vector3d center() const {  // c = -R^T t
    return -(rotation_matrix().transpose() * translation);
  }
};

// Relative map from camera A's frame to camera B's frame. The translation is
// un-normalized; its magnitude equals the inter-center distance.
struct RelativePose {
  UnitQuaternion rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// R = R_B R_A^T, t = t_A - R^T t_B (equivalently R_A (c_B - c_A)).
RelativePose relative_pose(const AbsolutePose& pose_a,
                           const AbsolutePose& pose_b);

// The uncorrected convention t_A - t_B, kept for diagnostics.
Eigen::Vector3d erroneous_relative_translation(const AbsolutePose& pose_a,
                                               const AbsolutePose& pose_b);

// 2 acos(|q_hat . q| / ||q_hat||) in degrees; acos argument clamped to [0,1].
double rotation_error_deg(const UnitQuaternion& q,
                          const Eigen::Vector4d& q_hat_wxyz);

double translation_error(const Eigen::Vector3d& t,
                         const Eigen::Vector3d& t_hat);

enum class ScaleMode { kLeastSquares, kMedian };

struct ScaleAlignment {
  double scale = 1.0;
  std::vector<double> errors;  // ||s * pred_k - gt_k|| per pair
};

// Least-squares mode: closed form s* = sum<p,g> / sum||p||^2. Median mode:
// golden-section search of the median error over s in [1e-3, 1e3].
ScaleAlignment align_scale(const std::vector<Eigen::Vector3d>& pred,
                           const std::vector<Eigen::Vector3d>& gt,
                           ScaleMode mode = ScaleMode::kLeastSquares);

struct PairErrorRecord {
  std::string scene;
  double rot_err_deg = 0;
  double trans_err_m = 0;
};

struct SceneErrorSummary {
  std::string scene;
  double median_rot_deg = 0;
  double median_trans_m = 0;
  int pair_count = 0;
};

// Median of each error per scene; even counts average the two central order
// statistics. Output sorted by scene id.
std::vector<SceneErrorSummary> per_scene_median(
    const std::vector<PairErrorRecord>& records);

// Order-statistic median via nth_element (the sort-based oracle lives in the
// tests). v is taken by value: the selection permutes it.
double median(std::vector<double> v);

}  // namespace relpose::geo

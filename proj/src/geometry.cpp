#include "relpose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "relpose/error.hpp"

namespace relpose::geo {

namespace {
constexpr double kQuatEps = 1e-12;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

Eigen::Matrix3d UnitQuaternion::to_matrix() const {
  const double ww = w * w, xx = x * x, yy = y * y, zz = z * z;
  const double wx = w * x, wy = w * y, wz = w * z;
  const double xy = x * y, xz = x * z, yz = y * z;
  Eigen::Matrix3d r;
  r << ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy),
       2 * (xy + wz), ww - xx + yy - zz, 2 * (yz - wx),
       2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz;
  return r;
}

UnitQuaternion UnitQuaternion::from_matrix(const Eigen::Matrix3d& r) {
  const Eigen::Quaterniond q(r);
  return quat_normalize_canonical({q.w(), q.x(), q.y(), q.z()});
}

UnitQuaternion UnitQuaternion::from_axis_angle(const Eigen::Vector3d& axis,
                                               double angle_rad) {
  const Eigen::Vector3d a = axis.normalized();
  const double h = 0.5 * angle_rad;
  const double s = std::sin(h);
  return quat_normalize_canonical({std::cos(h), a.x() * s, a.y() * s, a.z() * s});
}

UnitQuaternion quat_normalize_canonical(const Eigen::Vector4d& q_wxyz) {
  const double n = q_wxyz.norm();
  if (n <= kQuatEps)
    throw NearZeroQuaternion("quaternion norm " + std::to_string(n));
  // Skip the division for already-unit input so canonicalization is
  // bit-idempotent (keeps text round trips exact).
  Eigen::Vector4d u = std::abs(n - 1.0) <= 1e-12 ? q_wxyz : q_wxyz / n;
  if (u[0] < 0) u = -u;
  return {u[0], u[1], u[2], u[3]};
}

RelativePose relative_pose(const AbsolutePose& pose_a,
                           const AbsolutePose& pose_b) {
  const Eigen::Matrix3d r_a = pose_a.rotation_matrix();
  const Eigen::Matrix3d r_b = pose_b.rotation_matrix();
  const Eigen::Matrix3d r = r_b * r_a.transpose();
  RelativePose rel;
  rel.rotation = UnitQuaternion::from_matrix(r);
  rel.translation = pose_a.translation - r.transpose() * pose_b.translation;
  return rel;
}

Eigen::Vector3d erroneous_relative_translation(const AbsolutePose& pose_a,
                                               const AbsolutePose& pose_b) {
  return pose_a.translation - pose_b.translation;
}

double rotation_error_deg(const UnitQuaternion& q,
                          const Eigen::Vector4d& q_hat_wxyz) {
  const double n = q_hat_wxyz.norm();
  if (n <= kQuatEps)
    throw NearZeroQuaternion("predicted quaternion norm " + std::to_string(n));
  const double dot = std::abs(q_hat_wxyz.dot(q.coeffs_wxyz())) / n;
  const double clamped = std::min(1.0, std::max(0.0, dot));
  return 2.0 * std::acos(clamped) * 180.0 / kPi;
}

double translation_error(const Eigen::Vector3d& t,
                         const Eigen::Vector3d& t_hat) {
  return (t_hat - t).norm();
}

namespace {

std::vector<double> scale_errors(double s,
                                 const std::vector<Eigen::Vector3d>& pred,
                                 const std::vector<Eigen::Vector3d>& gt) {
  std::vector<double> e(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k)
    e[k] = (s * pred[k] - gt[k]).norm();
  return e;
}

}  // namespace

ScaleAlignment align_scale(const std::vector<Eigen::Vector3d>& pred,
                           const std::vector<Eigen::Vector3d>& gt,
                           ScaleMode mode) {
  if (pred.empty() || pred.size() != gt.size())
    throw DegenerateScale("align_scale needs equal-length nonempty lists");
  double dot = 0, nrm2 = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    dot += pred[k].dot(gt[k]);
    nrm2 += pred[k].squaredNorm();
  }
  if (nrm2 <= kQuatEps)
    throw DegenerateScale("sum ||pred||^2 = " + std::to_string(nrm2));

  ScaleAlignment out;
  if (mode == ScaleMode::kLeastSquares) {
    out.scale = dot / nrm2;
  } else {
    // Golden-section search of the median error on [1e-3, 1e3].
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 1e-3, hi = 1e3;
    double m1 = hi - phi * (hi - lo);
    double m2 = lo + phi * (hi - lo);
    double f1 = median(scale_errors(m1, pred, gt));
    double f2 = median(scale_errors(m2, pred, gt));
    for (int it = 0; it < 200; ++it) {
      if (f1 <= f2) {
        hi = m2;
        m2 = m1;
        f2 = f1;
        m1 = hi - phi * (hi - lo);
        f1 = median(scale_errors(m1, pred, gt));
      } else {
        lo = m1;
        m1 = m2;
        f1 = f2;
        m2 = lo + phi * (hi - lo);
        f2 = median(scale_errors(m2, pred, gt));
      }
    }
    out.scale = 0.5 * (lo + hi);
  }
  out.errors = scale_errors(out.scale, pred, gt);
  return out;
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  const double lower =
      *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
  return 0.5 * (lower + upper);
}

std::vector<SceneErrorSummary> per_scene_median(
    const std::vector<PairErrorRecord>& records) {
  if (records.empty()) return {};
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      by_scene;
  for (const auto& r : records) {
    auto& bucket = by_scene[r.scene];
    bucket.first.push_back(r.rot_err_deg);
    bucket.second.push_back(r.trans_err_m);
  }
  std::vector<SceneErrorSummary> out;
  out.reserve(by_scene.size());
  for (auto& [scene, errs] : by_scene) {
    SceneErrorSummary s;
    s.scene = scene;
    s.median_rot_deg = median(errs.first);
    s.median_trans_m = median(errs.second);
    s.pair_count = static_cast<int>(errs.first.size());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace relpose::geo

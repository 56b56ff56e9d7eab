#include "relpose/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "relpose/checkpoint.hpp"
#include "relpose/error.hpp"
#include "relpose/image.hpp"
#include "relpose/rng.hpp"

namespace fs = std::filesystem;

namespace relpose::data {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

geo::UnitQuaternion parse_quat(const std::vector<std::string>& f,
                               std::size_t at, int line_no) {
  Eigen::Vector4d q;
  for (int k = 0; k < 4; ++k) {
    try {
      q[k] = std::stod(f[at + static_cast<std::size_t>(k)]);
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": bad number '" + f[at + static_cast<std::size_t>(k)] +
                       "'");
    }
  }
  if (q.norm() <= 1e-12)
    throw BadQuaternion("line " + std::to_string(line_no) +
                        ": near-zero quaternion");
  try {
    return geo::quat_normalize_canonical(q);
  } catch (const NearZeroQuaternion&) {
    throw BadQuaternion("line " + std::to_string(line_no) +
                        ": degenerate quaternion");
  }
}

Eigen::Vector3d parse_vec3(const std::vector<std::string>& f, std::size_t at,
                           int line_no) {
  Eigen::Vector3d v;
  for (int k = 0; k < 3; ++k) {
    try {
      v[k] = std::stod(f[at + static_cast<std::size_t>(k)]);
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": bad number '" + f[at + static_cast<std::size_t>(k)] +
                       "'");
    }
  }
  return v;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) fields.push_back(tok);
  return fields;
}

}  // namespace

geo::RelativePose derive_target(const geo::AbsolutePose& a,
                                const geo::AbsolutePose& b,
                                Convention convention) {
  geo::RelativePose rel = geo::relative_pose(a, b);
  if (convention == Convention::kErroneous)
    rel.translation = geo::erroneous_relative_translation(a, b);
  return rel;
}

std::vector<PairRecord> load_pairs(const std::string& manifest_path,
                                   Convention convention, bool swap_pairs,
                                   bool load_images) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  std::vector<PairRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (f.size() != 17)
      throw ParseError("line " + std::to_string(line_no) + ": expected 17 "
                       "fields, got " + std::to_string(f.size()));
    PairRecord rec;
    rec.id = static_cast<int>(records.size());
    rec.scene = f[0];
    rec.img_a = f[1];
    rec.img_b = f[2];
    rec.pose_a.rotation = parse_quat(f, 3, line_no);
    rec.pose_a.translation = parse_vec3(f, 7, line_no);
    rec.pose_b.rotation = parse_quat(f, 10, line_no);
    rec.pose_b.translation = parse_vec3(f, 14, line_no);
    if (swap_pairs) {
      std::swap(rec.img_a, rec.img_b);
      std::swap(rec.pose_a, rec.pose_b);
    }
    rec.target = derive_target(rec.pose_a, rec.pose_b, convention);
    if (load_images) {
      const auto resolve = [&base](const std::string& p) {
        const fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
      };
      rec.image_a = load_image(resolve(rec.img_a)).to_tensor();
      rec.image_b = load_image(resolve(rec.img_b)).to_tensor();
    }
    records.push_back(std::move(rec));
  }
  if (records.empty())
    throw EmptyDataset("manifest " + manifest_path + " has no pairs");
  return records;
}

void save_pairs(const std::string& manifest_path,
                const std::vector<PairRecord>& records) {
  std::ofstream os(manifest_path);
  if (!os) throw IoError("cannot open " + manifest_path + " for writing");
  for (const auto& r : records) {
    os << r.scene << ' ' << r.img_a << ' ' << r.img_b;
    for (const auto* pose : {&r.pose_a, &r.pose_b}) {
      os << ' ' << fmt_double(pose->rotation.w) << ' '
         << fmt_double(pose->rotation.x) << ' ' << fmt_double(pose->rotation.y)
         << ' ' << fmt_double(pose->rotation.z);
      for (int k = 0; k < 3; ++k) os << ' ' << fmt_double(pose->translation[k]);
    }
    os << '\n';
  }
  if (!os) throw IoError("write failed for " + manifest_path);
}

std::vector<RelativeRecord> load_relative_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<RelativeRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (f.size() != 9)
      throw ParseError("line " + std::to_string(line_no) + ": expected 9 "
                       "fields, got " + std::to_string(f.size()));
    RelativeRecord rec;
    rec.scene = f[0];
    rec.pair_id = f[1];
    rec.pose.rotation = parse_quat(f, 2, line_no);
    rec.pose.translation = parse_vec3(f, 6, line_no);
    out.push_back(std::move(rec));
  }
  return out;
}

void save_relative_records(const std::string& path,
                           const std::vector<RelativeRecord>& records) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& r : records) {
    os << r.scene << ' ' << r.pair_id << ' ' << fmt_double(r.pose.rotation.w)
       << ' ' << fmt_double(r.pose.rotation.x) << ' '
       << fmt_double(r.pose.rotation.y) << ' ' << fmt_double(r.pose.rotation.z);
    for (int k = 0; k < 3; ++k)
      os << ' ' << fmt_double(r.pose.translation[k]);
    os << '\n';
  }
  if (!os) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

bool project_point(const SyntheticCamera& cam, const Eigen::Vector3d& point,
                   double* u, double* v) {
  const Eigen::Vector3d pc =
      cam.pose.rotation_matrix() * point + cam.pose.translation;
  if (pc.z() <= 1e-9) return false;
  *u = cam.focal * pc.x() / pc.z() + cam.cx;
  *v = cam.focal * pc.y() / pc.z() + cam.cy;
  return true;
}

ad::Tensor<float> render_view(const std::vector<Eigen::Vector3d>& points,
                              const std::vector<double>& brightness,
                              const SyntheticCamera& cam, int image_size,
                              double splat_sigma) {
  std::vector<double> accum(static_cast<std::size_t>(image_size) * image_size,
                            0.0);
  const double inv2s2 = 1.0 / (2.0 * splat_sigma * splat_sigma);
  const int window = static_cast<int>(std::ceil(4.0 * splat_sigma));
  for (std::size_t p = 0; p < points.size(); ++p) {
    double u, v;
    if (!project_point(cam, points[p], &u, &v)) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(u)) - window);
    const int x1 = std::min(image_size - 1,
                            static_cast<int>(std::ceil(u)) + window);
    const int y0 = std::max(0, static_cast<int>(std::floor(v)) - window);
    const int y1 = std::min(image_size - 1,
                            static_cast<int>(std::ceil(v)) + window);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - u, dy = y - v;
        accum[static_cast<std::size_t>(y) * image_size + x] +=
            brightness[p] * std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
  }
  ad::Tensor<float> img({1, image_size, image_size});
  for (std::size_t i = 0; i < accum.size(); ++i)
    img[static_cast<int>(i)] =
        static_cast<float>(accum[i] / (accum[i] + 1.0));  // bounded [0, 1)
  return img;
}

namespace {

// Look-at rotation: camera at `eye` with +z toward `at`.
Eigen::Matrix3d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& at,
                        const Eigen::Vector3d& up_hint) {
  const Eigen::Vector3d z = (at - eye).normalized();
  Eigen::Vector3d x = up_hint.cross(z);
  if (x.norm() < 1e-9) x = Eigen::Vector3d(1, 0, 0).cross(z);
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;  // world-to-camera rows
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return r;
}

Eigen::Vector3d random_unit(Rng& rng) {
  // Rejection sample inside the unit ball, then normalize.
  for (;;) {
    const Eigen::Vector3d v(rng.uniform(-1, 1), rng.uniform(-1, 1),
                            rng.uniform(-1, 1));
    const double n = v.norm();
    if (n > 1e-3 && n <= 1.0) return v / n;
  }
}

int covisible_count(const std::vector<Eigen::Vector3d>& points,
                    const SyntheticCamera& cam_a, const SyntheticCamera& cam_b,
                    int image_size) {
  int count = 0;
  for (const auto& p : points) {
    double ua, va, ub, vb;
    if (project_point(cam_a, p, &ua, &va) && project_point(cam_b, p, &ub, &vb) &&
        ua >= 0 && ua < image_size && va >= 0 && va < image_size && ub >= 0 &&
        ub < image_size && vb >= 0 && vb < image_size)
      ++count;
  }
  return count;
}

}  // namespace

SyntheticScene synth_scene(const SynthConfig& cfg) {
  if (cfg.n_points < 1 || cfg.n_pairs < 1 || cfg.image_size < 8)
    throw ConfigError("synth_scene: n_points >= 1, n_pairs >= 1, "
                      "image_size >= 8 required");
  if (cfg.baseline_min <= 0 || cfg.baseline_max < cfg.baseline_min)
    throw ConfigError("synth_scene: bad baseline range");
  if (cfg.rot_min_deg < 0 || cfg.rot_max_deg < cfg.rot_min_deg ||
      cfg.rot_max_deg > 60.0)
    throw ConfigError("synth_scene: rotation range must fit in [0, 60] deg");

  Rng rng(cfg.seed);
  SyntheticScene scene;
  scene.cfg = cfg;

  scene.points.reserve(static_cast<std::size_t>(cfg.n_points));
  scene.brightness.reserve(static_cast<std::size_t>(cfg.n_points));
  for (int i = 0; i < cfg.n_points; ++i) {
    scene.points.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                              rng.uniform(-0.5, 0.5));
    scene.brightness.push_back(rng.uniform(0.4, 1.0));
  }

  const double fov_deg = 50.0;
  const double focal =
      0.5 * cfg.image_size / std::tan(0.5 * fov_deg * M_PI / 180.0);
  const double cx = 0.5 * (cfg.image_size - 1);
  const double cy = 0.5 * (cfg.image_size - 1);
  const double kDeg = M_PI / 180.0;

  const int grid = cfg.image_size / 8;
  scene.cameras.reserve(static_cast<std::size_t>(cfg.n_pairs));
  scene.pairs.reserve(static_cast<std::size_t>(cfg.n_pairs));
  scene.correspondences.reserve(static_cast<std::size_t>(cfg.n_pairs));

  for (int pair = 0; pair < cfg.n_pairs; ++pair) {
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      // Camera A on a shell looking at the cloud center.
      const Eigen::Vector3d dir = random_unit(rng);
      const double dist = rng.uniform(2.2, 2.8);
      const Eigen::Vector3d eye = dir * dist;
      SyntheticCamera cam_a;
      cam_a.focal = focal;
      cam_a.cx = cx;
      cam_a.cy = cy;
      const Eigen::Matrix3d r_a =
          look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 1, 0));
      cam_a.pose.rotation = geo::UnitQuaternion::from_matrix(r_a);
      cam_a.pose.translation = -r_a * eye;

      // Planted relative pose, then B derived from it:
      // R_B = R_rel R_A, t_B = R_rel (t_A - t_rel).
      const double angle =
          rng.uniform(cfg.rot_min_deg, cfg.rot_max_deg) * kDeg;
      const Eigen::Vector3d axis = random_unit(rng);
      const geo::UnitQuaternion q_rel =
          geo::UnitQuaternion::from_axis_angle(axis, angle);
      const double baseline = rng.uniform(cfg.baseline_min, cfg.baseline_max);
      // t_rel = R_A (c_B - c_A): move the center along a random direction.
      const Eigen::Vector3d t_rel = r_a * (random_unit(rng) * baseline);

      const Eigen::Matrix3d r_rel = q_rel.to_matrix();
      SyntheticCamera cam_b;
      cam_b.focal = focal;
      cam_b.cx = cx;
      cam_b.cy = cy;
      const Eigen::Matrix3d r_b = r_rel * r_a;
      cam_b.pose.rotation = geo::UnitQuaternion::from_matrix(r_b);
      cam_b.pose.translation = r_rel * (cam_a.pose.translation - t_rel);

      if (covisible_count(scene.points, cam_a, cam_b, cfg.image_size) < 8)
        continue;

      PairRecord rec;
      rec.id = pair;
      rec.scene = cfg.scene_name;
      rec.pose_a = cam_a.pose;
      rec.pose_b = cam_b.pose;
      rec.target.rotation = q_rel;
      rec.target.translation = t_rel;
      rec.image_a = render_view(scene.points, scene.brightness, cam_a,
                                cfg.image_size, cfg.splat_sigma);
      rec.image_b = render_view(scene.points, scene.brightness, cam_b,
                                cfg.image_size, cfg.splat_sigma);

      // Ground-truth cell correspondences: per grid cell of A, the dominant
      // covisible point (largest splat contribution at the cell center).
      std::vector<CellCorrespondence> corr;
      const double inv2s2 =
          1.0 / (2.0 * cfg.splat_sigma * cfg.splat_sigma);
      for (int crow = 0; crow < grid; ++crow)
        for (int ccol = 0; ccol < grid; ++ccol) {
          const double center_u = ccol * 8 + 3.5;
          const double center_v = crow * 8 + 3.5;
          int best = -1;
          double best_score = 0;
          double best_ub = 0, best_vb = 0;
          for (std::size_t p = 0; p < scene.points.size(); ++p) {
            double ua, va, ub, vb;
            if (!project_point(cam_a, scene.points[p], &ua, &va)) continue;
            if (ua < ccol * 8 || ua >= (ccol + 1) * 8 || va < crow * 8 ||
                va >= (crow + 1) * 8)
              continue;
            if (!project_point(cam_b, scene.points[p], &ub, &vb)) continue;
            if (ub < 0 || ub >= cfg.image_size || vb < 0 ||
                vb >= cfg.image_size)
              continue;
            const double du = ua - center_u, dv = va - center_v;
            const double score =
                scene.brightness[p] * std::exp(-(du * du + dv * dv) * inv2s2);
            if (score > best_score) {
              best_score = score;
              best = static_cast<int>(p);
              best_ub = ub;
              best_vb = vb;
            }
          }
          if (best < 0) continue;
          const int brow = static_cast<int>(best_vb / 8.0);
          const int bcol = static_cast<int>(best_ub / 8.0);
          if (brow < 0 || brow >= grid || bcol < 0 || bcol >= grid) continue;
          corr.push_back({crow * grid + ccol, brow * grid + bcol});
        }

      scene.cameras.push_back({cam_a, cam_b});
      scene.pairs.push_back(std::move(rec));
      scene.correspondences.push_back(std::move(corr));
      placed = true;
    }
    if (!placed)
      throw DegenerateGeometry("pair " + std::to_string(pair) +
                               ": fewer than 8 covisible points after 64 "
                               "placement attempts");
  }
  return scene;
}

SplitResult split(const std::vector<PairRecord>& records,
                  const std::array<double, 3>& ratios, std::uint64_t seed) {
  double total = 0;
  for (double r : ratios) {
    if (r < 0) throw BadRatios("negative split ratio");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw BadRatios("split ratios sum to " + std::to_string(total));

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  const auto n = static_cast<double>(records.size());
  const auto c1 = static_cast<std::size_t>(std::llround(n * ratios[0]));
  const auto c2 =
      static_cast<std::size_t>(std::llround(n * (ratios[0] + ratios[1])));
  SplitResult out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const PairRecord& rec = records[order[k]];
    if (k < c1) out.train.push_back(rec);
    else if (k < c2) out.val.push_back(rec);
    else out.test.push_back(rec);
  }
  return out;
}

std::string write_synth_dataset(const SyntheticScene& scene,
                                const std::string& out_dir, bool write_png) {
  fs::create_directories(fs::path(out_dir) / "imgs");
  std::vector<PairRecord> records = scene.pairs;
  for (auto& rec : records) {
    char base_a[64], base_b[64];
    std::snprintf(base_a, sizeof(base_a), "imgs/pair%04d_a", rec.id);
    std::snprintf(base_b, sizeof(base_b), "imgs/pair%04d_b", rec.id);
    rec.img_a = std::string(base_a) + ".rptn";
    rec.img_b = std::string(base_b) + ".rptn";
    save_rptn((fs::path(out_dir) / rec.img_a).string(), rec.image_a);
    save_rptn((fs::path(out_dir) / rec.img_b).string(), rec.image_b);
    if (write_png) {
      save_png((fs::path(out_dir) / (std::string(base_a) + ".png")).string(),
               Image::from_tensor(rec.image_a));
      save_png((fs::path(out_dir) / (std::string(base_b) + ".png")).string(),
               Image::from_tensor(rec.image_b));
    }
  }
  const std::string manifest = (fs::path(out_dir) / "manifest.txt").string();
  save_pairs(manifest, records);

  std::ofstream corr((fs::path(out_dir) / "corr_gt.csv").string());
  corr << "pair_id,cell_a,cell_b\n";
  for (std::size_t p = 0; p < scene.correspondences.size(); ++p)
    for (const auto& c : scene.correspondences[p])
      corr << p << ',' << c.cell_a << ',' << c.cell_b << '\n';
  return manifest;
}

}  // namespace relpose::data

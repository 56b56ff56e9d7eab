#include "relpose/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relpose/error.hpp"
#include "relpose/matcher.hpp"

namespace fs = std::filesystem;

namespace relpose::report {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << content;
  if (!os) throw IoError("write failed for " + path);
}

}  // namespace

EvalReport evaluate(const net::Model<float>& model,
                    const std::vector<data::PairRecord>& records,
                    const EvalOptions& opts) {
  if (records.empty()) throw EmptyDataset("evaluation set is empty");
  ad::NoGradGuard guard;

  struct RawPrediction {
    const data::PairRecord* rec;
    Eigen::Vector4d q_hat;
    Eigen::Vector3d t_hat;
  };
  EvalReport out;
  if (!opts.dump_matches_dir.empty())
    fs::create_directories(opts.dump_matches_dir);
  std::vector<RawPrediction> preds;
  preds.reserve(records.size());
  for (const auto& rec : records) {
    auto fwd = model.forward(rec.image_a, rec.image_b);
    if (!opts.dump_matches_dir.empty() && fwd.cmap) {
      char name[64];
      std::snprintf(name, sizeof(name), "matches_pair%04d.csv", rec.id);
      write_file((fs::path(opts.dump_matches_dir) / name).string(),
                 net::correspondence_csv<float>(*fwd.cmap));
    }
    const auto& qv = fwd.pred.q->value;
    const auto& tv = fwd.pred.t->value;
    const Eigen::Vector4d q_hat(qv[0], qv[1], qv[2], qv[3]);
    const Eigen::Vector3d t_hat(tv[0], tv[1], tv[2]);
    if (q_hat.norm() <= 1e-12) {
      ++out.skipped;
      continue;
    }
    preds.push_back({&rec, q_hat, t_hat});
  }
  if (preds.empty()) throw EmptyDataset("all predictions were degenerate");

  // Optional per-scene global scale on the predicted translations.
  std::map<std::string, double> scale_by_scene;
  if (opts.scale_align) {
    std::map<std::string, std::pair<std::vector<Eigen::Vector3d>,
                                    std::vector<Eigen::Vector3d>>> groups;
    for (const auto& p : preds) {
      auto& g = groups[p.rec->scene];
      g.first.push_back(p.t_hat);
      g.second.push_back(p.rec->target.translation);
    }
    for (auto& [scene, g] : groups)
      scale_by_scene[scene] =
          geo::align_scale(g.first, g.second, opts.scale_mode).scale;
    out.scene_scale = scale_by_scene;
  }

  std::vector<geo::PairErrorRecord> err_records;
  for (const auto& p : preds) {
    const double s = opts.scale_align ? scale_by_scene[p.rec->scene] : 1.0;
    PairError e;
    e.scene = p.rec->scene;
    e.pair_id = p.rec->id;
    e.rot_deg = geo::rotation_error_deg(p.rec->target.rotation, p.q_hat);
    e.trans_m = geo::translation_error(p.rec->target.translation, s * p.t_hat);
    out.errors.push_back(e);
    err_records.push_back({e.scene, e.rot_deg, e.trans_m});

    data::RelativeRecord pr;
    pr.scene = p.rec->scene;
    pr.pair_id = std::to_string(p.rec->id);
    pr.pose.rotation = geo::quat_normalize_canonical(p.q_hat);
    pr.pose.translation = p.t_hat;
    out.predictions.push_back(std::move(pr));
  }

  out.scenes = geo::per_scene_median(err_records);
  if (opts.pooled_average) {
    std::vector<double> all_r, all_t;
    for (const auto& e : out.errors) {
      all_r.push_back(e.rot_deg);
      all_t.push_back(e.trans_m);
    }
    out.avg_rot_deg = geo::median(all_r);
    out.avg_trans_m = geo::median(all_t);
  } else {
    double sr = 0, st = 0;
    for (const auto& s : out.scenes) {
      sr += s.median_rot_deg;
      st += s.median_trans_m;
    }
    out.avg_rot_deg = sr / static_cast<double>(out.scenes.size());
    out.avg_trans_m = st / static_cast<double>(out.scenes.size());
  }
  return out;
}

std::vector<std::pair<double, long long>> unnormalized_cdf(
    std::vector<double> errors) {
  if (errors.empty()) throw EmptyInput("CDF of empty error list");
  std::sort(errors.begin(), errors.end());
  std::vector<std::pair<double, long long>> cdf;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!cdf.empty() && cdf.back().first == errors[i])
      cdf.back().second = static_cast<long long>(i + 1);
    else
      cdf.emplace_back(errors[i], static_cast<long long>(i + 1));
  }
  return cdf;
}

Histogram histogram(const std::vector<double>& errors, double bin_width,
                    double cutoff) {
  if (errors.empty()) throw EmptyInput("histogram of empty error list");
  if (bin_width <= 0) throw ConfigError("histogram bin width must be > 0");
  Histogram h;
  h.bin_width = bin_width;
  for (double e : errors) {
    if (e < 0) continue;
    if (cutoff > 0 && e > cutoff) continue;
    const auto bin = static_cast<std::size_t>(e / bin_width);
    if (h.counts.size() <= bin) h.counts.resize(bin + 1, 0);
    ++h.counts[bin];
  }
  if (h.counts.empty()) h.counts.resize(1, 0);
  return h;
}

std::string cdf_csv(const std::vector<std::pair<double, long long>>& cdf) {
  std::string out = "value,count\n";
  for (const auto& [v, c] : cdf) out += fmt(v) + "," + std::to_string(c) + "\n";
  return out;
}

std::string histogram_csv(const Histogram& hist) {
  std::string out = "bin_start,bin_end,count\n";
  for (std::size_t k = 0; k < hist.counts.size(); ++k)
    out += fmt(static_cast<double>(k) * hist.bin_width) + "," +
           fmt(static_cast<double>(k + 1) * hist.bin_width) + "," +
           std::to_string(hist.counts[k]) + "\n";
  return out;
}

namespace {

constexpr int kSvgW = 640, kSvgH = 420;
constexpr int kMargin = 50;

std::string svg_header(const std::string& x_label, const std::string& y_label,
                       double x_max, double y_max) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgW
     << "\" height=\"" << kSvgH << "\">\n"
     << "<rect width=\"" << kSvgW << "\" height=\"" << kSvgH
     << "\" fill=\"white\"/>\n"
     << "<line x1=\"" << kMargin << "\" y1=\"" << kSvgH - kMargin << "\" x2=\""
     << kSvgW - kMargin << "\" y2=\"" << kSvgH - kMargin
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\""
     << kMargin << "\" y2=\"" << kSvgH - kMargin << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << kSvgW / 2 << "\" y=\"" << kSvgH - 12
     << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label << "</text>\n"
     << "<text x=\"14\" y=\"" << kSvgH / 2
     << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << kSvgH / 2 << ")\">" << y_label << "</text>\n"
     << "<text x=\"" << kSvgW - kMargin << "\" y=\"" << kSvgH - kMargin + 16
     << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(x_max) << "</text>\n"
     << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 4
     << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(y_max) << "</text>\n";
  return os.str();
}

double sx(double x, double x_max) {
  return kMargin + (kSvgW - 2.0 * kMargin) * (x_max > 0 ? x / x_max : 0);
}
double sy(double y, double y_max) {
  return kSvgH - kMargin - (kSvgH - 2.0 * kMargin) * (y_max > 0 ? y / y_max : 0);
}

}  // namespace

std::string cdf_svg(const std::vector<std::pair<double, long long>>& cdf,
                    const std::string& x_label) {
  const double x_max = cdf.back().first > 0 ? cdf.back().first : 1.0;
  const double y_max = static_cast<double>(cdf.back().second);
  std::ostringstream os;
  os << svg_header(x_label, "pairs with error <= x", x_max, y_max);
  os << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" "
        "points=\"";
  os << fmt(sx(0, x_max)) << "," << fmt(sy(0, y_max)) << " ";
  long long prev = 0;
  for (const auto& [v, c] : cdf) {
    // Step function: horizontal to the new value, then vertical.
    os << fmt(sx(v, x_max)) << "," << fmt(sy(static_cast<double>(prev), y_max))
       << " ";
    os << fmt(sx(v, x_max)) << "," << fmt(sy(static_cast<double>(c), y_max))
       << " ";
    prev = c;
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

std::string histogram_svg(const Histogram& hist, const std::string& x_label) {
  const double x_max =
      static_cast<double>(hist.counts.size()) * hist.bin_width;
  long long peak = 1;
  for (long long c : hist.counts) peak = std::max(peak, c);
  std::ostringstream os;
  os << svg_header(x_label, "pairs per bin", x_max, static_cast<double>(peak));
  for (std::size_t k = 0; k < hist.counts.size(); ++k) {
    const double x0 = sx(static_cast<double>(k) * hist.bin_width, x_max);
    const double x1 = sx(static_cast<double>(k + 1) * hist.bin_width, x_max);
    const double y = sy(static_cast<double>(hist.counts[k]),
                        static_cast<double>(peak));
    os << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y) << "\" width=\""
       << fmt(std::max(0.5, x1 - x0 - 0.5)) << "\" height=\""
       << fmt(static_cast<double>(kSvgH - kMargin) - y)
       << "\" fill=\"#5290c6\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_eval_outputs(const EvalReport& report, const std::string& out_dir,
                        double cutoff_deg, double bin_width_rot,
                        double bin_width_trans) {
  fs::create_directories(out_dir);
  const auto path = [&out_dir](const char* name) {
    return (fs::path(out_dir) / name).string();
  };

  std::string rep = "scene,pairs,skipped,median_rot_deg,median_trans_m,scale\n";
  for (const auto& s : report.scenes) {
    rep += s.scene + "," + std::to_string(s.pair_count) + ",0," +
           fmt(s.median_rot_deg) + "," + fmt(s.median_trans_m) + ",";
    const auto it = report.scene_scale.find(s.scene);
    rep += it != report.scene_scale.end() ? fmt(it->second) : std::string("1");
    rep += "\n";
  }
  rep += "AVERAGE," + std::to_string(report.errors.size()) + "," +
         std::to_string(report.skipped) + "," + fmt(report.avg_rot_deg) + "," +
         fmt(report.avg_trans_m) + ",\n";
  write_file(path("report.csv"), rep);

  std::string errs = "scene,pair_id,rot_err_deg,trans_err_m\n";
  for (const auto& e : report.errors)
    errs += e.scene + "," + std::to_string(e.pair_id) + "," + fmt(e.rot_deg) +
            "," + fmt(e.trans_m) + "\n";
  write_file(path("errors.csv"), errs);

  data::save_relative_records(path("predictions.txt"), report.predictions);

  std::vector<double> rot, trans;
  for (const auto& e : report.errors) {
    rot.push_back(e.rot_deg);
    trans.push_back(e.trans_m);
  }
  auto emit = [&](const std::vector<double>& vals, const char* stem,
                  const std::string& label, double bin_w, double cutoff) {
    std::vector<double> kept;
    for (double v : vals)
      if (cutoff <= 0 || v <= cutoff) kept.push_back(v);
    if (kept.empty()) kept = vals;  // cutoff removed everything; keep raw
    const auto cdf = unnormalized_cdf(kept);
    write_file(path((std::string(stem) + "_cdf.csv").c_str()), cdf_csv(cdf));
    write_file(path((std::string(stem) + "_cdf.svg").c_str()),
               cdf_svg(cdf, label));
    const auto hist = histogram(vals, bin_w, cutoff);
    write_file(path((std::string(stem) + "_hist.csv").c_str()),
               histogram_csv(hist));
    write_file(path((std::string(stem) + "_hist.svg").c_str()),
               histogram_svg(hist, label));
  };
  emit(rot, "rot", "rotation error (deg)", bin_width_rot, cutoff_deg);
  emit(trans, "trans", "translation error (m)", bin_width_trans, 0);
}

std::vector<PairError> read_errors_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<PairError> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("scene,", 0) == 0) continue;  // header
    std::istringstream ls(line);
    std::string scene, pair_id, rot, trans;
    if (!std::getline(ls, scene, ',') || !std::getline(ls, pair_id, ',') ||
        !std::getline(ls, rot, ',') || !std::getline(ls, trans))
      throw ParseError("errors csv line " + std::to_string(line_no));
    PairError e;
    e.scene = scene;
    try {
      e.pair_id = std::stoi(pair_id);
      e.rot_deg = std::stod(rot);
      e.trans_m = std::stod(trans);
    } catch (const std::exception&) {
      throw ParseError("errors csv line " + std::to_string(line_no) +
                       ": bad number");
    }
    out.push_back(std::move(e));
  }
  if (out.empty()) throw EmptyInput("errors csv " + path + " has no rows");
  return out;
}

void report_from_errors_csv(const std::string& errors_csv,
                            const std::string& out_dir, double cutoff_deg,
                            double bin_width_rot, double bin_width_trans) {
  const auto errors = read_errors_csv(errors_csv);
  fs::create_directories(out_dir);
  const auto path = [&out_dir](const std::string& name) {
    return (fs::path(out_dir) / name).string();
  };
  std::vector<double> rot, trans;
  for (const auto& e : errors) {
    rot.push_back(e.rot_deg);
    trans.push_back(e.trans_m);
  }
  std::vector<double> rot_kept;
  for (double v : rot)
    if (cutoff_deg <= 0 || v <= cutoff_deg) rot_kept.push_back(v);
  if (rot_kept.empty()) rot_kept = rot;
  const auto rot_cdf = unnormalized_cdf(rot_kept);
  const auto trans_cdf = unnormalized_cdf(trans);
  write_file(path("rot_cdf.csv"), cdf_csv(rot_cdf));
  write_file(path("rot_cdf.svg"), cdf_svg(rot_cdf, "rotation error (deg)"));
  write_file(path("trans_cdf.csv"), cdf_csv(trans_cdf));
  write_file(path("trans_cdf.svg"),
             cdf_svg(trans_cdf, "translation error (m)"));
  write_file(path("rot_hist.csv"),
             histogram_csv(histogram(rot, bin_width_rot, cutoff_deg)));
  write_file(path("rot_hist.svg"),
             histogram_svg(histogram(rot, bin_width_rot, cutoff_deg),
                           "rotation error (deg)"));
  write_file(path("trans_hist.csv"),
             histogram_csv(histogram(trans, bin_width_trans, 0)));
  write_file(path("trans_hist.svg"),
             histogram_svg(histogram(trans, bin_width_trans, 0),
                           "translation error (m)"));
}

}  // namespace relpose::report

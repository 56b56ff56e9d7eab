#pragma once

#include <map>
#include <string>
#include <vector>

#include "relpose/data.hpp"
#include "relpose/geometry.hpp"
#include "relpose/pipeline.hpp"

namespace relpose::report {

struct PairError {
  std::string scene;
  int pair_id = 0;
  double rot_deg = 0;
  double trans_m = 0;
};

struct EvalOptions {
  bool scale_align = false;
  geo::ScaleMode scale_mode = geo::ScaleMode::kLeastSquares;
  bool pooled_average = false;  // pool all pairs instead of averaging medians
  std::string dump_matches_dir;  // when set, per-pair correspondence CSVs
};

struct EvalReport {
  std::vector<PairError> errors;  // per pair, manifest order
  std::vector<geo::SceneErrorSummary> scenes;
  std::map<std::string, double> scene_scale;  // present when aligned
  double avg_rot_deg = 0;   // mean of scene medians (or pooled median)
  double avg_trans_m = 0;
  int skipped = 0;          // degenerate predictions excluded from stats
  std::vector<data::RelativeRecord> predictions;
};

// Runs the model over the records (inference mode) and aggregates errors.
EvalReport evaluate(const net::Model<float>& model,
                    const std::vector<data::PairRecord>& records,
                    const EvalOptions& opts = {});

// Unnormalized empirical CDF: (error value, count of pairs with error <=
// value) at each distinct sorted value.
std::vector<std::pair<double, long long>> unnormalized_cdf(
    std::vector<double> errors);

struct Histogram {
  double bin_width = 1.0;
  std::vector<long long> counts;  // bin k covers [k*w, (k+1)*w)
};

// cutoff <= 0 means no cutoff; otherwise values above it are dropped.
Histogram histogram(const std::vector<double>& errors, double bin_width,
                    double cutoff = 0);

std::string cdf_csv(const std::vector<std::pair<double, long long>>& cdf);
std::string histogram_csv(const Histogram& hist);
std::string cdf_svg(const std::vector<std::pair<double, long long>>& cdf,
                    const std::string& x_label);
std::string histogram_svg(const Histogram& hist, const std::string& x_label);

// report.csv + errors.csv + predictions.txt + CDF/histogram CSV+SVG files.
void write_eval_outputs(const EvalReport& report, const std::string& out_dir,
                        double cutoff_deg = 0, double bin_width_rot = 1.0,
                        double bin_width_trans = 0.01);

// errors.csv reader for the standalone report command.
std::vector<PairError> read_errors_csv(const std::string& path);

// CDF + histogram emission from an existing errors.csv.
void report_from_errors_csv(const std::string& errors_csv,
                            const std::string& out_dir, double cutoff_deg,
                            double bin_width_rot, double bin_width_trans);

}  // namespace relpose::report

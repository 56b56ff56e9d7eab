#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relpose/data.hpp"
#include "relpose/pipeline.hpp"

namespace relpose {

struct TrainOptions {
  int epochs = 80;
  double lr0 = 1e-3;
  int batch = 8;
  int step_size = 6;
  double gamma = 0.9;
  std::uint64_t seed = 0;
  std::string log_path;   // per-epoch CSV; empty to skip
  std::string out_best;   // best-validation checkpoint path; empty to skip
  std::string out_last;   // last checkpoint (with optimizer state)
  std::string resume;     // checkpoint to continue from
};

struct EpochStats {
  int epoch = 0;
  double lr = 0, train_loss = 0, val_loss = 0;
  double s_q = 0, s_t = 0, s_tn = 0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val = 0;
  long long skipped_direction_pairs = 0;  // pairs whose L_tn term was skipped
  std::vector<NamedTensor> best_entries;  // parameters at the best epoch
};

// End-to-end training of the full pipeline (extractor, regressor and loss
// weights all updated). Validation selects the best checkpoint; with an
// empty validation set the train loss is used instead. Single-threaded and
// bit-deterministic for a fixed (model seed, options seed).
TrainResult train_model(net::Model<float>& model,
                        const std::vector<data::PairRecord>& train_set,
                        const std::vector<data::PairRecord>& val_set,
                        const TrainOptions& opts);

// Mean total loss over a record set without touching gradients. Returns the
// number of pairs whose normalized-translation term was skipped via
// *skipped (may be null).
double dataset_loss(const net::Model<float>& model,
                    const std::vector<data::PairRecord>& records,
                    long long* skipped = nullptr);

}  // namespace relpose

#include "relpose/train.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "relpose/error.hpp"
#include "relpose/optim.hpp"
#include "relpose/rng.hpp"

namespace relpose {

namespace {

// Loss graph for one pair; the normalized-translation term is dropped (and
// counted) when either direction is degenerate.
ad::NodePtr<float> pair_loss(const net::Model<float>& model,
                             const data::PairRecord& rec,
                             long long* skipped) {
  auto fwd = model.forward(rec.image_a, rec.image_b);
  auto l_q = net::loss_rotation(fwd.pred.q, rec.target.rotation);
  auto l_t = net::loss_translation(fwd.pred.t, rec.target.translation);
  ad::NodePtr<float> l_tn;
  try {
    l_tn = net::loss_translation_normalized(fwd.pred.t, rec.target.translation);
  } catch (const DegenerateDirection&) {
    if (skipped) ++*skipped;
  }
  return net::loss_total(l_q, l_t, l_tn, model.loss_weights);
}

std::vector<NamedTensor> entries_with_optimizer(const net::Model<float>& model,
                                                Adam<float>& adam,
                                                int next_epoch) {
  std::vector<NamedTensor> entries = model.to_entries();
  entries.push_back({"meta/epoch", ad::Tensor<float>::scalar(
                                       static_cast<float>(next_epoch))});
  entries.push_back({"meta/adam_step",
                     ad::Tensor<float>::scalar(
                         static_cast<float>(adam.step_count()))});
  auto& states = adam.states();
  states.resize(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (states[i].m.data.empty()) {
      states[i].m = ad::Tensor<float>::zeros(model.params.nodes[i]->value.shape);
      states[i].v = ad::Tensor<float>::zeros(model.params.nodes[i]->value.shape);
    }
    entries.push_back({"adam/m/" + model.params.names[i], states[i].m});
    entries.push_back({"adam/v/" + model.params.names[i], states[i].v});
  }
  return entries;
}

int restore_from_checkpoint(net::Model<float>& model, Adam<float>& adam,
                            const std::string& path) {
  const auto entries = load_rpck(path);
  const auto stored_cfg = net::Model<float>::config_from_entries(entries);
  if (stored_cfg.extractor.channels != model.cfg.extractor.channels ||
      stored_cfg.extractor.layers != model.cfg.extractor.layers ||
      stored_cfg.extractor.heads != model.cfg.extractor.heads ||
      stored_cfg.regressor.hidden != model.cfg.regressor.hidden)
    throw CheckpointMismatch("resume checkpoint architecture differs from "
                             "the configured model");
  model.load_entries(entries);

  int next_epoch = 0;
  long long step = 0;
  for (const auto& e : entries) {
    if (e.name == "meta/epoch") next_epoch = static_cast<int>(e.data[0]);
    else if (e.name == "meta/adam_step")
      step = static_cast<long long>(e.data[0]);
  }
  auto& states = adam.states();
  states.resize(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    bool got_m = false, got_v = false;
    for (const auto& e : entries) {
      if (e.name == "adam/m/" + model.params.names[i]) {
        states[i].m = e.data;
        got_m = true;
      } else if (e.name == "adam/v/" + model.params.names[i]) {
        states[i].v = e.data;
        got_v = true;
      }
    }
    if (!got_m || !got_v)
      throw CheckpointMismatch("resume checkpoint lacks optimizer state for " +
                               model.params.names[i]);
  }
  adam.set_step_count(step);
  return next_epoch;
}

}  // namespace

double dataset_loss(const net::Model<float>& model,
                    const std::vector<data::PairRecord>& records,
                    long long* skipped) {
  if (records.empty()) return 0.0;
  ad::NoGradGuard guard;
  double total = 0;
  for (const auto& rec : records)
    total += static_cast<double>(pair_loss(model, rec, skipped)->value[0]);
  return total / static_cast<double>(records.size());
}

TrainResult train_model(net::Model<float>& model,
                        const std::vector<data::PairRecord>& train_set,
                        const std::vector<data::PairRecord>& val_set,
                        const TrainOptions& opts) {
  if (train_set.empty()) throw EmptyDataset("training set is empty");
  if (opts.batch < 1) throw ConfigError("batch size must be >= 1");

  Adam<float> adam;
  int start_epoch = 0;
  if (!opts.resume.empty())
    start_epoch = restore_from_checkpoint(model, adam, opts.resume);

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();

  const std::size_t n = train_set.size();
  for (int epoch = start_epoch; epoch < opts.epochs; ++epoch) {
    const double lr = step_lr(opts.lr0, epoch, opts.step_size, opts.gamma);

    // Batch order is a pure function of (seed, epoch) so a resumed run sees
    // exactly the batches a continuous run would.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(opts.seed * 1000003ULL +
                    static_cast<std::uint64_t>(epoch) + 1ULL);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0;
    int batch_index = 0;
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(opts.batch),
                     ++batch_index) {
      const std::size_t end =
          std::min(n, at + static_cast<std::size_t>(opts.batch));
      try {
        model.params.zero_grad();
        ad::NodePtr<float> batch_total;
        for (std::size_t k = at; k < end; ++k) {
          auto loss = pair_loss(model, train_set[order[k]],
                                &result.skipped_direction_pairs);
          batch_total = batch_total ? ad::add(batch_total, loss) : loss;
        }
        auto batch_mean = ad::scalar_mul(
            batch_total, 1.0f / static_cast<float>(end - at));
        ad::backward(batch_mean);
        adam.step(model.params, static_cast<float>(lr));
        epoch_loss += static_cast<double>(batch_total->value[0]);
      } catch (const NonFiniteValue& e) {
        throw NonFiniteValue("epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(batch_index) + ": " + e.what());
      }
    }
    epoch_loss /= static_cast<double>(n);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = epoch_loss;
    stats.val_loss = val_set.empty()
                         ? epoch_loss
                         : dataset_loss(model, val_set,
                                        &result.skipped_direction_pairs);
    stats.s_q = static_cast<double>(model.loss_weights.s_q->value[0]);
    stats.s_t = static_cast<double>(model.loss_weights.s_t->value[0]);
    stats.s_tn = static_cast<double>(model.loss_weights.s_tn->value[0]);
    result.epochs.push_back(stats);

    if (stats.val_loss < result.best_val) {
      result.best_val = stats.val_loss;
      result.best_epoch = epoch;
      result.best_entries = model.to_entries();
    }
  }

  if (!opts.log_path.empty()) {
    std::ofstream log(opts.log_path);
    if (!log) throw IoError("cannot open " + opts.log_path + " for writing");
    log << "epoch,lr,train_loss,val_loss,s_q,s_t,s_tn\n";
    char line[256];
    for (const auto& s : result.epochs) {
      std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                    s.epoch, s.lr, s.train_loss, s.val_loss, s.s_q, s.s_t,
                    s.s_tn);
      log << line;
    }
  }
  if (!opts.out_best.empty() && !result.best_entries.empty())
    save_rpck(opts.out_best, result.best_entries);
  if (!opts.out_last.empty())
    save_rpck(opts.out_last, entries_with_optimizer(model, adam, opts.epochs));
  return result;
}

}  // namespace relpose

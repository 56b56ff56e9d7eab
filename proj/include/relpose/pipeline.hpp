#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relpose/checkpoint.hpp"
#include "relpose/error.hpp"
#include "relpose/extractor.hpp"
#include "relpose/matcher.hpp"
#include "relpose/optim.hpp"
#include "relpose/regressor.hpp"

namespace relpose::net {

enum class Variant { kFull, kNoWarp, kCnnOnly, kSelfAttnOnly };

inline Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "no_warp") return Variant::kNoWarp;
  if (name == "cnn_only") return Variant::kCnnOnly;
  if (name == "self_attn_only") return Variant::kSelfAttnOnly;
  throw ConfigError("unknown variant '" + name +
                    "' (expected full|no_warp|cnn_only|self_attn_only)");
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoWarp: return "no_warp";
    case Variant::kCnnOnly: return "cnn_only";
    case Variant::kSelfAttnOnly: return "self_attn_only";
  }
  return "full";
}

struct ModelConfig {
  ExtractorConfig extractor;
  RegressorConfig regressor;
  double temperature = 1.0;
  Variant variant = Variant::kFull;
};

template <typename T>
struct ForwardResult {
  PosePrediction<T> pred;
  std::optional<CorrespondenceMap> cmap;  // absent for no_warp
};

// The end-to-end network: extractor -> matcher/warper -> regressor, plus the
// learned loss weights. All parameters live in `params` under stable names.
template <typename T>
struct Model {
  ModelConfig cfg;
  ParamSet<T> params;
  Extractor<T> extractor;
  Regressor<T> regressor;
  LossWeights<T> loss_weights;

  void init(const ModelConfig& config, std::uint64_t seed) {
    cfg = config;
    Rng rng(seed);
    extractor.init(params, rng, cfg.extractor);
    regressor.init(params, rng, cfg.regressor,
                   2 * cfg.extractor.channels + 5);
    loss_weights.init(params);
  }

  FeatureTap tap() const {
    switch (cfg.variant) {
      case Variant::kCnnOnly: return FeatureTap::kCnnOnly;
      case Variant::kSelfAttnOnly: return FeatureTap::kAfterFirstSelfAttn;
      default: return FeatureTap::kFinal;
    }
  }

  ForwardResult<T> forward(const ad::Tensor<T>& img_a,
                           const ad::Tensor<T>& img_b) const {
    auto [ga, gb] = extractor.extract_pair(ad::constant(img_a),
                                           ad::constant(img_b), tap());
    if (cfg.variant == Variant::kNoWarp) {
      auto g = aligned_concat(ga, gb);
      return {regressor(g), std::nullopt};
    }
    auto wr = match_and_warp(ga, gb, cfg.temperature);
    return {regressor(wr.warped), std::move(wr.cmap)};
  }

  // ---- checkpointing ------------------------------------------------------

  std::vector<NamedTensor> to_entries() const {
    std::vector<NamedTensor> entries;
    auto meta = [&entries](const std::string& name, float v) {
      entries.push_back({"meta/" + name, ad::Tensor<float>::scalar(v)});
    };
    meta("in_channels", static_cast<float>(cfg.extractor.in_channels));
    meta("channels", static_cast<float>(cfg.extractor.channels));
    meta("layers", static_cast<float>(cfg.extractor.layers));
    meta("heads", static_cast<float>(cfg.extractor.heads));
    meta("conv_width1", static_cast<float>(cfg.extractor.conv_width1));
    meta("conv_width2", static_cast<float>(cfg.extractor.conv_width2));
    meta("block_channels", static_cast<float>(cfg.regressor.block_channels));
    meta("hidden", static_cast<float>(cfg.regressor.hidden));
    meta("pooling",
         cfg.regressor.pooling == RegressorConfig::Pooling::kMean ? 0.f : 1.f);
    meta("temperature", static_cast<float>(cfg.temperature));
    meta("variant", static_cast<float>(static_cast<int>(cfg.variant)));
    for (std::size_t i = 0; i < params.size(); ++i)
      entries.push_back(
          {params.names[i], params.nodes[i]->value.template cast<float>()});
    return entries;
  }

  static ModelConfig config_from_entries(
      const std::vector<NamedTensor>& entries) {
    std::map<std::string, float> meta;
    for (const auto& e : entries)
      if (e.name.rfind("meta/", 0) == 0 && e.data.size() == 1)
        meta[e.name.substr(5)] = e.data[0];
    auto get = [&meta](const char* key) {
      auto it = meta.find(key);
      if (it == meta.end())
        throw CheckpointMismatch(std::string("checkpoint lacks meta/") + key);
      return it->second;
    };
    ModelConfig cfg;
    cfg.extractor.in_channels = static_cast<int>(get("in_channels"));
    cfg.extractor.channels = static_cast<int>(get("channels"));
    cfg.extractor.layers = static_cast<int>(get("layers"));
    cfg.extractor.heads = static_cast<int>(get("heads"));
    cfg.extractor.conv_width1 = static_cast<int>(get("conv_width1"));
    cfg.extractor.conv_width2 = static_cast<int>(get("conv_width2"));
    cfg.regressor.block_channels = static_cast<int>(get("block_channels"));
    cfg.regressor.hidden = static_cast<int>(get("hidden"));
    cfg.regressor.pooling = get("pooling") == 0.f
                                ? RegressorConfig::Pooling::kMean
                                : RegressorConfig::Pooling::kMax;
    cfg.temperature = static_cast<double>(get("temperature"));
    cfg.variant = static_cast<Variant>(static_cast<int>(get("variant")));
    return cfg;
  }

  void load_entries(const std::vector<NamedTensor>& entries) {
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto it = by_name.find(params.names[i]);
      if (it == by_name.end())
        throw CheckpointMismatch("checkpoint lacks parameter " +
                                 params.names[i]);
      const auto& t = it->second->data;
      if (t.shape != params.nodes[i]->value.shape)
        throw CheckpointMismatch(
            "parameter " + params.names[i] + " has shape " +
            ad::shape_str(t.shape) + ", model expects " +
            ad::shape_str(params.nodes[i]->value.shape));
      params.nodes[i]->value = t.template cast<T>();
    }
  }
};

}  // namespace relpose::net

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "relpose/autodiff.hpp"
#include "relpose/error.hpp"
#include "relpose/optim.hpp"
#include "relpose/rng.hpp"

namespace relpose::net {

// Coarse per-image descriptor map at 1/8 input resolution.
template <typename T>
struct FeatureGrid {
  int channels = 0;
  int h = 0, w = 0;
  ad::NodePtr<T> features;  // (C, h, w)

  int n() const { return h * w; }

  // (n, C) token view, cell i = row * w + col.
  ad::NodePtr<T> tokens() const {
    return ad::transpose2d(ad::reshape(features, {channels, h * w}));
  }

  static FeatureGrid from_tokens(ad::NodePtr<T> tok, int h, int w) {
    const int c = tok->value.dim(1);
    return {c, h, w, ad::reshape(ad::transpose2d(tok), {c, h, w})};
  }
};

struct ExtractorConfig {
  int in_channels = 1;
  int channels = 64;   // C; paper scale 256
  int layers = 4;      // interleaved self/cross, must be even
  int heads = 4;
  int conv_width1 = 16;  // pyramid stage widths; the third stage emits C
  int conv_width2 = 32;

  void validate() const {
    if (channels % 4 != 0)
      throw BadChannelCount("channels must be divisible by 4 for the "
                            "positional encoding, got " +
                            std::to_string(channels));
    if (channels % heads != 0)
      throw ConfigError("channels (" + std::to_string(channels) +
                        ") not divisible by heads (" + std::to_string(heads) +
                        ")");
    if (layers % 2 != 0)
      throw ConfigError("attention layer count must be even, got " +
                        std::to_string(layers));
    if (in_channels != 1 && in_channels != 3)
      throw ConfigError("in_channels must be 1 or 3");
    if (conv_width1 <= 0 || conv_width2 <= 0)
      throw ConfigError("conv widths must be positive");
  }
};

enum class FeatureTap { kFinal, kAfterFirstSelfAttn, kCnnOnly };

// Deterministic 2-d sinusoidal encoding: the C channels split into quarters
// holding sin/cos of the cell x (column) and y (row) at geometric
// frequencies w_k = 10000^(-4k/C).
template <typename T>
ad::Tensor<T> positional_encoding(int h, int w, int channels) {
  if (channels % 4 != 0)
    throw BadChannelCount("positional encoding needs C divisible by 4, got " +
                          std::to_string(channels));
  const int quarter = channels / 4;
  ad::Tensor<T> enc({channels, h, w});
  for (int k = 0; k < quarter; ++k) {
    const double omega =
        std::pow(10000.0, -4.0 * static_cast<double>(k) / channels);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        enc.at(k, y, x) = static_cast<T>(std::sin(omega * x));
        enc.at(quarter + k, y, x) = static_cast<T>(std::cos(omega * x));
        enc.at(2 * quarter + k, y, x) = static_cast<T>(std::sin(omega * y));
        enc.at(3 * quarter + k, y, x) = static_cast<T>(std::cos(omega * y));
      }
  }
  return enc;
}

template <typename T>
ad::Tensor<T> kaiming_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
  const double bound = std::sqrt(6.0 / fan_in);
  ad::Tensor<T> t(std::move(shape));
  for (int i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Conv2dLayer {
  ad::NodePtr<T> weight, bias;
  int stride = 1, pad = 0;

  void init(ParamSet<T>& params, Rng& rng, const std::string& name, int out_ch,
            int in_ch, int k, int stride_, int pad_) {
    stride = stride_;
    pad = pad_;
    weight = params.add(name + "/weight",
                        kaiming_uniform<T>(rng, {out_ch, in_ch, k, k},
                                           in_ch * k * k));
    bias = params.add(name + "/bias", ad::Tensor<T>::zeros({out_ch}));
  }

  ad::NodePtr<T> operator()(ad::NodePtr<T> x) const {
    return ad::conv2d(x, weight, bias, stride, pad);
  }
};

template <typename T>
struct LinearLayer {
  ad::NodePtr<T> weight, bias;

  void init(ParamSet<T>& params, Rng& rng, const std::string& name, int out,
            int in) {
    weight = params.add(name + "/weight", kaiming_uniform<T>(rng, {out, in}, in));
    bias = params.add(name + "/bias", ad::Tensor<T>::zeros({out}));
  }

  ad::NodePtr<T> operator()(ad::NodePtr<T> x) const {
    return ad::linear(x, weight, bias);
  }
};

// One encoder layer: multi-head scaled dot-product attention with residual,
// then a per-cell feed-forward (again residual), then layer norm. Applied
// with kv == queries for self-attention, the other image for cross.
template <typename T>
struct AttentionLayer {
  int heads = 0, channels = 0, head_dim = 0;
  std::vector<LinearLayer<T>> q_proj, k_proj, v_proj;  // per head (d, C)
  LinearLayer<T> out_proj;                             // (C, C)
  LinearLayer<T> ffn1, ffn2;                           // (2C, C), (C, 2C)
  ad::NodePtr<T> norm_gamma, norm_beta;

  void init(ParamSet<T>& params, Rng& rng, const std::string& name,
            int channels_, int heads_) {
    heads = heads_;
    channels = channels_;
    head_dim = channels_ / heads_;
    q_proj.resize(heads);
    k_proj.resize(heads);
    v_proj.resize(heads);
    for (int h = 0; h < heads; ++h) {
      q_proj[h].init(params, rng, name + "/q" + std::to_string(h), head_dim,
                     channels);
      k_proj[h].init(params, rng, name + "/k" + std::to_string(h), head_dim,
                     channels);
      v_proj[h].init(params, rng, name + "/v" + std::to_string(h), head_dim,
                     channels);
    }
    out_proj.init(params, rng, name + "/out", channels, channels);
    ffn1.init(params, rng, name + "/ffn1", 2 * channels, channels);
    ffn2.init(params, rng, name + "/ffn2", channels, 2 * channels);
    norm_gamma = params.add(name + "/norm/gamma",
                            ad::Tensor<T>::full({channels}, T(1)));
    norm_beta = params.add(name + "/norm/beta", ad::Tensor<T>::zeros({channels}));
  }

  // queries/kv are token matrices (n, C); n may differ between the two.
  ad::NodePtr<T> operator()(ad::NodePtr<T> queries, ad::NodePtr<T> kv) const {
    if (queries->value.dim(1) != channels || kv->value.dim(1) != channels)
      throw ShapeMismatch("attention tokens must have " +
                          std::to_string(channels) + " channels");
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
    std::vector<ad::NodePtr<T>> head_outputs;
    head_outputs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      auto q = q_proj[h](queries);                       // (n_q, d)
      auto k = k_proj[h](kv);                            // (n_kv, d)
      auto v = v_proj[h](kv);                            // (n_kv, d)
      auto scores = ad::scalar_mul(ad::matmul(q, ad::transpose2d(k)), scale);
      auto weights = ad::softmax(scores, 1);             // rows sum to 1
      head_outputs.push_back(ad::matmul(weights, v));    // (n_q, d)
    }
    auto message = out_proj(ad::concat(head_outputs, 1));  // (n_q, C)
    auto h1 = ad::add(queries, message);
    auto h2 = ad::add(h1, ffn2(ad::relu(ffn1(h1))));
    return ad::layer_norm(h2, norm_gamma, norm_beta, 1);
  }
};

// Conv pyramid (three 4x4 stride-2 pad-1 stages, giving floor(H/2) per
// stage and so floor(H/8) overall) + positional encoding + L interleaved
// self/cross attention layers shared between the two images.
template <typename T>
struct Extractor {
  ExtractorConfig cfg;
  Conv2dLayer<T> conv1, conv2, conv3;
  std::vector<AttentionLayer<T>> attn;

  void init(ParamSet<T>& params, Rng& rng, const ExtractorConfig& config) {
    cfg = config;
    cfg.validate();
    conv1.init(params, rng, "extractor/conv1", cfg.conv_width1,
               cfg.in_channels, 4, 2, 1);
    conv2.init(params, rng, "extractor/conv2", cfg.conv_width2, cfg.conv_width1,
               4, 2, 1);
    conv3.init(params, rng, "extractor/conv3", cfg.channels, cfg.conv_width2, 4,
               2, 1);
    attn.resize(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l)
      attn[static_cast<std::size_t>(l)].init(
          params, rng, "extractor/attn" + std::to_string(l), cfg.channels,
          cfg.heads);
  }

  ad::NodePtr<T> cnn(ad::NodePtr<T> image) const {
    auto x = ad::relu(conv1(image));
    x = ad::relu(conv2(x));
    return conv3(x);
  }

  std::pair<FeatureGrid<T>, FeatureGrid<T>> extract_pair(
      ad::NodePtr<T> img_a, ad::NodePtr<T> img_b,
      FeatureTap tap = FeatureTap::kFinal) const {
    const auto& sa = img_a->value.shape;
    const auto& sb = img_b->value.shape;
    if (sa != sb)
      throw ShapeMismatch("image pair shapes differ: " + ad::shape_str(sa) +
                          " vs " + ad::shape_str(sb));
    if (sa.size() != 3 || sa[0] != cfg.in_channels)
      throw ShapeMismatch("expected (" + std::to_string(cfg.in_channels) +
                          ", H, W) images, got " + ad::shape_str(sa));
    if (sa[1] < 8 || sa[2] < 8)
      throw TooSmall("image " + std::to_string(sa[1]) + "x" +
                     std::to_string(sa[2]) + " below the 8x8 minimum");

    auto fa = cnn(img_a);
    auto fb = cnn(img_b);
    const int h = fa->value.dim(1), w = fa->value.dim(2);
    if (tap == FeatureTap::kCnnOnly)
      return {FeatureGrid<T>{cfg.channels, h, w, fa},
              FeatureGrid<T>{cfg.channels, h, w, fb}};

    auto enc = ad::constant(positional_encoding<T>(h, w, cfg.channels));
    FeatureGrid<T> ga{cfg.channels, h, w, ad::add(fa, enc)};
    FeatureGrid<T> gb{cfg.channels, h, w, ad::add(fb, enc)};
    auto ta = ga.tokens();
    auto tb = gb.tokens();
    for (int l = 0; l < cfg.layers; ++l) {
      const auto& layer = attn[static_cast<std::size_t>(l)];
      if (l % 2 == 0) {  // self
        auto na = layer(ta, ta);
        auto nb = layer(tb, tb);
        ta = na;
        tb = nb;
      } else {  // cross
        auto na = layer(ta, tb);
        auto nb = layer(tb, ta);
        ta = na;
        tb = nb;
      }
      if (tap == FeatureTap::kAfterFirstSelfAttn && l == 0) break;
    }
    return {FeatureGrid<T>::from_tokens(ta, h, w),
            FeatureGrid<T>::from_tokens(tb, h, w)};
  }
};

}  // namespace relpose::net

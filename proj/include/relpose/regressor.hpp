#pragma once

#include <optional>
#include <string>

#include "relpose/autodiff.hpp"
#include "relpose/error.hpp"
#include "relpose/extractor.hpp"
#include "relpose/geometry.hpp"

namespace relpose::net {

struct RegressorConfig {
  int block_channels = 0;  // 0: keep the warped-map channel count
  int hidden = 1024;       // first MLP width
  enum class Pooling { kMean, kMax } pooling = Pooling::kMean;

  void validate() const {
    if (block_channels < 0 || hidden <= 0)
      throw ConfigError("regressor widths must be positive");
  }
};

// Raw network outputs: q is the pre-normalization 4-vector, t is in meters.
template <typename T>
struct PosePrediction {
  ad::NodePtr<T> q;  // (4)
  ad::NodePtr<T> t;  // (3)
};

// Residual conv block (two 3x3 convs + identity skip, relu), global pooling
// over the grid, then a two-layer MLP split into (q, t).
template <typename T>
struct Regressor {
  RegressorConfig cfg;
  int in_channels = 0;
  std::optional<Conv2dLayer<T>> proj;  // 1x1, only when block width differs
  Conv2dLayer<T> conv1, conv2;
  LinearLayer<T> fc1, fc2;

  void init(ParamSet<T>& params, Rng& rng, const RegressorConfig& config,
            int input_channels) {
    cfg = config;
    cfg.validate();
    in_channels = input_channels;
    const int block = cfg.block_channels > 0 ? cfg.block_channels
                                             : input_channels;
    if (block != input_channels) {
      proj.emplace();
      proj->init(params, rng, "regressor/proj", block, input_channels, 1, 1, 0);
    }
    conv1.init(params, rng, "regressor/conv1", block, block, 3, 1, 1);
    conv2.init(params, rng, "regressor/conv2", block, block, 3, 1, 1);
    fc1.init(params, rng, "regressor/fc1", cfg.hidden, block);
    fc2.init(params, rng, "regressor/fc2", 7, cfg.hidden);
  }

  PosePrediction<T> operator()(ad::NodePtr<T> warped) const {
    if (warped->value.ndim() != 3 || warped->value.dim(0) != in_channels)
      throw ShapeMismatch("regressor expects (" + std::to_string(in_channels) +
                          ", h, w), got " + ad::shape_str(warped->value.shape));
    auto x = proj ? (*proj)(warped) : warped;
    auto y = ad::relu(conv1(x));
    y = conv2(y);
    auto z = ad::relu(ad::add(x, y));

    const int block = z->value.dim(0);
    const int n = z->value.dim(1) * z->value.dim(2);
    ad::NodePtr<T> pooled;
    if (cfg.pooling == RegressorConfig::Pooling::kMean) {
      auto flat = ad::reshape(z, {block, n});  // (block, n)
      auto avg = ad::constant(
          ad::Tensor<T>::full({n, 1}, T(1) / static_cast<T>(n)));
      pooled = ad::reshape(ad::matmul(flat, avg), {block});
    } else {
      pooled = ad::channel_max(z);
    }
    auto h = ad::relu(fc1(pooled));
    auto out = fc2(h);  // (7)
    return {ad::gather(out, {0, 1, 2, 3}), ad::gather(out, {4, 5, 6})};
  }
};

// -----------------------------------------------------------------------
// Supervised losses. Ground truth enters as constants; every output is a
// scalar node.
// -----------------------------------------------------------------------

inline constexpr double kQuatNormEps = 1e-12;
inline constexpr double kDirectionEps = 1e-6;

// || q_hat/||q_hat|| - q ||_1 after flipping the normalized prediction to
// w >= 0. The flip multiplies by -1, so gradients flow through it. The
// target must already be canonical.
template <typename T>
ad::NodePtr<T> loss_rotation(ad::NodePtr<T> q_hat,
                             const geo::UnitQuaternion& q) {
  if (q_hat->value.size() != 4)
    throw ShapeMismatch("loss_rotation: prediction must be a 4-vector");
  auto nrm = ad::l2_norm(q_hat);
  if (nrm->value[0] <= static_cast<T>(kQuatNormEps))
    throw NearZeroQuaternion("predicted quaternion norm " +
                             std::to_string(static_cast<double>(nrm->value[0])));
  auto unit = ad::scale_by(q_hat, ad::reciprocal(nrm));
  if (unit->value[0] < T(0)) unit = ad::scalar_mul(unit, T(-1));
  auto target = ad::constant(ad::Tensor<T>::vec(
      {static_cast<T>(q.w), static_cast<T>(q.x), static_cast<T>(q.y),
       static_cast<T>(q.z)}));
  return ad::l1_norm(ad::sub(unit, target));
}

template <typename T>
ad::NodePtr<T> loss_translation(ad::NodePtr<T> t_hat,
                                const Eigen::Vector3d& t) {
  if (t_hat->value.size() != 3)
    throw ShapeMismatch("loss_translation: prediction must be a 3-vector");
  auto target = ad::constant(ad::Tensor<T>::vec(
      {static_cast<T>(t.x()), static_cast<T>(t.y()), static_cast<T>(t.z())}));
  return ad::l1_norm(ad::sub(t_hat, target));
}

// || t_hat/||t_hat|| - t/||t|| ||_2; throws DegenerateDirection when either
// direction is unreliable (callers skip the pair and count it).
template <typename T>
ad::NodePtr<T> loss_translation_normalized(ad::NodePtr<T> t_hat,
                                           const Eigen::Vector3d& t) {
  if (t_hat->value.size() != 3)
    throw ShapeMismatch("loss_translation_normalized: prediction must be a "
                        "3-vector");
  const double t_norm = t.norm();
  if (t_norm <= kDirectionEps)
    throw DegenerateDirection("ground-truth translation norm " +
                              std::to_string(t_norm));
  auto nrm = ad::l2_norm(t_hat);
  if (nrm->value[0] <= static_cast<T>(kDirectionEps))
    throw DegenerateDirection("predicted translation norm " +
                              std::to_string(static_cast<double>(nrm->value[0])));
  auto unit = ad::scale_by(t_hat, ad::reciprocal(nrm));
  const Eigen::Vector3d dir = t / t_norm;
  auto target = ad::constant(ad::Tensor<T>::vec(
      {static_cast<T>(dir.x()), static_cast<T>(dir.y()),
       static_cast<T>(dir.z())}));
  return ad::l2_norm(ad::sub(unit, target));
}

// Homoscedastic combination: sum of exp(-s) * L + s over the present terms.
template <typename T>
struct LossWeights {
  ad::NodePtr<T> s_q, s_t, s_tn;

  void init(ParamSet<T>& params) {
    s_q = params.add("loss/s_q", ad::Tensor<T>::zeros({1}));
    s_t = params.add("loss/s_t", ad::Tensor<T>::zeros({1}));
    s_tn = params.add("loss/s_tn", ad::Tensor<T>::zeros({1}));
  }
};

template <typename T>
ad::NodePtr<T> weighted_term(ad::NodePtr<T> loss, ad::NodePtr<T> s) {
  return ad::add(ad::mul(ad::exp(ad::scalar_mul(s, T(-1))), loss), s);
}

// l_tn may be null (degenerate-direction pair): its term is omitted whole.
template <typename T>
ad::NodePtr<T> loss_total(ad::NodePtr<T> l_q, ad::NodePtr<T> l_t,
                          ad::NodePtr<T> l_tn, const LossWeights<T>& w) {
  auto total = ad::add(weighted_term(l_q, w.s_q), weighted_term(l_t, w.s_t));
  if (l_tn) total = ad::add(total, weighted_term(l_tn, w.s_tn));
  return total;
}

}  // namespace relpose::net

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "relpose/extractor.hpp"
#include "relpose/error.hpp"
#include "test_util.hpp"

using namespace relpose;
using namespace relpose::net;
using relpose::testutil::grad_check;
using relpose::testutil::random_tensor;

namespace {

ExtractorConfig tiny_config() {
  ExtractorConfig cfg;
  cfg.in_channels = 1;
  cfg.channels = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.conv_width1 = 4;
  cfg.conv_width2 = 6;
  return cfg;
}

template <typename T>
ad::Tensor<T> random_image(Rng& rng, int h, int w) {
  ad::Tensor<T> img({1, h, w});
  for (int i = 0; i < img.size(); ++i)
    img[i] = static_cast<T>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("positional encoding basics") {
  const auto enc = positional_encoding<double>(3, 5, 8);
  const int quarter = 2;
  // sin channels vanish at their zero coordinate; cos channels are 1.
  for (int k = 0; k < quarter; ++k)
    for (int y = 0; y < 3; ++y) {
      CHECK(enc.at(k, y, 0) == 0.0);
      CHECK(enc.at(quarter + k, y, 0) == 1.0);
    }
  for (int k = 0; k < quarter; ++k)
    for (int x = 0; x < 5; ++x) {
      CHECK(enc.at(2 * quarter + k, 0, x) == 0.0);
      CHECK(enc.at(3 * quarter + k, 0, x) == 1.0);
    }
  // Pure function.
  const auto enc2 = positional_encoding<double>(3, 5, 8);
  CHECK(enc.data == enc2.data);

  CHECK_THROWS_AS(positional_encoding<double>(2, 2, 6), BadChannelCount);
}

TEST_CASE("positional encoding distinguishes all cells at toy sizes") {
  for (const auto [h, w] : {std::pair{8, 8}, std::pair{16, 13}, std::pair{64, 64}}) {
    const auto enc = positional_encoding<double>(h, w, 8);
    std::set<std::vector<double>> seen;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::vector<double> v(8);
        for (int c = 0; c < 8; ++c) v[static_cast<std::size_t>(c)] = enc.at(c, y, x);
        seen.insert(std::move(v));
      }
    CHECK(seen.size() == static_cast<std::size_t>(h) * w);
  }
}

TEST_CASE("grid shape is (C, floor(H/8), floor(W/8))") {
  ParamSet<double> params;
  Rng rng(1);
  Extractor<double> ext;
  ext.init(params, rng, tiny_config());
  Rng img_rng(2);
  for (const auto [h, w] : {std::pair{16, 16}, std::pair{17, 23}, std::pair{64, 24},
                            std::pair{41, 87}}) {
    auto a = ad::constant(random_image<double>(img_rng, h, w));
    auto b = ad::constant(random_image<double>(img_rng, h, w));
    const auto [ga, gb] = ext.extract_pair(a, b);
    CHECK(ga.channels == 8);
    CHECK(ga.h == h / 8);
    CHECK(ga.w == w / 8);
    CHECK(gb.features->value.shape ==
          std::vector<int>{8, h / 8, w / 8});
    CHECK(ga.features->value.all_finite());
  }
}

TEST_CASE("extract_pair rejects mismatched and undersized inputs") {
  ParamSet<double> params;
  Rng rng(3);
  Extractor<double> ext;
  ext.init(params, rng, tiny_config());
  auto a = ad::constant(ad::Tensor<double>({1, 16, 16}));
  auto b = ad::constant(ad::Tensor<double>({1, 16, 24}));
  CHECK_THROWS_AS(ext.extract_pair(a, b), ShapeMismatch);
  auto tiny = ad::constant(ad::Tensor<double>({1, 4, 16}));
  CHECK_THROWS_AS(ext.extract_pair(tiny, tiny), TooSmall);
}

TEST_CASE("identical images produce identical feature maps") {
  ParamSet<double> params;
  Rng rng(4);
  Extractor<double> ext;
  ext.init(params, rng, tiny_config());
  Rng img_rng(5);
  auto img = random_image<double>(img_rng, 24, 24);
  const auto [ga, gb] =
      ext.extract_pair(ad::constant(img), ad::constant(img));
  CHECK(ga.features->value.data == gb.features->value.data);
}

TEST_CASE("extract_pair is symmetric under swapping the pair") {
  ParamSet<double> params;
  Rng rng(6);
  Extractor<double> ext;
  ext.init(params, rng, tiny_config());
  Rng img_rng(7);
  auto a = random_image<double>(img_rng, 24, 16);
  auto b = random_image<double>(img_rng, 24, 16);
  for (auto tap : {FeatureTap::kFinal, FeatureTap::kAfterFirstSelfAttn,
                   FeatureTap::kCnnOnly}) {
    const auto [ga, gb] =
        ext.extract_pair(ad::constant(a), ad::constant(b), tap);
    const auto [gb2, ga2] =
        ext.extract_pair(ad::constant(b), ad::constant(a), tap);
    CHECK(ga.features->value.data == ga2.features->value.data);
    CHECK(gb.features->value.data == gb2.features->value.data);
  }
}

TEST_CASE("cnn_only tap sees no cross-talk from the other image") {
  ParamSet<double> params;
  Rng rng(8);
  Extractor<double> ext;
  ext.init(params, rng, tiny_config());
  Rng img_rng(9);
  auto a = random_image<double>(img_rng, 16, 16);
  auto b1 = random_image<double>(img_rng, 16, 16);
  auto b2 = random_image<double>(img_rng, 16, 16);
  const auto [fa1, unused1] = ext.extract_pair(
      ad::constant(a), ad::constant(b1), FeatureTap::kCnnOnly);
  const auto [fa2, unused2] = ext.extract_pair(
      ad::constant(a), ad::constant(b2), FeatureTap::kCnnOnly);
  CHECK(fa1.features->value.data == fa2.features->value.data);

  // The final tap does cross-talk (cross-attention is in the loop).
  const auto [fin1, u3] =
      ext.extract_pair(ad::constant(a), ad::constant(b1), FeatureTap::kFinal);
  const auto [fin2, u4] =
      ext.extract_pair(ad::constant(a), ad::constant(b2), FeatureTap::kFinal);
  CHECK(fin1.features->value.data != fin2.features->value.data);
}

TEST_CASE("taps differ from each other and from the final output") {
  ParamSet<double> params;
  Rng rng(10);
  Extractor<double> ext;
  ext.init(params, rng, tiny_config());
  Rng img_rng(11);
  auto a = random_image<double>(img_rng, 16, 16);
  auto b = random_image<double>(img_rng, 16, 16);
  const auto cnn = ext.extract_pair(ad::constant(a), ad::constant(b),
                                    FeatureTap::kCnnOnly);
  const auto self1 = ext.extract_pair(ad::constant(a), ad::constant(b),
                                      FeatureTap::kAfterFirstSelfAttn);
  const auto fin = ext.extract_pair(ad::constant(a), ad::constant(b),
                                    FeatureTap::kFinal);
  CHECK(cnn.first.features->value.data != self1.first.features->value.data);
  CHECK(self1.first.features->value.data != fin.first.features->value.data);
}

TEST_CASE("attention weights collapse to the single kv cell") {
  // With one kv token the softmax weight is forced to 1, so the attention
  // message equals the projected value of that cell for every query; the
  // layer output must match a manual composition using the layer's params.
  ParamSet<double> params;
  Rng rng(12);
  AttentionLayer<double> layer;
  layer.init(params, rng, "attn", 4, 2);

  Rng data_rng(13);
  auto queries = ad::leaf(random_tensor(data_rng, {3, 4}));
  auto kv = ad::leaf(random_tensor(data_rng, {1, 4}));
  const auto out = layer(queries, kv);

  // Manual route with plain loops over the parameter values.
  auto matvec = [](const ad::Tensor<double>& w, const ad::Tensor<double>& b,
                   const std::vector<double>& x) {
    std::vector<double> y(static_cast<std::size_t>(w.dim(0)));
    for (int o = 0; o < w.dim(0); ++o) {
      double acc = b[o];
      for (int i = 0; i < w.dim(1); ++i)
        acc += w.at(o, i) * x[static_cast<std::size_t>(i)];
      y[static_cast<std::size_t>(o)] = acc;
    }
    return y;
  };
  const std::vector<double> kv_row(kv->value.data.begin(),
                                   kv->value.data.end());
  std::vector<double> value_cat;
  for (int h = 0; h < 2; ++h) {
    const auto vh = matvec(layer.v_proj[static_cast<std::size_t>(h)].weight->value,
                           layer.v_proj[static_cast<std::size_t>(h)].bias->value, kv_row);
    value_cat.insert(value_cat.end(), vh.begin(), vh.end());
  }
  const auto message =
      matvec(layer.out_proj.weight->value, layer.out_proj.bias->value,
             value_cat);
  for (int r = 0; r < 3; ++r) {
    std::vector<double> h1(4);
    for (int c = 0; c < 4; ++c)
      h1[static_cast<std::size_t>(c)] =
          queries->value.at(r, c) + message[static_cast<std::size_t>(c)];
    auto f1 = matvec(layer.ffn1.weight->value, layer.ffn1.bias->value, h1);
    for (auto& v : f1) v = std::max(0.0, v);
    const auto f2 = matvec(layer.ffn2.weight->value, layer.ffn2.bias->value, f1);
    std::vector<double> h2(4);
    for (int c = 0; c < 4; ++c)
      h2[static_cast<std::size_t>(c)] = h1[static_cast<std::size_t>(c)] +
                                        f2[static_cast<std::size_t>(c)];
    double mu = 0;
    for (double v : h2) mu += v;
    mu /= 4;
    double var = 0;
    for (double v : h2) var += (v - mu) * (v - mu);
    var /= 4;
    for (int c = 0; c < 4; ++c) {
      const double xhat = (h2[static_cast<std::size_t>(c)] - mu) /
                          std::sqrt(var + 1e-5);
      const double expected =
          layer.norm_gamma->value[c] * xhat + layer.norm_beta->value[c];
      CHECK(out->value.at(r, c) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention layer gradient matches finite differences") {
  ParamSet<double> params;
  Rng rng(14);
  AttentionLayer<double> layer;
  layer.init(params, rng, "attn", 4, 2);
  Rng data_rng(15);
  auto queries = ad::leaf(random_tensor(data_rng, {3, 4}));
  auto kv = ad::leaf(random_tensor(data_rng, {2, 4}));

  std::vector<ad::NodePtr<double>> leaves = {queries, kv};
  for (auto& n : params.nodes) leaves.push_back(n);
  const auto res = grad_check(leaves, [&] {
    Rng p(16);
    auto w = ad::constant(random_tensor(p, {3, 4}));
    return ad::sum(ad::mul(layer(queries, kv), w));
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("outputs stay finite for inputs in [0,1]") {
  ParamSet<float> params;
  Rng rng(17);
  Extractor<float> ext;
  ext.init(params, rng, tiny_config());
  Rng img_rng(18);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_image<float>(img_rng, 32, 24);
    auto b = random_image<float>(img_rng, 32, 24);
    const auto [ga, gb] =
        ext.extract_pair(ad::constant(a), ad::constant(b));
    CHECK(ga.features->value.all_finite());
    CHECK(gb.features->value.all_finite());
  }
}

TEST_CASE("config validation") {
  ExtractorConfig cfg = tiny_config();
  cfg.channels = 6;
  CHECK_THROWS_AS(cfg.validate(), BadChannelCount);
  cfg = tiny_config();
  cfg.layers = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

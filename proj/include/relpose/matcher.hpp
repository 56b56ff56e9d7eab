#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "relpose/autodiff.hpp"
#include "relpose/error.hpp"
#include "relpose/extractor.hpp"

namespace relpose::net {

// Hard match per source cell: the argmax column of its correlation row
// (ties resolved to the lowest index) and the row-softmax value there.
struct CorrespondenceMap {
  int h = 0, w = 0;               // grid dims (shared by both images)
  std::vector<int> match_index;   // n entries in [0, n)
  std::vector<double> confidence; // n entries in (0, 1)
};

// corr(i, j) = F_A(x_i) . F_B(x_j), raw dot products over the token rows.
template <typename T>
ad::NodePtr<T> correlate(const FeatureGrid<T>& grid_a,
                         const FeatureGrid<T>& grid_b) {
  if (grid_a.channels != grid_b.channels || grid_a.h != grid_b.h ||
      grid_a.w != grid_b.w)
    throw ShapeMismatch("correlate: grids (" + std::to_string(grid_a.channels) +
                        "," + std::to_string(grid_a.h) + "," +
                        std::to_string(grid_a.w) + ") vs (" +
                        std::to_string(grid_b.channels) + "," +
                        std::to_string(grid_b.h) + "," +
                        std::to_string(grid_b.w) + ")");
  return ad::matmul(grid_a.tokens(), ad::transpose2d(grid_b.tokens()));
}

// Value-level matching; the temperature scales the confidence softmax only,
// never the argmax.
template <typename T>
CorrespondenceMap match(const ad::Tensor<T>& corr, int h, int w,
                        double temperature = 1.0) {
  if (corr.ndim() != 2 || corr.dim(0) != h * w || corr.dim(1) != h * w)
    throw ShapeMismatch("match: correlation must be (" +
                        std::to_string(h * w) + ", " + std::to_string(h * w) +
                        "), got " + ad::shape_str(corr.shape));
  if (!corr.all_finite())
    throw NonFiniteValue("match: correlation matrix has NaN/Inf");
  const int n = h * w;
  CorrespondenceMap cmap;
  cmap.h = h;
  cmap.w = w;
  cmap.match_index.resize(static_cast<std::size_t>(n));
  cmap.confidence.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* row = &corr.at(i, 0);
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (row[j] > row[best]) best = j;
    cmap.match_index[static_cast<std::size_t>(i)] = best;
    // Row softmax at the matched index, computed against the row max for
    // stability (the matched entry IS the max, so its shifted logit is 0).
    double denom = 0;
    const double mx = static_cast<double>(row[best]);
    for (int j = 0; j < n; ++j)
      denom += std::exp((static_cast<double>(row[j]) - mx) / temperature);
    cmap.confidence[static_cast<std::size_t>(i)] = 1.0 / denom;
  }
  return cmap;
}

// Normalized cell-center coordinate channels, (n, 2) as (x, y) with
// x = col/(w-1), y = row/(h-1); single-cell axes map to 0.
template <typename T>
ad::Tensor<T> normalized_cell_coords(int h, int w) {
  ad::Tensor<T> c({h * w, 2});
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col) {
      const int i = row * w + col;
      c.at(i, 0) = w > 1 ? static_cast<T>(col) / static_cast<T>(w - 1) : T(0);
      c.at(i, 1) = h > 1 ? static_cast<T>(row) / static_cast<T>(h - 1) : T(0);
    }
  return c;
}

// Value-level warp: builds the (2C+5, h, w) correspondence map
// [F_A(x_i), x_i, F_B(x_i*), x_i*, conf(x_i*)] from plain tensors.
template <typename T>
ad::Tensor<T> warp(const ad::Tensor<T>& features_a,
                   const ad::Tensor<T>& features_b,
                   const CorrespondenceMap& cmap) {
  if (features_a.ndim() != 3 || !features_a.same_shape(features_b))
    throw ShapeMismatch("warp: feature maps must share (C,h,w)");
  const int c = features_a.dim(0), h = features_a.dim(1), w = features_a.dim(2);
  if (h != cmap.h || w != cmap.w ||
      cmap.match_index.size() != static_cast<std::size_t>(h) * w)
    throw ShapeMismatch("warp: correspondence map does not match grid");
  const int n = h * w;
  for (int idx : cmap.match_index)
    if (idx < 0 || idx >= n)
      throw IndexOutOfRange("warp: match index " + std::to_string(idx));
  const ad::Tensor<T> coords = normalized_cell_coords<T>(h, w);
  ad::Tensor<T> out({2 * c + 5, h, w});
  for (int i = 0; i < n; ++i) {
    const int y = i / w, x = i % w;
    const int j = cmap.match_index[static_cast<std::size_t>(i)];
    for (int ch = 0; ch < c; ++ch) {
      out.at(ch, y, x) = features_a.at(ch, y, x);
      out.at(c + 2 + ch, y, x) = features_b.at(ch, j / w, j % w);
    }
    out.at(c, y, x) = coords.at(i, 0);
    out.at(c + 1, y, x) = coords.at(i, 1);
    out.at(2 * c + 2, y, x) = coords.at(j, 0);
    out.at(2 * c + 3, y, x) = coords.at(j, 1);
    out.at(2 * c + 4, y, x) =
        static_cast<T>(cmap.confidence[static_cast<std::size_t>(i)]);
  }
  return out;
}

template <typename T>
struct WarpResult {
  ad::NodePtr<T> warped;  // (2C+5, h, w)
  CorrespondenceMap cmap;
};

// Graph route used by the training pipeline. The argmax is index selection
// with no gradient; gradients flow into F_A directly, into F_B through the
// row gather, and into the confidence through the softmax.
template <typename T>
WarpResult<T> match_and_warp(const FeatureGrid<T>& grid_a,
                             const FeatureGrid<T>& grid_b,
                             double temperature = 1.0) {
  auto corr = correlate(grid_a, grid_b);
  const int h = grid_a.h, w = grid_a.w, n = h * w;
  CorrespondenceMap cmap = match(corr->value, h, w, temperature);

  auto tokens_a = grid_a.tokens();
  auto tokens_b = grid_b.tokens();
  auto soft = ad::softmax(
      ad::scalar_mul(corr, static_cast<T>(1.0 / temperature)), 1);
  std::vector<int> flat_idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    flat_idx[static_cast<std::size_t>(i)] =
        i * n + cmap.match_index[static_cast<std::size_t>(i)];
  auto conf = ad::gather(ad::reshape(soft, {n * n, 1}), flat_idx);  // (n, 1)

  auto coords_a = ad::constant(normalized_cell_coords<T>(h, w));
  ad::Tensor<T> coords_b_matched({n, 2});
  {
    const ad::Tensor<T> coords = normalized_cell_coords<T>(h, w);
    for (int i = 0; i < n; ++i) {
      const int j = cmap.match_index[static_cast<std::size_t>(i)];
      coords_b_matched.at(i, 0) = coords.at(j, 0);
      coords_b_matched.at(i, 1) = coords.at(j, 1);
    }
  }
  auto warped_tokens = ad::concat<T>(
      {tokens_a, coords_a, ad::gather(tokens_b, cmap.match_index),
       ad::constant(std::move(coords_b_matched)), conf},
      1);  // (n, 2C+5)
  auto warped = ad::reshape(ad::transpose2d(warped_tokens),
                            {2 * grid_a.channels + 5, h, w});
  return {warped, std::move(cmap)};
}

// Ablation variant: no matching, F_B taken at the aligned cell, both
// coordinate blocks equal, confidence pinned to 1. Keeps the 2C+5 layout so
// the regressor is unchanged.
template <typename T>
ad::NodePtr<T> aligned_concat(const FeatureGrid<T>& grid_a,
                              const FeatureGrid<T>& grid_b) {
  if (grid_a.channels != grid_b.channels || grid_a.h != grid_b.h ||
      grid_a.w != grid_b.w)
    throw ShapeMismatch("aligned_concat: grid shapes differ");
  const int h = grid_a.h, w = grid_a.w, n = h * w;
  auto coords = ad::constant(normalized_cell_coords<T>(h, w));
  auto ones = ad::constant(ad::Tensor<T>::full({n, 1}, T(1)));
  auto tokens = ad::concat<T>(
      {grid_a.tokens(), coords, grid_b.tokens(), coords, ones}, 1);
  return ad::reshape(ad::transpose2d(tokens), {2 * grid_a.channels + 5, h, w});
}

// Debug dump: one line per source cell.
template <typename T>
std::string correspondence_csv(const CorrespondenceMap& cmap) {
  std::string out = "i,row,col,match_row,match_col,confidence\n";
  char line[128];
  for (std::size_t i = 0; i < cmap.match_index.size(); ++i) {
    const int j = cmap.match_index[i];
    std::snprintf(line, sizeof(line), "%zu,%d,%d,%d,%d,%.9f\n", i,
                  static_cast<int>(i) / cmap.w, static_cast<int>(i) % cmap.w,
                  j / cmap.w, j % cmap.w, cmap.confidence[i]);
    out += line;
  }
  return out;
}

}  // namespace relpose::net

#pragma once

// Brute-force reference implementations used only by tests. These stay
// deliberately independent of the library code paths they check: plain loops,
// no shared helpers beyond the tensor container.

#include <algorithm>
#include <cmath>
#include <vector>

#include "vitlab/tensor.hpp"

namespace oracles {

// Mean attention received per column: explicit triple loop over heads and
// query rows of a [H x S x S] tensor, then patch columns only.
inline std::vector<double> pooled_attention(const vitlab::Tensor& attn, int64_t patch0,
                                            int64_t num_patches) {
  const int64_t h = attn.dim(0), s = attn.dim(1);
  std::vector<double> out(static_cast<size_t>(num_patches), 0.0);
  for (int64_t t = 0; t < num_patches; ++t) {
    double acc = 0.0;
    for (int64_t head = 0; head < h; ++head) {
      for (int64_t q = 0; q < s; ++q) {
        acc += attn.at((head * s + q) * s + patch0 + t);
      }
    }
    out[static_cast<size_t>(t)] = acc / static_cast<double>(h * s);
  }
  return out;
}

// Per-token mean neighbor cosine with explicit neighbor enumeration.
inline std::vector<double> neighbor_cosines(const std::vector<double>& emb, int64_t grid,
                                            int64_t dim) {
  auto cosine = [&](int64_t a, int64_t b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t c = 0; c < dim; ++c) {
      const double va = emb[static_cast<size_t>(a * dim + c)];
      const double vb = emb[static_cast<size_t>(b * dim + c)];
      dot += va * vb;
      na += va * va;
      nb += vb * vb;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  std::vector<double> out(static_cast<size_t>(grid * grid));
  for (int64_t r = 0; r < grid; ++r) {
    for (int64_t c = 0; c < grid; ++c) {
      const int64_t t = r * grid + c;
      std::vector<int64_t> neighbors;
      if (r > 0) neighbors.push_back(t - grid);
      if (r + 1 < grid) neighbors.push_back(t + grid);
      if (c > 0) neighbors.push_back(t - 1);
      if (c + 1 < grid) neighbors.push_back(t + 1);
      double acc = 0.0;
      for (int64_t nb : neighbors) acc += cosine(t, nb);
      out[static_cast<size_t>(t)] = acc / static_cast<double>(neighbors.size());
    }
  }
  return out;
}

// Rank-based outlier reference: exactly the tokens whose sorted rank lies in
// the top (100-q)% region, with the linear-interpolation cut recomputed from
// first principles.
inline double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * (static_cast<double>(values.size()) - 1.0);
  const size_t lo = static_cast<size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (pos - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

inline std::vector<char> outlier_mask(const std::vector<double>& values, double q) {
  const double tau = percentile(values, q);
  std::vector<char> mask(values.size());
  for (size_t i = 0; i < values.size(); ++i) mask[i] = values[i] > tau ? 1 : 0;
  return mask;
}

}  // namespace oracles

#include "vitlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vitlab/rng.hpp"

namespace vitlab {

namespace {

double row_norm(std::span<const double> data, int64_t row, int64_t width) {
  double acc = 0.0;
  for (int64_t c = 0; c < width; ++c) {
    const double v = data[static_cast<size_t>(row * width + c)];
    acc += v * v;
  }
  return std::sqrt(acc);
}

}  // namespace

MapGrid feature_map(const Activations& acts) {
  if (!acts.tokens_pre_ln.defined()) throw ContractError("feature_map: tokens not captured");
  const int64_t g = acts.grid;
  const int64_t d = acts.config.embed_dim;
  const int64_t patch0 = acts.patch_row_begin();
  MapGrid map;
  map.grid = g;
  map.kind = MapKind::feature;
  map.block = acts.config.depth - 1;
  map.values.resize(static_cast<size_t>(g * g));
  auto tokens = acts.tokens_pre_ln.data();
  for (int64_t t = 0; t < g * g; ++t) {
    map.values[static_cast<size_t>(t)] = row_norm(tokens, patch0 + t, d);
  }
  return map;
}

AttentionMapCls attention_map_cls(const Activations& acts) {
  if (!acts.config.use_cls) {
    throw ContractError("attention_map_cls: model has no [CLS] token (pooled mode)");
  }
  const int64_t last = acts.config.depth - 1;
  const Tensor& attn = acts.attention[static_cast<size_t>(last)];
  if (!attn.defined()) throw ContractError("attention_map_cls: final-block attention not captured");
  const int64_t heads = attn.dim(0);
  const int64_t s = attn.dim(1);
  const int64_t r = acts.config.num_registers;
  const int64_t n = acts.num_patches();

  // Head-average of the [CLS] query row (row 0).
  std::vector<double> cls_row(static_cast<size_t>(s), 0.0);
  auto a = attn.data();
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t col = 0; col < s; ++col) {
      cls_row[static_cast<size_t>(col)] += a[static_cast<size_t>(h * s * s + col)];
    }
  }
  for (double& v : cls_row) v /= static_cast<double>(heads);

  AttentionMapCls out;
  out.cls_score = cls_row[0];
  for (int64_t i = 0; i < r; ++i) out.register_scores.push_back(cls_row[static_cast<size_t>(1 + i)]);
  out.grid.grid = acts.grid;
  out.grid.kind = MapKind::attention;
  out.grid.block = last;
  out.grid.values.assign(cls_row.begin() + 1 + r, cls_row.begin() + 1 + r + n);
  return out;
}

MapGrid attention_map_pooled(const Activations& acts) {
  const int64_t last = acts.config.depth - 1;
  const Tensor& attn = acts.attention[static_cast<size_t>(last)];
  if (!attn.defined()) {
    throw ContractError("attention_map_pooled: final-block attention not captured");
  }
  const int64_t heads = attn.dim(0);
  const int64_t s = attn.dim(1);
  const int64_t patch0 = acts.patch_row_begin();
  const int64_t n = acts.num_patches();

  std::vector<double> received(static_cast<size_t>(s), 0.0);
  auto a = attn.data();
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t q = 0; q < s; ++q) {
      for (int64_t col = 0; col < s; ++col) {
        received[static_cast<size_t>(col)] += a[static_cast<size_t>((h * s + q) * s + col)];
      }
    }
  }
  const double denom = static_cast<double>(heads * s);
  MapGrid map;
  map.grid = acts.grid;
  map.kind = MapKind::attention;
  map.block = last;
  map.values.resize(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t) {
    map.values[static_cast<size_t>(t)] = received[static_cast<size_t>(patch0 + t)] / denom;
  }
  return map;
}

void AnalysisConfig::validate() const {
  if (sample_n < 1) throw ContractError("analysis.sample_n must be >= 1");
  if (percentile <= 0.0 || percentile >= 100.0) {
    throw ContractError("analysis.percentile must be in (0, 100)");
  }
}

std::vector<double> TokenStats::pooled() const {
  std::vector<double> out;
  for (const auto& image_norms : norms) {
    out.insert(out.end(), image_norms.begin(), image_norms.end());
  }
  return out;
}

size_t TokenStats::total_tokens() const {
  size_t n = 0;
  for (const auto& image_norms : norms) n += image_norms.size();
  return n;
}

size_t TokenStats::total_outliers() const {
  size_t n = 0;
  for (const auto& mask : outlier) {
    for (char m : mask) n += m ? 1 : 0;
  }
  return n;
}

double percentile_linear(std::span<const double> values, double q) {
  if (values.empty()) throw ContractError("percentile: empty input");
  if (q <= 0.0 || q >= 100.0) throw ContractError("percentile: q must be in (0, 100)");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = (static_cast<double>(sorted.size()) - 1.0) * q / 100.0;
  const size_t lo = static_cast<size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

ThresholdResult outlier_threshold(std::span<const double> norms, double q) {
  ThresholdResult out;
  out.tau = percentile_linear(norms, q);
  out.mask.resize(norms.size());
  for (size_t i = 0; i < norms.size(); ++i) out.mask[i] = norms[i] > out.tau ? 1 : 0;
  return out;
}

TokenStats norm_distribution(const ViTModel& model, const Dataset& dataset, int64_t sample_n,
                             uint64_t seed, double q) {
  if (dataset.size() == 0) throw ContractError("norm_distribution: empty dataset");
  if (sample_n < 1) throw ContractError("norm_distribution: sample_n must be >= 1");
  Rng rng(seed);
  TokenStats stats;
  stats.percentile_q = q;
  stats.sampled_items = rng.sample_indices(dataset.size(), static_cast<size_t>(sample_n));

  for (size_t idx : stats.sampled_items) {
    Activations acts = forward(model, dataset.image(idx));
    const int64_t n = acts.num_patches();
    const int64_t patch0 = acts.patch_row_begin();
    auto tokens = acts.tokens_pre_ln.data();
    std::vector<double> image_norms(static_cast<size_t>(n));
    for (int64_t t = 0; t < n; ++t) {
      image_norms[static_cast<size_t>(t)] = row_norm(tokens, patch0 + t, acts.config.embed_dim);
    }
    stats.norms.push_back(std::move(image_norms));
  }

  const std::vector<double> pooled = stats.pooled();
  ThresholdResult th = outlier_threshold(pooled, q);
  stats.threshold = th.tau;
  size_t at = 0;
  for (const auto& image_norms : stats.norms) {
    stats.outlier.emplace_back(th.mask.begin() + static_cast<long>(at),
                               th.mask.begin() + static_cast<long>(at + image_norms.size()));
    at += image_norms.size();
  }

  // Fixed-width histogram over the observed range.
  const auto [mn_it, mx_it] = std::minmax_element(pooled.begin(), pooled.end());
  double lo = *mn_it, hi = *mx_it;
  if (lo == hi) hi = lo + 1.0;  // degenerate sample still gets a valid range
  stats.hist_edges.resize(kNormHistogramBins + 1);
  for (int64_t i = 0; i <= kNormHistogramBins; ++i) {
    stats.hist_edges[static_cast<size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kNormHistogramBins);
  }
  stats.hist_counts.assign(kNormHistogramBins, 0);
  for (double v : pooled) {
    int64_t bin = static_cast<int64_t>((v - lo) / (hi - lo) * kNormHistogramBins);
    bin = std::min<int64_t>(kNormHistogramBins - 1, std::max<int64_t>(0, bin));
    ++stats.hist_counts[static_cast<size_t>(bin)];
  }
  return stats;
}

std::vector<double> neighbor_cosines(const Tensor& patch_embeddings, int64_t grid,
                                     size_t* zero_pairs, bool include_edges) {
  if (grid < 2) throw ContractError("neighbor_cosines: grid must be >= 2");
  if (patch_embeddings.rank() != 2 || patch_embeddings.dim(0) != grid * grid) {
    throw ShapeError("neighbor_cosines: embeddings " + format_dims(patch_embeddings.dims()) +
                     " do not match grid " + std::to_string(grid));
  }
  const int64_t d = patch_embeddings.dim(1);
  auto data = patch_embeddings.data();
  std::vector<double> norms(static_cast<size_t>(grid * grid));
  for (int64_t t = 0; t < grid * grid; ++t) norms[static_cast<size_t>(t)] = row_norm(data, t, d);

  size_t zeros = 0;
  auto pair_cos = [&](int64_t a, int64_t b) {
    const double na = norms[static_cast<size_t>(a)];
    const double nb = norms[static_cast<size_t>(b)];
    if (na == 0.0 || nb == 0.0) {
      ++zeros;
      return 0.0;  // degenerate pair, defined as 0 and counted
    }
    double dot = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      dot += data[static_cast<size_t>(a * d + c)] * data[static_cast<size_t>(b * d + c)];
    }
    return dot / (na * nb);
  };

  std::vector<double> out(static_cast<size_t>(grid * grid));
  for (int64_t r = 0; r < grid; ++r) {
    for (int64_t c = 0; c < grid; ++c) {
      const int64_t t = r * grid + c;
      const bool edge = r == 0 || c == 0 || r + 1 == grid || c + 1 == grid;
      if (edge && !include_edges) {
        out[static_cast<size_t>(t)] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double acc = 0.0;
      int count = 0;
      if (r > 0) { acc += pair_cos(t, t - grid); ++count; }
      if (r + 1 < grid) { acc += pair_cos(t, t + grid); ++count; }
      if (c > 0) { acc += pair_cos(t, t - 1); ++count; }
      if (c + 1 < grid) { acc += pair_cos(t, t + 1); ++count; }
      out[static_cast<size_t>(t)] = acc / static_cast<double>(count);
    }
  }
  if (zero_pairs) *zero_pairs = zeros;
  return out;
}

double CosineSplit::mean_outlier() const {
  if (outlier.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double v : outlier) acc += v;
  return acc / static_cast<double>(outlier.size());
}

double CosineSplit::mean_normal() const {
  if (normal.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double v : normal) acc += v;
  return acc / static_cast<double>(normal.size());
}

CosineSplit split_by_mask(std::span<const double> values, std::span<const char> mask) {
  if (values.size() != mask.size()) {
    throw ShapeError("split_by_mask: " + std::to_string(values.size()) + " values vs " +
                     std::to_string(mask.size()) + " mask entries");
  }
  CosineSplit split;
  for (size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;  // edge tokens under the interior-only flag
    (mask[i] ? split.outlier : split.normal).push_back(values[i]);
  }
  return split;
}

CosineSplit neighbor_cosine(const Tensor& patch_embeddings, int64_t grid,
                            std::span<const char> mask) {
  size_t zeros = 0;
  std::vector<double> values = neighbor_cosines(patch_embeddings, grid, &zeros);
  CosineSplit split = split_by_mask(values, mask);
  split.zero_pairs = zeros;
  return split;
}

MapGrid qkv_block_maps(const Activations& acts, int64_t block, QkvMap which) {
  if (block < 0 || block >= acts.config.depth) {
    throw ContractError("qkv_block_maps: block " + std::to_string(block) + " out of range [0, " +
                        std::to_string(acts.config.depth) + ")");
  }
  const Tensor* source = nullptr;
  switch (which) {
    case QkvMap::query: source = &acts.q_merged[static_cast<size_t>(block)]; break;
    case QkvMap::key: source = &acts.k_merged[static_cast<size_t>(block)]; break;
    case QkvMap::value: source = &acts.v_merged[static_cast<size_t>(block)]; break;
    case QkvMap::output: source = &acts.block_tokens[static_cast<size_t>(block)]; break;
  }
  if (!source->defined()) throw ContractError("qkv_block_maps: capture missing for block");
  const int64_t g = acts.grid;
  const int64_t d = acts.config.embed_dim;
  const int64_t patch0 = acts.patch_row_begin();
  MapGrid map;
  map.grid = g;
  map.kind = MapKind::qkv;
  map.block = block;
  map.values.resize(static_cast<size_t>(g * g));
  auto data = source->data();
  for (int64_t t = 0; t < g * g; ++t) {
    map.values[static_cast<size_t>(t)] = row_norm(data, patch0 + t, d);
  }
  return map;
}

double bimodality_coefficient(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  if (values.size() < 4) throw ContractError("bimodality_coefficient: need at least 4 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 == 0.0) throw ContractError("bimodality_coefficient: constant sample");
  const double g1 = m3 / std::pow(m2, 1.5);
  const double g2 = m4 / (m2 * m2) - 3.0;
  // Bias-corrected sample skewness / excess kurtosis (SAS convention).
  const double skew = g1 * std::sqrt(n * (n - 1.0)) / (n - 2.0);
  const double kurt = ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
  const double denom = kurt + 3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
  return (skew * skew + 1.0) / denom;
}

std::vector<unsigned char> render_map(const MapGrid& grid, int64_t out_px) {
  if (grid.grid < 1) throw ContractError("render_map: empty grid");
  if (out_px < grid.grid) {
    throw ContractError("render_map: out_px " + std::to_string(out_px) + " smaller than grid " +
                        std::to_string(grid.grid));
  }
  const auto [mn_it, mx_it] = std::minmax_element(grid.values.begin(), grid.values.end());
  const double lo = *mn_it, hi = *mx_it;
  std::vector<double> pixels(static_cast<size_t>(out_px * out_px));
  for (int64_t y = 0; y < out_px; ++y) {
    const int64_t gy = y * grid.grid / out_px;
    for (int64_t x = 0; x < out_px; ++x) {
      const int64_t gx = x * grid.grid / out_px;
      const double v = grid.at(gy, gx);
      pixels[static_cast<size_t>(y * out_px + x)] = (hi > lo) ? (v - lo) / (hi - lo) : 128.0 / 255.0;
    }
  }
  return encode_pgm(pixels, out_px, out_px);
}

std::string token_stats_csv(const TokenStats& stats,
                            const std::vector<std::vector<double>>& cosines) {
  if (!cosines.empty() && cosines.size() != stats.norms.size()) {
    throw ShapeError("token_stats_csv: cosine rows do not match sampled images");
  }
  std::ostringstream out;
  out << "image_id,token_idx,norm,is_outlier,mean_neighbor_cos\n";
  out.precision(17);
  for (size_t i = 0; i < stats.norms.size(); ++i) {
    for (size_t t = 0; t < stats.norms[i].size(); ++t) {
      out << stats.sampled_items[i] << ',' << t << ',' << stats.norms[i][t] << ','
          << (stats.outlier[i][t] ? 1 : 0) << ',';
      if (!cosines.empty()) out << cosines[i][t];
      out << '\n';
    }
  }
  return out.str();
}

std::string histogram_csv(const TokenStats& stats) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,count\n";
  out.precision(17);
  for (size_t i = 0; i < stats.hist_counts.size(); ++i) {
    out << stats.hist_edges[i] << ',' << stats.hist_edges[i + 1] << ',' << stats.hist_counts[i]
        << '\n';
  }
  return out.str();
}

}  // namespace vitlab

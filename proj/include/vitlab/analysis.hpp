#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vitlab/data.hpp"
#include "vitlab/vit.hpp"

namespace vitlab {

enum class MapKind { feature, attention, qkv };

// Square per-token value grid in row-major patch order.
struct MapGrid {
  int64_t grid = 0;
  std::vector<double> values;
  MapKind kind = MapKind::feature;
  int64_t block = -1;

  double& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * grid + c)]; }
  double at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * grid + c)]; }
};

// L2 norms of the pre-final-LayerNorm output patch tokens.
MapGrid feature_map(const Activations& acts);

// Final-block [CLS]-row attention over patch columns, head-averaged. The
// [CLS] and register columns are returned as scalars, never in the grid.
struct AttentionMapCls {
  MapGrid grid;
  double cls_score = 0.0;
  std::vector<double> register_scores;
};
AttentionMapCls attention_map_cls(const Activations& acts);

// Final-block attention received by each patch token, averaged over heads
// and every query row ([CLS]-free architectures).
MapGrid attention_map_pooled(const Activations& acts);

struct AnalysisConfig {
  int64_t sample_n = 5000;
  double percentile = 98.0;
  uint64_t seed = 42;
  void validate() const;
};

// Pooled per-model norm statistics over a seeded image subsample.
struct TokenStats {
  double percentile_q = 98.0;
  double threshold = 0.0;
  std::vector<size_t> sampled_items;           // dataset indices, sample order
  std::vector<std::vector<double>> norms;      // per sampled image, per patch token
  std::vector<std::vector<char>> outlier;      // masks aligned with `norms`
  std::vector<double> hist_edges;              // 257 edges over the data range
  std::vector<int64_t> hist_counts;            // 256 bins

  std::vector<double> pooled() const;
  size_t total_tokens() const;
  size_t total_outliers() const;
};

inline constexpr int64_t kNormHistogramBins = 256;

TokenStats norm_distribution(const ViTModel& model, const Dataset& dataset, int64_t sample_n,
                             uint64_t seed, double q = 98.0);

// Linear-interpolation percentile over the pooled sample; tokens are flagged
// iff norm > tau (strict, so constant samples yield no outliers).
struct ThresholdResult {
  double tau = 0.0;
  std::vector<char> mask;
};
ThresholdResult outlier_threshold(std::span<const double> norms, double q);
double percentile_linear(std::span<const double> values, double q);  // q in (0,100)

// Mean cosine similarity between each patch embedding and its available
// 4-neighborhood (2-3 neighbors at edges). A zero-vector pair contributes
// cosine 0 and is counted in zero_pairs. With include_edges=false, boundary
// tokens get NaN and are dropped by split_by_mask.
std::vector<double> neighbor_cosines(const Tensor& patch_embeddings, int64_t grid,
                                     size_t* zero_pairs = nullptr, bool include_edges = true);

struct CosineSplit {
  std::vector<double> outlier;
  std::vector<double> normal;
  size_t zero_pairs = 0;
  double mean_outlier() const;
  double mean_normal() const;
};
CosineSplit split_by_mask(std::span<const double> values, std::span<const char> mask);
CosineSplit neighbor_cosine(const Tensor& patch_embeddings, int64_t grid,
                            std::span<const char> mask);

// Per-token L2 norms of the selected per-block tensor, patch rows only.
enum class QkvMap { query, key, value, output };
MapGrid qkv_block_maps(const Activations& acts, int64_t block, QkvMap which);

// Sarle's bimodality coefficient with bias-corrected sample moments; values
// above 5/9 indicate a bimodal distribution. Requires n >= 4.
double bimodality_coefficient(std::span<const double> values);
inline constexpr double kBimodalityThreshold = 5.0 / 9.0;
inline bool is_bimodal(double bc) { return bc > kBimodalityThreshold; }

// Min-max normalized (constant grid renders mid-gray), nearest-neighbor
// upscaled to out_px, emitted as binary PGM. Requires out_px >= grid.
std::vector<unsigned char> render_map(const MapGrid& grid, int64_t out_px);

// Token statistics CSV: image_id,token_idx,norm,is_outlier,mean_neighbor_cos.
// Cosines are optional (empty -> column left blank).
std::string token_stats_csv(const TokenStats& stats,
                            const std::vector<std::vector<double>>& cosines = {});

std::string histogram_csv(const TokenStats& stats);

}  // namespace vitlab

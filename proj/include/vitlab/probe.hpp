#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vitlab/analysis.hpp"
#include "vitlab/optim.hpp"
#include "vitlab/vit.hpp"

namespace vitlab {

enum class ProbeTask { position, reconstruction, classification };
enum class TokenCategory { cls, normal, outlier };

std::string to_string(ProbeTask task);
ProbeTask probe_task_from_string(const std::string& s);
std::string to_string(TokenCategory cat);

// Frozen-feature rows extracted from a model. Position/reconstruction tasks
// get one row per patch token; classification gets up to one [CLS], one
// random normal and one random outlier row per image.
struct ProbeDataset {
  ProbeTask task = ProbeTask::position;
  int64_t grid = 0;
  int64_t num_classes = 0;  // dataset classes (classification targets)
  int64_t patch_size = 0;
  Tensor features;          // [n x W]
  Tensor targets;           // position/classification: [n x 1]; reconstruction: [n x P*P*3]
  std::vector<TokenCategory> category;
  std::vector<double> norms;      // pre-final-LN token norm per row (0 for cls rows)
  std::vector<int64_t> image_ids;

  size_t size() const { return category.size(); }
  int64_t feature_width() const { return features.defined() ? features.dim(1) : 0; }
  int64_t target_width() const { return targets.defined() ? targets.dim(1) : 0; }
  int64_t output_width() const;  // linear head output: G*G, P*P*3, or classes
};

ProbeDataset extract_probe_dataset(const ViTModel& model, const Dataset& dataset, ProbeTask task,
                                   const TokenStats& stats, uint64_t seed);

ProbeDataset filter_by_category(const ProbeDataset& data, TokenCategory cat);

// Single affine map input_width -> output_width.
struct ProbeHead {
  Tensor weight;  // [W x K]
  Tensor bias;    // [K]
};

struct TrainConfig {
  ProbeTask task = ProbeTask::position;
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double momentum = 0.9;
  double weight_decay = 0.0;   // 0.01 makes sense for adamw
  int64_t max_epochs = 30;
  int64_t patience = 3;
  int64_t batch_size = 256;
  double val_fraction = 0.1;
  uint64_t seed = 42;
  void validate() const;
};

struct EpochRecord {
  int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;  // top-1 for position/classification, MSE for reconstruction
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int64_t best_epoch = 0;
  bool early_stopped = false;
};

// Position loss is CE + 0.5 * MSE where the MSE term uses the
// softmax-expected grid coordinate (differentiable; equals the decoded
// coordinate for one-hot predictions). Early stopping restores the best
// validation epoch's parameters exactly.
std::pair<ProbeHead, TrainHistory> train_linear_probe(const ProbeDataset& data,
                                                      const TrainConfig& cfg);

std::string history_csv(const TrainHistory& history);

struct PositionEval {
  double top1 = 0.0;
  double mean_distance = 0.0;  // grid units, argmax-decoded
  size_t rows = 0;
};
PositionEval eval_position(const ProbeHead& head, const ProbeDataset& data);

// Mean distance from the grid centroid to every cell, in grid units - the
// trivial always-predict-the-center baseline.
double center_baseline(int64_t grid);

// Mean squared L2 error between predicted and true flattened patches.
double eval_reconstruction(const ProbeHead& head, const ProbeDataset& data);

// Top-1 restricted to rows of the category; ContractError when the slice is
// empty (never a silent zero).
double eval_classification(const ProbeHead& head, const ProbeDataset& data, TokenCategory cat);

// Re-thresholds the pooled calibration sample at each q and reports the
// position top-1 over rows flagged at that level. q = 0 means every token is
// an outlier (limit case).
struct SweepPoint {
  double q = 0.0;
  double tau = 0.0;
  size_t rows = 0;
  std::optional<double> top1;  // empty when no rows qualify
};
std::vector<SweepPoint> percentile_sweep(const ProbeHead& head, const ProbeDataset& data,
                                         const TokenStats& stats, std::span<const double> qs);

// Image representations for the register-augmented classification protocol.
enum class ReprKind { cls_pm, cls_pm_reg, pm_reg };
std::string to_string(ReprKind kind);
ReprKind repr_kind_from_string(const std::string& s);

// Widths: cls_pm -> 2D, cls_pm_reg -> (2+R)D, pm_reg -> (1+R)D; concatenation
// in that order. REG kinds require R >= 1.
Tensor build_representation(const Activations& acts, ReprKind kind);

struct ReprConfig {
  ReprKind kind = ReprKind::cls_pm;
  int64_t epochs = 20;
  double lr = 1e-2;
  int64_t batch_size = 32;
  uint64_t seed = 42;
  void validate() const;
};

struct ReprResult {
  double val_top1 = 0.0;
  std::vector<double> lr_by_epoch;
  ProbeHead head;
};

// Extracts representations for both datasets, then trains a linear classifier
// with SGD + cosine schedule for the full epoch budget (no early stop).
ReprResult train_representation_classifier(const ViTModel& model, const Dataset& train,
                                           const Dataset& val, const ReprConfig& cfg);

}  // namespace vitlab

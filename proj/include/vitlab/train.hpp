#pragma once

#include <cstdint>
#include <vector>

#include "vitlab/data.hpp"
#include "vitlab/optim.hpp"
#include "vitlab/vit.hpp"

namespace vitlab {

struct ToyTrainConfig {
  int64_t epochs = 5;
  int64_t batch_size = 16;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  uint64_t seed = 42;
  void validate() const;
};

struct ToyEpoch {
  int64_t epoch = 0;
  double mean_loss = 0.0;
  double val_accuracy = 0.0;
};

struct ToyResult {
  std::vector<ToyEpoch> history;
  double final_val_accuracy = 0.0;
};

// Supervised cross-entropy training of the micro-ViT. Deterministic for a
// fixed seed: init, shuffles and accumulation order are all pinned.
ToyResult train_vit(ViTModel& model, const Dataset& train, const Dataset& val,
                    const ToyTrainConfig& cfg);

double evaluate_accuracy(const ViTModel& model, const Dataset& dataset);

std::string toy_history_csv(const ToyResult& result);

}  // namespace vitlab

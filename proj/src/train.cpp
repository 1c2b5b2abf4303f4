#include "vitlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vitlab/rng.hpp"

namespace vitlab {

void ToyTrainConfig::validate() const {
  if (epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  if (lr <= 0.0) throw ContractError("train: lr must be positive");
}

double evaluate_accuracy(const ViTModel& model, const Dataset& dataset) {
  if (dataset.size() == 0) throw ContractError("evaluate_accuracy: empty dataset");
  NoGradGuard guard;
  size_t hits = 0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    Activations acts = forward(model, dataset.image(i));
    auto logits = acts.logits.data();
    int64_t best = 0;
    for (size_t c = 1; c < logits.size(); ++c) {
      if (logits[c] > logits[static_cast<size_t>(best)]) best = static_cast<int64_t>(c);
    }
    if (best == dataset.items[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

ToyResult train_vit(ViTModel& model, const Dataset& train, const Dataset& val,
                    const ToyTrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw ContractError("train_vit: empty training set");

  OptimizerConfig ocfg;
  ocfg.kind = cfg.optimizer;
  ocfg.lr = cfg.lr;
  Optimizer opt(model.parameters(), ocfg);

  Rng rng(cfg.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  ToyResult result;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      Tape tape;
      Tensor batch_loss;
      for (size_t i = start; i < end; ++i) {
        const size_t item = order[i];
        Activations acts = forward(model, train.image(item));
        const int64_t label = train.items[item].label;
        Tensor ce = cross_entropy_logits(acts.logits, std::span<const int64_t>(&label, 1));
        batch_loss = batch_loss.defined() ? add(batch_loss, ce) : ce;
      }
      Tensor loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw ContractError("train_vit: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss_value * static_cast<double>(end - start);
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
    }
    ToyEpoch rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(train.size());
    rec.val_accuracy = val.size() > 0 ? evaluate_accuracy(model, val) : 0.0;
    result.history.push_back(rec);
  }
  result.final_val_accuracy = result.history.back().val_accuracy;
  return result;
}

std::string toy_history_csv(const ToyResult& result) {
  std::ostringstream out;
  out << "epoch,split,loss,metric\n";
  out.precision(17);
  for (const ToyEpoch& e : result.history) {
    out << e.epoch << ",train," << e.mean_loss << ",\n";
    out << e.epoch << ",val,," << e.val_accuracy << '\n';
  }
  return out.str();
}

}  // namespace vitlab

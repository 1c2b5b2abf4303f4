#pragma once

#include <cstdint>
#include <vector>

#include "vitlab/tensor.hpp"

namespace vitlab {

enum class OptimizerKind { sgd, adam, adamw };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;       // sgd only
  double weight_decay = 0.0;   // adamw: decoupled; adam: L2 into the gradient
  void validate() const;
};

// Updates:
//   sgd:   v = mu*v + g;          p -= lr*v
//   adam:  m = b1*m + (1-b1)*g;   v = b2*v + (1-b2)*g^2
//          p -= lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
//   adamw: adam moments on the raw gradient, then p *= (1 - lr*wd) first
//          (weight decay decoupled from the moment estimates)
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig config);

  void step();
  void zero_grad();
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_;  // first moment / velocity
  std::vector<std::vector<double>> v_;  // second moment (adam family)
  int64_t t_ = 0;
};

// Cosine schedule: lr(t) = 0.5 * base * (1 + cos(pi * t / total)).
double cosine_lr(double base, int64_t epoch, int64_t total_epochs);

}  // namespace vitlab

#include "vitlab/optim.hpp"

#include <cmath>
#include <numbers>

namespace vitlab {

void OptimizerConfig::validate() const {
  if (lr <= 0.0) throw ContractError("optimizer: lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ContractError("optimizer: betas must be in [0, 1)");
  }
  if (eps <= 0.0) throw ContractError("optimizer: eps must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("optimizer: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ContractError("optimizer: weight_decay must be >= 0");
}

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void Optimizer::step() {
  ++t_;
  const double lr = config_.lr;
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.has_grad()) continue;  // parameter unused in this graph
    auto grad = p.grad();
    auto data = p.data();
    switch (config_.kind) {
      case OptimizerKind::sgd: {
        for (size_t i = 0; i < data.size(); ++i) {
          m_[pi][i] = config_.momentum * m_[pi][i] + grad[i];
          data[i] -= lr * m_[pi][i];
        }
        break;
      }
      case OptimizerKind::adam:
      case OptimizerKind::adamw: {
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        const bool decoupled = config_.kind == OptimizerKind::adamw;
        for (size_t i = 0; i < data.size(); ++i) {
          double g = grad[i];
          if (!decoupled && config_.weight_decay > 0.0) g += config_.weight_decay * data[i];
          m_[pi][i] = config_.beta1 * m_[pi][i] + (1.0 - config_.beta1) * g;
          v_[pi][i] = config_.beta2 * v_[pi][i] + (1.0 - config_.beta2) * g * g;
          const double mhat = m_[pi][i] / bc1;
          const double vhat = v_[pi][i] / bc2;
          if (decoupled) data[i] *= 1.0 - lr * config_.weight_decay;
          data[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
        break;
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double cosine_lr(double base, int64_t epoch, int64_t total_epochs) {
  if (total_epochs < 1) throw ContractError("cosine_lr: total_epochs must be >= 1");
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace vitlab

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "vitlab/common.hpp"

namespace vitlab {

// Conventions used repo-wide:
//   - payloads are 64-bit floats, row-major
//   - matrices are [rows x cols]; linear layers compute y = x * W + b with
//     W laid out [in x out]
//   - scalars are shape {1}
//   - broadcasting is limited to bias-add over the last axis
using Shape = std::vector<int64_t>;

struct TensorNode {
  Shape dims;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches it
  bool requires_grad = false;
  uint64_t producer_tape = 0;  // id of the tape that recorded the producing op
};

// Cheap handle to a shared node: copies alias the same storage (what autodiff
// identity needs); clone() makes an independent detached tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape dims, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& dims() const { return node_->dims; }
  int64_t dim(size_t i) const { return node_->dims[i]; }
  size_t rank() const { return node_->dims.size(); }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }

  double& at(int64_t i) { return node_->data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return node_->data[static_cast<size_t>(i)]; }
  double& at(int64_t i, int64_t j) { return node_->data[static_cast<size_t>(i * dim(1) + j)]; }
  double at(int64_t i, int64_t j) const { return node_->data[static_cast<size_t>(i * dim(1) + j)]; }

  // Scalar extraction; ContractError when numel != 1.
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() {
    if (node_) node_->grad.clear();
  }

  Tensor clone() const;  // deep copy, detached, requires_grad preserved

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread; ops record onto it when any input requires grad. backward()
// replays the records once, in reverse execution order, then the tape is
// consumed. Tapes are thread-confined.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Populates grads of every requires_grad ancestor of `loss`.
  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  size_t recorded_ops() const { return steps_.size(); }

  static Tape* active();
  void record(std::shared_ptr<TensorNode> out, std::function<void(const TensorNode&)> fn);

 private:
  struct Step {
    std::shared_ptr<TensorNode> out;
    std::function<void(const TensorNode&)> fn;
  };
  std::vector<Step> steps_;
  uint64_t id_ = 0;  // unique per tape, distinguishes dead tapes
  bool consumed_ = false;
};

// Suspends recording while alive (used by numeric differentiation).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Differentiable ops. All throw ShapeError on dimension mismatch.
Tensor add(const Tensor& a, const Tensor& b);               // same shape
Tensor sub(const Tensor& a, const Tensor& b);               // same shape
Tensor mul(const Tensor& a, const Tensor& b);               // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_bias(const Tensor& x, const Tensor& bias);       // [R x D] + [D]
Tensor matmul(const Tensor& a, const Tensor& b);            // 2-D only
Tensor transpose(const Tensor& a);                          // 2-D
Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1); // half-open
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor mean_rows(const Tensor& a);                          // [R x D] -> [1 x D]
Tensor sum(const Tensor& a);                                // -> scalar
Tensor softmax(const Tensor& x, int axis);                  // max-subtracted
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);                               // exact erf form

// Losses (scalar outputs).
Tensor mse_loss(const Tensor& pred, const Tensor& target);  // mean over elements
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int64_t> labels);

// Compares backward() grads of f against central finite differences (with
// one Richardson refinement, steps h and 2h) over every element of `params`;
// returns the worst relative error with denominator max(|a|,|b|,1e-8).
// f must be deterministic.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double h);

}  // namespace vitlab

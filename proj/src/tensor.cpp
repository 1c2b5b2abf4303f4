#include "vitlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

namespace vitlab {

namespace {

thread_local std::vector<Tape*> g_tape_stack;
std::atomic<uint64_t> g_tape_counter{0};

int64_t product(const Shape& dims) {
  int64_t n = 1;
  for (int64_t d : dims) n *= d;
  return n;
}

void check_dims(const Shape& dims) {
  if (dims.empty()) throw ShapeError("tensor rank must be >= 1");
  for (int64_t d : dims) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + format_dims(dims));
  }
}

void accumulate(const std::shared_ptr<TensorNode>& n, std::span<const double> g) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
  for (size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
}

void accumulate_at(const std::shared_ptr<TensorNode>& n, size_t index, double g) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
  n->grad[index] += g;
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Marks the output and records the backward step when a tape is live. The
// std::function wrapper is only materialized when actually recording.
template <typename F>
void finish_op(Tensor& out, bool needs_grad, F&& back) {
  out.set_requires_grad(needs_grad);
  Tape* t = Tape::active();
  if (t && needs_grad) {
    t->record(out.node(), std::function<void(const TensorNode&)>(std::forward<F>(back)));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + format_dims(a.dims()) + " vs " +
                     format_dims(b.dims()));
  }
}

void check_2d(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + format_dims(a.dims()));
  }
}

}  // namespace

Tensor::Tensor(Shape dims, double fill, bool requires_grad) {
  check_dims(dims);
  node_ = std::make_shared<TensorNode>();
  node_->data.assign(static_cast<size_t>(product(dims)), fill);
  node_->dims = std::move(dims);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape dims, std::vector<double> data, bool requires_grad) {
  check_dims(dims);
  if (product(dims) != static_cast<int64_t>(data.size())) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match dims " + format_dims(dims));
  }
  node_ = std::make_shared<TensorNode>();
  node_->dims = std::move(dims);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

double Tensor::item() const {
  if (!defined() || numel() != 1) {
    throw ContractError("item(): tensor is not a scalar");
  }
  return node_->data[0];
}

Tensor Tensor::clone() const {
  Tensor out(node_->dims, node_->data, node_->requires_grad);
  return out;
}

Tape::Tape() : id_(++g_tape_counter) { g_tape_stack.push_back(this); }

Tape::~Tape() {
  auto it = std::find(g_tape_stack.rbegin(), g_tape_stack.rend(), this);
  if (it != g_tape_stack.rend()) g_tape_stack.erase(std::next(it).base());
}

Tape* Tape::active() {
  if (g_tape_stack.empty()) return nullptr;
  return g_tape_stack.back();  // nullptr entry = recording suspended
}

void Tape::record(std::shared_ptr<TensorNode> out, std::function<void(const TensorNode&)> fn) {
  out->producer_tape = id_;
  steps_.push_back({std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (consumed_) throw ContractError("backward: tape already consumed");
  if (loss.node()->producer_tape != id_) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  loss.node()->grad.assign(1, 1.0);
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    if (!it->out->grad.empty()) it->fn(*it->out);
  }
  consumed_ = true;
  steps_.clear();
}

NoGradGuard::NoGradGuard() { g_tape_stack.push_back(nullptr); }

NoGradGuard::~NoGradGuard() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == nullptr) g_tape_stack.pop_back();
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.dims());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  auto an = a.node();
  auto bn = b.node();
  finish_op(out, want_grad({&a, &b}), [an, bn](const TensorNode& n) {
    if (an->requires_grad) accumulate(an, n.grad);
    if (bn->requires_grad) accumulate(bn, n.grad);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.dims());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  auto an = a.node();
  auto bn = b.node();
  finish_op(out, want_grad({&a, &b}), [an, bn](const TensorNode& n) {
    if (an->requires_grad) accumulate(an, n.grad);
    if (bn->requires_grad) {
      if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0);
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.dims());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  auto an = a.node();
  auto bn = b.node();
  finish_op(out, want_grad({&a, &b}), [an, bn](const TensorNode& n) {
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (an->requires_grad) accumulate_at(an, i, n.grad[i] * bn->data[i]);
      if (bn->requires_grad) accumulate_at(bn, i, n.grad[i] * an->data[i]);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.dims());
  auto o = out.data();
  auto x = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = c * x[i];
  auto an = a.node();
  finish_op(out, want_grad({&a}), [an, c](const TensorNode& n) {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += c * n.grad[i];
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  check_2d(x, "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: bias " + format_dims(bias.dims()) + " does not match rows of " +
                     format_dims(x.dims()));
  }
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor out({rows, cols});
  auto o = out.data();
  auto xv = x.data();
  auto bv = bias.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) o[r * cols + c] = xv[r * cols + c] + bv[c];
  }
  auto xn = x.node();
  auto bn = bias.node();
  finish_op(out, want_grad({&x, &bias}), [xn, bn, rows, cols](const TensorNode& n) {
    if (xn->requires_grad) accumulate(xn, n.grad);
    if (bn->requires_grad) {
      if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) bn->grad[c] += n.grad[r * cols + c];
      }
    }
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dims disagree, " + format_dims(a.dims()) + " * " +
                     format_dims(b.dims()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = &bv[kk * n];
      double* orow = &o[i * n];
      for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  finish_op(out, want_grad({&a, &b}), [an, bn, m, k, n](const TensorNode& node) {
    const auto& g = node.grad;
    if (an->requires_grad) {
      // dA = G * B^T
      if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          for (int64_t j = 0; j < n; ++j) acc += g[i * n + j] * bn->data[kk * n + j];
          an->grad[i * k + kk] += acc;
        }
      }
    }
    if (bn->requires_grad) {
      // dB = A^T * G
      if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0);
      for (int64_t kk = 0; kk < k; ++kk) {
        for (int64_t i = 0; i < m; ++i) {
          const double aik = an->data[i * k + kk];
          if (aik == 0.0) continue;
          for (int64_t j = 0; j < n; ++j) bn->grad[kk * n + j] += aik * g[i * n + j];
        }
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  check_2d(a, "transpose");
  const int64_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  auto o = out.data();
  auto x = a.data();
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < c; ++j) o[j * r + i] = x[i * c + j];
  }
  auto an = a.node();
  finish_op(out, want_grad({&a}), [an, r, c](const TensorNode& n) {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
    for (int64_t i = 0; i < r; ++i) {
      for (int64_t j = 0; j < c; ++j) an->grad[i * c + j] += n.grad[j * r + i];
    }
  });
  return out;
}

Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1) {
  check_2d(a, "slice_rows");
  if (r0 < 0 || r1 > a.dim(0) || r0 >= r1) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") for " + format_dims(a.dims()));
  }
  const int64_t cols = a.dim(1);
  Tensor out({r1 - r0, cols});
  std::copy(a.data().begin() + r0 * cols, a.data().begin() + r1 * cols, out.data().begin());
  auto an = a.node();
  finish_op(out, want_grad({&a}), [an, r0, cols](const TensorNode& n) {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      an->grad[static_cast<size_t>(r0 * cols) + i] += n.grad[i];
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
  check_2d(a, "slice_cols");
  if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") for " + format_dims(a.dims()));
  }
  const int64_t rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  Tensor out({rows, w});
  auto o = out.data();
  auto x = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(&x[r * cols + c0], &x[r * cols + c1], &o[r * w]);
  }
  auto an = a.node();
  finish_op(out, want_grad({&a}), [an, rows, cols, c0, w](const TensorNode& n) {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < w; ++j) an->grad[r * cols + c0 + j] += n.grad[r * w + j];
    }
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int64_t cols = parts[0].dim(1);
  int64_t rows = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_rows");
    if (p.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + format_dims(p.dims()));
    }
    rows += p.dim(0);
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out({rows, cols});
  auto o = out.data();
  int64_t at = 0;
  std::vector<std::shared_ptr<TensorNode>> nodes;
  std::vector<int64_t> offsets;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + at);
    nodes.push_back(p.node());
    offsets.push_back(at);
    at += p.numel();
  }
  Tensor result = out;
  finish_op(result, needs_grad, [nodes, offsets](const TensorNode& n) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      if (nodes[i]->grad.empty()) nodes[i]->grad.assign(nodes[i]->data.size(), 0.0);
      for (size_t j = 0; j < nodes[i]->data.size(); ++j) {
        nodes[i]->grad[j] += n.grad[static_cast<size_t>(offsets[i]) + j];
      }
    }
  });
  return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int64_t rows = parts[0].dim(0);
  int64_t cols = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + format_dims(p.dims()));
    }
    cols += p.dim(1);
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out({rows, cols});
  auto o = out.data();
  std::vector<std::shared_ptr<TensorNode>> nodes;
  std::vector<int64_t> col_offsets;
  int64_t at = 0;
  for (const Tensor& p : parts) {
    const int64_t w = p.dim(1);
    auto x = p.data();
    for (int64_t r = 0; r < rows; ++r) {
      std::copy(&x[r * w], &x[(r + 1) * w], &o[r * cols + at]);
    }
    nodes.push_back(p.node());
    col_offsets.push_back(at);
    at += w;
  }
  Tensor result = out;
  finish_op(result, needs_grad, [nodes, col_offsets, rows, cols](const TensorNode& n) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      const int64_t w = nodes[i]->dims[1];
      if (nodes[i]->grad.empty()) nodes[i]->grad.assign(nodes[i]->data.size(), 0.0);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < w; ++j) {
          nodes[i]->grad[r * w + j] += n.grad[r * cols + col_offsets[i] + j];
        }
      }
    }
  });
  return result;
}

Tensor mean_rows(const Tensor& a) {
  check_2d(a, "mean_rows");
  const int64_t rows = a.dim(0), cols = a.dim(1);
  Tensor out({1, cols});
  auto o = out.data();
  auto x = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) o[c] += x[r * cols + c];
  }
  for (int64_t c = 0; c < cols; ++c) o[c] /= static_cast<double>(rows);
  auto an = a.node();
  finish_op(out, want_grad({&a}), [an, rows, cols](const TensorNode& n) {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(rows);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < cols; ++c) an->grad[r * cols + c] += inv * n.grad[c];
    }
  });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out({1});
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.at(0) = acc;
  auto an = a.node();
  finish_op(out, want_grad({&a}), [an](const TensorNode& n) {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0);
    for (double& g : an->grad) g += n.grad[0];
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0 || axis >= rank) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     format_dims(x.dims()));
  }
  const int64_t len = x.dim(static_cast<size_t>(axis));
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<size_t>(i));
  for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<size_t>(i));

  Tensor out(x.dims());
  auto o = out.data();
  auto v = x.data();
  for (int64_t a = 0; a < outer; ++a) {
    for (int64_t b = 0; b < inner; ++b) {
      const int64_t base = a * len * inner + b;
      double mx = v[base];
      for (int64_t i = 1; i < len; ++i) mx = std::max(mx, v[base + i * inner]);
      double denom = 0.0;
      for (int64_t i = 0; i < len; ++i) {
        const double e = std::exp(v[base + i * inner] - mx);
        o[base + i * inner] = e;
        denom += e;
      }
      for (int64_t i = 0; i < len; ++i) o[base + i * inner] /= denom;
    }
  }
  auto xn = x.node();
  auto on = out.node();
  finish_op(out, want_grad({&x}), [xn, on, outer, inner, len](const TensorNode& n) {
    if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
    for (int64_t a = 0; a < outer; ++a) {
      for (int64_t b = 0; b < inner; ++b) {
        const int64_t base = a * len * inner + b;
        double dot = 0.0;
        for (int64_t i = 0; i < len; ++i) {
          dot += n.grad[base + i * inner] * on->data[base + i * inner];
        }
        for (int64_t i = 0; i < len; ++i) {
          const size_t idx = static_cast<size_t>(base + i * inner);
          xn->grad[idx] += (n.grad[idx] - dot) * on->data[idx];
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_2d(x, "layer_norm");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (gamma.rank() != 1 || gamma.dim(0) != cols || beta.rank() != 1 || beta.dim(0) != cols) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(cols) + "]");
  }
  Tensor out({rows, cols});
  std::vector<double> inv_std(static_cast<size_t>(rows));
  std::vector<double> xhat(static_cast<size_t>(rows * cols));
  auto o = out.data();
  auto v = x.data();
  auto g = gamma.data();
  auto b = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int64_t c = 0; c < cols; ++c) mean += v[r * cols + c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      const double d = v[r * cols + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = inv;
    for (int64_t c = 0; c < cols; ++c) {
      const double xh = (v[r * cols + c] - mean) * inv;
      xhat[static_cast<size_t>(r * cols + c)] = xh;
      o[r * cols + c] = g[c] * xh + b[c];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  finish_op(out, want_grad({&x, &gamma, &beta}),
            [xn, gn, bn, rows, cols, inv_std = std::move(inv_std),
             xhat = std::move(xhat)](const TensorNode& n) {
              for (int64_t r = 0; r < rows; ++r) {
                const double inv = inv_std[static_cast<size_t>(r)];
                double mean_h = 0.0, mean_hx = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                  const size_t i = static_cast<size_t>(r * cols + c);
                  const double h = n.grad[i] * gn->data[static_cast<size_t>(c)];
                  mean_h += h;
                  mean_hx += h * xhat[i];
                }
                mean_h /= static_cast<double>(cols);
                mean_hx /= static_cast<double>(cols);
                for (int64_t c = 0; c < cols; ++c) {
                  const size_t i = static_cast<size_t>(r * cols + c);
                  if (gn->requires_grad) accumulate_at(gn, static_cast<size_t>(c), n.grad[i] * xhat[i]);
                  if (bn->requires_grad) accumulate_at(bn, static_cast<size_t>(c), n.grad[i]);
                  if (xn->requires_grad) {
                    const double h = n.grad[i] * gn->data[static_cast<size_t>(c)];
                    accumulate_at(xn, i, inv * (h - mean_h - xhat[i] * mean_hx));
                  }
                }
              }
            });
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.dims());
  auto o = out.data();
  auto v = x.data();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (size_t i = 0; i < o.size(); ++i) {
    o[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * inv_sqrt2));
  }
  auto xn = x.node();
  finish_op(out, want_grad({&x}), [xn, inv_sqrt2](const TensorNode& n) {
    if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const double z = xn->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(z * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
      xn->grad[i] += n.grad[i] * (cdf + z * pdf);
    }
  });
  return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse_loss");
  const double inv_n = 1.0 / static_cast<double>(pred.numel());
  double acc = 0.0;
  auto p = pred.data();
  auto t = target.data();
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  Tensor out = Tensor::scalar(acc * inv_n);
  auto pn = pred.node();
  auto tn = target.node();
  finish_op(out, want_grad({&pred, &target}), [pn, tn, inv_n](const TensorNode& n) {
    const double g = n.grad[0];
    for (size_t i = 0; i < pn->data.size(); ++i) {
      const double d = 2.0 * inv_n * (pn->data[i] - tn->data[i]) * g;
      if (pn->requires_grad) accumulate_at(pn, i, d);
      if (tn->requires_grad) accumulate_at(tn, i, -d);
    }
  });
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int64_t> labels) {
  check_2d(logits, "cross_entropy_logits");
  const int64_t batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for " +
                     format_dims(logits.dims()));
  }
  for (int64_t lab : labels) {
    if (lab < 0 || lab >= classes) {
      throw ContractError("cross_entropy_logits: label " + std::to_string(lab) +
                          " out of range [0, " + std::to_string(classes) + ")");
    }
  }
  // Fused log-softmax + NLL; probs are kept for the p - onehot backward.
  std::vector<double> probs(static_cast<size_t>(batch * classes));
  auto z = logits.data();
  double loss = 0.0;
  for (int64_t r = 0; r < batch; ++r) {
    double mx = z[r * classes];
    for (int64_t c = 1; c < classes; ++c) mx = std::max(mx, z[r * classes + c]);
    double denom = 0.0;
    for (int64_t c = 0; c < classes; ++c) {
      const double e = std::exp(z[r * classes + c] - mx);
      probs[static_cast<size_t>(r * classes + c)] = e;
      denom += e;
    }
    for (int64_t c = 0; c < classes; ++c) probs[static_cast<size_t>(r * classes + c)] /= denom;
    loss -= std::log(probs[static_cast<size_t>(r * classes + labels[static_cast<size_t>(r)])]);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(batch));
  auto zn = logits.node();
  std::vector<int64_t> labels_copy(labels.begin(), labels.end());
  finish_op(out, want_grad({&logits}),
            [zn, batch, classes, probs = std::move(probs),
             labels = std::move(labels_copy)](const TensorNode& n) {
              if (zn->grad.empty()) zn->grad.assign(zn->data.size(), 0.0);
              const double g = n.grad[0] / static_cast<double>(batch);
              for (int64_t r = 0; r < batch; ++r) {
                for (int64_t c = 0; c < classes; ++c) {
                  const size_t i = static_cast<size_t>(r * classes + c);
                  const double onehot = (c == labels[static_cast<size_t>(r)]) ? 1.0 : 0.0;
                  zn->grad[i] += g * (probs[i] - onehot);
                }
              }
            });
  return out;
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double h) {
  if (h <= 0.0) throw ContractError("grad_check: step h must be positive");

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    for (Tensor& p : params) p.zero_grad();
    Tensor loss = f();
    tape.backward(loss);
    for (Tensor& p : params) {
      if (p.has_grad()) {
        analytic.emplace_back(p.grad().begin(), p.grad().end());
      } else {
        analytic.emplace_back(static_cast<size_t>(p.numel()), 0.0);
      }
      p.zero_grad();
    }
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].data();
    for (size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up1 = f().item();
      values[i] = saved - h;
      const double down1 = f().item();
      values[i] = saved + 2.0 * h;
      const double up2 = f().item();
      values[i] = saved - 2.0 * h;
      const double down2 = f().item();
      values[i] = saved;
      // One Richardson step over central differences at h and 2h kills the
      // h^2 truncation term, so a larger h can be used against roundoff.
      const double d1 = (up1 - down1) / (2.0 * h);
      const double d2 = (up2 - down2) / (4.0 * h);
      const double numeric = (4.0 * d1 - d2) / 3.0;
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace vitlab

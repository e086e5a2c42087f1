// SPDX-License-Identifier: Apache-2.0

#include "ssrt/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace ssrt {

namespace detail {
Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
}  // namespace detail

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

thread_local Tape* g_active_tape = nullptr;

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

ImplPtr make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

std::vector<double>& grad_of(const ImplPtr& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

/// Wraps the result and records a backward rule when a tape is active and
/// some input carries gradient. `make_backward` is only invoked in that case.
Tensor make_result(
    Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
    const std::function<std::function<void()>(ImplPtr, std::vector<ImplPtr>)>& make_backward) {
  auto impl = make_impl(std::move(shape), std::move(data));
  Tape* tape = Tape::active();
  bool needs_grad = false;
  for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  if (tape != nullptr && needs_grad) {
    impl->requires_grad = true;
    impl->producer = tape;
    std::vector<ImplPtr> ins;
    ins.reserve(inputs.size());
    for (const auto& t : inputs) ins.push_back(t.impl());
    tape->record(impl, ins, make_backward(impl, ins));
  }
  return detail::wrap(impl);
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = numel(shape);
  auto impl = make_impl(std::move(shape), std::vector<double>(n, value));
  impl->requires_grad = requires_grad;
  return detail::wrap(impl);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  require(numel(shape) == values.size(),
          "from_data: " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
              " values");
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return detail::wrap(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (!defined() || size() != 1) throw ContractError("item() needs a scalar tensor");
  return impl_->data[0];
}

Tensor Tensor::clone_detached() const {
  auto impl = make_impl(impl_->shape, impl_->data);
  return detail::wrap(impl);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::record(std::shared_ptr<detail::TensorImpl> out,
                  std::vector<std::shared_ptr<detail::TensorImpl>> ins,
                  std::function<void()> backward_fn) {
  nodes_.push_back({std::move(out), std::move(ins), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward target must be a defined scalar");
  }
  if (loss.impl()->producer != this) {
    throw ContractError("backward target was not produced on this tape");
  }
  for (auto& node : nodes_) {
    node.out->grad.assign(node.out->data.size(), 0.0);
    for (auto& in : node.ins) {
      if (in->requires_grad) in->grad.assign(in->data.size(), 0.0);
    }
  }
  loss.impl()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: both inputs must be rank 2");
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k,
          "matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  MapCM A(a.values().data(), m, k);
  MapCM B(b.values().data(), k, n);
  MapM(out.data(), m, n).noalias() = A * B;
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, m, k, n]() {
      MapCM G(o->grad.data(), m, n);
      MapCM A(in[0]->data.data(), m, k);
      MapCM B(in[1]->data.data(), k, n);
      if (in[0]->requires_grad) MapM(grad_of(in[0]).data(), m, k).noalias() += G * B.transpose();
      if (in[1]->requires_grad) MapM(grad_of(in[1]).data(), k, n).noalias() += A.transpose() * G;
    };
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3, "bmm: both inputs must be rank 3");
  std::size_t N = a.dim(0), r = a.dim(1), k = a.dim(2);
  std::size_t c = transpose_b ? b.dim(1) : b.dim(2);
  std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  require(b.dim(0) == N && bk == k,
          "bmm: batch shapes differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(N * r * c);
  for (std::size_t i = 0; i < N; ++i) {
    MapCM A(a.values().data() + i * r * k, r, k);
    MapM O(out.data() + i * r * c, r, c);
    if (transpose_b) {
      MapCM B(b.values().data() + i * c * k, c, k);
      O.noalias() = A * B.transpose();
    } else {
      MapCM B(b.values().data() + i * k * c, k, c);
      O.noalias() = A * B;
    }
  }
  return make_result(
      {N, r, c}, std::move(out), {a, b},
      [N, r, k, c, transpose_b](ImplPtr o, std::vector<ImplPtr> in) {
        return [o, in, N, r, k, c, transpose_b]() {
          for (std::size_t i = 0; i < N; ++i) {
            MapCM G(o->grad.data() + i * r * c, r, c);
            MapCM A(in[0]->data.data() + i * r * k, r, k);
            if (transpose_b) {
              MapCM B(in[1]->data.data() + i * c * k, c, k);
              if (in[0]->requires_grad)
                MapM(grad_of(in[0]).data() + i * r * k, r, k).noalias() += G * B;
              if (in[1]->requires_grad)
                MapM(grad_of(in[1]).data() + i * c * k, c, k).noalias() += G.transpose() * A;
            } else {
              MapCM B(in[1]->data.data() + i * k * c, k, c);
              if (in[0]->requires_grad)
                MapM(grad_of(in[0]).data() + i * r * k, r, k).noalias() += G * B.transpose();
              if (in[1]->requires_grad)
                MapM(grad_of(in[1]).data() + i * k * c, k, c).noalias() += A.transpose() * G;
            }
          }
        };
      });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: input must be rank 2");
  std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, m, n]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o->grad[j * m + i];
    };
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shapes differ " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      for (std::size_t s = 0; s < 2; ++s) {
        if (!in[s]->requires_grad) continue;
        auto& g = grad_of(in[s]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      if (in[0]->requires_grad) {
        auto& g = grad_of(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (in[1]->requires_grad) {
        auto& g = grad_of(in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o->grad[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      if (in[0]->requires_grad) {
        auto& g = grad_of(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * in[1]->data[i];
      }
      if (in[1]->requires_grad) {
        auto& g = grad_of(in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * in[0]->data[i];
      }
    };
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 2, "add_bias: x must be rank 2");
  require(bias.rank() == 1 && bias.dim(0) == x.dim(1),
          "add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " +
              shape_str(x.shape()));
  std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.values()[i * c + j] + bias.values()[j];
  return make_result(x.shape(), std::move(out), {x, bias},
                     [r, c](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, r, c]() {
                         if (in[0]->requires_grad) {
                           auto& g = grad_of(in[0]);
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
                         }
                         if (in[1]->requires_grad) {
                           auto& g = grad_of(in[1]);
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) g[j] += o->grad[i * c + j];
                         }
                       };
                     });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * s;
  return make_result(x.shape(), std::move(out), {x}, [s](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, s]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * s;
    };
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + s;
  return make_result(x.shape(), std::move(out), {x}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    };
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp: lo must not exceed hi");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(x.values()[i], lo), hi);
  return make_result(x.shape(), std::move(out), {x}, [lo, hi](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, lo, hi]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double v = in[0]->data[i];
        if (v >= lo && v <= hi) g[i] += o->grad[i];
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Restructuring
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(),
          "reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in]() {
                         if (!in[0]->requires_grad) return;
                         auto& g = grad_of(in[0]);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
                       };
                     });
}

namespace {

// Leading-dimension row size shared by the dim-0 ops below.
std::size_t row_width(const Tensor& t) { return t.size() / t.dim(0); }

}  // namespace

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 1 && a.rank() == b.rank(), "concat_rows: ranks differ");
  for (std::size_t d = 1; d < a.rank(); ++d)
    require(a.dim(d) == b.dim(d), "concat_rows: trailing dims differ " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  std::size_t na = a.size();
  return make_result(std::move(shape), std::move(out), {a, b},
                     [na](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, na]() {
                         if (in[0]->requires_grad) {
                           auto& g = grad_of(in[0]);
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
                         }
                         if (in[1]->requires_grad) {
                           auto& g = grad_of(in[1]);
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[na + i];
                         }
                       };
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require(x.rank() >= 1, "slice_rows: input must have rank >= 1");
  require(begin + count <= x.dim(0), "slice_rows: range " + std::to_string(begin) + "+" +
                                         std::to_string(count) + " exceeds " +
                                         shape_str(x.shape()));
  std::size_t w = row_width(x);
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<double> out(x.values().begin() + begin * w,
                          x.values().begin() + (begin + count) * w);
  return make_result(std::move(shape), std::move(out), {x},
                     [begin, w](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, begin, w]() {
                         if (!in[0]->requires_grad) return;
                         auto& g = grad_of(in[0]);
                         for (std::size_t i = 0; i < o->grad.size(); ++i)
                           g[begin * w + i] += o->grad[i];
                       };
                     });
}

Tensor col_slice(const Tensor& x, std::size_t begin, std::size_t count) {
  require(x.rank() == 2, "col_slice: input must be rank 2");
  require(begin + count <= x.dim(1), "col_slice: range exceeds " + shape_str(x.shape()));
  std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.values()[i * c + begin + j];
  return make_result({r, count}, std::move(out), {x},
                     [r, c, begin, count](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, r, c, begin, count]() {
                         if (!in[0]->requires_grad) return;
                         auto& g = grad_of(in[0]);
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < count; ++j)
                             g[i * c + begin + j] += o->grad[i * count + j];
                       };
                     });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index) {
  require(x.rank() >= 1, "gather_rows: input must have rank >= 1");
  std::size_t w = row_width(x);
  for (auto i : index)
    require(i < x.dim(0), "gather_rows: index " + std::to_string(i) + " out of range for " +
                              shape_str(x.shape()));
  Shape shape = x.shape();
  shape[0] = index.size();
  std::vector<double> out(index.size() * w);
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy_n(x.values().begin() + index[r] * w, w, out.begin() + r * w);
  return make_result(std::move(shape), std::move(out), {x},
                     [index, w](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, index, w]() {
                         if (!in[0]->requires_grad) return;
                         auto& g = grad_of(in[0]);
                         for (std::size_t r = 0; r < index.size(); ++r)
                           for (std::size_t j = 0; j < w; ++j)
                             g[index[r] * w + j] += o->grad[r * w + j];
                       };
                     });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({1}, {total}, {x}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (double& v : g) v += o->grad[0];
    };
  });
}

Tensor mean(const Tensor& x) {
  require(x.size() > 0, "mean: empty tensor");
  double total = 0.0;
  for (double v : x.values()) total += v;
  double inv = 1.0 / static_cast<double>(x.size());
  return make_result({1}, {total * inv}, {x}, [inv](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, inv]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (double& v : g) v += o->grad[0] * inv;
    };
  });
}

Tensor row_sum(const Tensor& x) {
  require(x.rank() == 2, "row_sum: input must be rank 2");
  std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x.values()[i * c + j];
  return make_result({r}, std::move(out), {x}, [r, c](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, r, c]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o->grad[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require(x.rank() >= 1, "softmax_rows: input must have rank >= 1");
  std::size_t c = x.dim(x.rank() - 1);
  std::size_t rows = x.size() / c;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x.values().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x},
                     [rows, c](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, rows, c]() {
                         if (!in[0]->requires_grad) return;
                         auto& g = grad_of(in[0]);
                         for (std::size_t i = 0; i < rows; ++i) {
                           double dot = 0.0;
                           for (std::size_t j = 0; j < c; ++j)
                             dot += o->grad[i * c + j] * o->data[i * c + j];
                           for (std::size_t j = 0; j < c; ++j)
                             g[i * c + j] += o->data[i * c + j] * (o->grad[i * c + j] - dot);
                         }
                       };
                     });
}

Tensor log(const Tensor& x, double floor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::log(floor > 0.0 ? std::max(x.values()[i], floor) : x.values()[i]);
  return make_result(x.shape(), std::move(out), {x}, [floor](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, floor]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double v = in[0]->data[i];
        if (floor > 0.0 && v < floor) continue;  // flat region of log(max(x, floor))
        g[i] += o->grad[i] / v;
      }
    };
  });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.values()[i]);
  return make_result(x.shape(), std::move(out), {x}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * o->data[i];
    };
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.values()[i], 0.0);
  return make_result(x.shape(), std::move(out), {x}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (in[0]->data[i] > 0.0) g[i] += o->grad[i];
    };
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  return make_result(x.shape(), std::move(out), {x}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double v = in[0]->data[i];
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        g[i] += o->grad[i] * (cdf + v * pdf);
      }
    };
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.values()[i]));
  return make_result(x.shape(), std::move(out), {x}, [](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double y = o->data[i];
        g[i] += o->grad[i] * y * (1.0 - y);
      }
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.rank() >= 1, "layer_norm: input must have rank >= 1");
  std::size_t c = x.dim(x.rank() - 1);
  require(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
          "layer_norm: gamma/beta must be length " + std::to_string(c));
  std::size_t rows = x.size() / c;
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x.values().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[i] = iv;
    for (std::size_t j = 0; j < c; ++j) {
      double h = (row[j] - mu) * iv;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = gamma.values()[j] * h + beta.values()[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, c, xhat, inv](ImplPtr o, std::vector<ImplPtr> in) {
        return [o, in, rows, c, xhat, inv]() {
          for (std::size_t i = 0; i < rows; ++i) {
            if (in[0]->requires_grad) {
              double m1 = 0.0, m2 = 0.0;
              for (std::size_t j = 0; j < c; ++j) {
                double dh = o->grad[i * c + j] * in[1]->data[j];
                m1 += dh;
                m2 += dh * (*xhat)[i * c + j];
              }
              m1 /= static_cast<double>(c);
              m2 /= static_cast<double>(c);
              auto& g = grad_of(in[0]);
              for (std::size_t j = 0; j < c; ++j) {
                double dh = o->grad[i * c + j] * in[1]->data[j];
                g[i * c + j] += (*inv)[i] * (dh - m1 - (*xhat)[i * c + j] * m2);
              }
            }
            if (in[1]->requires_grad) {
              auto& g = grad_of(in[1]);
              for (std::size_t j = 0; j < c; ++j)
                g[j] += o->grad[i * c + j] * (*xhat)[i * c + j];
            }
            if (in[2]->requires_grad) {
              auto& g = grad_of(in[2]);
              for (std::size_t j = 0; j < c; ++j) g[j] += o->grad[i * c + j];
            }
          }
        };
      });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) {
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_result(x.shape(), std::move(out), {x}, [](ImplPtr o, std::vector<ImplPtr> in) {
      return [o, in]() {
        if (!in[0]->requires_grad) return;
        auto& g = grad_of(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      };
    });
  }
  double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double m = rng.uniform() >= rate ? keep_scale : 0.0;
    (*mask)[i] = m;
    out[i] = x.values()[i] * m;
  }
  return make_result(x.shape(), std::move(out), {x}, [mask](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, mask]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * (*mask)[i];
    };
  });
}

Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     Tensor& running_mean, Tensor& running_var, bool train, double momentum,
                     double eps) {
  require(x.rank() == 2, "batch_norm_1d: input must be rank 2");
  std::size_t B = x.dim(0), C = x.dim(1);
  require(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
          "batch_norm_1d: gamma/beta must be length " + std::to_string(C));
  require(running_mean.rank() == 1 && running_mean.dim(0) == C && running_var.rank() == 1 &&
              running_var.dim(0) == C,
          "batch_norm_1d: running stats must be length " + std::to_string(C));
  require(!train || B > 0, "batch_norm_1d: training needs a non-empty batch");

  std::vector<double> out(B * C);
  auto xhat = std::make_shared<std::vector<double>>(B * C);
  auto inv = std::make_shared<std::vector<double>>(C);
  if (train) {
    for (std::size_t jc = 0; jc < C; ++jc) {
      double mu = 0.0;
      for (std::size_t i = 0; i < B; ++i) mu += x.values()[i * C + jc];
      mu /= static_cast<double>(B);
      double var = 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        double d = x.values()[i * C + jc] - mu;
        var += d * d;
      }
      var /= static_cast<double>(B);  // biased, matching the normalizer
      double iv = 1.0 / std::sqrt(var + eps);
      (*inv)[jc] = iv;
      for (std::size_t i = 0; i < B; ++i) {
        double h = (x.values()[i * C + jc] - mu) * iv;
        (*xhat)[i * C + jc] = h;
        out[i * C + jc] = gamma.values()[jc] * h + beta.values()[jc];
      }
      running_mean.values_mut()[jc] = momentum * running_mean.values()[jc] + (1.0 - momentum) * mu;
      running_var.values_mut()[jc] = momentum * running_var.values()[jc] + (1.0 - momentum) * var;
    }
  } else {
    for (std::size_t jc = 0; jc < C; ++jc) {
      double iv = 1.0 / std::sqrt(running_var.values()[jc] + eps);
      (*inv)[jc] = iv;
      for (std::size_t i = 0; i < B; ++i) {
        double h = (x.values()[i * C + jc] - running_mean.values()[jc]) * iv;
        (*xhat)[i * C + jc] = h;
        out[i * C + jc] = gamma.values()[jc] * h + beta.values()[jc];
      }
    }
  }
  return make_result(
      {B, C}, std::move(out), {x, gamma, beta},
      [B, C, xhat, inv, train](ImplPtr o, std::vector<ImplPtr> in) {
        return [o, in, B, C, xhat, inv, train]() {
          for (std::size_t jc = 0; jc < C; ++jc) {
            if (in[0]->requires_grad) {
              auto& g = grad_of(in[0]);
              if (train) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < B; ++i) {
                  double dh = o->grad[i * C + jc] * in[1]->data[jc];
                  m1 += dh;
                  m2 += dh * (*xhat)[i * C + jc];
                }
                m1 /= static_cast<double>(B);
                m2 /= static_cast<double>(B);
                for (std::size_t i = 0; i < B; ++i) {
                  double dh = o->grad[i * C + jc] * in[1]->data[jc];
                  g[i * C + jc] += (*inv)[jc] * (dh - m1 - (*xhat)[i * C + jc] * m2);
                }
              } else {
                for (std::size_t i = 0; i < B; ++i)
                  g[i * C + jc] += o->grad[i * C + jc] * in[1]->data[jc] * (*inv)[jc];
              }
            }
            if (in[1]->requires_grad) {
              auto& g = grad_of(in[1]);
              for (std::size_t i = 0; i < B; ++i)
                g[jc] += o->grad[i * C + jc] * (*xhat)[i * C + jc];
            }
            if (in[2]->requires_grad) {
              auto& g = grad_of(in[2]);
              for (std::size_t i = 0; i < B; ++i) g[jc] += o->grad[i * C + jc];
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Model-specific restructuring
// ---------------------------------------------------------------------------

Tensor patchify(const Tensor& images, std::size_t patch) {
  require(images.rank() == 4, "patchify: input must be [batch, height, width, channels]");
  std::size_t B = images.dim(0), H = images.dim(1), W = images.dim(2), C = images.dim(3);
  require(patch > 0 && H % patch == 0 && W % patch == 0,
          "patchify: patch " + std::to_string(patch) + " does not tile " +
              shape_str(images.shape()));
  std::size_t gh = H / patch, gw = W / patch, n = gh * gw, w = patch * patch * C;
  std::vector<double> out(B * n * w);
  auto src_index = [=](std::size_t b, std::size_t y, std::size_t x, std::size_t ch) {
    return ((b * H + y) * W + x) * C + ch;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px) {
        std::size_t row = (b * n + py * gw + px) * w;
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx)
            for (std::size_t ch = 0; ch < C; ++ch)
              out[row + (dy * patch + dx) * C + ch] =
                  images.values()[src_index(b, py * patch + dy, px * patch + dx, ch)];
      }
  return make_result(
      {B * n, w}, std::move(out), {images},
      [B, H, W, C, patch, gh, gw, n, w, src_index](ImplPtr o, std::vector<ImplPtr> in) {
        return [o, in, B, patch, gh, gw, n, w, C, src_index]() {
          if (!in[0]->requires_grad) return;
          auto& g = grad_of(in[0]);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t py = 0; py < gh; ++py)
              for (std::size_t px = 0; px < gw; ++px) {
                std::size_t row = (b * n + py * gw + px) * w;
                for (std::size_t dy = 0; dy < patch; ++dy)
                  for (std::size_t dx = 0; dx < patch; ++dx)
                    for (std::size_t ch = 0; ch < C; ++ch)
                      g[src_index(b, py * patch + dy, px * patch + dx, ch)] +=
                          o->grad[row + (dy * patch + dx) * C + ch];
              }
        };
      });
}

Tensor prepend_token(const Tensor& tokens, const Tensor& token_row, std::size_t batch) {
  require(tokens.rank() == 2, "prepend_token: tokens must be rank 2");
  require(batch > 0 && tokens.dim(0) % batch == 0,
          "prepend_token: rows of " + shape_str(tokens.shape()) + " not divisible by batch " +
              std::to_string(batch));
  std::size_t n = tokens.dim(0) / batch, d = tokens.dim(1);
  require(token_row.rank() == 2 && token_row.dim(0) == 1 && token_row.dim(1) == d,
          "prepend_token: token row must be [1," + std::to_string(d) + "]");
  std::size_t t = n + 1;
  std::vector<double> out(batch * t * d);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(token_row.values().begin(), d, out.begin() + b * t * d);
    std::copy_n(tokens.values().begin() + b * n * d, n * d, out.begin() + (b * t + 1) * d);
  }
  return make_result({batch, t, d}, std::move(out), {tokens, token_row},
                     [batch, n, d, t](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, batch, n, d, t]() {
                         if (in[0]->requires_grad) {
                           auto& g = grad_of(in[0]);
                           for (std::size_t b = 0; b < batch; ++b)
                             for (std::size_t i = 0; i < n * d; ++i)
                               g[b * n * d + i] += o->grad[(b * t + 1) * d + i];
                         }
                         if (in[1]->requires_grad) {
                           auto& g = grad_of(in[1]);
                           for (std::size_t b = 0; b < batch; ++b)
                             for (std::size_t j = 0; j < d; ++j) g[j] += o->grad[b * t * d + j];
                         }
                       };
                     });
}

Tensor add_pos(const Tensor& seq, const Tensor& pos) {
  require(seq.rank() == 3, "add_pos: sequence must be [batch, tokens, dim]");
  std::size_t B = seq.dim(0), T = seq.dim(1), D = seq.dim(2);
  require(pos.rank() == 2 && pos.dim(0) == T && pos.dim(1) == D,
          "add_pos: positions " + shape_str(pos.shape()) + " do not match " +
              shape_str(seq.shape()));
  std::vector<double> out(seq.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < T * D; ++i)
      out[b * T * D + i] = seq.values()[b * T * D + i] + pos.values()[i];
  return make_result(seq.shape(), std::move(out), {seq, pos},
                     [B, T, D](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, B, T, D]() {
                         if (in[0]->requires_grad) {
                           auto& g = grad_of(in[0]);
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
                         }
                         if (in[1]->requires_grad) {
                           auto& g = grad_of(in[1]);
                           for (std::size_t b = 0; b < B; ++b)
                             for (std::size_t i = 0; i < T * D; ++i)
                               g[i] += o->grad[b * T * D + i];
                         }
                       };
                     });
}

Tensor select_token(const Tensor& seq, std::size_t index) {
  require(seq.rank() == 3, "select_token: sequence must be [batch, tokens, dim]");
  std::size_t B = seq.dim(0), T = seq.dim(1), D = seq.dim(2);
  require(index < T, "select_token: index " + std::to_string(index) + " out of range for " +
                         shape_str(seq.shape()));
  std::vector<double> out(B * D);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(seq.values().begin() + (b * T + index) * D, D, out.begin() + b * D);
  return make_result({B, D}, std::move(out), {seq},
                     [B, T, D, index](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, B, T, D, index]() {
                         if (!in[0]->requires_grad) return;
                         auto& g = grad_of(in[0]);
                         for (std::size_t b = 0; b < B; ++b)
                           for (std::size_t j = 0; j < D; ++j)
                             g[(b * T + index) * D + j] += o->grad[b * D + j];
                       };
                     });
}

namespace {

// Forward permutation shared by to_heads/from_heads: flat destination index
// in [B*H, T, hd] for flat source index in [B*T, D].
void head_split(std::span<const double> src, std::span<double> dst, std::size_t B, std::size_t T,
                std::size_t H, std::size_t hd, bool invert) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < hd; ++j) {
          std::size_t flat_tokens = (b * T + t) * (H * hd) + h * hd + j;
          std::size_t flat_heads = ((b * H + h) * T + t) * hd + j;
          if (invert)
            dst[flat_tokens] += src[flat_heads];
          else
            dst[flat_heads] += src[flat_tokens];
        }
}

}  // namespace

Tensor to_heads(const Tensor& x, std::size_t batch, std::size_t tokens, std::size_t heads) {
  require(x.rank() == 2, "to_heads: input must be rank 2");
  require(x.dim(0) == batch * tokens, "to_heads: rows of " + shape_str(x.shape()) +
                                          " must equal batch*tokens = " +
                                          std::to_string(batch * tokens));
  require(heads > 0 && x.dim(1) % heads == 0,
          "to_heads: dim " + std::to_string(x.dim(1)) + " not divisible by heads " +
              std::to_string(heads));
  std::size_t hd = x.dim(1) / heads;
  std::vector<double> out(x.size(), 0.0);
  head_split(x.values(), out, batch, tokens, heads, hd, false);
  return make_result({batch * heads, tokens, hd}, std::move(out), {x},
                     [batch, tokens, heads, hd](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, batch, tokens, heads, hd]() {
                         if (!in[0]->requires_grad) return;
                         head_split(o->grad, grad_of(in[0]), batch, tokens, heads, hd, true);
                       };
                     });
}

Tensor from_heads(const Tensor& x, std::size_t batch, std::size_t tokens, std::size_t heads) {
  require(x.rank() == 3, "from_heads: input must be rank 3");
  require(x.dim(0) == batch * heads && x.dim(1) == tokens,
          "from_heads: " + shape_str(x.shape()) + " does not match batch " +
              std::to_string(batch) + ", tokens " + std::to_string(tokens) + ", heads " +
              std::to_string(heads));
  std::size_t hd = x.dim(2);
  std::vector<double> out(x.size(), 0.0);
  head_split(x.values(), out, batch, tokens, heads, hd, true);
  return make_result({batch * tokens, heads * hd}, std::move(out), {x},
                     [batch, tokens, heads, hd](ImplPtr o, std::vector<ImplPtr> in) {
                       return [o, in, batch, tokens, heads, hd]() {
                         if (!in[0]->requires_grad) return;
                         head_split(o->grad, grad_of(in[0]), batch, tokens, heads, hd, false);
                       };
                     });
}

Tensor gather_labels(const Tensor& probs, const std::vector<std::size_t>& labels) {
  require(probs.rank() == 2, "gather_labels: input must be rank 2");
  std::size_t B = probs.dim(0), K = probs.dim(1);
  require(labels.size() == B, "gather_labels: need one label per row");
  for (auto l : labels)
    require(l < K, "gather_labels: label " + std::to_string(l) + " out of range for " +
                       std::to_string(K) + " classes");
  std::vector<double> out(B);
  for (std::size_t i = 0; i < B; ++i) out[i] = probs.values()[i * K + labels[i]];
  return make_result({B}, std::move(out), {probs}, [labels, K](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, labels, K]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < labels.size(); ++i) g[i * K + labels[i]] += o->grad[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Gradient-flow control
// ---------------------------------------------------------------------------

Tensor stop_gradient(const Tensor& x) {
  auto impl = make_impl(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  return detail::wrap(impl);  // requires_grad off, nothing recorded
}

Tensor gradient_reversal(const Tensor& x, double lambda) {
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(x.shape(), std::move(out), {x}, [lambda](ImplPtr o, std::vector<ImplPtr> in) {
    return [o, in, lambda]() {
      if (!in[0]->requires_grad) return;
      auto& g = grad_of(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= lambda * o->grad[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

namespace {

const Tensor& arg(const std::vector<Tensor>& inputs, std::size_t i, const std::string& kind,
                  std::size_t expected) {
  if (inputs.size() != expected)
    throw ShapeError(kind + ": expects " + std::to_string(expected) + " inputs, got " +
                     std::to_string(inputs.size()));
  return inputs[i];
}

double need_scalar(const OpAttrs& attrs, const std::string& key, const std::string& kind) {
  auto it = attrs.scalars.find(key);
  if (it == attrs.scalars.end()) throw ContractError(kind + ": missing attribute '" + key + "'");
  return it->second;
}

const std::vector<std::size_t>& need_indices(const OpAttrs& attrs, const std::string& key,
                                             const std::string& kind) {
  auto it = attrs.indices.find(key);
  if (it == attrs.indices.end()) throw ContractError(kind + ": missing attribute '" + key + "'");
  return it->second;
}

std::size_t as_index(double v) { return static_cast<std::size_t>(v); }

}  // namespace

Tensor forward_op(const std::string& kind, const std::vector<Tensor>& inputs,
                  const OpAttrs& attrs) {
  auto in1 = [&](std::size_t i = 0) -> const Tensor& { return arg(inputs, i, kind, 1); };
  auto in2 = [&](std::size_t i) -> const Tensor& { return arg(inputs, i, kind, 2); };
  auto in3 = [&](std::size_t i) -> const Tensor& { return arg(inputs, i, kind, 3); };

  if (kind == "matmul") return matmul(in2(0), in2(1));
  if (kind == "bmm") return bmm(in2(0), in2(1), attrs.scalar_or("transpose_b", 0.0) != 0.0);
  if (kind == "transpose") return transpose(in1());
  if (kind == "add") return add(in2(0), in2(1));
  if (kind == "sub") return sub(in2(0), in2(1));
  if (kind == "mul") return mul(in2(0), in2(1));
  if (kind == "add_bias") return add_bias(in2(0), in2(1));
  if (kind == "scale") return scale(in1(), need_scalar(attrs, "value", kind));
  if (kind == "add_scalar") return add_scalar(in1(), need_scalar(attrs, "value", kind));
  if (kind == "clamp")
    return clamp(in1(), need_scalar(attrs, "lo", kind), need_scalar(attrs, "hi", kind));
  if (kind == "reshape") return reshape(in1(), need_indices(attrs, "shape", kind));
  if (kind == "concat_rows") return concat_rows(in2(0), in2(1));
  if (kind == "slice_rows")
    return slice_rows(in1(), as_index(need_scalar(attrs, "begin", kind)),
                      as_index(need_scalar(attrs, "count", kind)));
  if (kind == "col_slice")
    return col_slice(in1(), as_index(need_scalar(attrs, "begin", kind)),
                     as_index(need_scalar(attrs, "count", kind)));
  if (kind == "gather_rows") return gather_rows(in1(), need_indices(attrs, "index", kind));
  if (kind == "sum") return sum(in1());
  if (kind == "mean") return mean(in1());
  if (kind == "row_sum") return row_sum(in1());
  if (kind == "softmax_rows") return softmax_rows(in1());
  if (kind == "log") return log(in1(), attrs.scalar_or("floor", 0.0));
  if (kind == "exp") return exp(in1());
  if (kind == "relu") return relu(in1());
  if (kind == "gelu") return gelu(in1());
  if (kind == "sigmoid") return sigmoid(in1());
  if (kind == "layer_norm")
    return layer_norm(in3(0), in3(1), in3(2), attrs.scalar_or("eps", 1e-5));
  if (kind == "dropout") {
    if (attrs.rng == nullptr) throw ContractError("dropout: attrs.rng must be set");
    return dropout(in1(), need_scalar(attrs, "rate", kind), *attrs.rng, attrs.train);
  }
  if (kind == "batch_norm_1d") {
    if (inputs.size() != 5) throw ShapeError("batch_norm_1d: expects 5 inputs");
    Tensor running_mean = inputs[3];
    Tensor running_var = inputs[4];
    return batch_norm_1d(inputs[0], inputs[1], inputs[2], running_mean, running_var, attrs.train,
                         attrs.scalar_or("momentum", 0.9), attrs.scalar_or("eps", 1e-5));
  }
  if (kind == "patchify") return patchify(in1(), as_index(need_scalar(attrs, "patch", kind)));
  if (kind == "prepend_token")
    return prepend_token(in2(0), in2(1), as_index(need_scalar(attrs, "batch", kind)));
  if (kind == "add_pos") return add_pos(in2(0), in2(1));
  if (kind == "select_token")
    return select_token(in1(), as_index(need_scalar(attrs, "index", kind)));
  if (kind == "to_heads")
    return to_heads(in1(), as_index(need_scalar(attrs, "batch", kind)),
                    as_index(need_scalar(attrs, "tokens", kind)),
                    as_index(need_scalar(attrs, "heads", kind)));
  if (kind == "from_heads")
    return from_heads(in1(), as_index(need_scalar(attrs, "batch", kind)),
                      as_index(need_scalar(attrs, "tokens", kind)),
                      as_index(need_scalar(attrs, "heads", kind)));
  if (kind == "gather_labels") return gather_labels(in1(), need_indices(attrs, "index", kind));
  if (kind == "stop_gradient") return stop_gradient(in1());
  if (kind == "gradient_reversal")
    return gradient_reversal(in1(), attrs.scalar_or("lambda", 1.0));
  throw UnsupportedOpError(kind);
}

const std::vector<std::string>& op_catalog() {
  static const std::vector<std::string> kOps = {
      "matmul",        "bmm",          "transpose",    "add",
      "sub",           "mul",          "add_bias",     "scale",
      "add_scalar",    "clamp",        "reshape",      "concat_rows",
      "slice_rows",    "col_slice",    "gather_rows",  "sum",
      "mean",          "row_sum",      "softmax_rows", "log",
      "exp",           "relu",         "gelu",         "sigmoid",
      "layer_norm",    "dropout",      "batch_norm_1d", "patchify",
      "prepend_token", "add_pos",      "select_token", "to_heads",
      "from_heads",    "gather_labels", "stop_gradient", "gradient_reversal",
  };
  return kOps;
}

// ---------------------------------------------------------------------------
// Verification helpers
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs, double h) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = fn();
    tape.backward(loss);
    for (auto& t : inputs) {
      if (!t.has_grad()) {
        analytic.emplace_back(t.size(), 0.0);
      } else {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      }
    }
  }

  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto vals = inputs[ti].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double saved = vals[i];
      vals[i] = saved + h;
      double up = fn().item();
      vals[i] = saved - h;
      double down = fn().item();
      vals[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[ti][i];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace ssrt

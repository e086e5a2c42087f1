// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors on a reverse-mode tape. The operator set is exactly
// what the model and losses need: 2-D and batched matmul, row/column
// restructuring, softmax, layer/batch norm, GELU/ReLU/sigmoid, dropout, and
// the gradient-flow primitives (stop_gradient, gradient_reversal).
//
// A Tape and the tensors recorded on it belong to one logical thread.
// Evaluating ops with no active tape (or with all inputs grad-free) computes
// values only.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssrt/rng.hpp"

namespace ssrt {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error("invalid-shape: " + m) {}
};
struct UnsupportedOpError : std::runtime_error {
  explicit UnsupportedOpError(const std::string& m) : std::runtime_error("unsupported-op: " + m) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& m) : std::runtime_error("contract-violation: " + m) {}
};
struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& m) : std::runtime_error("non-finite: " + m) {}
};

class Tape;

class Tensor;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
  const Tape* producer = nullptr;  // tape that recorded the op producing this tensor
};

Tensor wrap(std::shared_ptr<TensorImpl> impl);
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }

  double item() const;  // scalar tensors only

  std::span<const double> values() const { return impl_->data; }
  /// Direct mutation. Valid for leaves between steps (parameter updates,
  /// snapshot restore); mutating a tensor recorded on a live tape corrupts
  /// its backward pass.
  std::span<double> values_mut() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }
  void clear_grad() { impl_->grad.clear(); }

  /// Deep copy, detached from any tape, requires_grad off.
  Tensor clone_detached() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class Tape;
  friend Tensor detail::wrap(std::shared_ptr<detail::TensorImpl>);
};

/// Records one operation list per training step. backward() walks the list
/// in reverse; every node's consumers appear later in the list, so each node
/// is visited once with all downstream contributions already summed.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// Makes this tape the recording target for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() noexcept;

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  /// requires_grad tensor reachable from the loss. Unreachable leaves get
  /// zero-filled gradients. The loss must be a scalar recorded on this tape.
  void backward(const Tensor& loss);

  void record(std::shared_ptr<detail::TensorImpl> out,
              std::vector<std::shared_ptr<detail::TensorImpl>> ins,
              std::function<void()> backward_fn);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> out;
    std::vector<std::shared_ptr<detail::TensorImpl>> ins;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operator catalog. All ops validate shapes, compute values eagerly, and
// record a backward rule when a tape is active and an input requires grad.
// ---------------------------------------------------------------------------

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);          // [m,k]x[k,n] -> [m,n]
Tensor bmm(const Tensor& a, const Tensor& b,              // [N,r,k]x[N,k,c] -> [N,r,c]
           bool transpose_b = false);                     // transpose_b: b is [N,c,k]
Tensor transpose(const Tensor& a);                        // [m,n] -> [n,m]

// Elementwise arithmetic.
Tensor add(const Tensor& a, const Tensor& b);             // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);     // rows of x + bias vector
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor clamp(const Tensor& x, double lo, double hi);      // zero gradient where clamped

// Restructuring.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);     // stack along dim 0
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor col_slice(const Tensor& x, std::size_t begin, std::size_t count);  // [r,c] columns
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index);

// Reductions.
Tensor sum(const Tensor& x);                              // -> scalar
Tensor mean(const Tensor& x);                             // -> scalar
Tensor row_sum(const Tensor& x);                          // [r,c] -> [r]

// Nonlinearities. softmax/log/exp operate elementwise or over the last dim
// for any rank.
Tensor softmax_rows(const Tensor& x);                     // rows sum to 1 within 1e-6
Tensor log(const Tensor& x, double floor = 0.0);          // floor > 0: log(max(x, floor))
Tensor exp(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);                             // exact erf form
Tensor sigmoid(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);                     // per row over last dim
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train);  // inverted scaling

/// BatchNorm over dim 0 of [batch, channels]. Train mode normalizes with
/// batch statistics (biased variance) and folds them into the running
/// buffers with the given momentum; eval mode uses the running buffers.
Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     Tensor& running_mean, Tensor& running_var, bool train,
                     double momentum = 0.9, double eps = 1e-5);

// Model-specific restructuring.
Tensor patchify(const Tensor& images, std::size_t patch);  // [B,H,W,C] -> [B*N, P*P*C]
Tensor prepend_token(const Tensor& tokens, const Tensor& token_row,
                     std::size_t batch);                   // [B*N,D],[1,D] -> [B,N+1,D]
Tensor add_pos(const Tensor& seq, const Tensor& pos);      // [B,T,D] + [T,D]
Tensor select_token(const Tensor& seq, std::size_t index); // [B,T,D] -> [B,D]
Tensor to_heads(const Tensor& x, std::size_t batch, std::size_t tokens,
                std::size_t heads);                        // [B*T,D] -> [B*H,T,D/H]
Tensor from_heads(const Tensor& x, std::size_t batch, std::size_t tokens,
                  std::size_t heads);                      // inverse of to_heads
Tensor gather_labels(const Tensor& probs, const std::vector<std::size_t>& labels);  // [B,K] -> [B]

// Gradient-flow control.
Tensor stop_gradient(const Tensor& x);                     // identity forward, zero backward
Tensor gradient_reversal(const Tensor& x, double lambda);  // identity forward, -lambda backward

// ---------------------------------------------------------------------------
// Name-keyed dispatch over the catalog, for tests and tooling that sweep the
// operator set. Unknown names raise UnsupportedOpError.
// ---------------------------------------------------------------------------
struct OpAttrs {
  std::map<std::string, double> scalars;
  std::map<std::string, std::vector<std::size_t>> indices;
  Rng* rng = nullptr;
  bool train = true;

  double scalar_or(const std::string& key, double fallback) const {
    auto it = scalars.find(key);
    return it == scalars.end() ? fallback : it->second;
  }
};

Tensor forward_op(const std::string& kind, const std::vector<Tensor>& inputs,
                  const OpAttrs& attrs = {});

/// Names accepted by forward_op.
const std::vector<std::string>& op_catalog();

// ---------------------------------------------------------------------------
// Finite-difference oracle. `fn` rebuilds a scalar loss from scratch on each
// call (it must be replay-deterministic: clone any Rng it consumes). Returns
// the max over all elements of all inputs of |analytic - numeric| /
// max(|analytic|, |numeric|, 1e-8). Paths through stop_gradient diverge from
// the numeric value by construction; keep them out of checked inputs.
// ---------------------------------------------------------------------------
double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                  double h = 1e-5);

bool all_finite(const Tensor& t);

}  // namespace ssrt

// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode differentiation tape.
//
// A Tensor is a value: copying it is cheap (storage is shared and copied on
// write) and it never aliases another tensor observably. A tensor produced by
// an operation whose inputs live on a Tape is itself recorded on that tape;
// Tape::backward then walks the recorded nodes in decreasing id order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace zsseg {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class NumericInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tape;

class Tensor {
 public:
  /// Rank-0 tensor holding 0.
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_->size(); }

  std::span<const double> values() const noexcept { return *data_; }
  // Unshares storage and drops the tape link: a mutated value no longer
  // matches what the tape recorded.
  std::span<double> mutable_values();

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool on_tape() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }
  Tensor detach() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

class Gradients;

class Tape {
 public:
  using Accumulator = std::vector<double>;
  // Adds the contribution of grad_out into each input accumulator. Entries of
  // grad_in are null for inputs that are not on the tape.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<Accumulator* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a copy of value as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  Tensor record(std::string_view op, Tensor value, std::span<const Tensor* const> inputs,
                BackwardFn backward);

  Gradients backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op_name(std::size_t node) const { return nodes_.at(node).op; }

 private:
  static constexpr std::size_t kConstant = static_cast<std::size_t>(-1);
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    std::size_t numel = 0;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

class Gradients {
 public:
  /// Gradient with respect to t; zeros when t did not influence the loss.
  Tensor of(const Tensor& t) const;
  bool reached(const Tensor& t) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> acc_;
};

// Test hook: scales the incoming adjoint of every node recorded under `op` by
// 1.5 during backward. Empty string disables.
void set_backward_fault(std::string_view op);

// ---------------------------------------------------------------------------
// Operations. All are differentiable unless stated otherwise.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Broadcasting is limited to identical shapes or a single-element operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor shift(const Tensor& x, double c);
Tensor relu(const Tensor& x);  // subgradient 0 at 0
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// x[..., d] + b[d] for every leading index.
Tensor bias_add(const Tensor& x, const Tensor& b);

/// x / sqrt(|x|^2 + eps) along the last axis.
Tensor normalize_rows(const Tensor& x, double eps = 1e-12);

Tensor softmax(const Tensor& x, std::size_t axis);
/// log(sum(exp(x))) along axis; the axis is removed from the shape.
Tensor logsumexp(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor stack(std::span<const Tensor> parts, std::size_t new_axis);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor take(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// out[i] = x[i, column[i]] for a rank-2 x.
Tensor pick(const Tensor& x, std::span<const std::size_t> column);

/// Sparse linear row mixing: out[r, :] = sum_j w_j * x[src_j, :].
struct RowWeight {
  std::size_t row;
  double weight;
};
using RowMix = std::vector<std::vector<RowWeight>>;
Tensor mix_rows(const Tensor& x, const RowMix& mix);

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradCheckOptions {
  double h = 1e-5;
  // 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

using MultiFn = std::function<Tensor(std::span<const Tensor>)>;

/// Max over checked coordinates of |analytic - numeric| / max(1, |numeric|),
/// numeric being the central difference (f(x+h) - f(x-h)) / 2h.
double grad_check(const MultiFn& f, std::span<const Tensor> inputs, const GradCheckOptions& opts = {});
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace zsseg

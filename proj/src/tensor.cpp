// SPDX-License-Identifier: Apache-2.0
#include "zsseg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "zsseg/rng.hpp"

namespace zsseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::string& fault_op() {
  static std::string op;
  return op;
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(x.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(x.shape()));
  }
}

Tensor emit(std::string_view op, Shape shape, std::vector<double> out,
            std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn) {
  Tensor result(std::move(shape), std::move(out));
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (in->tape() == nullptr) continue;
    if (tape != nullptr && tape != in->tape()) {
      throw std::logic_error(std::string(op) + ": inputs recorded on different tapes");
    }
    tape = in->tape();
  }
  if (tape == nullptr) return result;
  std::vector<const Tensor*> ins(inputs);
  return tape->record(op, std::move(result), ins, std::move(fn));
}

Tensor emit_many(std::string_view op, Shape shape, std::vector<double> out,
                 std::span<const Tensor> inputs, Tape::BackwardFn fn) {
  Tensor result(std::move(shape), std::move(out));
  Tape* tape = nullptr;
  for (const Tensor& in : inputs) {
    if (in.tape() == nullptr) continue;
    if (tape != nullptr && tape != in.tape()) {
      throw std::logic_error(std::string(op) + ": inputs recorded on different tapes");
    }
    tape = in.tape();
  }
  if (tape == nullptr) return result;
  std::vector<const Tensor*> ins;
  ins.reserve(inputs.size());
  for (const Tensor& in : inputs) ins.push_back(&in);
  return tape->record(op, std::move(result), ins, std::move(fn));
}

// Element-wise binary op with identical-shape or single-element broadcasting.
enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

void accumulate_broadcast(Tape::Accumulator* acc, std::span<const double> g, bool scalar) {
  if (acc == nullptr) return;
  if (scalar) {
    double s = 0.0;
    for (double v : g) s += v;
    (*acc)[0] += s;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) (*acc)[i] += g[i];
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor() : data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(shape_numel(shape_), fill)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (data_->size() != shape_numel(shape_)) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_->size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{n, m}, std::move(v));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

std::span<double> Tensor::mutable_values() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  tape_ = nullptr;
  node_ = 0;
  return *data_;
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) needs a rank-2 tensor, got " + shape_str(shape_));
  return (*data_)[row * shape_[1] + col];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = 0;
  return t;
}

// ---------------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
  Tensor t = value.detach();
  nodes_.push_back(Node{"leaf", {}, t.numel(), nullptr});
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  return t;
}

Tensor Tape::record(std::string_view op, Tensor value, std::span<const Tensor* const> inputs,
                    BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  node.numel = value.numel();
  node.backward = std::move(backward);
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) node.inputs.push_back(in->tape() == this ? in->node() : kConstant);
  nodes_.push_back(std::move(node));
  value.tape_ = this;
  value.node_ = nodes_.size() - 1;
  return value;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not recorded on this tape");
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  Gradients grads;
  grads.tape_ = this;
  grads.acc_.resize(nodes_.size());
  grads.acc_[loss.node()] = {1.0};
  const std::string& fault = fault_op();
  std::vector<Accumulator*> ins;
  std::vector<double> scaled;
  for (std::size_t id = loss.node() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (grads.acc_[id].empty() || !node.backward) continue;
    ins.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const std::size_t in = node.inputs[i];
      if (in == kConstant) continue;
      if (grads.acc_[in].empty()) grads.acc_[in].assign(nodes_[in].numel, 0.0);
      ins[i] = &grads.acc_[in];
    }
    std::span<const double> g = grads.acc_[id];
    if (!fault.empty() && node.op == fault) {
      scaled.assign(g.begin(), g.end());
      for (double& v : scaled) v *= 1.5;
      g = scaled;
    }
    node.backward(g, ins);
  }
  return grads;
}

Tensor Gradients::of(const Tensor& t) const {
  if (t.tape() != tape_ || t.node() >= acc_.size() || acc_[t.node()].empty()) {
    return Tensor(t.shape(), 0.0);
  }
  return Tensor(t.shape(), acc_[t.node()]);
}

bool Gradients::reached(const Tensor& t) const {
  return t.tape() == tape_ && t.node() < acc_.size() && !acc_[t.node()].empty();
}

void set_backward_fault(std::string_view op) { fault_op() = std::string(op); }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MapMat(out.data(), m, n).noalias() = CMapMat(a.values().data(), m, k) * CMapMat(b.values().data(), k, n);
  return emit("matmul", {a.dim(0), b.dim(1)}, std::move(out), {&a, &b},
              [a, b, m, k, n](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                CMapMat G(g.data(), m, n);
                if (in[0]) MapMat(in[0]->data(), m, k).noalias() += G * CMapMat(b.values().data(), k, n).transpose();
                if (in[1]) MapMat(in[1]->data(), k, n).noalias() += CMapMat(a.values().data(), m, k).transpose() * G;
              });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto n = static_cast<Eigen::Index>(a.dim(1));
  std::vector<double> out(a.numel());
  MapMat(out.data(), n, m) = CMapMat(a.values().data(), m, n).transpose();
  return emit("transpose", {a.dim(1), a.dim(0)}, std::move(out), {&a},
              [m, n](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (in[0]) MapMat(in[0]->data(), m, n) += CMapMat(g.data(), n, m).transpose();
              });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(a, b, "add");
  const Tensor& big = mode == Broadcast::kLeftScalar ? b : a;
  std::vector<double> out(big.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[mode == Broadcast::kLeftScalar ? 0 : i] + bv[mode == Broadcast::kRightScalar ? 0 : i];
  }
  return emit("add", big.shape(), std::move(out), {&a, &b},
              [mode](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                accumulate_broadcast(in[0], g, mode == Broadcast::kLeftScalar);
                accumulate_broadcast(in[1], g, mode == Broadcast::kRightScalar);
              });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(a, b, "mul");
  const Tensor& big = mode == Broadcast::kLeftScalar ? b : a;
  std::vector<double> out(big.numel());
  auto av = a.values();
  auto bv = b.values();
  const bool ls = mode == Broadcast::kLeftScalar;
  const bool rs = mode == Broadcast::kRightScalar;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[ls ? 0 : i] * bv[rs ? 0 : i];
  return emit("mul", big.shape(), std::move(out), {&a, &b},
              [a, b, ls, rs](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                auto av = a.values();
                auto bv = b.values();
                if (in[0]) {
                  if (ls) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * bv[i];
                    (*in[0])[0] += s;
                  } else {
                    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * bv[rs ? 0 : i];
                  }
                }
                if (in[1]) {
                  if (rs) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * av[i];
                    (*in[1])[0] += s;
                  } else {
                    for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * av[ls ? 0 : i];
                  }
                }
              });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= c;
  return emit("scale", x.shape(), std::move(out), {&x},
              [c](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += c * g[i];
              });
}

Tensor shift(const Tensor& x, double c) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v += c;
  return emit("shift", x.shape(), std::move(out), {&x},
              [](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                accumulate_broadcast(in[0], g, false);
              });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return emit("relu", x.shape(), std::move(out), {&x},
              [x](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                auto xv = x.values();
                for (std::size_t i = 0; i < g.size(); ++i) {
                  if (xv[i] > 0.0) (*in[0])[i] += g[i];
                }
              });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = std::exp(v);
  Tensor y(x.shape(), out);
  return emit("exp", x.shape(), std::move(out), {&x},
              [y](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                auto yv = y.values();
                for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * yv[i];
              });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = std::log(v);
  return emit("log", x.shape(), std::move(out), {&x},
              [x](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                auto xv = x.values();
                for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] / xv[i];
              });
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
  if (x.rank() == 0 || b.rank() != 1 || x.shape().back() != b.dim(0)) {
    throw DimensionError("bias_add: shape mismatch " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  }
  const std::size_t d = b.dim(0);
  const std::size_t rows = d ? x.numel() / d : 0;
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += bv[j];
  }
  return emit("bias_add", x.shape(), std::move(out), {&x, &b},
              [rows, d](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                accumulate_broadcast(in[0], g, false);
                if (!in[1]) return;
                for (std::size_t r = 0; r < rows; ++r) {
                  for (std::size_t j = 0; j < d; ++j) (*in[1])[j] += g[r * d + j];
                }
              });
}

Tensor normalize_rows(const Tensor& x, double eps) {
  if (x.rank() == 0) throw DimensionError("normalize_rows: scalar input");
  if (!(eps > 0.0)) throw std::invalid_argument("normalize_rows: eps must be positive");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d ? x.numel() / d : 0;
  auto xv = x.values();
  std::vector<double> norm(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
    norm[r] = std::sqrt(ss + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / norm[r];
  }
  Tensor y(x.shape(), out);
  return emit("normalize_rows", x.shape(), std::move(out), {&x},
              [y, norm = std::move(norm), d](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                auto yv = y.values();
                for (std::size_t r = 0; r < norm.size(); ++r) {
                  double dot = 0.0;
                  for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * yv[r * d + j];
                  for (std::size_t j = 0; j < d; ++j) {
                    (*in[0])[r * d + j] += (g[r * d + j] - yv[r * d + j] * dot) / norm[r];
                  }
                }
              });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "softmax");
  const AxisSplit s = split_axis(x.shape(), axis);
  auto xv = x.values();
  for (double v : xv) {
    if (!std::isfinite(v)) throw NumericInputError("softmax: non-finite input");
  }
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= z;
    }
  }
  Tensor y(x.shape(), out);
  return emit("softmax", x.shape(), std::move(out), {&x},
              [y, s](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                auto yv = y.values();
                for (std::size_t o = 0; o < s.outer; ++o) {
                  for (std::size_t i = 0; i < s.inner; ++i) {
                    const std::size_t base = o * s.len * s.inner + i;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * yv[base + k * s.inner];
                    for (std::size_t k = 0; k < s.len; ++k) {
                      const std::size_t idx = base + k * s.inner;
                      (*in[0])[idx] += yv[idx] * (g[idx] - dot);
                    }
                  }
                }
              });
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "logsumexp");
  const AxisSplit s = split_axis(x.shape(), axis);
  auto xv = x.values();
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner);
  std::vector<double> weights(x.numel());  // softmax along axis, reused in backward
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        weights[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) weights[base + k * s.inner] /= z;
      out[o * s.inner + i] = mx + std::log(z);
    }
  }
  auto w = std::make_shared<const std::vector<double>>(std::move(weights));
  return emit("logsumexp", std::move(out_shape), std::move(out), {&x},
              [w, s](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                for (std::size_t o = 0; o < s.outer; ++o) {
                  for (std::size_t i = 0; i < s.inner; ++i) {
                    const std::size_t base = o * s.len * s.inner + i;
                    const double go = g[o * s.inner + i];
                    for (std::size_t k = 0; k < s.len; ++k) {
                      (*in[0])[base + k * s.inner] += go * (*w)[base + k * s.inner];
                    }
                  }
                }
              });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  if (x.rank() == 0 || gamma.rank() != 1 || beta.shape() != gamma.shape() || x.shape().back() != gamma.dim(0)) {
    throw DimensionError("layer_norm: shape mismatch " + shape_str(x.shape()) + " with gamma " +
                         shape_str(gamma.shape()));
  }
  const std::size_t d = gamma.dim(0);
  const std::size_t rows = d ? x.numel() / d : 0;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  auto xh = std::make_shared<const std::vector<double>>(std::move(xhat));
  auto isd = std::make_shared<const std::vector<double>>(std::move(inv_std));
  return emit("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
              [xh, isd, gamma, rows, d](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                auto gv = gamma.values();
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* gr = g.data() + r * d;
                  const double* hr = xh->data() + r * d;
                  if (in[0]) {
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double gh = gr[j] * gv[j];
                      m1 += gh;
                      m2 += gh * hr[j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                      (*in[0])[r * d + j] += (*isd)[r] * (gr[j] * gv[j] - m1 - hr[j] * m2);
                    }
                  }
                  if (in[1]) {
                    for (std::size_t j = 0; j < d; ++j) (*in[1])[j] += gr[j] * hr[j];
                  }
                  if (in[2]) {
                    for (std::size_t j = 0; j < d; ++j) (*in[2])[j] += gr[j];
                  }
                }
              });
}

Tensor stack(std::span<const Tensor> parts, std::size_t new_axis) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape& base = parts[0].shape();
  for (const Tensor& p : parts) {
    if (p.shape() != base) {
      throw DimensionError("stack: shape mismatch " + shape_str(base) + " vs " + shape_str(p.shape()));
    }
  }
  if (new_axis > base.size()) throw DimensionError("stack: axis out of range for shape " + shape_str(base));
  std::size_t outer = 1;
  for (std::size_t i = 0; i < new_axis; ++i) outer *= base[i];
  const std::size_t inner = outer ? shape_numel(base) / outer : 0;
  const std::size_t n = parts.size();
  Shape out_shape = base;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(new_axis), n);
  std::vector<double> out(outer * n * inner);
  for (std::size_t p = 0; p < n; ++p) {
    auto pv = parts[p].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * n + p) * inner));
    }
  }
  return emit_many("stack", std::move(out_shape), std::move(out), parts,
                   [outer, inner, n](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                     for (std::size_t p = 0; p < n; ++p) {
                       if (!in[p]) continue;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < inner; ++i) (*in[p])[o * inner + i] += g[(o * n + p) * inner + i];
                       }
                     }
                   });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  check_axis(parts[0], axis, "concat");
  Shape out_shape = parts[0].shape();
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape();
    Shape b = out_shape;
    if (a.size() != b.size()) throw DimensionError("concat: rank mismatch");
    a[axis] = 0;
    b[axis] = 0;
    if (a != b) {
      throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    lens.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].values();
    const std::size_t chunk = lens[p] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * s.inner + offset * s.inner));
    }
    offset += lens[p];
  }
  return emit_many("concat", std::move(out_shape), std::move(out), parts,
                   [lens, s, total](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                     std::size_t offset = 0;
                     for (std::size_t p = 0; p < lens.size(); ++p) {
                       const std::size_t chunk = lens[p] * s.inner;
                       if (in[p]) {
                         for (std::size_t o = 0; o < s.outer; ++o) {
                           const double* src = g.data() + o * total * s.inner + offset * s.inner;
                           double* dst = in[p]->data() + o * chunk;
                           for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                         }
                       }
                       offset += lens[p];
                     }
                   });
}

Tensor take(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices) {
  check_axis(x, axis, "take");
  const AxisSplit s = split_axis(x.shape(), axis);
  for (std::size_t idx : indices) {
    if (idx >= s.len) {
      throw IndexError("take: index " + std::to_string(idx) + " out of range for axis " + std::to_string(axis) +
                       " of shape " + shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[axis] = indices.size();
  const std::size_t k = indices.size();
  std::vector<double> out(s.outer * k * s.inner);
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.len + indices[j]) * s.inner), s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * k + j) * s.inner));
    }
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return emit("take", std::move(out_shape), std::move(out), {&x},
              [idx = std::move(idx), s](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                const std::size_t k = idx.size();
                for (std::size_t o = 0; o < s.outer; ++o) {
                  for (std::size_t j = 0; j < k; ++j) {
                    double* dst = in[0]->data() + (o * s.len + idx[j]) * s.inner;
                    const double* src = g.data() + (o * k + j) * s.inner;
                    for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                  }
                }
              });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) { return take(x, 0, rows); }

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  check_axis(x, axis, "slice");
  if (begin > end || end > x.dim(axis)) {
    throw IndexError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for shape " +
                     shape_str(x.shape()));
  }
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return take(x, axis, idx);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return emit("reshape", std::move(shape), std::move(out), {&x},
              [](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                accumulate_broadcast(in[0], g, false);
              });
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "reduce_sum");
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.len; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.len + k) * s.inner + i];
    }
  }
  return emit("reduce_sum", std::move(out_shape), std::move(out), {&x},
              [s](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                for (std::size_t o = 0; o < s.outer; ++o) {
                  for (std::size_t k = 0; k < s.len; ++k) {
                    for (std::size_t i = 0; i < s.inner; ++i) (*in[0])[(o * s.len + k) * s.inner + i] += g[o * s.inner + i];
                  }
                }
              });
}

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "reduce_mean");
  const std::size_t n = x.dim(axis);
  return scale(reduce_sum(x, axis), n ? 1.0 / static_cast<double>(n) : 0.0);
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return emit("sum", Shape{}, std::vector<double>{s}, {&x},
              [](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                for (double& v : *in[0]) v += g[0];
              });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  return scale(sum(x), n ? 1.0 / static_cast<double>(n) : 0.0);
}

Tensor pick(const Tensor& x, std::span<const std::size_t> column) {
  require_rank(x, 2, "pick");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  if (column.size() != rows) {
    throw DimensionError("pick: " + std::to_string(column.size()) + " indices for shape " + shape_str(x.shape()));
  }
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (column[r] >= cols) {
      throw IndexError("pick: column " + std::to_string(column[r]) + " out of range for shape " + shape_str(x.shape()));
    }
    out[r] = x.values()[r * cols + column[r]];
  }
  std::vector<std::size_t> idx(column.begin(), column.end());
  return emit("pick", Shape{rows}, std::move(out), {&x},
              [idx = std::move(idx), cols](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                for (std::size_t r = 0; r < idx.size(); ++r) (*in[0])[r * cols + idx[r]] += g[r];
              });
}

Tensor mix_rows(const Tensor& x, const RowMix& mix) {
  require_rank(x, 2, "mix_rows");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  std::vector<double> out(mix.size() * d, 0.0);
  auto xv = x.values();
  for (std::size_t r = 0; r < mix.size(); ++r) {
    for (const RowWeight& w : mix[r]) {
      if (w.row >= n) {
        throw IndexError("mix_rows: source row " + std::to_string(w.row) + " out of range for shape " +
                         shape_str(x.shape()));
      }
      const double* src = xv.data() + w.row * d;
      double* dst = out.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += w.weight * src[j];
    }
  }
  auto shared_mix = std::make_shared<const RowMix>(mix);
  return emit("mix_rows", Shape{mix.size(), d}, std::move(out), {&x},
              [shared_mix, d](std::span<const double> g, std::span<Tape::Accumulator* const> in) {
                if (!in[0]) return;
                const RowMix& m = *shared_mix;
                for (std::size_t r = 0; r < m.size(); ++r) {
                  const double* src = g.data() + r * d;
                  for (const RowWeight& w : m[r]) {
                    double* dst = in[0]->data() + w.row * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += w.weight * src[j];
                  }
                }
              });
}

// ---------------------------------------------------------------------------

double grad_check(const MultiFn& f, std::span<const Tensor> inputs, const GradCheckOptions& opts) {
  if (!(opts.h > 0.0)) throw std::invalid_argument("grad_check: step h must be positive");
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& x : inputs) leaves.push_back(tape.leaf(x));
  const Tensor y = f(leaves);
  if (y.numel() != 1) throw DimensionError("grad_check: function must return a scalar, got " + shape_str(y.shape()));
  double worst = 0.0;
  // An output off the tape does not depend on any input; its gradient is zero.
  const Gradients grads = y.on_tape() ? tape.backward(y) : Gradients{};

  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  for (Tensor& p : probe) p = p.detach();
  Rng rng(opts.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = grads.of(leaves[k]);
    std::vector<std::size_t> coords;
    const std::size_t n = inputs[k].numel();
    if (opts.max_coords == 0 || opts.max_coords >= n) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      coords = rng.sample(n, opts.max_coords);
    }
    for (std::size_t c : coords) {
      const double orig = inputs[k].values()[c];
      probe[k].mutable_values()[c] = orig + opts.h;
      const double fp = f(probe).item();
      probe[k].mutable_values()[c] = orig - opts.h;
      const double fm = f(probe).item();
      probe[k].mutable_values()[c] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double err = std::abs(analytic.values()[c] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  GradCheckOptions opts;
  opts.h = h;
  const Tensor inputs[] = {x};
  return grad_check([&f](std::span<const Tensor> xs) { return f(xs[0]); }, inputs, opts);
}

}  // namespace zsseg

// SPDX-License-Identifier: Apache-2.0
#include "zsseg/nn.hpp"

#include <cmath>

namespace zsseg {

void LinearParams::collect(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + "weight", &weight);
  out.emplace_back(prefix + "bias", &bias);
}

void MlpParams::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + std::to_string(i) + ".", out);
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + "gamma", &gamma);
  out.emplace_back(prefix + "beta", &beta);
}

void MhaParams::collect(const std::string& prefix, ParamList& out) {
  query.collect(prefix + "q.", out);
  key.collect(prefix + "k.", out);
  value.collect(prefix + "v.", out);
  output.collect(prefix + "o.", out);
}

void TdParams::collect(const std::string& prefix, ParamList& out) {
  attention.collect(prefix + "attn.", out);
  norm1.collect(prefix + "ln1.", out);
  mlp.collect(prefix + "mlp.", out);
  norm2.collect(prefix + "ln2.", out);
  output.collect(prefix + "out.", out);
}

Tensor linear(const LinearParams& p, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != p.in_dim()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(p.weight.shape()));
  }
  return bias_add(matmul(x, p.weight), p.bias);
}

Tensor mlp(const MlpParams& p, const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    h = linear(p.layers[i], h);
    if (i + 1 < p.layers.size()) h = relu(h);
  }
  return h;
}

Tensor layer_norm(const LayerNormParams& p, const Tensor& x) { return layer_norm(x, p.gamma, p.beta, p.eps); }

MhaOutput mha(const MhaParams& p, const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("mha: expected rank-2 q, k, v");
  }
  if (k.dim(0) == 0) throw std::invalid_argument("mha: attention memory is empty (n_k = 0)");
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("mha: key rows " + std::to_string(k.dim(0)) + " != value rows " + std::to_string(v.dim(0)));
  }
  const std::size_t d = p.model_dim();
  if (q.dim(1) != d || k.dim(1) != d || v.dim(1) != d) {
    throw DimensionError("mha: model dim " + std::to_string(d) + " vs q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t heads = p.heads;
  const std::size_t dh = p.head_dim();
  const Tensor Q = linear(p.query, q);
  const Tensor K = linear(p.key, k);
  const Tensor V = linear(p.value, v);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  std::vector<Tensor> attns;
  outs.reserve(heads);
  attns.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor Qh = heads == 1 ? Q : slice(Q, 1, h * dh, (h + 1) * dh);
    const Tensor Kh = heads == 1 ? K : slice(K, 1, h * dh, (h + 1) * dh);
    const Tensor Vh = heads == 1 ? V : slice(V, 1, h * dh, (h + 1) * dh);
    const Tensor logits = scale(matmul(Qh, transpose(Kh)), inv_sqrt);
    Tensor a = softmax(logits, 1);
    outs.push_back(matmul(a, Vh));
    attns.push_back(std::move(a));
  }
  const Tensor merged = heads == 1 ? outs.front() : concat(outs, 1);
  return MhaOutput{linear(p.output, merged), stack(attns, 0)};
}

Tensor td(const TdParams& p, const Tensor& q, const Tensor& k, const Tensor& v) {
  const Tensor Q = layer_norm(p.norm1, add(mha(p.attention, q, k, v).out, q));
  return linear(p.output, layer_norm(p.norm2, add(mlp(p.mlp, Q), Q)));
}

Tensor self_attention_block(const TdParams& p, const Tensor& x) { return td(p, x, x, x); }

LinearParams init_linear(std::size_t d_in, std::size_t d_out, Rng& rng) {
  if (d_in == 0 || d_out == 0) throw std::invalid_argument("init_linear: dimensions must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
  std::vector<double> w(d_in * d_out);
  for (double& x : w) x = rng.uniform(-limit, limit);
  return LinearParams{Tensor({d_in, d_out}, std::move(w)), Tensor({d_out}, 0.0)};
}

MlpParams init_mlp(const std::vector<std::size_t>& dims, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("init_mlp: need at least input and output dims");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) p.layers.push_back(init_linear(dims[i], dims[i + 1], rng));
  return p;
}

LayerNormParams init_layer_norm(std::size_t d, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer norm eps must be positive");
  return LayerNormParams{Tensor({d}, 1.0), Tensor({d}, 0.0), eps};
}

MhaParams init_mha(std::size_t d, std::size_t heads, Rng& rng) {
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("init_mha: model dim " + std::to_string(d) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  MhaParams p;
  p.query = init_linear(d, d, rng);
  p.key = init_linear(d, d, rng);
  p.value = init_linear(d, d, rng);
  p.output = init_linear(d, d, rng);
  p.heads = heads;
  return p;
}

TdParams init_td(std::size_t d, std::size_t heads, std::size_t mlp_hidden, Rng& rng) {
  TdParams p;
  p.attention = init_mha(d, heads, rng);
  p.norm1 = init_layer_norm(d);
  p.mlp = init_mlp({d, mlp_hidden, d}, rng);
  p.norm2 = init_layer_norm(d);
  p.output = init_linear(d, d, rng);
  return p;
}

std::size_t count_params(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t->numel();
  return n;
}

}  // namespace zsseg

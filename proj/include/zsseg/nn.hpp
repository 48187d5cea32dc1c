// SPDX-License-Identifier: Apache-2.0
//
// Parameterized building blocks: linear maps, MLPs, multi-head attention and
// the transformer-decoder block used for cross-modal enhancement:
//
//   Q  = LN(CrossAttention(q, k, v) + q)
//   TD = Linear(LN(MLP(Q) + Q))

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "zsseg/rng.hpp"
#include "zsseg/tensor.hpp"

namespace zsseg {

/// Named mutable references into a parameter tree, in a fixed order.
using ParamList = std::vector<std::pair<std::string, Tensor*>>;

struct LinearParams {
  Tensor weight;  // [d_in, d_out]
  Tensor bias;    // [d_out]

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  void collect(const std::string& prefix, ParamList& out);
};

/// Linear layers with ReLU between consecutive layers (none after the last).
struct MlpParams {
  std::vector<LinearParams> layers;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
  void collect(const std::string& prefix, ParamList& out);
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
  void collect(const std::string& prefix, ParamList& out);
};

/// Head h owns columns [h*d/H, (h+1)*d/H) of the query/key/value projections.
struct MhaParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
  std::size_t heads = 1;

  std::size_t model_dim() const { return query.in_dim(); }
  std::size_t head_dim() const { return model_dim() / heads; }
  void collect(const std::string& prefix, ParamList& out);
};

struct TdParams {
  MhaParams attention;
  LayerNormParams norm1;
  MlpParams mlp;
  LayerNormParams norm2;
  LinearParams output;

  std::size_t model_dim() const { return attention.model_dim(); }
  void collect(const std::string& prefix, ParamList& out);
};

struct MhaOutput {
  Tensor out;   // [n_q, d]
  Tensor attn;  // [H, n_q, n_k]
};

Tensor linear(const LinearParams& p, const Tensor& x);
Tensor mlp(const MlpParams& p, const Tensor& x);
Tensor layer_norm(const LayerNormParams& p, const Tensor& x);
MhaOutput mha(const MhaParams& p, const Tensor& q, const Tensor& k, const Tensor& v);
Tensor td(const TdParams& p, const Tensor& q, const Tensor& k, const Tensor& v);
Tensor self_attention_block(const TdParams& p, const Tensor& x);

// Xavier-uniform weights, zero biases, unit gamma.
LinearParams init_linear(std::size_t d_in, std::size_t d_out, Rng& rng);
MlpParams init_mlp(const std::vector<std::size_t>& dims, Rng& rng);
LayerNormParams init_layer_norm(std::size_t d, double eps = 1e-5);
MhaParams init_mha(std::size_t d, std::size_t heads, Rng& rng);
TdParams init_td(std::size_t d, std::size_t heads, std::size_t mlp_hidden, Rng& rng);

/// Total number of scalar parameters referenced by the list.
std::size_t count_params(const ParamList& params);

}  // namespace zsseg

// SPDX-License-Identifier: Apache-2.0
#include "zsseg/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <span>

#include "zsseg/alignment.hpp"
#include "zsseg/nn.hpp"
#include "zsseg/sgvf.hpp"
#include "zsseg/svfe.hpp"
#include "zsseg/tensor.hpp"
#include "zsseg/trainer.hpp"

namespace zsseg {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

// Scalar readout with fixed random weights so every output entry matters.
struct Probe {
  Rng rng;
  explicit Probe(std::uint64_t seed) : rng(seed) {}
  Tensor operator()(const Tensor& y) {
    const Tensor w = random_tensor(y.shape(), rng);
    return sum(mul(y, w));
  }
};

// Checks f over `extra` inputs plus every tensor referenced by `params`.
double check_with_params(const ParamList& params, const std::vector<Tensor>& extra,
                         const std::function<Tensor(std::span<const Tensor>)>& f, const GradCheckOptions& opts) {
  std::vector<Tensor> inputs = extra;
  for (const auto& [name, t] : params) inputs.push_back(*t);
  const std::size_t n_extra = extra.size();
  return grad_check(
      [&](std::span<const Tensor> xs) {
        for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = xs[n_extra + i];
        return f(xs.first(n_extra));
      },
      inputs, opts);
}

double tensor_ops(const GradCheckOptions& opts, Rng& rng) {
  double worst = 0.0;
  auto run = [&](std::vector<Tensor> xs, std::function<Tensor(std::span<const Tensor>)> f) {
    const std::uint64_t seed = rng.next();
    worst = std::max(worst, grad_check(
                                [&](std::span<const Tensor> in) {
                                  Probe probe(seed);
                                  return probe(f(in));
                                },
                                xs, opts));
  };
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 5}, rng);
  const Tensor c = random_tensor({3, 4}, rng);
  const Tensor bias = random_tensor({4}, rng);
  const Tensor s = random_tensor({1}, rng);

  run({a, b}, [](auto x) { return matmul(x[0], x[1]); });
  run({a}, [](auto x) { return transpose(x[0]); });
  run({a, c}, [](auto x) { return add(x[0], x[1]); });
  run({a, c}, [](auto x) { return sub(x[0], x[1]); });
  run({a, c}, [](auto x) { return mul(x[0], x[1]); });
  run({a, s}, [](auto x) { return mul(x[0], x[1]); });
  run({a}, [](auto x) { return shift(scale(x[0], -1.7), 0.3); });
  run({a}, [](auto x) { return relu(x[0]); });
  run({a}, [](auto x) { return exp(x[0]); });
  run({a}, [](auto x) { return log(shift(mul(x[0], x[0]), 0.5)); });
  run({a, bias}, [](auto x) { return bias_add(x[0], x[1]); });
  run({a}, [](auto x) { return normalize_rows(x[0]); });
  run({a}, [](auto x) { return softmax(x[0], 0); });
  run({a}, [](auto x) { return softmax(x[0], 1); });
  run({a}, [](auto x) { return logsumexp(x[0], 0); });
  run({a}, [](auto x) { return logsumexp(x[0], 1); });
  run({a, bias, random_tensor({4}, rng)}, [](auto x) { return layer_norm(x[0], x[1], x[2]); });
  run({a, c}, [](auto x) {
    const Tensor parts[] = {x[0], x[1]};
    return stack(parts, 0);
  });
  run({a, c}, [](auto x) {
    const Tensor parts[] = {x[0], x[1]};
    return concat(parts, 1);
  });
  run({a}, [](auto x) {
    const std::size_t idx[] = {3, 0, 3};
    return take(x[0], 1, idx);
  });
  run({a}, [](auto x) {
    const std::size_t idx[] = {2, 2, 0, 1};
    return gather_rows(x[0], idx);
  });
  run({a}, [](auto x) { return slice(x[0], 1, 1, 3); });
  run({a}, [](auto x) { return reshape(x[0], {2, 6}); });
  run({a}, [](auto x) { return reduce_sum(x[0], 0); });
  run({a}, [](auto x) { return reduce_mean(x[0], 1); });
  run({a}, [](auto x) { return scale(sum(x[0]), 1.0); });
  run({a}, [](auto x) { return scale(mean(x[0]), 1.0); });
  run({a}, [](auto x) {
    const std::size_t col[] = {1, 3, 0};
    return pick(x[0], col);
  });
  run({a}, [](auto x) {
    const RowMix mix = {{{0, 0.25}, {2, 0.75}}, {}, {{1, 1.0}, {1, -0.5}}};
    return mix_rows(x[0], mix);
  });
  return worst;
}

struct Dims {
  std::size_t d = 8;
  std::size_t heads = 2;
  std::size_t hidden = 16;
  std::size_t t = 8;
  std::size_t c = 5;
};

double mha_block(const GradCheckOptions& opts, Rng& rng, const Dims& dm) {
  MhaParams p = init_mha(dm.d, dm.heads, rng);
  ParamList params;
  p.collect("", params);
  const std::uint64_t seed = rng.next();
  return check_with_params(
      params, {random_tensor({dm.c, dm.d}, rng), random_tensor({dm.t, dm.d}, rng), random_tensor({dm.t, dm.d}, rng)},
      [&](std::span<const Tensor> x) {
        Probe probe(seed);
        const MhaOutput o = mha(p, x[0], x[1], x[2]);
        return add(probe(o.out), probe(o.attn));
      },
      opts);
}

double td_block(const GradCheckOptions& opts, Rng& rng, const Dims& dm) {
  TdParams p = init_td(dm.d, dm.heads, dm.hidden, rng);
  ParamList params;
  p.collect("", params);
  const std::uint64_t seed = rng.next();
  return check_with_params(
      params, {random_tensor({dm.c, dm.d}, rng), random_tensor({dm.t, dm.d}, rng), random_tensor({dm.t, dm.d}, rng)},
      [&](std::span<const Tensor> x) {
        Probe probe(seed);
        return probe(td(p, x[0], x[1], x[2]));
      },
      opts);
}

std::vector<std::uint8_t> mixed_validity(std::size_t t) {
  std::vector<std::uint8_t> v(t, 1);
  for (std::size_t i = 0; i < t; i += 3) v[i] = 0;
  return v;
}

double svfe_block(const GradCheckOptions& opts, Rng& rng, const Dims& dm) {
  SvfeParams p = init_svfe(dm.d, dm.heads, dm.hidden, rng);
  ParamList params;
  p.collect("", params);
  const auto valid = mixed_validity(dm.t);
  const std::uint64_t seed = rng.next();
  return check_with_params(
      params, {random_tensor({dm.c, dm.d}, rng), random_tensor({dm.t, dm.d}, rng), random_tensor({dm.t, dm.d}, rng)},
      [&](std::span<const Tensor> x) {
        Probe probe(seed);
        const SvfeOutput o = run_svfe(p, x[0], x[1], x[2], valid);
        return add(add(probe(o.semantic), probe(o.points)), probe(o.image));
      },
      opts);
}

double sgvf_block(const GradCheckOptions& opts, Rng& rng, const Dims& dm) {
  SgvfParams p = init_sgvf(dm.d, dm.heads, dm.hidden, rng);
  ParamList params;
  p.collect("", params);
  const auto valid = mixed_validity(dm.t);
  const std::uint64_t seed = rng.next();
  return check_with_params(
      params, {random_tensor({dm.c, dm.d}, rng), random_tensor({dm.t, dm.d}, rng), random_tensor({dm.t, dm.d}, rng)},
      [&](std::span<const Tensor> x) {
        Probe probe(seed);
        const Gates g = compute_gates(p, x[0], x[1], x[2]);
        const FuseResult f = fuse(p, g, x[1], x[2], valid);
        return add(probe(f.fused), probe(f.weight_3d));
      },
      opts);
}

std::vector<std::int32_t> mixed_labels(std::size_t t, std::size_t n_seen) {
  std::vector<std::int32_t> y(t);
  for (std::size_t i = 0; i < t; ++i) {
    y[i] = i % 3 == 2 ? kUnlabeled : static_cast<std::int32_t>(i % n_seen);
  }
  return y;
}

double loss_block(const GradCheckOptions& opts, Rng& rng, const Dims& dm, bool seen_term) {
  const auto y = mixed_labels(dm.t, 3);
  std::vector<bool> seen(dm.c, false);
  for (std::size_t i = 0; i < 3; ++i) seen[i] = true;
  const std::vector<Tensor> xs = {random_tensor({dm.t, dm.c}, rng, -2.0, 2.0)};
  return grad_check(
      [&](std::span<const Tensor> x) {
        return seen_term ? loss_seen(x[0], y, 0.1) : loss_unseen(x[0], y, seen, 0.1);
      },
      xs, opts);
}

// A small camera looking down the +x axis; points at odd indices fall
// outside the image.
Scene tiny_scene(const Dims& dm, Rng& rng) {
  Scene s;
  s.camera.fx = s.camera.fy = 4.0;
  s.camera.cx = 4.0;
  s.camera.cy = 3.0;
  s.camera.width = 8;
  s.camera.height = 6;
  s.camera.extrinsics = {0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0, 0, 0, 0, 1};
  s.points = Tensor({dm.t, 3});
  auto p = s.points.mutable_values();
  for (std::size_t i = 0; i < dm.t; ++i) {
    const double x = rng.uniform(4.0, 8.0);
    p[3 * i] = i % 2 == 0 ? x : -x;
    p[3 * i + 1] = rng.uniform(-2.0, 2.0);
    p[3 * i + 2] = rng.uniform(-1.5, 1.5);
  }
  s.attrs = random_tensor({dm.t, 2}, rng);
  s.image = random_tensor({6, 8, 2}, rng, 0.0, 1.0);
  std::vector<std::int32_t> gt(dm.t);
  for (std::size_t i = 0; i < dm.t; ++i) gt[i] = static_cast<std::int32_t>(i % dm.c);
  s.set_ground_truth(gt);
  s.train_labels = mixed_labels(dm.t, 3);
  return s;
}

double end_to_end_block(const GradCheckOptions& opts, Rng& rng, const Dims& dm) {
  ModelConfig mc;
  mc.dim = dm.d;
  mc.heads = dm.heads;
  mc.td_hidden = dm.hidden;
  mc.semantic_hidden = 6;
  const std::size_t dw = 10;
  ModelState model = init_model(mc, 2, 2, dw, rng.next());
  const Scene scene = tiny_scene(dm, rng);
  const PreparedScene prep = prepare_scene(scene);
  std::vector<bool> seen(dm.c, false);
  for (std::size_t i = 0; i < 3; ++i) seen[i] = true;
  const Tensor embeddings = random_tensor({dm.c, dw}, rng);
  const ParamList params = model.collect();
  return check_with_params(
      params, {embeddings},
      [&](std::span<const Tensor> x) {
        const ForwardResult r = forward_scene(model, prep, x[0]);
        const Tensor sim = scene_similarity(model, r);
        return loss_total(loss_seen(sim, scene.train_labels, 0.1),
                          loss_unseen(sim, scene.train_labels, seen, 0.1));
      },
      opts);
}

}  // namespace

std::vector<GradcheckBlock> run_gradcheck_suite(const GradcheckOptions& options) {
  GradCheckOptions opts;
  opts.h = options.h;
  opts.max_coords = options.max_coords;
  opts.seed = mix_seed(options.seed, 0x9c);
  Rng rng(mix_seed(options.seed, 0x9d));
  const Dims dm;
  const std::pair<const char*, std::function<double()>> blocks[] = {
      {"tensor_ops", [&] { return tensor_ops(opts, rng); }},
      {"mha", [&] { return mha_block(opts, rng, dm); }},
      {"td", [&] { return td_block(opts, rng, dm); }},
      {"svfe", [&] { return svfe_block(opts, rng, dm); }},
      {"sgvf", [&] { return sgvf_block(opts, rng, dm); }},
      {"loss_seen", [&] { return loss_block(opts, rng, dm, true); }},
      {"loss_unseen", [&] { return loss_block(opts, rng, dm, false); }},
      {"end_to_end", [&] { return end_to_end_block(opts, rng, dm); }},
  };
  std::vector<GradcheckBlock> out;
  for (const auto& [name, fn] : blocks) {
    const auto t0 = std::chrono::steady_clock::now();
    const double err = fn();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    out.push_back({name, err, dt.count()});
  }
  return out;
}

}  // namespace zsseg

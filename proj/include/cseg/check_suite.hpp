#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cseg/activation.hpp"
#include "cseg/batch_norm.hpp"
#include "cseg/concat.hpp"
#include "cseg/conv.hpp"
#include "cseg/gradcheck.hpp"
#include "cseg/loss.hpp"
#include "cseg/network.hpp"
#include "cseg/pool.hpp"
#include "cseg/rng.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// One named entry of the layer-wise gradient check suite.
struct LayerCheckResult {
  std::string layer;
  GradCheckReport report;
};

/// Test hook: mutate the analytic gradient before the comparison runs.
/// Lets tests prove that a wrong gradient is actually detected.
using AnalyticHook = std::function<void(const std::string& layer, std::vector<double>& analytic)>;

namespace detail {

inline void fill_uniform(TensorT<double>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.data) v = rng.uniform(lo, hi);
}

inline double dot_loss(const TensorT<double>& y, const TensorT<double>& c) {
  double s = 0.0;
  for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * c.data[i];
  return s;
}

inline void pack(std::vector<double>& dst, const TensorT<double>& t) {
  dst.insert(dst.end(), t.data.begin(), t.data.end());
}

inline size_t unpack(const std::vector<double>& src, size_t off, TensorT<double>& t) {
  std::copy(src.begin() + static_cast<std::ptrdiff_t>(off),
            src.begin() + static_cast<std::ptrdiff_t>(off + t.data.size()), t.data.begin());
  return off + t.data.size();
}

inline GradCheckReport finish_check(const std::function<double(const std::vector<double>&)>& f,
                                    const std::vector<double>& x0, std::vector<double> analytic,
                                    double h, double tol, const std::string& name,
                                    const AnalyticHook& hook,
                                    const std::vector<int64_t>& indices = {}) {
  if (hook) hook(name, analytic);
  return grad_check(f, x0, analytic, h, tol, indices);
}

inline GradCheckReport check_conv2d(uint64_t seed, const AnalyticHook& hook) {
  Rng rng(Rng::derive(seed, 11));
  TensorT<double> x({2, 2, 5, 5}), w({3, 2, 3, 3}), b({3});
  fill_uniform(x, rng);
  fill_uniform(w, rng);
  fill_uniform(b, rng);
  ConvScratch<double> scratch;
  TensorT<double> y;
  conv2d_forward(x, w, b, y, scratch);
  TensorT<double> c(y.shape);
  fill_uniform(c, rng);

  TensorT<double> dx, dw, db;
  conv2d_backward(x, w, c, &dx, dw, db, scratch);
  std::vector<double> x0, analytic;
  pack(x0, x);
  pack(x0, w);
  pack(x0, b);
  pack(analytic, dx);
  pack(analytic, dw);
  pack(analytic, db);

  TensorT<double> xx = x, ww = w, bb = b, yy;
  ConvScratch<double> fs;
  const auto f = [&](const std::vector<double>& p) {
    size_t off = unpack(p, 0, xx);
    off = unpack(p, off, ww);
    unpack(p, off, bb);
    conv2d_forward(xx, ww, bb, yy, fs);
    return dot_loss(yy, c);
  };
  return finish_check(f, x0, std::move(analytic), 1e-3, 1e-4, "conv2d", hook);
}

inline GradCheckReport check_conv1x1(uint64_t seed, const AnalyticHook& hook) {
  Rng rng(Rng::derive(seed, 12));
  TensorT<double> x({2, 3, 4, 4}), w({2, 3, 1, 1}), b({2});
  fill_uniform(x, rng);
  fill_uniform(w, rng);
  fill_uniform(b, rng);
  TensorT<double> y;
  conv1x1_forward(x, w, b, y);
  TensorT<double> c(y.shape);
  fill_uniform(c, rng);

  TensorT<double> dx, dw, db;
  conv1x1_backward(x, w, c, &dx, dw, db);
  std::vector<double> x0, analytic;
  pack(x0, x);
  pack(x0, w);
  pack(x0, b);
  pack(analytic, dx);
  pack(analytic, dw);
  pack(analytic, db);

  TensorT<double> xx = x, ww = w, bb = b, yy;
  const auto f = [&](const std::vector<double>& p) {
    size_t off = unpack(p, 0, xx);
    off = unpack(p, off, ww);
    unpack(p, off, bb);
    conv1x1_forward(xx, ww, bb, yy);
    return dot_loss(yy, c);
  };
  return finish_check(f, x0, std::move(analytic), 1e-3, 1e-4, "conv1x1", hook);
}

inline GradCheckReport check_batch_norm(uint64_t seed, const AnalyticHook& hook) {
  Rng rng(Rng::derive(seed, 13));
  TensorT<double> x({2, 3, 4, 4}), gamma({3}), beta({3});
  fill_uniform(x, rng);
  fill_uniform(gamma, rng, 0.5, 1.5);
  fill_uniform(beta, rng, -0.5, 0.5);

  RunningStatsT<double> stats(3);
  BnCache<double> cache;
  TensorT<double> y;
  batch_norm_forward(x, gamma, beta, stats, BnMode::train, y, &cache);
  TensorT<double> c(y.shape);
  fill_uniform(c, rng);

  TensorT<double> dx, dgamma, dbeta;
  batch_norm_backward(cache, gamma, c, dx, dgamma, dbeta);
  std::vector<double> x0, analytic;
  pack(x0, x);
  pack(x0, gamma);
  pack(x0, beta);
  pack(analytic, dx);
  pack(analytic, dgamma);
  pack(analytic, dbeta);

  TensorT<double> xx = x, gg = gamma, bb = beta, yy;
  const auto f = [&](const std::vector<double>& p) {
    size_t off = unpack(p, 0, xx);
    off = unpack(p, off, gg);
    unpack(p, off, bb);
    RunningStatsT<double> fresh(3);
    batch_norm_forward(xx, gg, bb, fresh, BnMode::train, yy);
    return dot_loss(yy, c);
  };
  return finish_check(f, x0, std::move(analytic), 1e-4, 1e-4, "batch_norm", hook);
}

inline GradCheckReport check_relu(uint64_t seed, const AnalyticHook& hook) {
  Rng rng(Rng::derive(seed, 14));
  TensorT<double> x({1, 3, 6, 6});
  // Keep every value at least 0.05 from the kink so the finite-difference
  // probe never crosses it.
  for (auto& v : x.data) {
    const double u = rng.uniform(-0.95, 0.95);
    v = u + (u >= 0.0 ? 0.05 : -0.05);
  }
  TensorT<double> y = relu(x);
  TensorT<double> c(y.shape);
  fill_uniform(c, rng);

  TensorT<double> dx;
  relu_backward(y, c, dx);
  std::vector<double> x0, analytic;
  pack(x0, x);
  pack(analytic, dx);

  TensorT<double> xx = x;
  const auto f = [&](const std::vector<double>& p) {
    unpack(p, 0, xx);
    return dot_loss(relu(xx), c);
  };
  return finish_check(f, x0, std::move(analytic), 1e-3, 1e-4, "relu", hook);
}

inline GradCheckReport check_max_pool2(uint64_t seed, const AnalyticHook& hook) {
  Rng rng(Rng::derive(seed, 15));
  TensorT<double> x({1, 2, 6, 6});
  // Parity offsets separate the four values of every pooling window by at
  // least 0.02, far beyond the probe step, so the argmax never flips.
  for (int64_t ch = 0; ch < 2; ++ch)
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t j = 0; j < 6; ++j)
        x.data[static_cast<size_t>((ch * 6 + i) * 6 + j)] =
            rng.uniform(-0.04, 0.04) + 0.1 * static_cast<double>((i % 2) * 2 + (j % 2));
  TensorT<double> y;
  max_pool2_forward(x, y);
  TensorT<double> c(y.shape);
  fill_uniform(c, rng);

  TensorT<double> dx;
  max_pool2_backward(x, c, dx);
  std::vector<double> x0, analytic;
  pack(x0, x);
  pack(analytic, dx);

  TensorT<double> xx = x, yy;
  const auto f = [&](const std::vector<double>& p) {
    unpack(p, 0, xx);
    max_pool2_forward(xx, yy);
    return dot_loss(yy, c);
  };
  return finish_check(f, x0, std::move(analytic), 1e-3, 1e-4, "max_pool2", hook);
}

inline GradCheckReport check_transposed_conv(uint64_t seed, const AnalyticHook& hook) {
  Rng rng(Rng::derive(seed, 16));
  const int64_t factor = 2;
  TensorT<double> x({1, 2, 4, 4}), w({2, 4, 4}), b({2});
  fill_uniform(x, rng);
  fill_uniform(w, rng);
  fill_uniform(b, rng);
  TensorT<double> y;
  transposed_conv_forward(x, factor, w, b, y);
  TensorT<double> c(y.shape);
  fill_uniform(c, rng);

  TensorT<double> dx, dw, db;
  transposed_conv_backward(x, factor, w, c, &dx, dw, db);
  std::vector<double> x0, analytic;
  pack(x0, x);
  pack(x0, w);
  pack(x0, b);
  pack(analytic, dx);
  pack(analytic, dw);
  pack(analytic, db);

  TensorT<double> xx = x, ww = w, bb = b, yy;
  const auto f = [&](const std::vector<double>& p) {
    size_t off = unpack(p, 0, xx);
    off = unpack(p, off, ww);
    unpack(p, off, bb);
    transposed_conv_forward(xx, factor, ww, bb, yy);
    return dot_loss(yy, c);
  };
  return finish_check(f, x0, std::move(analytic), 1e-3, 1e-4, "transposed_conv", hook);
}

inline GradCheckReport check_concat(uint64_t seed, const AnalyticHook& hook) {
  Rng rng(Rng::derive(seed, 17));
  TensorT<double> a({1, 2, 3, 3}), b({1, 3, 3, 3});
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  TensorT<double> y = concat_channels<double>({&a, &b});
  TensorT<double> c(y.shape);
  fill_uniform(c, rng);

  TensorT<double> da, db;
  concat_channels_backward(c, std::vector<TensorT<double>*>{&da, &db});
  std::vector<double> x0, analytic;
  pack(x0, a);
  pack(x0, b);
  pack(analytic, da);
  pack(analytic, db);

  TensorT<double> aa = a, bb = b;
  const auto f = [&](const std::vector<double>& p) {
    size_t off = unpack(p, 0, aa);
    unpack(p, off, bb);
    return dot_loss(concat_channels<double>({&aa, &bb}), c);
  };
  return finish_check(f, x0, std::move(analytic), 1e-3, 1e-4, "concat", hook);
}

inline GradCheckReport check_softmax_ce(uint64_t seed, const AnalyticHook& hook) {
  Rng rng(Rng::derive(seed, 18));
  TensorT<double> logits({2, 4, 3, 3});
  fill_uniform(logits, rng, -2.0, 2.0);
  LabelMap labels({2, 3, 3});
  for (auto& v : labels.data) v = static_cast<int32_t>(rng.below(4));

  TensorT<double> probs, dlogits;
  softmax_cross_entropy(logits, labels, probs, &dlogits);
  std::vector<double> x0, analytic;
  pack(x0, logits);
  pack(analytic, dlogits);

  TensorT<double> ll = logits, pp;
  const auto f = [&](const std::vector<double>& p) {
    unpack(p, 0, ll);
    return softmax_cross_entropy(ll, labels, pp);
  };
  return finish_check(f, x0, std::move(analytic), 1e-4, 1e-4, "softmax_ce", hook);
}

// Full architecture on a 32x32 input: identical layers and branches to the
// 192x192 case. Probes are restricted to weight coordinates whose gradient
// is at least 1e-5; below that, relu/max-pool kink noise in the numeric
// oracle dominates, hence also the looser 1e-3 tolerance.
inline GradCheckReport check_network(uint64_t seed, const AnalyticHook& hook) {
  NetworkConfig cfg;
  cfg.K = 4;
  FcnT<double> net = build_network<double>(cfg, Rng::derive(seed, 19));
  Rng rng(Rng::derive(seed, 20));
  TensorT<double> x({1, 1, 32, 32});
  for (auto& v : x.data) v = rng.uniform();
  LabelMap labels({1, 32, 32});
  for (auto& v : labels.data) v = static_cast<int32_t>(rng.below(4));

  FcnWork<double> work;
  FcnTape<double> tape;
  TensorT<double> logits, probs, dlogits;
  forward_logits(net, x, BnMode::train, logits, &tape, work);
  softmax_cross_entropy(logits, labels, probs, &dlogits);
  backward(net, tape, dlogits, work);

  std::vector<double> x0, analytic;
  for (auto& p : net.params) {
    x0.insert(x0.end(), p.value.data.begin(), p.value.data.end());
    analytic.insert(analytic.end(), p.grad.data.begin(), p.grad.data.end());
  }

  std::vector<int64_t> candidates;
  int64_t off = 0;
  for (auto& p : net.params) {
    const bool is_w = p.name.size() > 2 && p.name.substr(p.name.size() - 2) == ".w";
    if (is_w)
      for (int64_t i = 0; i < p.value.numel(); ++i)
        if (std::abs(p.grad.data[static_cast<size_t>(i)]) >= 1e-5) candidates.push_back(off + i);
    off += p.value.numel();
  }
  if (candidates.size() < 100)
    throw NumericError("gradcheck network: too few resolvable gradient coordinates");
  Rng pick(Rng::derive(seed, 21));
  std::vector<int64_t> indices;
  for (int i = 0; i < 20; ++i)
    indices.push_back(
        candidates[static_cast<size_t>(pick.below(static_cast<int64_t>(candidates.size())))]);

  TensorT<double> lg, pr;
  const auto f = [&](const std::vector<double>& point) {
    size_t k = 0;
    for (auto& p : net.params)
      for (double& v : p.value.data) v = point[k++];
    forward_logits(net, x, BnMode::train, lg, &tape, work);
    const double l = softmax_cross_entropy(lg, labels, pr);
    k = 0;
    for (auto& p : net.params)
      for (double& v : p.value.data) v = x0[k++];
    return l;
  };
  return finish_check(f, x0, std::move(analytic), 1e-6, 1e-3, "network", hook, indices);
}

}  // namespace detail

inline const std::vector<std::string>& layer_check_names() {
  static const std::vector<std::string> names = {
      "conv2d", "conv1x1",        "batch_norm", "relu",   "max_pool2",
      "concat", "transposed_conv", "softmax_ce", "network"};
  return names;
}

/// Runs the named gradient checks (all of them when filter is empty) and
/// returns one report per layer. The hook, when set, may corrupt the
/// analytic gradient first; production callers leave it empty.
inline std::vector<LayerCheckResult> run_layer_checks(const std::vector<std::string>& filter = {},
                                                      uint64_t seed = 0,
                                                      const AnalyticHook& hook = {}) {
  using CheckFn = GradCheckReport (*)(uint64_t, const AnalyticHook&);
  struct Entry {
    const char* name;
    CheckFn fn;
  };
  static const Entry entries[] = {
      {"conv2d", detail::check_conv2d},
      {"conv1x1", detail::check_conv1x1},
      {"batch_norm", detail::check_batch_norm},
      {"relu", detail::check_relu},
      {"max_pool2", detail::check_max_pool2},
      {"concat", detail::check_concat},
      {"transposed_conv", detail::check_transposed_conv},
      {"softmax_ce", detail::check_softmax_ce},
      {"network", detail::check_network},
  };
  for (const std::string& want : filter) {
    bool known = false;
    for (const Entry& e : entries) known = known || want == e.name;
    if (!known) {
      std::string valid;
      for (const Entry& e : entries) valid += std::string(valid.empty() ? "" : ", ") + e.name;
      throw ConfigError("gradcheck: unknown layer '" + want + "' (known: " + valid + ")");
    }
  }
  std::vector<LayerCheckResult> out;
  for (const Entry& e : entries) {
    if (!filter.empty() &&
        std::find(filter.begin(), filter.end(), std::string(e.name)) == filter.end())
      continue;
    out.push_back({e.name, e.fn(seed, hook)});
  }
  return out;
}

}  // namespace cseg

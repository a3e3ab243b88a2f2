#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "cseg/activation.hpp"
#include "cseg/adam.hpp"
#include "cseg/batch_norm.hpp"
#include "cseg/concat.hpp"
#include "cseg/conv.hpp"
#include "cseg/loss.hpp"
#include "cseg/pool.hpp"
#include "cseg/rng.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// Fixed ladder of the segmentation FCN: five scales of 3x3 conv blocks
/// (VGG-style widths), a multi-scale upsample-and-concatenate stage, and a
/// three-layer 1x1 head. 13 + 3 = 16 convolutional layers in total,
/// transposed convolutions excluded.
struct NetworkConfig {
  int K = 4;

  static constexpr int64_t kInputSize = 192;
  static constexpr int kScales = 5;
  static constexpr int64_t kChannels[kScales] = {16, 32, 64, 128, 256};
  static constexpr int kConvsPerScale[kScales] = {2, 2, 3, 3, 3};
  static constexpr int64_t kHeadWidth = 64;
  static constexpr int64_t kConcatChannels = 16 + 32 + 64 + 128 + 256;  // 496

  void validate() const {
    if (K < 2) throw ConfigError("network: K must be at least 2, got " + std::to_string(K));
  }
};

/// The trainable state plus the wiring needed to run it. Parameter and
/// running-stat names are the checkpoint keys; their order here is the
/// serialisation order.
template <typename T>
struct FcnT {
  struct Block {
    std::string name;
    int w = -1, b = -1, gamma = -1, beta = -1;  // indices into params
    int stats = -1;                             // index into stats, -1 = no batch norm
    int64_t cin = 0, cout = 0;
  };
  struct Up {
    std::string name;
    int w = -1, b = -1;
    int64_t factor = 1;
    int64_t channels = 0;
  };

  int K = 0;
  std::vector<ParamT<T>> params;
  std::vector<RunningStatsT<T>> stats;
  std::vector<std::string> stat_names;  // block name owning stats[i]
  uint64_t trained_iterations = 0;

  std::vector<std::vector<Block>> ladder;  // [scale][block]
  std::vector<Up> ups;                     // scales 2..5, factors 2/4/8/16
  Block head1, head2, head3;               // head3 has no batch norm

  ParamT<T>* find(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }

  int64_t total_parameters() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }

  /// 3x3 and 1x1 conv layers only; the up-projections do not count.
  int conv_layer_count() const {
    int n = 3;  // head
    for (const auto& s : ladder) n += static_cast<int>(s.size());
    return n;
  }

  bool stats_initialised() const {
    for (const auto& s : stats)
      if (!s.initialised) return false;
    return true;
  }
  void mark_stats_initialised(bool v) {
    for (auto& s : stats) s.initialised = v;
  }
};

using Fcn = FcnT<float>;

namespace detail {

template <typename T>
int add_param(FcnT<T>& net, const std::string& name, std::vector<int64_t> shape) {
  net.params.emplace_back(name, TensorT<T>(std::move(shape)));
  return static_cast<int>(net.params.size() - 1);
}

template <typename T>
void he_init(TensorT<T>& w, int64_t fan_in, uint64_t seed) {
  Rng rng(seed);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (T& v : w.data) v = static_cast<T>(rng.gaussian(0.0, sd));
}

template <typename T>
typename FcnT<T>::Block add_block(FcnT<T>& net, const std::string& name, int64_t cin, int64_t cout,
                                  int64_t k, uint64_t seed, bool bn) {
  typename FcnT<T>::Block blk;
  blk.name = name;
  blk.cin = cin;
  blk.cout = cout;
  blk.w = add_param(net, name + ".w", {cout, cin, k, k});
  he_init(net.params[static_cast<size_t>(blk.w)].value, cin * k * k,
          Rng::derive(seed, static_cast<uint64_t>(blk.w)));
  blk.b = add_param(net, name + ".b", {cout});
  if (bn) {
    blk.gamma = add_param(net, name + ".bn.gamma", {cout});
    net.params[static_cast<size_t>(blk.gamma)].value.fill(T(1));
    blk.beta = add_param(net, name + ".bn.beta", {cout});
    net.stats.emplace_back(cout);
    net.stat_names.push_back(name);
    blk.stats = static_cast<int>(net.stats.size() - 1);
  }
  return blk;
}

}  // namespace detail

/// Builds the network with He-initialised conv weights (small symmetric init
/// for the final classifier), bilinear up-projection kernels, gamma 1 /
/// beta 0, zero biases. Deterministic for a fixed seed.
template <typename T>
FcnT<T> build_network(const NetworkConfig& config, uint64_t seed) {
  config.validate();
  FcnT<T> net;
  net.K = config.K;
  net.ladder.resize(NetworkConfig::kScales);
  int64_t cin = 1;
  for (int s = 0; s < NetworkConfig::kScales; ++s) {
    const int64_t cout = NetworkConfig::kChannels[s];
    for (int b = 0; b < NetworkConfig::kConvsPerScale[s]; ++b) {
      const std::string name = "s" + std::to_string(s + 1) + "c" + std::to_string(b + 1);
      net.ladder[static_cast<size_t>(s)].push_back(
          detail::add_block(net, name, cin, cout, 3, seed, true));
      cin = cout;
    }
  }
  for (int s = 1; s < NetworkConfig::kScales; ++s) {
    typename FcnT<T>::Up up;
    up.name = "up" + std::to_string(s + 1);
    up.factor = int64_t{1} << s;
    up.channels = NetworkConfig::kChannels[s];
    up.w = detail::add_param(net, up.name + ".w", {up.channels, 2 * up.factor, 2 * up.factor});
    TensorT<T> k = bilinear_kernel<T>(up.factor);
    auto& wv = net.params[static_cast<size_t>(up.w)].value;
    for (int64_t c = 0; c < up.channels; ++c)
      std::copy(k.data.begin(), k.data.end(), wv.data.begin() + c * k.numel());
    up.b = detail::add_param(net, up.name + ".b", {up.channels});
    net.ups.push_back(up);
  }
  net.head1 = detail::add_block(net, "h1", NetworkConfig::kConcatChannels,
                                NetworkConfig::kHeadWidth, 1, seed, true);
  net.head2 =
      detail::add_block(net, "h2", NetworkConfig::kHeadWidth, NetworkConfig::kHeadWidth, 1, seed, true);
  net.head3 = detail::add_block(net, "h3", NetworkConfig::kHeadWidth, config.K, 1, seed, false);
  {
    // The classifier layer is not followed by a relu, so He variance does not
    // apply; a near-zero start keeps the fresh network's class priors uniform.
    auto& w3 = net.params[static_cast<size_t>(net.head3.w)].value;
    Rng r3(Rng::derive(seed, static_cast<uint64_t>(net.head3.w)));
    for (auto& v : w3.data) v = static_cast<T>(r3.gaussian(0.0, 0.01));
  }
  return net;
}

/// Activations retained by a train-mode forward pass for the backward pass.
/// The concatenated multi-scale feature map is deliberately absent: it is
/// rebuilt per image during backward, which keeps the tape two orders of
/// magnitude smaller than storing it.
template <typename T>
struct FcnTape {
  struct BlockTape {
    BnCache<T> bn;   // xhat + per-channel inverse std
    TensorT<T> out;  // post-relu block output
  };
  const TensorT<T>* input = nullptr;  // borrowed from the caller
  std::vector<std::vector<BlockTape>> ladder;
  std::vector<TensorT<T>> pooled;  // inputs to scales 2..5
  BlockTape h1, h2;
  TensorT<T> logits;
};

/// Reusable buffers for forward/backward so the training loop allocates only
/// on its first iteration.
template <typename T>
struct FcnWork {
  ConvScratch<T> conv;
  TensorT<T> conv_out;             // ladder/head pre-BN outputs, whole batch
  TensorT<T> h1conv;               // h1 pre-BN output, whole batch
  TensorT<T> x_img, u_img, du_img, dx_img;  // single-image staging
  std::vector<T> concat_img;       // one image of the 496-channel concat
  std::vector<T> dconcat_img;
  // backward mirrors
  std::vector<std::vector<TensorT<T>>> d_ladder;
  std::vector<TensorT<T>> d_pooled;
  TensorT<T> d_h1out, d_h2out;
};

namespace detail {

template <typename T>
void copy_image(const TensorT<T>& src, int64_t n, TensorT<T>& dst) {
  ensure_shape(dst, {1, src.dim(1), src.dim(2), src.dim(3)});
  const int64_t len = dst.numel();
  std::copy(src.ptr() + n * len, src.ptr() + (n + 1) * len, dst.ptr());
}

template <typename T>
void add_image(TensorT<T>& dst, int64_t n, const TensorT<T>& src) {
  const int64_t len = src.numel();
  T* d = dst.ptr() + n * len;
  for (int64_t i = 0; i < len; ++i) d[i] += src.data[static_cast<size_t>(i)];
}

template <typename T>
void add_image_raw(TensorT<T>& dst, int64_t n, const T* src, int64_t len) {
  T* d = dst.ptr() + n * len;
  for (int64_t i = 0; i < len; ++i) d[i] += src[i];
}

// Builds one image of the concatenated multi-scale features into `out`
// (layout [496, H*W] row-major, i.e. one [1,496,H,W] image).
template <typename T>
void build_concat_image(FcnT<T>& net, FcnTape<T>& tape, FcnWork<T>& work, int64_t n, T* out) {
  const TensorT<T>& s1 = tape.ladder[0].back().out;
  const int64_t HW = s1.dim(2) * s1.dim(3);
  std::copy(s1.ptr() + n * 16 * HW, s1.ptr() + (n + 1) * 16 * HW, out);
  int64_t offset = 16 * HW;
  for (size_t u = 0; u < net.ups.size(); ++u) {
    const auto& up = net.ups[u];
    detail::copy_image(tape.ladder[u + 1].back().out, n, work.x_img);
    transposed_conv_forward(work.x_img, up.factor,
                            net.params[static_cast<size_t>(up.w)].value,
                            net.params[static_cast<size_t>(up.b)].value, work.u_img);
    std::copy(work.u_img.data.begin(), work.u_img.data.end(), out + offset);
    offset += up.channels * HW;
  }
}

}  // namespace detail

/// Runs the network up to the logits. In train mode batch statistics are
/// used and running stats updated; with a tape supplied, everything the
/// backward pass needs is retained. Infer mode with tape == nullptr streams
/// image by image, so large stacks run in bounded memory.
template <typename T>
void forward_logits(FcnT<T>& net, const TensorT<T>& x, BnMode mode, TensorT<T>& logits,
                    FcnTape<T>* tape, FcnWork<T>& work) {
  require_rank(x, 4, "forward");
  const int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
  if (x.dim(1) != 1 || H < 16 || W < 16 || H % 16 != 0 || W % 16 != 0)
    throw ShapeError("forward: want [N,1,H,W] with H, W multiples of 16, got " + x.shape_str());
  const int64_t HW = H * W;

  if (mode == BnMode::train && !tape)
    throw ConfigError("forward: train mode requires a tape");

  if (!tape) {
    // streaming inference
    ensure_shape(logits, {N, net.K, H, W});
    FcnTape<T> t;  // per-image activations, reused across images
    t.ladder.resize(NetworkConfig::kScales);
    for (int s = 0; s < NetworkConfig::kScales; ++s)
      t.ladder[static_cast<size_t>(s)].resize(net.ladder[static_cast<size_t>(s)].size());
    t.pooled.resize(NetworkConfig::kScales - 1);
    for (int64_t n = 0; n < N; ++n) {
      detail::copy_image(x, n, work.x_img);
      TensorT<T> img = work.x_img;  // keep staging buffer free for the head
      const TensorT<T>* cur = &img;
      for (int s = 0; s < NetworkConfig::kScales; ++s) {
        if (s > 0) {
          max_pool2_forward(*cur, t.pooled[static_cast<size_t>(s - 1)]);
          cur = &t.pooled[static_cast<size_t>(s - 1)];
        }
        auto& blocks = net.ladder[static_cast<size_t>(s)];
        for (size_t b = 0; b < blocks.size(); ++b) {
          auto& blk = blocks[b];
          conv2d_forward(*cur, net.params[static_cast<size_t>(blk.w)].value,
                         net.params[static_cast<size_t>(blk.b)].value, work.conv_out, work.conv);
          auto& bt = t.ladder[static_cast<size_t>(s)][b];
          batch_norm_forward(work.conv_out, net.params[static_cast<size_t>(blk.gamma)].value,
                             net.params[static_cast<size_t>(blk.beta)].value,
                             net.stats[static_cast<size_t>(blk.stats)], mode, bt.out, static_cast<BnCache<T>*>(nullptr));
          relu_inplace(bt.out);
          cur = &bt.out;
        }
      }
      work.concat_img.resize(static_cast<size_t>(NetworkConfig::kConcatChannels * HW));
      detail::build_concat_image(net, t, work, 0, work.concat_img.data());
      TensorT<T> cat({1, NetworkConfig::kConcatChannels, H, W}, std::move(work.concat_img));
      TensorT<T> h1out, h2out, li;
      conv1x1_forward(cat, net.params[static_cast<size_t>(net.head1.w)].value,
                      net.params[static_cast<size_t>(net.head1.b)].value, work.h1conv);
      work.concat_img = std::move(cat.data);
      batch_norm_forward(work.h1conv, net.params[static_cast<size_t>(net.head1.gamma)].value,
                         net.params[static_cast<size_t>(net.head1.beta)].value,
                         net.stats[static_cast<size_t>(net.head1.stats)], mode, h1out, static_cast<BnCache<T>*>(nullptr));
      relu_inplace(h1out);
      conv1x1_forward(h1out, net.params[static_cast<size_t>(net.head2.w)].value,
                      net.params[static_cast<size_t>(net.head2.b)].value, work.conv_out);
      batch_norm_forward(work.conv_out, net.params[static_cast<size_t>(net.head2.gamma)].value,
                         net.params[static_cast<size_t>(net.head2.beta)].value,
                         net.stats[static_cast<size_t>(net.head2.stats)], mode, h2out, static_cast<BnCache<T>*>(nullptr));
      relu_inplace(h2out);
      conv1x1_forward(h2out, net.params[static_cast<size_t>(net.head3.w)].value,
                      net.params[static_cast<size_t>(net.head3.b)].value, li);
      std::copy(li.data.begin(), li.data.end(), logits.ptr() + n * net.K * HW);
    }
    return;
  }

  // tape-building pass over the whole batch
  tape->input = &x;
  tape->ladder.resize(NetworkConfig::kScales);
  for (int s = 0; s < NetworkConfig::kScales; ++s)
    tape->ladder[static_cast<size_t>(s)].resize(net.ladder[static_cast<size_t>(s)].size());
  tape->pooled.resize(NetworkConfig::kScales - 1);

  const TensorT<T>* cur = &x;
  for (int s = 0; s < NetworkConfig::kScales; ++s) {
    if (s > 0) {
      max_pool2_forward(*cur, tape->pooled[static_cast<size_t>(s - 1)]);
      cur = &tape->pooled[static_cast<size_t>(s - 1)];
    }
    auto& blocks = net.ladder[static_cast<size_t>(s)];
    for (size_t b = 0; b < blocks.size(); ++b) {
      auto& blk = blocks[b];
      conv2d_forward(*cur, net.params[static_cast<size_t>(blk.w)].value,
                     net.params[static_cast<size_t>(blk.b)].value, work.conv_out, work.conv);
      auto& bt = tape->ladder[static_cast<size_t>(s)][b];
      batch_norm_forward(work.conv_out, net.params[static_cast<size_t>(blk.gamma)].value,
                         net.params[static_cast<size_t>(blk.beta)].value,
                         net.stats[static_cast<size_t>(blk.stats)], mode, bt.out, &bt.bn);
      relu_inplace(bt.out);
      cur = &bt.out;
    }
  }

  // head: h1 is computed per image from the rebuilt concat
  ensure_shape(work.h1conv, {N, NetworkConfig::kHeadWidth, H, W});
  work.concat_img.resize(static_cast<size_t>(NetworkConfig::kConcatChannels * HW));
  {
    const auto& w1 = net.params[static_cast<size_t>(net.head1.w)].value;
    const auto& b1 = net.params[static_cast<size_t>(net.head1.b)].value;
    Eigen::Map<const MatX<T>> wm(w1.ptr(), NetworkConfig::kConcatChannels,
                                 NetworkConfig::kHeadWidth);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(b1.ptr(), NetworkConfig::kHeadWidth);
    for (int64_t n = 0; n < N; ++n) {
      detail::build_concat_image(net, *tape, work, n, work.concat_img.data());
      Eigen::Map<const MatX<T>> cat(work.concat_img.data(), HW, NetworkConfig::kConcatChannels);
      Eigen::Map<MatX<T>> out(work.h1conv.ptr() + n * NetworkConfig::kHeadWidth * HW, HW,
                              NetworkConfig::kHeadWidth);
      out.noalias() = cat * wm;
      out.rowwise() += bm;
    }
  }
  batch_norm_forward(work.h1conv, net.params[static_cast<size_t>(net.head1.gamma)].value,
                     net.params[static_cast<size_t>(net.head1.beta)].value,
                     net.stats[static_cast<size_t>(net.head1.stats)], mode, tape->h1.out,
                     &tape->h1.bn);
  relu_inplace(tape->h1.out);

  conv1x1_forward(tape->h1.out, net.params[static_cast<size_t>(net.head2.w)].value,
                  net.params[static_cast<size_t>(net.head2.b)].value, work.conv_out);
  batch_norm_forward(work.conv_out, net.params[static_cast<size_t>(net.head2.gamma)].value,
                     net.params[static_cast<size_t>(net.head2.beta)].value,
                     net.stats[static_cast<size_t>(net.head2.stats)], mode, tape->h2.out,
                     &tape->h2.bn);
  relu_inplace(tape->h2.out);

  conv1x1_forward(tape->h2.out, net.params[static_cast<size_t>(net.head3.w)].value,
                  net.params[static_cast<size_t>(net.head3.b)].value, tape->logits);
  logits = tape->logits;
}

/// Per-pixel class probabilities, [N,K,H,W]. Inputs must arrive on a valid
/// grid (H, W multiples of 16, nominally 192); there is no implicit resize.
template <typename T>
TensorT<T> forward(FcnT<T>& net, const TensorT<T>& x, BnMode mode) {
  FcnWork<T> work;
  FcnTape<T> tape;
  TensorT<T> logits;
  forward_logits(net, x, mode, logits, mode == BnMode::train ? &tape : nullptr, work);
  TensorT<T> probs(logits.shape);
  const int64_t N = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  std::vector<double> z(static_cast<size_t>(K));
  for (int64_t n = 0; n < N; ++n) {
    const T* lb = logits.ptr() + n * K * HW;
    T* pb = probs.ptr() + n * K * HW;
    for (int64_t i = 0; i < HW; ++i) {
      double m = static_cast<double>(lb[i]);
      for (int64_t k = 1; k < K; ++k) m = std::max(m, static_cast<double>(lb[k * HW + i]));
      double sum = 0.0;
      for (int64_t k = 0; k < K; ++k) {
        z[static_cast<size_t>(k)] = std::exp(static_cast<double>(lb[k * HW + i]) - m);
        sum += z[static_cast<size_t>(k)];
      }
      for (int64_t k = 0; k < K; ++k)
        pb[k * HW + i] = static_cast<T>(z[static_cast<size_t>(k)] / sum);
    }
  }
  return probs;
}

/// Argmax over the class axis; ties resolve to the lowest class index.
template <typename T>
LabelMap predict_segmentation(const TensorT<T>& probs) {
  require_rank(probs, 4, "predict_segmentation");
  const int64_t N = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  const int64_t HW = H * W;
  LabelMap out({N, H, W});
  for (int64_t n = 0; n < N; ++n) {
    const T* pb = probs.ptr() + n * K * HW;
    for (int64_t i = 0; i < HW; ++i) {
      int32_t best = 0;
      T bp = pb[i];
      for (int64_t k = 1; k < K; ++k)
        if (pb[k * HW + i] > bp) {
          bp = pb[k * HW + i];
          best = static_cast<int32_t>(k);
        }
      out.data[static_cast<size_t>(n * HW + i)] = best;
    }
  }
  return out;
}

/// Backpropagates dlogits through the tape, accumulating into param grads
/// (which are zeroed first).
template <typename T>
void backward(FcnT<T>& net, FcnTape<T>& tape, const TensorT<T>& dlogits, FcnWork<T>& work) {
  const int64_t N = tape.input->dim(0), H = tape.input->dim(2), W = tape.input->dim(3);
  const int64_t HW = H * W;
  for (auto& p : net.params) p.zero_grad();

  auto p = [&](int i) -> TensorT<T>& { return net.params[static_cast<size_t>(i)].value; };
  auto g = [&](int i) -> TensorT<T>& { return net.params[static_cast<size_t>(i)].grad; };

  // gradient mirrors of the retained activations
  work.d_ladder.resize(tape.ladder.size());
  for (size_t s = 0; s < tape.ladder.size(); ++s) {
    work.d_ladder[s].resize(tape.ladder[s].size());
    for (size_t b = 0; b < tape.ladder[s].size(); ++b) {
      ensure_shape(work.d_ladder[s][b], tape.ladder[s][b].out.shape);
      work.d_ladder[s][b].zero();
    }
  }
  work.d_pooled.resize(tape.pooled.size());
  for (size_t i = 0; i < tape.pooled.size(); ++i) {
    ensure_shape(work.d_pooled[i], tape.pooled[i].shape);
    work.d_pooled[i].zero();
  }
  ensure_shape(work.d_h2out, tape.h2.out.shape);
  work.d_h2out.zero();
  ensure_shape(work.d_h1out, tape.h1.out.shape);
  work.d_h1out.zero();

  // h3
  conv1x1_backward(tape.h2.out, p(net.head3.w), dlogits, &work.d_h2out, g(net.head3.w),
                   g(net.head3.b));
  // h2
  relu_mask_inplace(tape.h2.out, work.d_h2out);
  batch_norm_backward_inplace(tape.h2.bn, p(net.head2.gamma), work.d_h2out, g(net.head2.gamma),
                              g(net.head2.beta));
  conv1x1_backward(tape.h1.out, p(net.head2.w), work.d_h2out, &work.d_h1out, g(net.head2.w),
                   g(net.head2.b));
  // h1
  relu_mask_inplace(tape.h1.out, work.d_h1out);
  batch_norm_backward_inplace(tape.h1.bn, p(net.head1.gamma), work.d_h1out, g(net.head1.gamma),
                              g(net.head1.beta));

  // h1 conv + upsample branches, image by image over the rebuilt concat
  work.concat_img.resize(static_cast<size_t>(NetworkConfig::kConcatChannels * HW));
  work.dconcat_img.resize(static_cast<size_t>(NetworkConfig::kConcatChannels * HW));
  {
    Eigen::Map<const MatX<T>> wm(p(net.head1.w).ptr(), NetworkConfig::kConcatChannels,
                                 NetworkConfig::kHeadWidth);
    Eigen::Map<MatX<T>> dwm(g(net.head1.w).ptr(), NetworkConfig::kConcatChannels,
                            NetworkConfig::kHeadWidth);
    for (int64_t n = 0; n < N; ++n) {
      detail::build_concat_image(net, tape, work, n, work.concat_img.data());
      Eigen::Map<const MatX<T>> cat(work.concat_img.data(), HW, NetworkConfig::kConcatChannels);
      Eigen::Map<const MatX<T>> dh1(work.d_h1out.ptr() + n * NetworkConfig::kHeadWidth * HW, HW,
                                    NetworkConfig::kHeadWidth);
      dwm.noalias() += cat.transpose() * dh1;
      detail::add_col_sums(work.d_h1out.ptr() + n * NetworkConfig::kHeadWidth * HW,
                           NetworkConfig::kHeadWidth, HW, g(net.head1.b).ptr());
      Eigen::Map<MatX<T>> dcat(work.dconcat_img.data(), HW, NetworkConfig::kConcatChannels);
      dcat.noalias() = dh1 * wm.transpose();

      // scale-1 slice feeds through unchanged
      detail::add_image_raw(work.d_ladder[0].back(), n, work.dconcat_img.data(), 16 * HW);
      int64_t offset = 16 * HW;
      for (size_t u = 0; u < net.ups.size(); ++u) {
        const auto& up = net.ups[u];
        const auto& src = tape.ladder[u + 1].back().out;
        detail::copy_image(src, n, work.x_img);
        ensure_shape(work.du_img, {1, up.channels, H, W});
        std::copy(work.dconcat_img.data() + offset,
                  work.dconcat_img.data() + offset + up.channels * HW, work.du_img.ptr());
        ensure_shape(work.dx_img, work.x_img.shape);
        work.dx_img.zero();
        transposed_conv_backward(work.x_img, up.factor, p(up.w), work.du_img, &work.dx_img,
                                 g(up.w), g(up.b));
        detail::add_image(work.d_ladder[u + 1].back(), n, work.dx_img);
        offset += up.channels * HW;
      }
    }
  }

  // ladder, top scale down
  for (int s = NetworkConfig::kScales - 1; s >= 0; --s) {
    auto& blocks = net.ladder[static_cast<size_t>(s)];
    for (int b = static_cast<int>(blocks.size()) - 1; b >= 0; --b) {
      auto& blk = blocks[static_cast<size_t>(b)];
      auto& bt = tape.ladder[static_cast<size_t>(s)][static_cast<size_t>(b)];
      TensorT<T>& d = work.d_ladder[static_cast<size_t>(s)][static_cast<size_t>(b)];
      relu_mask_inplace(bt.out, d);
      batch_norm_backward_inplace(bt.bn, p(blk.gamma), d, g(blk.gamma), g(blk.beta));
      const TensorT<T>* in;
      TensorT<T>* din;
      if (b > 0) {
        in = &tape.ladder[static_cast<size_t>(s)][static_cast<size_t>(b - 1)].out;
        din = &work.d_ladder[static_cast<size_t>(s)][static_cast<size_t>(b - 1)];
      } else if (s > 0) {
        in = &tape.pooled[static_cast<size_t>(s - 1)];
        din = &work.d_pooled[static_cast<size_t>(s - 1)];
      } else {
        in = tape.input;
        din = nullptr;  // input gradient unused
      }
      conv2d_backward(*in, p(blk.w), d, din, g(blk.w), g(blk.b), work.conv);
    }
    if (s > 0) {
      // route the pooled gradient down into the previous scale's last output
      max_pool2_backward(tape.ladder[static_cast<size_t>(s - 1)].back().out,
                         work.d_pooled[static_cast<size_t>(s - 1)],
                         work.d_ladder[static_cast<size_t>(s - 1)].back());
    }
  }
}

}  // namespace cseg

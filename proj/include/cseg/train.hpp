#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cseg/adam.hpp"
#include "cseg/augment.hpp"
#include "cseg/checkpoint.hpp"
#include "cseg/dataset.hpp"
#include "cseg/loss.hpp"
#include "cseg/network.hpp"
#include "cseg/rng.hpp"

namespace cseg {

struct TrainConfig {
  double learning_rate = 0.001;
  int64_t iterations = 50000;
  int64_t batch_size = 20;
  AugmentParams augment;
  uint64_t seed = 0;

  int64_t loss_interval = 100;           // on_loss cadence
  int64_t validation_interval = 1000;    // validation cadence when a set is supplied
  std::string checkpoint_path;           // non-empty: saved at the end of training
  int64_t checkpoint_interval = 0;       // additionally every N iterations when > 0

  void validate() const {
    if (iterations < 0) throw ConfigError("train: iterations must be non-negative");
    if (batch_size <= 0) throw ConfigError("train: batch size must be positive");
    if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be positive");
    if (loss_interval <= 0) throw ConfigError("train: loss interval must be positive");
    if (validation_interval <= 0) throw ConfigError("train: validation interval must be positive");
    if (checkpoint_interval < 0) throw ConfigError("train: checkpoint interval must be non-negative");
    augment.validate();
  }
};

struct TrainHooks {
  std::function<void(int64_t iteration, double loss)> on_loss;
  std::function<void(int64_t iteration, double validation_loss)> on_validation;
};

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per iteration, in order
  std::vector<std::pair<int64_t, double>> validation_trace;
};

namespace detail {

// Draws one augmented training row into the batch buffers. Per slice the rng
// consumption is exactly one AugmentDraw (five uniforms).
template <typename T>
void fill_batch_row(const SliceSample& s, int64_t side, const AugmentParams& aug, Rng& rng,
                    std::vector<int32_t>& lab_in, std::vector<float>& img_out, T* img_row,
                    int32_t* lab_row) {
  const int64_t n = side * side;
  lab_in.resize(static_cast<size_t>(n));
  img_out.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) lab_in[static_cast<size_t>(i)] = s.labels[static_cast<size_t>(i)];
  const AugmentDraw d = AugmentDraw::sample(aug, rng);
  augment_slice(s.image.data(), lab_in.data(), side, side, d, img_out.data(), lab_row);
  for (int64_t i = 0; i < n; ++i) img_row[i] = static_cast<T>(img_out[static_cast<size_t>(i)]);
}

// Mean cross entropy of a dataset under the current running stats, streamed
// in minibatch-sized groups.
template <typename T>
double dataset_loss(FcnT<T>& net, const SliceDataset& ds, int64_t batch_size, FcnWork<T>& work) {
  const int64_t S = ds.side;
  TensorT<T> images, logits, probs;
  double sum = 0.0;
  int64_t counted = 0;
  for (int64_t start = 0; start < ds.size(); start += batch_size) {
    const int64_t n = std::min(batch_size, ds.size() - start);
    ensure_shape(images, {n, 1, S, S});
    LabelMap labels({n, S, S});
    for (int64_t k = 0; k < n; ++k) {
      const SliceSample& s = ds.samples[static_cast<size_t>(start + k)];
      T* ip = images.ptr() + k * S * S;
      int32_t* lp = labels.ptr() + k * S * S;
      for (int64_t i = 0; i < S * S; ++i) {
        ip[i] = static_cast<T>(s.image[static_cast<size_t>(i)]);
        lp[i] = s.labels[static_cast<size_t>(i)];
      }
    }
    forward_logits(net, images, BnMode::infer, logits, static_cast<FcnTape<T>*>(nullptr), work);
    sum += softmax_cross_entropy(logits, labels, probs) * static_cast<double>(n);
    counted += n;
  }
  return sum / static_cast<double>(counted);
}

template <typename T>
TrainResult run_training(FcnT<T>& net, const SliceDataset& dataset, const TrainConfig& cfg,
                         const std::vector<int32_t>& ignored_classes,
                         const SliceDataset* validation, const TrainHooks& hooks) {
  cfg.validate();
  if (dataset.samples.empty()) throw ConfigError("train: empty dataset");
  const int64_t S = dataset.side;
  if (S < 16 || S % 16 != 0)
    throw ConfigError("train: dataset slice size " + std::to_string(S) +
                      " is not a multiple of 16");

  bool ignored[256] = {};
  for (int32_t c : ignored_classes) {
    if (c < 0 || c >= 256) throw ConfigError("train: ignored class out of range");
    ignored[c] = true;
  }
  const bool masked = !ignored_classes.empty();

  TrainResult result;
  result.loss_trace.reserve(static_cast<size_t>(cfg.iterations));

  Rng rng(Rng::derive(cfg.seed, 3));
  OptimizerConfig opt;
  opt.alpha = cfg.learning_rate;

  const int64_t N = cfg.batch_size;
  TensorT<T> images({N, 1, S, S});
  LabelMap labels({N, S, S});
  TensorT<T> logits, probs, dlogits;
  FcnTape<T> tape;
  FcnWork<T> work;
  std::vector<uint8_t> keep;
  std::vector<int32_t> lab_scratch;
  std::vector<float> img_scratch;

  for (int64_t it = 1; it <= cfg.iterations; ++it) {
    const auto idx = sample_indices(dataset, N, rng);
    for (int64_t k = 0; k < N; ++k)
      fill_batch_row(dataset.samples[static_cast<size_t>(idx[static_cast<size_t>(k)])], S,
                     cfg.augment, rng, lab_scratch, img_scratch, images.ptr() + k * S * S,
                     labels.ptr() + k * S * S);

    const std::vector<uint8_t>* keep_ptr = nullptr;
    if (masked) {
      keep.resize(labels.data.size());
      for (size_t i = 0; i < labels.data.size(); ++i)
        keep[i] = !ignored[labels.data[i] & 255];
      keep_ptr = &keep;
    }

    forward_logits(net, images, BnMode::train, logits, &tape, work);
    const double loss = softmax_cross_entropy(logits, labels, probs, &dlogits, keep_ptr);
    if (!std::isfinite(loss))
      throw NumericError("train: non-finite loss at iteration " + std::to_string(it));
    backward(net, tape, dlogits, work);
    adam_step(net.params, opt);
    net.trained_iterations += 1;

    result.loss_trace.push_back(loss);
    if (hooks.on_loss && (it % cfg.loss_interval == 0 || it == cfg.iterations))
      hooks.on_loss(it, loss);

    if (validation && it % cfg.validation_interval == 0) {
      const double vl = dataset_loss(net, *validation, N, work);
      result.validation_trace.emplace_back(it, vl);
      if (hooks.on_validation) hooks.on_validation(it, vl);
    }

    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
        it % cfg.checkpoint_interval == 0 && it != cfg.iterations)
      save_checkpoint(net, cfg.checkpoint_path);
  }

  if (!cfg.checkpoint_path.empty()) save_checkpoint(net, cfg.checkpoint_path);
  return result;
}

}  // namespace detail

/// The training loop: {sample minibatch, augment, forward, cross entropy,
/// backward, Adam}. Mutates the model in place and returns the loss trace.
template <typename T>
TrainResult train(FcnT<T>& net, const SliceDataset& dataset, const TrainConfig& cfg,
                  const SliceDataset* validation = nullptr, const TrainHooks& hooks = {}) {
  return detail::run_training(net, dataset, cfg, {}, validation, hooks);
}

/// Same loop, continuing from an already-trained model; pixels whose label is
/// in ignored_classes contribute zero loss and zero gradient. The iteration
/// counter keeps counting from the checkpoint's value.
template <typename T>
TrainResult fine_tune(FcnT<T>& net, const SliceDataset& dataset, const TrainConfig& cfg,
                      const std::vector<int32_t>& ignored_classes,
                      const SliceDataset* validation = nullptr, const TrainHooks& hooks = {}) {
  return detail::run_training(net, dataset, cfg, ignored_classes, validation, hooks);
}

}  // namespace cseg

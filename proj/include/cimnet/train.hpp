#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cimnet/model.hpp"
#include "cimnet/rng.hpp"
#include "cimnet/tensor.hpp"

namespace cimnet {

struct LrPiece {
  std::size_t start_epoch = 0;
  double lr = 0.0;
  bool operator==(const LrPiece&) const = default;
};

/// Piecewise-constant learning rate. Pieces start at strictly increasing
/// epochs, the first at 0; the last one extends to the end of training.
struct LrSchedule {
  std::vector<LrPiece> pieces;

  // 1e-3 for epochs [0, 50), 1e-4 for [50, 60), 1e-6 afterwards.
  static LrSchedule standard();
  static LrSchedule constant(double lr) { return {{{0, lr}}}; }
  void validate() const;
  bool operator==(const LrSchedule&) const = default;
};

// Throws ConfigError when epoch >= epochs.
double lr_at_epoch(const LrSchedule& schedule, std::size_t epoch, std::size_t epochs);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 96;
  std::size_t patch = 96;
  // Noise std-dev range in 0-255 units, sampled uniformly per patch.
  double sigma_min = 5.0;
  double sigma_max = 50.0;
  std::uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::standard();
  // Validation noise level, 0-255 units.
  double val_sigma = 15.0;
  // 0 means one pass over the training set: ceil(train / batch).
  std::size_t steps_per_epoch = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

template <typename T>
struct AdamStateT {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, TensorT<T>> m;
  std::map<std::string, TensorT<T>> v;
};
using AdamState = AdamStateT<float>;

/// Bias-corrected Adam:
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// Every parameter must have a gradient of the same shape.
template <typename T>
void adam_step(ParamStoreT<T>& params, const ParamStoreT<T>& grads, AdamStateT<T>& state,
               double lr);

// clean + N(0, (sigma_255 / 255)^2) per element; not clipped.
template <typename T>
TensorT<T> add_awgn(const TensorT<T>& clean, double sigma_255, Rng& rng);

template <typename T>
double mse(const TensorT<T>& a, const TensorT<T>& b);

// -10 log10(mse) for [0, 1] images; +inf when the images are identical.
template <typename T>
double psnr(const TensorT<T>& a, const TensorT<T>& b);

// "inf" or the value with two decimals.
std::string format_psnr(double db);

Tensor clamp01(const Tensor& x);

struct MetricRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> val_psnr;  // set on the last step of an epoch
};

// Columns: epoch,step,lr,loss,val_psnr.
std::string metrics_csv(const std::vector<MetricRow>& rows);

struct Dataset {
  std::vector<Tensor> train;  // each [1, C, P, P] in [0, 1]
  std::vector<Tensor> val;
};

struct TrainResult {
  ParamStore params;
  std::vector<MetricRow> log;
};

/// Per step: sample a batch (per-epoch shuffle), corrupt each patch with its
/// own sigma ~ U[sigma_min, sigma_max], forward, MSE against the clean batch,
/// backward, Adam with the epoch's learning rate. Deterministic for a seed.
/// A graph with one extra input channel receives each patch's noise level
/// as a constant map.
TrainResult train(const ModelGraph& graph, ParamStore params, const Dataset& data,
                  const TrainConfig& cfg);

struct EvalResult {
  double noisy_psnr = 0.0;     // mean PSNR of the corrupted inputs
  double denoised_psnr = 0.0;  // mean PSNR of clamped outputs
};

// Corrupts each image with stream (seed, "eval"), denoises, clamps to [0, 1].
EvalResult evaluate(const ModelGraph& graph, const ParamStore& params,
                    const std::vector<Tensor>& clean, double sigma_255, std::uint64_t seed);

/// [N, C, H, W] -> [N, C + 1, H, W]; the extra channel of sample n is the
/// constant sigma01[n] (noise std-dev in [0, 1] pixel units).
Tensor append_noise_map(const Tensor& x, const std::vector<double>& sigma01);

/// Whether `graph` takes a noise-level map after images of `image_channels`
/// channels: true for C + 1 inputs, false for C. ConfigError otherwise.
bool uses_noise_map(const ModelGraph& graph, std::size_t image_channels);

// Concatenates [1, C, H, W] images along N.
Tensor stack_batch(const std::vector<const Tensor*>& images);

/// Smooth random images in [0.1, 0.9]: a colour gradient, a few low-frequency
/// oriented sinusoids and a few soft-edged rectangles. [1, C, H, W] each.
std::vector<Tensor> synthetic_textures(std::size_t n, std::size_t channels, std::size_t h,
                                       std::size_t w, std::uint64_t seed);

}  // namespace cimnet

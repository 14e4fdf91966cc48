#include "cimnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cimnet/autograd.hpp"
#include "cimnet/kernels.hpp"

namespace cimnet {

LrSchedule LrSchedule::standard() { return {{{0, 1e-3}, {50, 1e-4}, {60, 1e-6}}}; }

void LrSchedule::validate() const {
  if (pieces.empty() || pieces.front().start_epoch != 0) {
    throw ConfigError("lr schedule must start at epoch 0");
  }
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (!(pieces[i].lr >= 0.0) || !std::isfinite(pieces[i].lr)) {
      throw ConfigError("lr schedule: rate at piece " + std::to_string(i) + " is invalid");
    }
    if (i > 0 && pieces[i].start_epoch <= pieces[i - 1].start_epoch) {
      throw ConfigError("lr schedule: start epochs must increase");
    }
  }
}

double lr_at_epoch(const LrSchedule& schedule, std::size_t epoch, std::size_t epochs) {
  if (epoch >= epochs) {
    throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(epochs) + ")");
  }
  schedule.validate();
  double lr = schedule.pieces.front().lr;
  for (const auto& p : schedule.pieces) {
    if (p.start_epoch <= epoch) lr = p.lr;
  }
  return lr;
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch == 0 || patch == 0) {
    throw ConfigError("epochs, batch and patch must be >= 1");
  }
  if (!(sigma_min >= 0.0) || !(sigma_min <= sigma_max)) {
    throw ConfigError("need 0 <= sigma_min <= sigma_max");
  }
  if (!(val_sigma >= 0.0)) throw ConfigError("val_sigma must be >= 0");
  schedule.validate();
}

template <typename T>
void adam_step(ParamStoreT<T>& params, const ParamStoreT<T>& grads, AdamStateT<T>& state,
               double lr) {
  for (const auto& [key, p] : params) {
    auto it = grads.find(key);
    if (it == grads.end()) throw DimensionError("adam: no gradient for '" + key + "'");
    if (it->second.shape() != p.shape()) {
      throw DimensionError("adam: gradient shape mismatch for '" + key + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [key, p] : params) {
    const auto& g = grads.at(key);
    auto& m = state.m.try_emplace(key, p.shape()).first->second;
    auto& v = state.v.try_emplace(key, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      p[i] = static_cast<T>(p[i] - update);
    }
    check_finite(p, "adam_step");
  }
}

template <typename T>
TensorT<T> add_awgn(const TensorT<T>& clean, double sigma_255, Rng& rng) {
  if (!(sigma_255 >= 0.0)) throw ConfigError("noise sigma must be >= 0");
  if (sigma_255 == 0.0) return clean;
  const double sd = sigma_255 / 255.0;
  TensorT<T> out = clean;
  for (auto& v : out.data()) v = static_cast<T>(v + rng.normal(0.0, sd));
  return out;
}

template <typename T>
double mse(const TensorT<T>& a, const TensorT<T>& b) {
  kernels::require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

template <typename T>
double psnr(const TensorT<T>& a, const TensorT<T>& b) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(e);
}

std::string format_psnr(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", db);
  return buf;
}

Tensor clamp01(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "epoch,step,lr,loss,val_psnr\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6g,%.9g,", r.epoch, r.step, r.lr, r.loss);
    os << buf;
    if (r.val_psnr) {
      if (std::isinf(*r.val_psnr)) {
        os << "inf";
      } else {
        std::snprintf(buf, sizeof buf, "%.6f", *r.val_psnr);
        os << buf;
      }
    }
    os << '\n';
  }
  return os.str();
}

Tensor append_noise_map(const Tensor& x, const std::vector<double>& sigma01) {
  if (x.rank() != 4 || sigma01.size() != x.dim(0)) {
    throw DimensionError("append_noise_map: need [N,C,H,W] and N levels, got " +
                         shape_str(x.shape()) + " and " + std::to_string(sigma01.size()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c + 1, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < n; ++b) {
    const auto src = x.data().subspan(b * c * hw, c * hw);
    auto dst = out.data().subspan(b * (c + 1) * hw, (c + 1) * hw);
    std::copy(src.begin(), src.end(), dst.begin());
    std::fill(dst.begin() + static_cast<std::ptrdiff_t>(c * hw), dst.end(),
              static_cast<float>(sigma01[b]));
  }
  return out;
}

bool uses_noise_map(const ModelGraph& graph, std::size_t image_channels) {
  const std::size_t c = graph.config().channels;
  if (c == image_channels) return false;
  if (c == image_channels + 1) return true;
  throw ConfigError("model '" + graph.name() + "' takes " + std::to_string(c) +
                    " input channels; images have " + std::to_string(image_channels));
}

Tensor stack_batch(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw DimensionError("stack_batch: no images");
  const Shape& first = images.front()->shape();
  if (first.size() != 4 || first[0] != 1) {
    throw DimensionError("stack_batch: images must be [1,C,H,W], got " + shape_str(first));
  }
  std::vector<float> data;
  data.reserve(images.size() * images.front()->size());
  for (const auto* img : images) {
    if (img->shape() != first) throw DimensionError("stack_batch: mixed image shapes");
    data.insert(data.end(), img->data().begin(), img->data().end());
  }
  return Tensor({images.size(), first[1], first[2], first[3]}, std::move(data));
}

TrainResult train(const ModelGraph& graph, ParamStore params, const Dataset& data,
                  const TrainConfig& cfg) {
  cfg.validate();
  check_params(graph, params);
  if (data.train.empty()) throw ConfigError("training set is empty");
  const std::size_t image_c = data.train.front().rank() == 4 ? data.train.front().dim(1) : 0;
  const bool noise_map = uses_noise_map(graph, image_c);
  const Shape want{1, image_c, cfg.patch, cfg.patch};
  if (graph.config().height != cfg.patch || graph.config().width != cfg.patch) {
    throw ConfigError("model is built for " + std::to_string(graph.config().height) + "x" +
                      std::to_string(graph.config().width) + " but patch is " +
                      std::to_string(cfg.patch));
  }
  for (const auto* set : {&data.train, &data.val}) {
    for (const auto& p : *set) {
      if (p.shape() != want) {
        throw ConfigError("patch shape " + shape_str(p.shape()) + " != expected " +
                          shape_str(want));
      }
    }
  }

  const std::size_t n = data.train.size();
  const std::size_t steps =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : (n + cfg.batch - 1) / cfg.batch;
  const Rng shuffle_root(cfg.seed, "shuffle");
  const Rng noise_root(cfg.seed, "noise");

  TrainResult result;
  AdamState adam;
  std::vector<std::size_t> order(n);
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.schedule, epoch, cfg.epochs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = shuffle_root.child("epoch" + std::to_string(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      std::vector<const Tensor*> picked;
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        picked.push_back(&data.train[order[(s * cfg.batch + b) % n]]);
      }
      const Tensor clean = stack_batch(picked);
      Tensor noisy = clean;
      Rng noise = noise_root.child("step" + std::to_string(global_step));
      const std::size_t per = clean.size() / cfg.batch;
      std::vector<double> sigmas(cfg.batch);
      for (auto& sg : sigmas) sg = noise.uniform(cfg.sigma_min, cfg.sigma_max) / 255.0;
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        for (std::size_t i = 0; i < per; ++i) {
          noisy[b * per + i] = static_cast<float>(noisy[b * per + i] + noise.normal(0.0, sigmas[b]));
        }
      }

      Tape<float> tape;
      auto vars = track_params(tape, params);
      if (noise_map) noisy = append_noise_map(noisy, sigmas);
      auto out = graph_forward(graph, vars, tape.constant(noisy));
      auto loss = ag::mse(out, tape.constant(clean));
      tape.backward(loss);

      ParamStore grads;
      for (const auto& [key, v] : vars) grads.emplace(key, tape.grad(v));
      adam_step(params, grads, adam, lr);

      MetricRow row;
      row.epoch = epoch;
      row.step = global_step;
      row.lr = lr;
      row.loss = loss.value()[0];
      result.log.push_back(row);
    }
    if (!data.val.empty()) {
      result.log.back().val_psnr =
          evaluate(graph, params, data.val, cfg.val_sigma, cfg.seed).denoised_psnr;
    }
  }
  result.params = std::move(params);
  return result;
}

EvalResult evaluate(const ModelGraph& graph, const ParamStore& params,
                    const std::vector<Tensor>& clean, double sigma_255, std::uint64_t seed) {
  EvalResult r;
  if (clean.empty()) return r;
  Rng rng(seed, "eval");
  const bool noise_map = uses_noise_map(graph, clean.front().dim(1));
  for (const auto& img : clean) {
    const Tensor noisy = add_awgn(img, sigma_255, rng);
    const Tensor in = noise_map ? append_noise_map(noisy, {sigma_255 / 255.0}) : noisy;
    const Tensor out = clamp01(graph_forward(graph, params, in));
    r.noisy_psnr += psnr(noisy, img);
    r.denoised_psnr += psnr(out, img);
  }
  r.noisy_psnr /= static_cast<double>(clean.size());
  r.denoised_psnr /= static_cast<double>(clean.size());
  return r;
}

std::vector<Tensor> synthetic_textures(std::size_t n, std::size_t channels, std::size_t h,
                                       std::size_t w, std::uint64_t seed) {
  const Rng root(seed, "textures");
  std::vector<Tensor> out;
  out.reserve(n);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.child(std::to_string(i));
    Tensor img({1, channels, h, w});
    struct Wave {
      double fx, fy, phase, amp;
    };
    struct Rect {
      double x0, y0, x1, y1, amp;
    };
    std::vector<Wave> waves(3);
    for (auto& wv : waves) {
      const double freq = rng.uniform(0.5, 3.0);
      const double angle = rng.uniform(0.0, std::numbers::pi);
      wv = {freq * std::cos(angle) / static_cast<double>(w),
            freq * std::sin(angle) / static_cast<double>(h), rng.uniform(0.0, two_pi),
            rng.uniform(0.05, 0.2)};
    }
    std::vector<Rect> rects(2);
    for (auto& r : rects) {
      const double ax = rng.uniform(0.0, static_cast<double>(w));
      const double bx = rng.uniform(0.0, static_cast<double>(w));
      const double ay = rng.uniform(0.0, static_cast<double>(h));
      const double by = rng.uniform(0.0, static_cast<double>(h));
      r = {std::min(ax, bx), std::min(ay, by), std::max(ax, bx), std::max(ay, by),
           rng.uniform(-0.3, 0.3)};
    }
    auto soft_step = [](double t) { return 1.0 / (1.0 + std::exp(-t / 1.5)); };
    for (std::size_t c = 0; c < channels; ++c) {
      const double base = rng.uniform(0.3, 0.7);
      const double gx = rng.uniform(-0.2, 0.2) / static_cast<double>(w);
      const double gy = rng.uniform(-0.2, 0.2) / static_cast<double>(h);
      const double tint = rng.uniform(0.6, 1.0);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double fx = static_cast<double>(x), fy = static_cast<double>(y);
          double v = base + gx * fx + gy * fy;
          for (const auto& wv : waves) {
            v += tint * wv.amp * std::sin(two_pi * (wv.fx * fx + wv.fy * fy) + wv.phase);
          }
          for (const auto& r : rects) {
            v += tint * r.amp * soft_step(fx - r.x0) * soft_step(r.x1 - fx) *
                 soft_step(fy - r.y0) * soft_step(r.y1 - fy);
          }
          img.at(0, c, y, x) = static_cast<float>(v);
        }
      }
    }
    auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    const float mn = *lo, mx = *hi;
    for (auto& v : img.data()) v = mx > mn ? 0.1f + 0.8f * (v - mn) / (mx - mn) : 0.5f;
    out.push_back(std::move(img));
  }
  return out;
}

#define CIMNET_INSTANTIATE(T)                                                           \
  template void adam_step(ParamStoreT<T>&, const ParamStoreT<T>&, AdamStateT<T>&, double); \
  template TensorT<T> add_awgn(const TensorT<T>&, double, Rng&);                        \
  template double mse(const TensorT<T>&, const TensorT<T>&);                            \
  template double psnr(const TensorT<T>&, const TensorT<T>&);

CIMNET_INSTANTIATE(float)
CIMNET_INSTANTIATE(double)

#undef CIMNET_INSTANTIATE

}  // namespace cimnet

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace oracle {

using cimnet::LayerKind;

namespace {

double at(const TensorD& x, std::size_t n, std::size_t c, long h, long w) {
  if (h < 0 || w < 0 || h >= static_cast<long>(x.dim(2)) || w >= static_cast<long>(x.dim(3))) {
    return 0.0;
  }
  return x.at(n, c, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
}

}  // namespace

TensorD conv2d(const TensorD& x, const TensorD& weight, const TensorD& bias, std::size_t stride,
               std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight.dim(0), k = weight.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  TensorD y({n, co, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = bias[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long hh = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long ww = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                acc += weight.at(o, c, u, v) * at(x, b, c, hh, ww);
              }
          y.at(b, o, i, j) = acc;
        }
  return y;
}

TensorD cimconv(const TensorD& x, const cimnet::CimConvSpec& spec, const TensorD& weight,
                const TensorD& bias) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t s = spec.stride, k = spec.kernel(), so = spec.s_out();
  const std::size_t gh = (h + 2 - k) / s + 1, gw = (w + 2 - k) / s + 1;
  const std::size_t d = spec.c_out * so * so;
  TensorD y({n, spec.c_out, gh * so, gw * so});
  std::vector<double> patch(ci * k * k);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j) {
        std::size_t f = 0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v)
              patch[f++] = at(x, b, c, static_cast<long>(i * s + u) - 1,
                              static_cast<long>(j * s + v) - 1);
        for (std::size_t o = 0; o < d; ++o) {
          double acc = bias[o];
          for (std::size_t q = 0; q < patch.size(); ++q) acc += patch[q] * weight[q * d + o];
          if (spec.activation == cimnet::Activation::relu) acc = std::max(acc, 0.0);
          const std::size_t co = o / (so * so), a = (o / so) % so, e = o % so;
          y.at(b, co, i * so + a, j * so + e) = acc;
        }
      }
  return y;
}

TensorD fc(const TensorD& x, const TensorD& weight, const TensorD& bias) {
  const std::size_t m = x.dim(0), k = x.dim(1), d = weight.dim(1);
  TensorD y({m, d});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t o = 0; o < d; ++o) {
      double acc = bias[o];
      for (std::size_t q = 0; q < k; ++q) acc += x[r * k + q] * weight[q * d + o];
      y[r * d + o] = acc;
    }
  return y;
}

TensorD pixel_shuffle(const TensorD& x, std::size_t r) {
  const std::size_t n = x.dim(0), c = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
  TensorD y({n, c, h * r, w * r});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h * r; ++i)
        for (std::size_t j = 0; j < w * r; ++j)
          y.at(b, ch, i, j) = x.at(b, ch * r * r + (i % r) * r + (j % r), i / r, j / r);
  return y;
}

std::size_t conv_windows(std::size_t h, std::size_t w, std::size_t k, std::size_t s,
                         std::size_t p) {
  return ((h + 2 * p - k) / s + 1) * ((w + 2 * p - k) / s + 1);
}

std::vector<cimnet::MvmEntry> enumerate_mvms(const cimnet::ModelGraph& graph, std::size_t rows,
                                             std::size_t cols) {
  std::vector<cimnet::MvmEntry> out;
  const auto& layers = graph.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& spec = layers[l].spec;
    std::size_t windows = 0, kdim = 0, ddim = 0;
    const std::size_t c = layers[l].in[0], h = layers[l].in[1], w = layers[l].in[2];
    if (spec.kind == LayerKind::conv) {
      windows = conv_windows(h, w, spec.kernel, spec.stride, spec.padding);
      kdim = c * spec.kernel * spec.kernel;
      ddim = spec.c_out;
    } else if (spec.kind == LayerKind::cimconv) {
      const std::size_t k = spec.stride == 1 ? 3 : spec.stride + 1;
      windows = conv_windows(h, w, k, spec.stride, 1);
      kdim = c * k * k;
      const auto so = static_cast<std::size_t>(static_cast<std::int64_t>(spec.stride) *
                                               spec.f_scale.num() / spec.f_scale.den());
      ddim = spec.c_out * so * so;
    } else {
      continue;
    }
    for (std::size_t win = 0; win < windows; ++win)
      for (std::size_t r0 = 0; r0 < kdim; r0 += std::min(rows, kdim))
        for (std::size_t c0 = 0; c0 < ddim; c0 += std::min(cols, ddim)) {
          cimnet::MvmEntry e;
          e.layer = static_cast<std::uint32_t>(l);
          e.window = static_cast<std::uint32_t>(win);
          e.row_begin = static_cast<std::uint32_t>(r0);
          e.row_end = static_cast<std::uint32_t>(std::min(kdim, r0 + rows));
          e.col_begin = static_cast<std::uint32_t>(c0);
          e.col_end = static_cast<std::uint32_t>(std::min(ddim, c0 + cols));
          out.push_back(e);
        }
  }
  return out;
}

TensorD graph_forward(const cimnet::ModelGraph& graph, const cimnet::ParamStore& params,
                      const TensorD& x) {
  TensorD cur = x;
  std::map<std::string, TensorD> skips;
  for (const auto& layer : graph.layers()) {
    const auto& spec = layer.spec;
    switch (spec.kind) {
      case LayerKind::conv:
        cur = conv2d(cur, params.at(spec.id + ".weight").cast<double>(),
                     params.at(spec.id + ".bias").cast<double>(), spec.stride, spec.padding);
        break;
      case LayerKind::cimconv:
        cur = cimconv(cur, *layer.cim, params.at(spec.id + ".weight").cast<double>(),
                      params.at(spec.id + ".bias").cast<double>());
        break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = std::max(cur[i], 0.0);
        break;
      case LayerKind::pixelshuffle:
        cur = pixel_shuffle(cur, spec.factor);
        break;
      case LayerKind::add_skip_marker:
        if (spec.role == cimnet::SkipRole::source) {
          skips.emplace(spec.skip_id, cur);
        } else {
          const auto& s = skips.at(spec.skip_id);
          for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += s[i];
        }
        break;
    }
  }
  return cur;
}

double max_rel_diff(const TensorD& a, const TensorD& b) {
  if (a.shape() != b.shape()) throw std::runtime_error("max_rel_diff: shape mismatch");
  double scale = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) scale = std::max(scale, std::abs(b[i]));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(scale, 1e-30));
  }
  return worst;
}

}  // namespace oracle

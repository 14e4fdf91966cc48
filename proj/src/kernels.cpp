#include "cimnet/kernels.hpp"

#include <algorithm>
#include <string>

namespace cimnet::kernels {

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

template <typename T>
TensorT<T> pad2d(const TensorT<T>& x, std::size_t p) {
  require_rank(x, 4, "pad2d");
  if (p == 0) return x;
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorT<T> out({n, c, h + 2 * p, w + 2 * p});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t y = 0; y < h; ++y) {
        const T* src = &x.at(in, ic, y, 0);
        std::copy(src, src + w, &out.at(in, ic, y + p, p));
      }
  return out;
}

template <typename T>
TensorT<T> crop2d(const TensorT<T>& x, std::size_t p) {
  require_rank(x, 4, "crop2d");
  if (p == 0) return x;
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h <= 2 * p || w <= 2 * p) throw DimensionError("crop2d: crop exceeds map size");
  TensorT<T> out({n, c, h - 2 * p, w - 2 * p});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t y = 0; y < h - 2 * p; ++y) {
        const T* src = &x.at(in, ic, y + p, p);
        std::copy(src, src + (w - 2 * p), &out.at(in, ic, y, 0));
      }
  return out;
}

std::size_t window_steps(std::size_t n, std::size_t k, std::size_t s) {
  if (s == 0) throw DimensionError("stride must be >= 1");
  if (k == 0 || k > n) {
    throw DimensionError("kernel " + std::to_string(k) + " does not fit extent " +
                         std::to_string(n));
  }
  return (n - k) / s + 1;
}

template <typename T>
TensorT<T> unfold(const TensorT<T>& x, std::size_t k, std::size_t s) {
  require_rank(x, 4, "unfold");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto gh = window_steps(h, k, s), gw = window_steps(w, k, s);
  const auto feat = c * k * k;
  TensorT<T> out({n, gh * gw, feat});
  T* dst = out.data().data();
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j)
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t ky = 0; ky < k; ++ky) {
            const T* src = &x.at(in, ic, i * s + ky, j * s);
            dst = std::copy(src, src + k, dst);
          }
  return out;
}

template <typename T>
TensorT<T> fold(const TensorT<T>& cols, const Shape& image_shape, std::size_t k,
                std::size_t s) {
  require_rank(cols, 3, "fold");
  if (image_shape.size() != 4) throw DimensionError("fold: image shape must be rank 4");
  const auto n = image_shape[0], c = image_shape[1], h = image_shape[2], w = image_shape[3];
  const auto gh = window_steps(h, k, s), gw = window_steps(w, k, s);
  if (cols.shape() != Shape{n, gh * gw, c * k * k}) {
    throw DimensionError("fold: columns " + shape_str(cols.shape()) +
                         " do not match image " + shape_str(image_shape));
  }
  TensorT<T> out(image_shape);
  const T* src = cols.data().data();
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j)
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t ky = 0; ky < k; ++ky) {
            T* row = &out.at(in, ic, i * s + ky, j * s);
            for (std::size_t kx = 0; kx < k; ++kx) row[kx] += *src++;
          }
  return out;
}

namespace {

// out[m, p] += a[m, kk] * b[kk, p], four output rows at a time so each row
// of b is loaded once per block.
template <typename T>
void gemm_rows(const T* __restrict pa, const T* __restrict pb, T* __restrict po, std::size_t m,
               std::size_t kk, std::size_t p) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* o0 = po + i * p;
    T* o1 = o0 + p;
    T* o2 = o1 + p;
    T* o3 = o2 + p;
    const T* a0 = pa + i * kk;
    for (std::size_t k = 0; k < kk; ++k) {
      const T v0 = a0[k], v1 = a0[kk + k], v2 = a0[2 * kk + k], v3 = a0[3 * kk + k];
      const T* brow = pb + k * p;
      for (std::size_t j = 0; j < p; ++j) {
        const T bv = brow[j];
        o0[j] += v0 * bv;
        o1[j] += v1 * bv;
        o2[j] += v2 * bv;
        o3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* orow = po + i * p;
    for (std::size_t k = 0; k < kk; ++k) {
      const T av = pa[i * kk + k];
      const T* brow = pb + k * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), kk = a.dim(1), p = b.dim(1);
  if (b.dim(0) != kk) {
    throw DimensionError("matmul: inner dims disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  TensorT<T> out({m, p});
  gemm_rows(a.data().data(), b.data().data(), out.data().data(), m, kk, p);
  return out;
}

template <typename T>
TensorT<T> matmul_tn(const TensorT<T>& a, const TensorT<T>& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  const auto kk = a.dim(0), m = a.dim(1), p = b.dim(1);
  if (b.dim(0) != kk) throw DimensionError("matmul_tn: inner dims disagree");
  TensorT<T> out({m, p});
  const T* __restrict pa = a.data().data();
  const T* __restrict pb = b.data().data();
  T* __restrict po = out.data().data();
  std::size_t k = 0;
  for (; k + 4 <= kk; k += 4) {
    const T* b0 = pb + k * p;
    const T* b1 = b0 + p;
    const T* b2 = b1 + p;
    const T* b3 = b2 + p;
    for (std::size_t i = 0; i < m; ++i) {
      const T v0 = pa[k * m + i], v1 = pa[(k + 1) * m + i], v2 = pa[(k + 2) * m + i],
              v3 = pa[(k + 3) * m + i];
      T* orow = po + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
    }
  }
  for (; k < kk; ++k) {
    const T* brow = pb + k * p;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = pa[k * m + i];
      T* orow = po + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  if (b.dim(1) != a.dim(1)) throw DimensionError("matmul_nt: inner dims disagree");
  return matmul(a, transpose2d(b));
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  require_rank(a, 2, "transpose2d");
  const auto r = a.dim(0), c = a.dim(1);
  TensorT<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

template <typename T>
TensorT<T> add_row_bias(const TensorT<T>& x, const TensorT<T>& bias) {
  require_rank(x, 2, "add_row_bias");
  const auto m = x.dim(0), d = x.dim(1);
  if (bias.size() != d) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) +
                         " does not match width " + std::to_string(d));
  }
  TensorT<T> out = x;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bias[j];
  return out;
}

template <typename T>
TensorT<T> sum_rows(const TensorT<T>& x) {
  require_rank(x, 2, "sum_rows");
  const auto m = x.dim(0), d = x.dim(1);
  TensorT<T> out({d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out = x;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad) {
  require_same_shape(x, grad, "relu_backward");
  TensorT<T> out = grad;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(x[i] > T{0})) out[i] = T{0};
  return out;
}

template <typename T>
TensorT<T> pixel_shuffle(const TensorT<T>& x, std::size_t r) {
  require_rank(x, 4, "pixel_shuffle");
  if (r == 0) throw DimensionError("pixel_shuffle: factor must be >= 1");
  const auto n = x.dim(0), cr = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (cr % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: " + std::to_string(cr) +
                         " channels not divisible by r^2=" + std::to_string(r * r));
  }
  const auto c = cr / (r * r);
  TensorT<T> out({n, c, h * r, w * r});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < r; ++b)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
              out.at(in, ic, y * r + a, xx * r + b) = x.at(in, ic * r * r + a * r + b, y, xx);
  return out;
}

template <typename T>
TensorT<T> pixel_unshuffle(const TensorT<T>& y, std::size_t r) {
  require_rank(y, 4, "pixel_unshuffle");
  if (r == 0) throw DimensionError("pixel_unshuffle: factor must be >= 1");
  const auto n = y.dim(0), c = y.dim(1), hr = y.dim(2), wr = y.dim(3);
  if (hr % r != 0 || wr % r != 0) {
    throw DimensionError("pixel_unshuffle: spatial dims not divisible by factor");
  }
  const auto h = hr / r, w = wr / r;
  TensorT<T> out({n, c * r * r, h, w});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < r; ++b)
          for (std::size_t yy = 0; yy < h; ++yy)
            for (std::size_t xx = 0; xx < w; ++xx)
              out.at(in, ic * r * r + a * r + b, yy, xx) = y.at(in, ic, yy * r + a, xx * r + b);
  return out;
}

template <typename T>
TensorT<T> assemble_blocks(const TensorT<T>& rows, std::size_t n, std::size_t gh,
                           std::size_t gw, std::size_t c, std::size_t b) {
  require_rank(rows, 2, "assemble_blocks");
  if (rows.dim(0) != n * gh * gw || rows.dim(1) != c * b * b) {
    throw DimensionError("assemble_blocks: rows " + shape_str(rows.shape()) +
                         " do not match grid");
  }
  TensorT<T> out({n, c, gh * b, gw * b});
  const T* src = rows.data().data();
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j)
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t by = 0; by < b; ++by) {
            T* dst = &out.at(in, ic, i * b + by, j * b);
            std::copy(src, src + b, dst);
            src += b;
          }
  return out;
}

template <typename T>
TensorT<T> disassemble_blocks(const TensorT<T>& image, std::size_t b) {
  require_rank(image, 4, "disassemble_blocks");
  const auto n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (b == 0 || h % b != 0 || w % b != 0) {
    throw DimensionError("disassemble_blocks: block does not tile the map");
  }
  const auto gh = h / b, gw = w / b;
  TensorT<T> out({n * gh * gw, c * b * b});
  T* dst = out.data().data();
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j)
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t by = 0; by < b; ++by) {
            const T* src = &image.at(in, ic, i * b + by, j * b);
            dst = std::copy(src, src + b, dst);
          }
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "add");
  TensorT<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "sub");
  TensorT<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
  TensorT<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <typename T>
void add_inplace(TensorT<T>& acc, const TensorT<T>& x) {
  require_same_shape(acc, x, "add_inplace");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

template <typename T>
double sum(const TensorT<T>& x) {
  double s = 0.0;
  for (auto v : x.data()) s += static_cast<double>(v);
  return s;
}

#define CIMNET_INSTANTIATE(T)                                                              \
  template void require_same_shape(const TensorT<T>&, const TensorT<T>&, const char*);     \
  template TensorT<T> pad2d(const TensorT<T>&, std::size_t);                               \
  template TensorT<T> crop2d(const TensorT<T>&, std::size_t);                              \
  template TensorT<T> unfold(const TensorT<T>&, std::size_t, std::size_t);                 \
  template TensorT<T> fold(const TensorT<T>&, const Shape&, std::size_t, std::size_t);     \
  template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> matmul_tn(const TensorT<T>&, const TensorT<T>&);                     \
  template TensorT<T> matmul_nt(const TensorT<T>&, const TensorT<T>&);                     \
  template TensorT<T> transpose2d(const TensorT<T>&);                                      \
  template TensorT<T> add_row_bias(const TensorT<T>&, const TensorT<T>&);                  \
  template TensorT<T> sum_rows(const TensorT<T>&);                                         \
  template TensorT<T> relu(const TensorT<T>&);                                             \
  template TensorT<T> relu_backward(const TensorT<T>&, const TensorT<T>&);                 \
  template TensorT<T> pixel_shuffle(const TensorT<T>&, std::size_t);                       \
  template TensorT<T> pixel_unshuffle(const TensorT<T>&, std::size_t);                     \
  template TensorT<T> assemble_blocks(const TensorT<T>&, std::size_t, std::size_t,         \
                                      std::size_t, std::size_t, std::size_t);              \
  template TensorT<T> disassemble_blocks(const TensorT<T>&, std::size_t);                  \
  template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                           \
  template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                           \
  template TensorT<T> scale(const TensorT<T>&, T);                                         \
  template void add_inplace(TensorT<T>&, const TensorT<T>&);                               \
  template double sum(const TensorT<T>&);

CIMNET_INSTANTIATE(float)
CIMNET_INSTANTIATE(double)

#undef CIMNET_INSTANTIATE

}  // namespace cimnet::kernels

#pragma once

#include <cstddef>

#include "cimnet/tensor.hpp"

// Value-level tensor primitives. Each forward primitive that has a
// gradient is paired with its adjoint (crop2d for pad2d, fold for
// unfold, ...), which the tape uses for reverse-mode differentiation.
namespace cimnet::kernels {

template <typename T>
TensorT<T> pad2d(const TensorT<T>& x, std::size_t p);
template <typename T>
TensorT<T> crop2d(const TensorT<T>& x, std::size_t p);

// Number of windows along one axis: floor((n - k) / s) + 1.
std::size_t window_steps(std::size_t n, std::size_t k, std::size_t s);

/// [N,C,H,W] -> [N, L, C*k*k]. Patch (i, j) covers rows [i*s, i*s+k) and
/// cols [j*s, j*s+k). Features are flattened channel-major, then row, then
/// column; L is row-major over the patch grid.
template <typename T>
TensorT<T> unfold(const TensorT<T>& x, std::size_t k, std::size_t s);

// Adjoint of unfold: scatter-adds patch columns back into an [N,C,H,W] map.
template <typename T>
TensorT<T> fold(const TensorT<T>& cols, const Shape& image_shape, std::size_t k,
                std::size_t s);

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// a^T b for a:[K,M], b:[K,P].
template <typename T>
TensorT<T> matmul_tn(const TensorT<T>& a, const TensorT<T>& b);
// a b^T for a:[M,K], b:[P,K].
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a);

// x:[M,D] + bias:[D] broadcast over rows.
template <typename T>
TensorT<T> add_row_bias(const TensorT<T>& x, const TensorT<T>& bias);
// [M,D] -> [D]
template <typename T>
TensorT<T> sum_rows(const TensorT<T>& x);

template <typename T>
TensorT<T> relu(const TensorT<T>& x);
// Upstream gradient masked by x > 0.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad);

/// [N, C*r*r, H, W] -> [N, C, H*r, W*r] with
/// out[n, c, h*r+a, w*r+b] = x[n, c*r*r + a*r + b, h, w].
template <typename T>
TensorT<T> pixel_shuffle(const TensorT<T>& x, std::size_t r);
template <typename T>
TensorT<T> pixel_unshuffle(const TensorT<T>& y, std::size_t r);

/// Places row (n, i, j) of `rows` ([N*gh*gw, C*b*b], each row read as a
/// [C, b, b] block) at rows [i*b, (i+1)*b), cols [j*b, (j+1)*b) of image n.
/// Output: [N, C, gh*b, gw*b]. Blocks never overlap.
template <typename T>
TensorT<T> assemble_blocks(const TensorT<T>& rows, std::size_t n, std::size_t gh,
                           std::size_t gw, std::size_t c, std::size_t b);
// Inverse of assemble_blocks.
template <typename T>
TensorT<T> disassemble_blocks(const TensorT<T>& image, std::size_t b);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor);
template <typename T>
void add_inplace(TensorT<T>& acc, const TensorT<T>& x);

template <typename T>
double sum(const TensorT<T>& x);

// Throws DimensionError unless shapes are identical.
template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op);

}  // namespace cimnet::kernels

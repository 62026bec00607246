/*
 * Copyright 2026 The DRA Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef DRA_SRC_AUTOGRAD_KERNELS_HPP
#define DRA_SRC_AUTOGRAD_KERNELS_HPP

// Row-major dense kernels shared by the convolution and matmul rules.
// All routines accumulate into their output.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace dra::ag::kernels {

// Register tiles: two output rows by W columns stay in registers across
// the whole reduction. Each output element still sums over p in ascending
// order, so every tiling agrees bit for bit with the plain triple loop.
template <int W, typename T>
void gemm_tile2(int n, int k, const T* __restrict a0, const T* __restrict a1,
                std::ptrdiff_t lda_p, const T* __restrict b, T* __restrict c0,
                T* __restrict c1, int j0) {
  T acc0[W], acc1[W];
  for (int j = 0; j < W; ++j) {
    acc0[j] = c0[j0 + j];
    acc1[j] = c1[j0 + j];
  }
  for (int p = 0; p < k; ++p) {
    const T v0 = a0[p * lda_p];
    const T v1 = a1[p * lda_p];
    const T* brow = b + static_cast<std::ptrdiff_t>(p) * n + j0;
    for (int j = 0; j < W; ++j) {
      acc0[j] += v0 * brow[j];
      acc1[j] += v1 * brow[j];
    }
  }
  for (int j = 0; j < W; ++j) {
    c0[j0 + j] = acc0[j];
    c1[j0 + j] = acc1[j];
  }
}

template <int W, typename T>
void gemm_tile1(int n, int k, const T* __restrict a0, std::ptrdiff_t lda_p,
                const T* __restrict b, T* __restrict c0, int j0) {
  T acc0[W];
  for (int j = 0; j < W; ++j) acc0[j] = c0[j0 + j];
  for (int p = 0; p < k; ++p) {
    const T v0 = a0[p * lda_p];
    const T* brow = b + static_cast<std::ptrdiff_t>(p) * n + j0;
    for (int j = 0; j < W; ++j) acc0[j] += v0 * brow[j];
  }
  for (int j = 0; j < W; ++j) c0[j0 + j] = acc0[j];
}

// C[M,N] += A[M,K] * B[K,N]; element (i,p) of A is a[i*lda_i + p*lda_p].
template <typename T>
void gemm_rows(int m, int n, int k, const T* __restrict a, std::ptrdiff_t lda_i,
               std::ptrdiff_t lda_p, const T* __restrict b, T* __restrict c) {
  int i = 0;
  for (; i + 2 <= m; i += 2) {
    T* c0 = c + static_cast<std::ptrdiff_t>(i) * n;
    T* c1 = c0 + n;
    const T* a0 = a + i * lda_i;
    const T* a1 = a0 + lda_i;
    int j0 = 0;
    for (; j0 + 32 <= n; j0 += 32) gemm_tile2<32>(n, k, a0, a1, lda_p, b, c0, c1, j0);
    if (j0 + 16 <= n) {
      gemm_tile2<16>(n, k, a0, a1, lda_p, b, c0, c1, j0);
      j0 += 16;
    }
    if (j0 + 8 <= n) {
      gemm_tile2<8>(n, k, a0, a1, lda_p, b, c0, c1, j0);
      j0 += 8;
    }
    for (; j0 < n; ++j0) gemm_tile2<1>(n, k, a0, a1, lda_p, b, c0, c1, j0);
  }
  for (; i < m; ++i) {
    T* c0 = c + static_cast<std::ptrdiff_t>(i) * n;
    const T* a0 = a + i * lda_i;
    int j0 = 0;
    for (; j0 + 32 <= n; j0 += 32) gemm_tile1<32>(n, k, a0, lda_p, b, c0, j0);
    for (; j0 + 8 <= n; j0 += 8) gemm_tile1<8>(n, k, a0, lda_p, b, c0, j0);
    for (; j0 < n; ++j0) gemm_tile1<1>(n, k, a0, lda_p, b, c0, j0);
  }
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int m, int n, int k, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  gemm_rows(m, n, k, a, k, 1, b, c);
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn(int m, int n, int k, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  // Row p of the result reduces over i: treat A^T as a [K,M] matrix.
  gemm_rows(k, n, m, a, 1, k, b, c);
}

// MA x MB block of row dot products, vectorised along the shared dimension.
template <int MA, int MB, typename T>
inline void dot_block(int n, const T* __restrict a, const T* __restrict b, T* __restrict c,
                      int ldc) {
  constexpr int L = 64 / sizeof(T);
  T acc[MA][MB][L] = {};
  int j = 0;
  for (; j + L <= n; j += L) {
    for (int x = 0; x < MA; ++x) {
      for (int y = 0; y < MB; ++y) {
        for (int l = 0; l < L; ++l) acc[x][y][l] += a[x * n + j + l] * b[y * n + j + l];
      }
    }
  }
  for (int x = 0; x < MA; ++x) {
    for (int y = 0; y < MB; ++y) {
      T s = T(0);
      for (int l = 0; l < L; ++l) s += acc[x][y][l];
      for (int t = j; t < n; ++t) s += a[x * n + t] * b[y * n + t];
      c[x * ldc + y] += s;
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
template <typename T>
void gemm_nt(int m, int n, int k, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* ai = a + static_cast<std::ptrdiff_t>(i) * n;
    T* ci = c + static_cast<std::ptrdiff_t>(i) * k;
    int p = 0;
    for (; p + 4 <= k; p += 4) {
      dot_block<4, 4>(n, ai, b + static_cast<std::ptrdiff_t>(p) * n, ci + p, k);
    }
    for (; p < k; ++p) dot_block<4, 1>(n, ai, b + static_cast<std::ptrdiff_t>(p) * n, ci + p, k);
  }
  for (; i < m; ++i) {
    const T* ai = a + static_cast<std::ptrdiff_t>(i) * n;
    T* ci = c + static_cast<std::ptrdiff_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      dot_block<1, 1>(n, ai, b + static_cast<std::ptrdiff_t>(p) * n, ci + p, k);
    }
  }
}

struct ConvGeometry {
  int channels, height, width;
  int kernel, stride, padding;
  int out_height, out_width;

  int col_rows() const { return channels * kernel * kernel; }
  int col_cols() const { return out_height * out_width; }
};

// Rows of a strided window: dst[y*w + x] = src[y*src_stride + x*step].
template <int W, typename T>
void copy_window(const T* __restrict src, std::ptrdiff_t src_stride, T* __restrict dst, int h) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < W; ++x) dst[y * W + x] = src[y * src_stride + x];
  }
}

template <int W, typename T>
void add_window(const T* __restrict src, T* __restrict dst, std::ptrdiff_t dst_stride, int h) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < W; ++x) dst[y * dst_stride + x] += src[y * W + x];
  }
}

template <typename T>
std::vector<T>& padded_scratch(const ConvGeometry& g) {
  thread_local std::vector<T> pad;
  const std::size_t size = static_cast<std::size_t>(g.channels) * (g.height + 2 * g.padding) *
                           (g.width + 2 * g.padding);
  pad.assign(size, T(0));
  return pad;
}

// image [C,H,W] -> col [C*k*k, Ho*Wo], rows spaced ld apart.
template <typename T>
void im2col(const ConvGeometry& g, const T* __restrict image, T* __restrict col, int ld) {
  const int pw = g.width + 2 * g.padding;
  const int ph = g.height + 2 * g.padding;
  std::vector<T>& pad = padded_scratch<T>(g);
  for (int c = 0; c < g.channels; ++c) {
    for (int y = 0; y < g.height; ++y) {
      std::copy_n(image + (static_cast<std::ptrdiff_t>(c) * g.height + y) * g.width, g.width,
                  pad.data() + (static_cast<std::ptrdiff_t>(c) * ph + y + g.padding) * pw +
                      g.padding);
    }
  }
  const std::ptrdiff_t row_step = static_cast<std::ptrdiff_t>(g.stride) * pw;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = col + static_cast<std::ptrdiff_t>((c * g.kernel + ky) * g.kernel + kx) * ld;
        const T* src = pad.data() + (static_cast<std::ptrdiff_t>(c) * ph + ky) * pw + kx;
        if (g.stride == 1 && g.out_width == 4) {
          copy_window<4>(src, row_step, row, g.out_height);
        } else if (g.stride == 1 && g.out_width == 8) {
          copy_window<8>(src, row_step, row, g.out_height);
        } else if (g.stride == 1 && g.out_width == 16) {
          copy_window<16>(src, row_step, row, g.out_height);
        } else {
          for (int oy = 0; oy < g.out_height; ++oy) {
            for (int ox = 0; ox < g.out_width; ++ox) {
              row[oy * g.out_width + ox] = src[oy * row_step + ox * g.stride];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of col back onto an image; adjoint of im2col.
template <typename T>
void col2im(const ConvGeometry& g, const T* __restrict col, T* __restrict image, int ld) {
  const int pw = g.width + 2 * g.padding;
  const int ph = g.height + 2 * g.padding;
  std::vector<T>& pad = padded_scratch<T>(g);
  const std::ptrdiff_t row_step = static_cast<std::ptrdiff_t>(g.stride) * pw;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row =
            col + static_cast<std::ptrdiff_t>((c * g.kernel + ky) * g.kernel + kx) * ld;
        T* dst = pad.data() + (static_cast<std::ptrdiff_t>(c) * ph + ky) * pw + kx;
        if (g.stride == 1 && g.out_width == 4) {
          add_window<4>(row, dst, row_step, g.out_height);
        } else if (g.stride == 1 && g.out_width == 8) {
          add_window<8>(row, dst, row_step, g.out_height);
        } else if (g.stride == 1 && g.out_width == 16) {
          add_window<16>(row, dst, row_step, g.out_height);
        } else {
          for (int oy = 0; oy < g.out_height; ++oy) {
            for (int ox = 0; ox < g.out_width; ++ox) {
              dst[oy * row_step + ox * g.stride] += row[oy * g.out_width + ox];
            }
          }
        }
      }
    }
  }
  for (int c = 0; c < g.channels; ++c) {
    for (int y = 0; y < g.height; ++y) {
      const T* src =
          pad.data() + (static_cast<std::ptrdiff_t>(c) * ph + y + g.padding) * pw + g.padding;
      T* dst = image + (static_cast<std::ptrdiff_t>(c) * g.height + y) * g.width;
      for (int x = 0; x < g.width; ++x) dst[x] += src[x];
    }
  }
}

}  // namespace dra::ag::kernels

#endif  // DRA_SRC_AUTOGRAD_KERNELS_HPP

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

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dra/autograd.hpp"
#include "dra/error.hpp"
#include "kernels.hpp"

namespace dra::ag {
namespace {

void require_rank(const Shape& s, int rank, const char* op, const char* what) {
  if (s.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + s.str());
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

kernels::ConvGeometry conv_geometry(const Shape& in, const Shape& w, int stride, int padding) {
  require_rank(in, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  if (w[1] != in[1]) {
    throw DimensionError("conv2d: weight " + w.str() + " expects " + std::to_string(w[1]) +
                         " input channels, input " + in.str() + " has " +
                         std::to_string(in[1]));
  }
  if (w[2] != w[3] || w[2] % 2 == 0) {
    throw DimensionError("conv2d: kernel must be square and odd, weight " + w.str() +
                         ", input " + in.str());
  }
  if (stride < 1 || padding < 0) {
    throw DimensionError("conv2d: stride must be positive and padding non-negative");
  }
  kernels::ConvGeometry g{};
  g.channels = in[1];
  g.height = in[2];
  g.width = in[3];
  g.kernel = w[2];
  g.stride = stride;
  g.padding = padding;
  const int span_h = g.height + 2 * padding - g.kernel;
  const int span_w = g.width + 2 * padding - g.kernel;
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv2d: kernel of weight " + w.str() + " larger than padded input " +
                         in.str());
  }
  g.out_height = span_h / stride + 1;
  g.out_width = span_w / stride + 1;
  return g;
}

std::uint64_t mix64(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace

template <typename T>
bool Tape<T>::any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) const {
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
Tensor<T> Tape<T>::record(Tensor<T> output, const std::vector<Tensor<T>>& inputs,
                          BackwardFn rule) {
  bool needed = false;
  for (const auto& in : inputs) needed = needed || in.requires_grad();
  if (!needed) return output;
  output.set_requires_grad(true);
  nodes_.push_back(Node{output, std::move(rule)});
  return output;
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
  consumed_ = false;
  kink_signature_ = 0;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, shape is " + loss.shape().str());
  }
  if (consumed_) throw ContractError("backward: tape was already replayed; clear() it first");
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor that requires a gradient");
  }
  consumed_ = true;
  Tensor<T> seed = loss;
  seed.grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on any path to the loss
    it->rule();
  }
}

namespace {

// Samples per GEMM so that narrow late-stage maps still fill the vector tiles.
int conv_group(int batch, int cols) {
  return std::clamp((512 + cols - 1) / cols, 1, std::max(batch, 1));
}

// [G, O, cols] <-> [O, G*cols]
template <typename T>
void gather_group(const T* src, T* dst, int samples, int channels, int cols) {
  const int ld = samples * cols;
  for (int s = 0; s < samples; ++s) {
    for (int o = 0; o < channels; ++o) {
      std::copy_n(src + (static_cast<std::ptrdiff_t>(s) * channels + o) * cols, cols,
                  dst + static_cast<std::ptrdiff_t>(o) * ld + s * cols);
    }
  }
}

template <typename T>
void scatter_group(const T* src, T* dst, int samples, int channels, int cols) {
  const int ld = samples * cols;
  for (int s = 0; s < samples; ++s) {
    for (int o = 0; o < channels; ++o) {
      std::copy_n(src + static_cast<std::ptrdiff_t>(o) * ld + s * cols, cols,
                  dst + (static_cast<std::ptrdiff_t>(s) * channels + o) * cols);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> Tape<T>::conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride,
                          int padding) {
  const kernels::ConvGeometry g = conv_geometry(input.shape(), weight.shape(), stride, padding);
  const int batch = input.shape()[0];
  const int out_ch = weight.shape()[0];
  const int rows = g.col_rows();
  const int cols = g.col_cols();
  const int group = conv_group(batch, cols);
  const bool direct_col = group == 1 && g.kernel == 1 && g.stride == 1 && g.padding == 0;
  const std::size_t in_plane = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(out_ch) * cols;
  const std::size_t col_size = direct_col ? 0 : static_cast<std::size_t>(rows) * cols * group;

  Tensor<T> out(Shape{batch, out_ch, g.out_height, g.out_width});
  {
    std::vector<T> col(col_size);
    std::vector<T> tmp(group > 1 ? out_plane * group : 0);
    const T* x = input.values().data();
    const T* w = weight.values().data();
    T* y = out.values().data();
    for (int n0 = 0; n0 < batch; n0 += group) {
      const int gs = std::min(group, batch - n0);
      const int ld = gs * cols;
      const T* c = x + n0 * in_plane;
      if (!direct_col) {
        for (int s = 0; s < gs; ++s) {
          kernels::im2col(g, x + (n0 + s) * in_plane, col.data() + s * cols, ld);
        }
        c = col.data();
      }
      if (group == 1) {
        kernels::gemm_nn(out_ch, cols, rows, w, c, y + n0 * out_plane);
      } else {
        std::fill_n(tmp.begin(), out_plane * gs, T(0));
        kernels::gemm_nn(out_ch, ld, rows, w, c, tmp.data());
        scatter_group(tmp.data(), y + n0 * out_plane, gs, out_ch, cols);
      }
    }
  }
  if (!any_requires_grad({&input, &weight})) return out;

  Tensor<T> in = input;
  Tensor<T> wt = weight;
  return record(out, {input, weight}, [in, wt, out, g, batch, out_ch, direct_col, rows, cols,
                                       group, in_plane, out_plane, col_size]() mutable {
    const T* dy = out.grad().data();
    const T* x = in.values().data();
    std::vector<T> col(col_size);
    std::vector<T> dyg(group > 1 ? out_plane * group : 0);
    const bool need_dw = wt.requires_grad();
    const bool need_dx = in.requires_grad();
    T* dw = need_dw ? wt.grad().data() : nullptr;
    T* dx = need_dx ? in.grad().data() : nullptr;
    const T* w = wt.values().data();
    for (int n0 = 0; n0 < batch; n0 += group) {
      const int gs = std::min(group, batch - n0);
      const int ld = gs * cols;
      const T* d = dy + n0 * out_plane;
      if (group > 1) {
        gather_group(d, dyg.data(), gs, out_ch, cols);
        d = dyg.data();
      }
      if (need_dw) {
        const T* c = x + n0 * in_plane;
        if (!direct_col) {
          for (int s = 0; s < gs; ++s) {
            kernels::im2col(g, x + (n0 + s) * in_plane, col.data() + s * cols, ld);
          }
          c = col.data();
        }
        kernels::gemm_nt(out_ch, ld, rows, d, c, dw);
      }
      if (need_dx) {
        if (direct_col) {
          kernels::gemm_tn(out_ch, cols, rows, w, d, dx + n0 * in_plane);
        } else {
          std::fill(col.begin(), col.end(), T(0));
          kernels::gemm_tn(out_ch, ld, rows, w, d, col.data());
          for (int s = 0; s < gs; ++s) {
            kernels::col2im(g, col.data() + s * cols, dx + (n0 + s) * in_plane, ld);
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::conv1x1(const Tensor<T>& input, const Tensor<T>& weight) {
  if (weight.shape().rank() == 4 && (weight.shape()[2] != 1 || weight.shape()[3] != 1)) {
    throw DimensionError("conv1x1: weight must be [O,C,1,1], got " + weight.shape().str() +
                         " for input " + input.shape().str());
  }
  return conv2d(input, weight, 1, 0);
}

template <typename T>
Tensor<T> Tape<T>::relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (track_kinks_) {
    std::uint64_t h = kink_signature_;
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      word = (word << 1) | (xv[i] > T(0) ? 1u : 0u);
      if ((i & 63) == 63) {
        h = mix64(h, word);
        word = 0;
      }
    }
    kink_signature_ = mix64(h, word);
  }
  if (!x.requires_grad()) return out;
  Tensor<T> in = x;
  return record(out, {x}, [in, out]() mutable {
    auto xv = in.values();
    auto dy = out.grad();
    auto dx = in.grad();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += dy[i];
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
  if (!any_requires_grad({&a, &b})) return out;
  Tensor<T> ta = a;
  Tensor<T> tb = b;
  return record(out, {a, b}, [ta, tb, out]() mutable {
    auto dy = out.grad();
    if (ta.requires_grad()) {
      auto da = ta.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (tb.requires_grad()) {
      auto db = tb.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i];
  if (!any_requires_grad({&a, &b})) return out;
  Tensor<T> ta = a;
  Tensor<T> tb = b;
  return record(out, {a, b}, [ta, tb, out]() mutable {
    auto dy = out.grad();
    auto av = ta.values();
    auto bv = tb.values();
    // Separate passes so a == b accumulates twice.
    if (ta.requires_grad()) {
      auto da = ta.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (tb.requires_grad()) {
      auto db = tb.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = xv[i] * factor;
  if (!x.requires_grad()) return out;
  Tensor<T> in = x;
  return record(out, {x}, [in, out, factor]() mutable {
    auto dy = out.grad();
    auto dx = in.grad();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
  });
}

template <typename T>
Tensor<T> Tape<T>::sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.values()) total += v;
  Tensor<T> out(Shape{1}, total);
  if (!x.requires_grad()) return out;
  Tensor<T> in = x;
  return record(out, {x}, [in, out]() mutable {
    const T dy = out.grad()[0];
    for (T& d : in.grad()) d += dy;
  });
}

template <typename T>
Tensor<T> Tape<T>::matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul", "lhs");
  require_rank(b.shape(), 2, "matmul", "rhs");
  if (a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: inner extents differ, " + a.shape().str() + " x " +
                         b.shape().str());
  }
  const int n = a.shape()[0];
  const int m = a.shape()[1];
  const int p = b.shape()[1];
  Tensor<T> out(Shape{n, p});
  kernels::gemm_nn(n, p, m, a.values().data(), b.values().data(), out.values().data());
  if (!any_requires_grad({&a, &b})) return out;
  Tensor<T> ta = a;
  Tensor<T> tb = b;
  return record(out, {a, b}, [ta, tb, out, n, m, p]() mutable {
    const T* dy = out.grad().data();
    if (ta.requires_grad()) {
      // dA[n,m] += dY[n,p] * B[m,p]^T
      kernels::gemm_nt(n, p, m, dy, tb.values().data(), ta.grad().data());
    }
    if (tb.requires_grad()) {
      // dB[m,p] += A[n,m]^T * dY[n,p]
      kernels::gemm_tn(n, p, m, ta.values().data(), dy, tb.grad().data());
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "add_bias", "input");
  require_rank(bias.shape(), 1, "add_bias", "bias");
  if (x.shape()[1] != bias.shape()[0]) {
    throw DimensionError("add_bias: shape mismatch " + x.shape().str() + " vs " +
                         bias.shape().str());
  }
  const int rows = x.shape()[0];
  const int cols = x.shape()[1];
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto bv = bias.values();
  auto yv = out.values();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) yv[r * cols + c] = xv[r * cols + c] + bv[c];
  }
  if (!any_requires_grad({&x, &bias})) return out;
  Tensor<T> tx = x;
  Tensor<T> tb = bias;
  return record(out, {x, bias}, [tx, tb, out, rows, cols]() mutable {
    auto dy = out.grad();
    if (tx.requires_grad()) {
      auto dx = tx.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (tb.requires_grad()) {
      auto db = tb.grad();
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
      }
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::softmax(const Tensor<T>& x, int axis) {
  require_rank(x.shape(), 2, "softmax", "input");
  if (axis != 0 && axis != 1) {
    throw ContractError("softmax: invalid axis " + std::to_string(axis) + " for shape " +
                        x.shape().str());
  }
  const int rows = x.shape()[0];
  const int cols = x.shape()[1];
  // Lines run along `axis`; element j of line i sits at i*outer + j*inner.
  const int lines = axis == 1 ? rows : cols;
  const int length = axis == 1 ? cols : rows;
  const int outer = axis == 1 ? cols : 1;
  const int inner = axis == 1 ? 1 : cols;
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (int i = 0; i < lines; ++i) {
    T peak = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < length; ++j) peak = std::max(peak, xv[i * outer + j * inner]);
    T total = T(0);
    for (int j = 0; j < length; ++j) {
      const T e = std::exp(xv[i * outer + j * inner] - peak);
      yv[i * outer + j * inner] = e;
      total += e;
    }
    for (int j = 0; j < length; ++j) yv[i * outer + j * inner] /= total;
  }
  if (!x.requires_grad()) return out;
  Tensor<T> in = x;
  return record(out, {x}, [in, out, lines, length, outer, inner]() mutable {
    auto y = out.values();
    auto dy = out.grad();
    auto dx = in.grad();
    for (int i = 0; i < lines; ++i) {
      T inner_product = T(0);
      for (int j = 0; j < length; ++j) {
        const int at = i * outer + j * inner;
        inner_product += y[at] * dy[at];
      }
      for (int j = 0; j < length; ++j) {
        const int at = i * outer + j * inner;
        dx[at] += y[at] * (dy[at] - inner_product);
      }
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool", "input");
  const int n = x.shape()[0];
  const int c = x.shape()[1];
  const int area = x.shape()[2] * x.shape()[3];
  if (area == 0) throw DimensionError("global_avg_pool: empty spatial extent " + x.shape().str());
  Tensor<T> out(Shape{n, c});
  auto xv = x.values();
  auto yv = out.values();
  const T inv = T(1) / static_cast<T>(area);
  for (int i = 0; i < n * c; ++i) {
    T total = T(0);
    const T* p = xv.data() + static_cast<std::ptrdiff_t>(i) * area;
    for (int j = 0; j < area; ++j) total += p[j];
    yv[i] = total * inv;
  }
  if (!x.requires_grad()) return out;
  Tensor<T> in = x;
  return record(out, {x}, [in, out, n, c, area, inv]() mutable {
    auto dy = out.grad();
    auto dx = in.grad();
    for (int i = 0; i < n * c; ++i) {
      const T g = dy[i] * inv;
      T* p = dx.data() + static_cast<std::ptrdiff_t>(i) * area;
      for (int j = 0; j < area; ++j) p[j] += g;
    }
  });
}

namespace {

template <typename T>
void log_softmax_rows(std::span<const T> x, int rows, int cols, std::vector<T>& out) {
  out.resize(x.size());
  for (int r = 0; r < rows; ++r) {
    const T* row = x.data() + static_cast<std::ptrdiff_t>(r) * cols;
    T peak = -std::numeric_limits<T>::infinity();
    for (int c = 0; c < cols; ++c) peak = std::max(peak, row[c]);
    T total = T(0);
    for (int c = 0; c < cols; ++c) total += std::exp(row[c] - peak);
    const T log_norm = peak + std::log(total);
    for (int c = 0; c < cols; ++c) out[r * cols + c] = row[c] - log_norm;
  }
}

}  // namespace

template <typename T>
Tensor<T> Tape<T>::cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "cross_entropy", "logits");
  const int rows = logits.shape()[0];
  const int cols = logits.shape()[1];
  if (static_cast<int>(labels.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + logits.shape().str());
  }
  if (rows == 0) throw DimensionError("cross_entropy: empty batch");
  for (int r = 0; r < rows; ++r) {
    if (labels[r] < 0 || labels[r] >= cols) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[r]) +
                          " outside [0, " + std::to_string(cols) + ")");
    }
  }
  std::vector<T> logp;
  log_softmax_rows(logits.values(), rows, cols, logp);
  T total = T(0);
  for (int r = 0; r < rows; ++r) total -= logp[r * cols + labels[r]];
  Tensor<T> out(Shape{1}, total / static_cast<T>(rows));
  if (!logits.requires_grad()) return out;
  Tensor<T> in = logits;
  std::vector<int> y(labels.begin(), labels.end());
  return record(out, {logits}, [in, out, rows, cols, y = std::move(y),
                                logp = std::move(logp)]() mutable {
    const T g = out.grad()[0] / static_cast<T>(rows);
    auto dx = in.grad();
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const T p = std::exp(logp[r * cols + c]);
        dx[r * cols + c] += g * (p - (c == y[r] ? T(1) : T(0)));
      }
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets) {
  require_rank(logits.shape(), 2, "soft_cross_entropy", "logits");
  require_same(logits.shape(), targets.shape(), "soft_cross_entropy");
  const int rows = logits.shape()[0];
  const int cols = logits.shape()[1];
  if (rows == 0) throw DimensionError("soft_cross_entropy: empty batch");
  std::vector<T> logp;
  log_softmax_rows(logits.values(), rows, cols, logp);
  auto q = targets.values();
  T total = T(0);
  for (std::size_t i = 0; i < logp.size(); ++i) total -= q[i] * logp[i];
  Tensor<T> out(Shape{1}, total / static_cast<T>(rows));
  if (!logits.requires_grad()) return out;
  Tensor<T> in = logits;
  Tensor<T> tq = targets;
  return record(out, {logits}, [in, tq, out, rows, cols, logp = std::move(logp)]() mutable {
    const T g = out.grad()[0] / static_cast<T>(rows);
    auto q = tq.values();
    auto dx = in.grad();
    for (int r = 0; r < rows; ++r) {
      T mass = T(0);
      for (int c = 0; c < cols; ++c) mass += q[r * cols + c];
      for (int c = 0; c < cols; ++c) {
        const int at = r * cols + c;
        dx[at] += g * (mass * std::exp(logp[at]) - q[at]);
      }
    }
  });
}

template <typename T>
Tensor<T> Tape<T>::gate_scale(const Tensor<T>& x, const Tensor<T>& gate, int k) {
  require_rank(gate.shape(), 2, "gate_scale", "gate");
  if (x.shape().rank() < 1 || x.shape()[0] != gate.shape()[0]) {
    throw DimensionError("gate_scale: batch mismatch " + x.shape().str() + " vs " +
                         gate.shape().str());
  }
  if (k < 0 || k >= gate.shape()[1]) {
    throw ContractError("gate_scale: expert " + std::to_string(k) + " outside gate " +
                        gate.shape().str());
  }
  const int n = x.shape()[0];
  const int experts = gate.shape()[1];
  const std::size_t per = n ? x.numel() / static_cast<std::size_t>(n) : 0;
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto gv = gate.values();
  auto yv = out.values();
  for (int i = 0; i < n; ++i) {
    const T w = gv[i * experts + k];
    for (std::size_t j = 0; j < per; ++j) yv[i * per + j] = w * xv[i * per + j];
  }
  if (!any_requires_grad({&x, &gate})) return out;
  Tensor<T> tx = x;
  Tensor<T> tg = gate;
  return record(out, {x, gate}, [tx, tg, out, n, experts, per, k]() mutable {
    auto dy = out.grad();
    if (tx.requires_grad()) {
      auto gv = tg.values();
      auto dx = tx.grad();
      for (int i = 0; i < n; ++i) {
        const T w = gv[i * experts + k];
        for (std::size_t j = 0; j < per; ++j) dx[i * per + j] += w * dy[i * per + j];
      }
    }
    if (tg.requires_grad()) {
      auto xv = tx.values();
      auto dg = tg.grad();
      for (int i = 0; i < n; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < per; ++j) acc += xv[i * per + j] * dy[i * per + j];
        dg[i * experts + k] += acc;
      }
    }
  });
}

namespace reference {

template <typename T>
std::vector<T> conv2d_direct(const Tensor<T>& input, const Tensor<T>& weight, int stride,
                             int padding) {
  const kernels::ConvGeometry g = conv_geometry(input.shape(), weight.shape(), stride, padding);
  const int batch = input.shape()[0];
  const int out_ch = weight.shape()[0];
  std::vector<T> out(static_cast<std::size_t>(batch) * out_ch * g.out_height * g.out_width,
                     T(0));
  auto x = input.values();
  auto w = weight.values();
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < out_ch; ++o)
      for (int oy = 0; oy < g.out_height; ++oy)
        for (int ox = 0; ox < g.out_width; ++ox) {
          T acc = T(0);
          for (int c = 0; c < g.channels; ++c)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * stride - padding + ky;
                const int ix = ox * stride - padding + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                acc += x[((n * g.channels + c) * g.height + iy) * g.width + ix] *
                       w[((o * g.channels + c) * g.kernel + ky) * g.kernel + kx];
              }
          out[((n * out_ch + o) * g.out_height + oy) * g.out_width + ox] = acc;
        }
  return out;
}

template std::vector<float> conv2d_direct(const Tensor<float>&, const Tensor<float>&, int, int);
template std::vector<double> conv2d_direct(const Tensor<double>&, const Tensor<double>&, int,
                                           int);

}  // namespace reference

template class Tape<float>;
template class Tape<double>;

}  // namespace dra::ag

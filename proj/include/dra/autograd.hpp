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

#ifndef DRA_AUTOGRAD_HPP
#define DRA_AUTOGRAD_HPP

// Minimal reverse-mode automatic differentiation over dense tensors.
//
// A Tensor is a shared handle to values, an optional gradient buffer and a
// requires_grad flag. A Tape records every operation whose inputs require a
// gradient; Tape::backward replays the recorded rules in reverse order, so
// each node is visited exactly once and fan-out accumulates additively.
//
// Both classes are instantiated for float (training) and double (gradient
// checking).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dra::ag {

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims) : dims_(dims) {}
  explicit Shape(std::vector<int> dims) : dims_(std::move(dims)) {}

  int rank() const { return static_cast<int>(dims_.size()); }
  int operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  const std::vector<int>& dims() const { return dims_; }
  std::size_t numel() const;
  std::string str() const;

  bool operator==(const Shape&) const = default;

 private:
  std::vector<int> dims_;
};

template <typename T>
class Tensor {
 public:
  // An undefined tensor; most accessors throw until assigned.
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  // Leaf tensor that takes part in differentiation.
  static Tensor parameter(Shape shape, std::vector<T> values, std::string name);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t numel() const;

  std::span<T> values();
  std::span<const T> values() const;
  T item() const;

  // Gradient buffer, allocated (zero) on first access.
  std::span<T> grad();
  std::span<const T> grad() const;
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool on);

  const std::string& name() const;
  void set_name(std::string name);

  // Deep copy of values; the copy is a fresh leaf with the same flags.
  Tensor clone() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    Tensor<U> t(shape(), std::move(out));
    t.set_requires_grad(requires_grad());
    t.set_name(name());
    return t;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage;
  std::shared_ptr<Storage> s_;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  // Cross-correlation. input [N,C,H,W], weight [O,C,k,k], k odd.
  // Output extent is floor((H + 2*padding - k) / stride) + 1.
  Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride,
                   int padding);
  // Per-pixel channel map; weight [O,C,1,1]. Same kernel as conv2d with k=1.
  Tensor<T> conv1x1(const Tensor<T>& input, const Tensor<T>& weight);

  Tensor<T> relu(const Tensor<T>& x);
  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> scale(const Tensor<T>& x, T factor);
  Tensor<T> sum(const Tensor<T>& x);
  // [N,M] x [M,P] -> [N,P]
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
  // [N,M] + [M] broadcast over rows.
  Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
  // Rank-2 softmax along axis 0 or 1.
  Tensor<T> softmax(const Tensor<T>& x, int axis);
  // [N,C,H,W] -> [N,C]
  Tensor<T> global_avg_pool(const Tensor<T>& x);
  // Mean softmax cross-entropy over the batch; labels in [0, classes).
  Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);
  // Mean cross-entropy against soft targets [N,classes] (treated as constant).
  Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets);
  // x[n,...] * gate[n,k] for every sample n.
  Tensor<T> gate_scale(const Tensor<T>& x, const Tensor<T>& gate, int k);

  // Registers a custom operation. The rule reads output.grad() and
  // accumulates into the inputs that require gradients. Returns output with
  // requires_grad set when any input requires a gradient; otherwise nothing
  // is recorded.
  Tensor<T> record(Tensor<T> output, const std::vector<Tensor<T>>& inputs,
                   BackwardFn rule);

  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Hash of the sign pattern seen by every relu since tracking was enabled.
  // Finite-difference checks use it to detect steps that cross a kink.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  std::uint64_t kink_signature() const { return kink_signature_; }

 private:
  struct Node {
    Tensor<T> output;
    BackwardFn rule;
  };
  bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
  bool track_kinks_ = false;
  std::uint64_t kink_signature_ = 0;
};

namespace reference {
// Direct seven-loop convolution, used to verify the im2col path.
template <typename T>
std::vector<T> conv2d_direct(const Tensor<T>& input, const Tensor<T>& weight,
                             int stride, int padding);
}  // namespace reference

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace dra::ag

#endif  // DRA_AUTOGRAD_HPP

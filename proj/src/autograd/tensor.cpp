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

#include "dra/autograd.hpp"

#include <algorithm>
#include <sstream>

#include "dra/error.hpp"

namespace dra::ag {

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (int d : dims_) n *= static_cast<std::size_t>(d);
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
struct Tensor<T>::Storage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;
  std::string name;
};

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : s_(std::make_shared<Storage>()) {
  for (int d : shape.dims()) {
    if (d < 0) throw DimensionError("negative extent in shape " + shape.str());
  }
  s_->values.assign(shape.numel(), fill);
  s_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
  if (shape.numel() != values.size()) {
    throw DimensionError("shape " + shape.str() + " holds " + std::to_string(shape.numel()) +
                         " values, got " + std::to_string(values.size()));
  }
  s_->shape = std::move(shape);
  s_->values = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values, std::string name) {
  Tensor t(std::move(shape), std::move(values));
  t.s_->requires_grad = true;
  t.s_->name = std::move(name);
  return t;
}

namespace {
[[noreturn]] void throw_undefined() { throw ContractError("access to an undefined tensor"); }
}  // namespace

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!s_) throw_undefined();
  return s_->shape;
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return s_ ? s_->values.size() : 0;
}

template <typename T>
std::span<T> Tensor<T>::values() {
  if (!s_) throw_undefined();
  return s_->values;
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  if (!s_) throw_undefined();
  return s_->values;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() needs a scalar, shape is " + shape().str());
  }
  return s_->values[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!s_) throw_undefined();
  if (s_->grad.size() != s_->values.size()) s_->grad.assign(s_->values.size(), T(0));
  return s_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!s_) throw_undefined();
  if (s_->grad.size() != s_->values.size()) s_->grad.assign(s_->values.size(), T(0));
  return s_->grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return s_ && s_->grad.size() == s_->values.size();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!s_) throw_undefined();
  s_->grad.assign(s_->values.size(), T(0));
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return s_ && s_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!s_) throw_undefined();
  s_->requires_grad = on;
}

template <typename T>
const std::string& Tensor<T>::name() const {
  if (!s_) throw_undefined();
  return s_->name;
}

template <typename T>
void Tensor<T>::set_name(std::string name) {
  if (!s_) throw_undefined();
  s_->name = std::move(name);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t(shape(), s_->values);
  t.s_->requires_grad = s_->requires_grad;
  t.s_->name = s_->name;
  return t;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dra::ag

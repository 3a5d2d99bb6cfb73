// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pointbox::nn {

/// Cache-line aligned storage. Vectorized kernels peel their loops by address,
/// so without a fixed alignment the rounding of reductions can change between
/// runs that are otherwise identical.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. Shapes in this code base are small (at most four
/// axes), so a vector of ints is sufficient.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }
  Tensor(std::vector<int> s, const std::vector<T>& values)
      : shape(std::move(s)), data(values.begin(), values.end()) {
    check();
  }
  Tensor(std::vector<int> s, Buffer<T> values) : shape(std::move(s)), data(std::move(values)) { check(); }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t numel() const { return data.size(); }
  std::vector<T> values() const { return {data.begin(), data.end()}; }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int axis) const { return shape.at(axis < 0 ? axis + rank() : axis); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  /// Elements per index of the leading axis.
  std::size_t stride0() const { return shape.empty() ? 1 : numel() / static_cast<std::size_t>(shape[0]); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

 private:
  void check() const {
    if (data.size() != count(shape)) throw std::invalid_argument("tensor: data does not match shape");
  }
};

std::string shape_string(const std::vector<int>& shape);

/// Trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<T>(value.shape);
  }
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

/// Non-owning list of a model's parameters, in a stable order.
template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

}  // namespace pointbox::nn

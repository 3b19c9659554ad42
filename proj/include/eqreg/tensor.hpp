#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "eqreg/common.hpp"
#include "eqreg/rng.hpp"

namespace eqreg {

// Dense row-major n-d array. Value storage is shared; ops never mutate their
// inputs. `node` ties the tensor to a tape when it participates in a
// differentiable computation (-1 = untracked).
template <class T>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  int node = -1;
  bool requires_grad = false;

  Tensor() : data(std::make_shared<std::vector<T>>()) {}

  Tensor(Shape s, std::vector<T> values)
      : shape(std::move(s)), data(std::make_shared<std::vector<T>>(std::move(values))) {
    if (data->size() != eqreg::numel(shape))
      fail_contract("tensor data size ", data->size(), " does not match shape ",
                    shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    const std::size_t n = eqreg::numel(s);
    return Tensor(std::move(s), std::vector<T>(n, T(0)));
  }

  static Tensor full(Shape s, T v) {
    const std::size_t n = eqreg::numel(s);
    return Tensor(std::move(s), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
    const std::size_t n = eqreg::numel(s);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
    return Tensor(std::move(s), std::move(v));
  }

  std::size_t numel() const { return data->size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  const T* ptr() const { return data->data(); }
  T* ptr() { return data->data(); }
  const std::vector<T>& vec() const { return *data; }
  std::vector<T>& vec() { return *data; }

  T item() const {
    if (numel() != 1) fail_contract("item() on non-scalar tensor ", shape_str(shape));
    return (*data)[0];
  }

  bool is_scalar() const { return numel() == 1; }

  bool all_finite() const {
    for (T v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Value copy with no tape history.
  Tensor detached() const {
    Tensor out;
    out.shape = shape;
    out.data = std::make_shared<std::vector<T>>(*data);
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> v(data->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>((*data)[i]);
    return Tensor<U>(shape, std::move(v));
  }
};

}  // namespace eqreg

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cslb/error.hpp"

namespace cslb {

template <typename S>
class Tape;

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major tensor. The buffer is shared, so copies alias; ops on a
// tape produce fresh buffers. `node` links the tensor to its tape entry.
template <typename S>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<S>> data;
  bool requires_grad = false;
  std::int32_t node = -1;
  Tape<S>* tape = nullptr;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.data = std::make_shared<std::vector<S>>(cslb::numel(shape), S(0));
    t.shape = std::move(shape);
    return t;
  }

  static Tensor full(Shape shape, S value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    if (cslb::numel(shape) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("tensor: " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  static Tensor scalar(S value) { return from({1}, {value}); }

  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, S stddev) {
    Tensor t = zeros(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : *t.data) v = static_cast<S>(dist(rng)) * stddev;
    return t;
  }

  // Deep copy; plain assignment shares the buffer.
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<S>>(*data);
    t.requires_grad = requires_grad;
    return t;
  }

  std::int64_t numel() const { return cslb::numel(shape); }
  std::int64_t dim(size_t i) const { return shape.at(i); }
  std::int64_t rows() const {
    return shape.empty() ? 0 : numel() / shape.back();
  }
  std::int64_t cols() const { return shape.empty() ? 0 : shape.back(); }

  S* ptr() { return data->data(); }
  const S* ptr() const { return data->data(); }
  S& at(std::int64_t i) { return (*data)[i]; }
  S at(std::int64_t i) const { return (*data)[i]; }
  std::span<const S> values() const { return {data->data(), data->size()}; }

  bool finite() const {
    for (S v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

}  // namespace cslb

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "cslb/error.hpp"
#include "cslb/tensor.hpp"

namespace cslb {

// Central finite differences, one forward pair per element. `f` must treat
// its argument as read-only input and rebuild any graph it needs; this path
// never touches a tape, which keeps it an independent gradient oracle.
template <typename S, typename F>
Tensor<S> finite_difference_grad(F&& f, const Tensor<S>& x, S h) {
  if (!(h > S(0))) throw ConfigError("finite_difference_grad: h must be > 0");
  Tensor<S> grad = Tensor<S>::zeros(x.shape);
  Tensor<S> probe = Tensor<S>::zeros(x.shape);
  std::copy(x.data->begin(), x.data->end(), probe.data->begin());
  const auto n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const S keep = probe.at(i);
    probe.at(i) = keep + h;
    const S up = f(probe);
    probe.at(i) = keep - h;
    const S down = f(probe);
    probe.at(i) = keep;
    grad.at(i) = (up - down) / (S(2) * h);
  }
  return grad;
}

// Largest elementwise deviation, normalized by the gradient scale:
// max_i |a_i - b_i| / max(1, max_i |a_i|, max_i |b_i|).
template <typename S>
double max_normalized_error(std::span<const S> a, std::span<const S> b) {
  if (a.size() != b.size())
    throw ShapeError("max_normalized_error: size mismatch");
  double worst = 0.0, scale = 1.0;
  for (size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) -
                                     static_cast<double>(b[i])));
    scale = std::max({scale, std::abs(static_cast<double>(a[i])),
                      std::abs(static_cast<double>(b[i]))});
  }
  return worst / scale;
}

}  // namespace cslb

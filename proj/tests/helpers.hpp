#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cslb/gradcheck.hpp"
#include "cslb/model.hpp"
#include "cslb/tape.hpp"
#include "cslb/tensor.hpp"

namespace cslb::test {

template <typename S>
Tensor<S> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : *t.data) v = static_cast<S>(dist(rng));
  return t;
}

inline std::vector<std::int32_t> random_ids(size_t count, int vocab,
                                            std::mt19937_64& rng) {
  std::vector<std::int32_t> ids(count);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng() % vocab);
  return ids;
}

template <typename S>
bool bitwise_equal(std::span<const S> a, std::span<const S> b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename S>
double max_abs_diff(std::span<const S> a, std::span<const S> b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) -
                                     static_cast<double>(b[i])));
  return worst;
}

// 4th-order central difference. Used for float32 full-model checks, where
// forward rounding noise (~4e-7 on the loss) forces the plain 2-point stencil
// above the 1e-3 target at any step size.
template <typename S, typename F>
Tensor<S> fourth_order_fd(F&& f, const Tensor<S>& x, S h) {
  Tensor<S> grad = Tensor<S>::zeros(x.shape);
  Tensor<S> probe = Tensor<S>::zeros(x.shape);
  std::copy(x.data->begin(), x.data->end(), probe.data->begin());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const S keep = probe.at(i);
    auto eval = [&](S delta) {
      probe.at(i) = keep + delta;
      return static_cast<double>(f(probe));
    };
    const double d1 = eval(h) - eval(-h);
    const double d2 = eval(S(2) * h) - eval(S(-2) * h);
    probe.at(i) = keep;
    grad.at(i) = static_cast<S>((8.0 * d1 - d2) / (12.0 * static_cast<double>(h)));
  }
  return grad;
}

// Worst finite-difference error across every parameter of a model, for the
// loss on one token sequence.
template <typename S>
double model_grad_error(TransformerModel<S>& model,
                        const std::vector<std::int32_t>& tokens, S h,
                        bool fourth_order = false) {
  Tape<S> tape;
  auto bound = model.bind(tape, true);
  auto loss = model.loss_on_sequence(tape, bound, tokens);
  tape.backward(loss);
  double worst = 0.0;
  for (size_t p = 0; p < model.num_params(); ++p) {
    auto analytic = tape.grad(bound[p]);
    auto eval_at = [&](const Tensor<S>& probe) {
      auto& slot = model.params()[p];
      Tensor<S> keep = slot;
      slot = probe;
      Tape<S> inner;
      auto b2 = model.bind(inner, false);
      S val = model.loss_on_sequence(inner, b2, tokens).at(0);
      slot = keep;
      return val;
    };
    Tensor<S> fd = fourth_order
                       ? fourth_order_fd(eval_at, model.params()[p], h)
                       : finite_difference_grad(eval_at, model.params()[p], h);
    worst = std::max(worst, max_normalized_error(analytic, fd.values()));
  }
  return worst;
}

// Checks analytic gradients of `build` against central finite differences
// for every input tensor. `build(tape, bound_inputs)` must return a scalar.
// Returns the worst normalized error across inputs.
template <typename BuildFn>
double gradcheck_all(const std::vector<Tensor<double>>& inputs, BuildFn&& build,
                     double h = 1e-5) {
  Tape<double> tape;
  std::vector<Tensor<double>> bound;
  bound.reserve(inputs.size());
  for (const auto& t : inputs) bound.push_back(tape.leaf(t, true));
  Tensor<double> loss = build(tape, bound);
  tape.backward(loss);
  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto analytic = tape.grad(bound[i]);
    Tensor<double> fd = finite_difference_grad(
        [&](const Tensor<double>& probe) {
          Tape<double> inner;
          std::vector<Tensor<double>> rebound;
          rebound.reserve(inputs.size());
          for (size_t j = 0; j < inputs.size(); ++j)
            rebound.push_back(inner.leaf(j == i ? probe : inputs[j], false));
          return build(inner, rebound).at(0);
        },
        inputs[i], h);
    worst = std::max(worst, max_normalized_error(analytic, fd.values()));
  }
  return worst;
}

}  // namespace cslb::test

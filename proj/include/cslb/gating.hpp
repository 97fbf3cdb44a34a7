#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cslb/error.hpp"
#include "cslb/tape.hpp"
#include "cslb/tensor.hpp"

namespace cslb {

// Learnable attenuation site: logits over layers, a total attenuation budget
// cut_strength in (0,1), and the structural floor alpha_min <= 1-cut_strength.
template <typename S>
struct GateParams {
  Tensor<S> theta;  // [n_layers]
  double cut_strength = 0.9;
  double alpha_min = 0.05;
};

// softmax over layer logits; differentiable through the tape.
template <typename S>
Tensor<S> gate_distribution(Tape<S>& tape, const Tensor<S>& theta) {
  if (theta.numel() < 1)
    throw ShapeError("gate_distribution: empty logits");
  return tape.softmax_rows(theta);
}

// alpha_l = 1 - cut_strength * p_l, each in [1-cut_strength, 1).
template <typename S>
Tensor<S> layer_alphas(Tape<S>& tape, const GateParams<S>& gate) {
  if (!(gate.cut_strength > 0.0) || !(gate.cut_strength < 1.0))
    throw ConfigError("layer_alphas: cut_strength must lie in (0, 1)");
  Tensor<S> p = gate_distribution(tape, gate.theta);
  return tape.affine(p, static_cast<S>(-gate.cut_strength), S(1));
}

// Tape-free softmax in double precision, for recording snapshots.
inline std::vector<double> gate_probabilities(const std::vector<double>& theta) {
  double mx = theta.empty() ? 0.0 : theta[0];
  for (double v : theta) mx = std::max(mx, v);
  std::vector<double> p(theta.size());
  double sum = 0.0;
  for (size_t i = 0; i < theta.size(); ++i) {
    p[i] = std::exp(theta[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <typename S>
std::vector<double> gate_probabilities(const Tensor<S>& theta) {
  std::vector<double> t(theta.data->begin(), theta.data->end());
  return gate_probabilities(t);
}

// Time series of the gate distribution across training.
struct GateTrajectory {
  struct Row {
    std::int64_t step;
    std::vector<double> p;
  };
  std::vector<Row> rows;

  void record(std::int64_t step, std::vector<double> p) {
    if (!rows.empty() && step <= rows.back().step)
      throw ContractError("gate trajectory: step " + std::to_string(step) +
                          " not greater than last recorded " +
                          std::to_string(rows.back().step));
    rows.push_back({step, std::move(p)});
  }
};

template <typename S>
void record_gate(GateTrajectory& trajectory, std::int64_t step,
                 const GateParams<S>& gate) {
  trajectory.record(step, gate_probabilities(gate.theta));
}

}  // namespace cslb

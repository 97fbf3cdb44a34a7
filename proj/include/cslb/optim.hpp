#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cslb/error.hpp"
#include "cslb/tensor.hpp"

namespace cslb {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

// Adaptive-moment optimizer with decoupled weight decay and bias correction.
// Decay is skipped for parameters flagged no-decay (norm gains, gate logits).
template <typename S>
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const std::vector<Tensor<S>>& params)
      : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), S(0));
      v_.emplace_back(p.numel(), S(0));
    }
  }

  std::int64_t step() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

  std::vector<std::vector<S>>& first_moments() { return m_; }
  std::vector<std::vector<S>>& second_moments() { return v_; }
  void set_step(std::int64_t s) { step_ = s; }

  // One update over all parameters. grads[i] must match params[i] in size.
  void update(std::vector<Tensor<S>>& params,
              const std::vector<std::span<const S>>& grads,
              const std::vector<bool>& decay,
              const std::vector<std::string>& names, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw ShapeError("optimizer: parameter/gradient count mismatch");
    ++step_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (size_t p = 0; p < params.size(); ++p) {
      auto& param = *params[p].data;
      auto g = grads[p];
      if (g.size() != param.size())
        throw ShapeError("optimizer: gradient size mismatch for " + names[p]);
      auto& m = m_[p];
      auto& v = v_[p];
      const double wd = decay[p] ? cfg_.weight_decay : 0.0;
      for (size_t i = 0; i < param.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        if (!std::isfinite(gi))
          throw NumericError("optimizer: non-finite gradient in tensor '" +
                             names[p] + "' at step " + std::to_string(step_));
        const double mi = b1 * m[i] + (1.0 - b1) * gi;
        const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        const double mhat = mi / c1;
        const double vhat = vi / c2;
        double x = static_cast<double>(param[i]);
        x -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * x);
        param[i] = static_cast<S>(x);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<S>> m_, v_;
  std::int64_t step_ = 0;
};

}  // namespace cslb

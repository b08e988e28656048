#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "cmkd/error.hpp"
#include "cmkd/tensor.hpp"

namespace cmkd {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are positional: the parameter
/// list passed to step() must match the one the optimizer was built with.
/// Updated parameters are rebound as fresh leaves, so earlier graphs keep
/// their old values and the next forward picks up the new ones.
class Adam {
 public:
  explicit Adam(const std::vector<Tensor*>& params, AdamConfig cfg = {}) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor* p : params) {
      m_.emplace_back(p->numel(), 0.0);
      v_.emplace_back(p->numel(), 0.0);
    }
  }

  std::size_t steps() const { return step_; }

  void step(const std::vector<Tensor*>& params, double lr) {
    if (params.size() != m_.size()) throw ConfigError("adam: parameter list changed size");
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      if (p.numel() != m_[i].size()) throw ConfigError("adam: parameter shape changed");
      auto g = p.grad();  // throws if backward has not populated it
      auto vals = p.to_vector();
      for (std::size_t j = 0; j < vals.size(); ++j) {
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m_[i][j] / c1;
        const double vhat = v_[i][j] / c2;
        vals[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      p = Tensor::from_data(p.shape(), std::move(vals), true);
    }
  }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Cosine decay from lr_start at epoch 0 to lr_end at epoch == total; the
/// endpoints are exact.
inline double cosine_lr(std::size_t epoch, std::size_t total, double lr_start, double lr_end) {
  if (total == 0) return lr_start;
  if (epoch >= total) return lr_end;
  const double t = static_cast<double>(epoch) / static_cast<double>(total);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace cmkd

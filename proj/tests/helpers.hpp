#pragma once

// Shared test utilities: random tensor factories and a central-difference
// gradient oracle. The oracle only ever calls forward evaluations, so it is
// independent of the backward implementation it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "cmkd/random.hpp"
#include "cmkd/tensor.hpp"

namespace testutil {

inline cmkd::Tensor random_tensor(cmkd::Rng& rng, cmkd::Shape shape, bool requires_grad,
                                  double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(cmkd::shape_numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return cmkd::Tensor::from_data(std::move(shape), std::move(d), requires_grad);
}

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), floor);
}

// Builds the scalar loss from fresh leaves, runs backward, then verifies each
// leaf's gradient against (f(x+h) - f(x-h)) / 2h elementwise.
// `build` must be a pure function of the leaf values.
struct GradCheckOutcome {
  double max_rel_err = 0.0;
  bool pass = true;
};

inline GradCheckOutcome finite_difference_check(
    const std::vector<cmkd::Tensor>& leaves,
    const std::function<cmkd::Tensor(const std::vector<cmkd::Tensor>&)>& build,
    double step = 1e-5, double tol = 1e-4) {
  using cmkd::Tensor;

  // analytic pass
  std::vector<cmkd::Tensor> grad_leaves;
  grad_leaves.reserve(leaves.size());
  for (const auto& l : leaves) {
    grad_leaves.push_back(Tensor::from_data(l.shape(), l.to_vector(), true));
  }
  Tensor loss = build(grad_leaves);
  cmkd::backward(loss);

  GradCheckOutcome out;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const auto base = leaves[li].to_vector();
    auto grad = grad_leaves[li].grad();
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto eval_at = [&](double delta) {
        std::vector<cmkd::Tensor> probe;
        probe.reserve(leaves.size());
        for (std::size_t lj = 0; lj < leaves.size(); ++lj) {
          auto vals = leaves[lj].to_vector();
          if (lj == li) vals[i] += delta;
          probe.push_back(Tensor::from_data(leaves[lj].shape(), std::move(vals), false));
        }
        return build(probe).value();
      };
      const double fd = (eval_at(step) - eval_at(-step)) / (2.0 * step);
      const double err = rel_err(grad[i], fd);
      out.max_rel_err = std::max(out.max_rel_err, err);
      if (err > tol) out.pass = false;
    }
  }
  return out;
}

}  // namespace testutil

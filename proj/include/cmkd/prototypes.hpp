#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "cmkd/error.hpp"
#include "cmkd/instrument.hpp"
#include "cmkd/losses.hpp"
#include "cmkd/tensor.hpp"

// Learnable class prototypes and the evidence-based uncertainty built on
// them: per-sample Dirichlet concentrations from prototype similarity, the
// scalar uncertainty derived from total evidence, and the loss aligning that
// uncertainty with observed batch similarity.

namespace cmkd {

/// Exponent clamp applied to Q/tau before exp; far outside the operating
/// range, so in-range values are untouched bit for bit.
inline constexpr double kEvidenceExpClamp = 60.0;

struct PrototypeBank {
  Tensor phi;  // [c x embed_dim], requires_grad
  std::size_t count = 0;

  void validate() const {
    if (count < 2) throw ConfigError("prototype bank needs at least 2 prototypes");
    if (!phi.defined() || phi.rank() != 2 || phi.rows() != count) {
      throw ConfigError("prototype bank shape is inconsistent");
    }
    for (std::size_t i = 0; i < phi.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < phi.cols(); ++j) s += phi.at(i, j) * phi.at(i, j);
      if (std::sqrt(s) <= kStabilityFloor) {
        throw NumericError("prototype row " + std::to_string(i) + " is degenerate");
      }
    }
  }

  PrototypeBank clone() const {
    return PrototypeBank{Tensor::from_data(phi.shape(), phi.to_vector(), phi.requires_grad()),
                         count};
  }
};

/// Class means of the given embeddings, L2-normalized, as the initial
/// prototype rows; the bank is a learnable parameter afterwards.
inline PrototypeBank init_prototypes(const Tensor& embeddings, const std::vector<int>& labels,
                                     std::size_t c) {
  if (embeddings.rank() != 2) throw ShapeError("init_prototypes: expected NxD embeddings");
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  if (labels.size() != n) throw ShapeError("init_prototypes: label count mismatch");
  if (c < 2) throw ConfigError("init_prototypes: need at least 2 classes");

  std::vector<double> sums(c * d, 0.0);
  std::vector<std::size_t> counts(c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ConfigError("init_prototypes: label out of range");
    }
    const std::size_t k = static_cast<std::size_t>(labels[i]);
    ++counts[k];
    for (std::size_t j = 0; j < d; ++j) sums[k * d + j] += embeddings.at(i, j);
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (counts[k] == 0) {
      throw ConfigError("init_prototypes: class " + std::to_string(k) + " has no samples");
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      sums[k * d + j] /= static_cast<double>(counts[k]);
      norm += sums[k * d + j] * sums[k * d + j];
    }
    norm = std::max(std::sqrt(norm), kStabilityFloor);
    for (std::size_t j = 0; j < d; ++j) sums[k * d + j] /= norm;
  }
  PrototypeBank bank{Tensor::from_data({c, d}, std::move(sums), true), c};
  bank.validate();
  return bank;
}

/// Equal-width binning of continuous labels into prototype classes.
inline std::vector<int> bin_continuous_labels(const std::vector<double>& y, std::size_t bins) {
  if (y.empty()) throw ConfigError("bin_continuous_labels: empty labels");
  if (bins < 2) throw ConfigError("bin_continuous_labels: need at least 2 bins");
  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<int> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (width <= 0.0) {
      out[i] = 0;
      continue;
    }
    auto b = static_cast<long long>((y[i] - lo) / width);
    out[i] = static_cast<int>(std::clamp<long long>(b, 0, static_cast<long long>(bins) - 1));
  }
  return out;
}

/// Dirichlet concentrations alpha[i][k] = exp(Q(e, phi)[i][k] / tau) + 1.
inline Tensor dirichlet_alpha(const Tensor& e, const PrototypeBank& bank, double beta,
                              double tau) {
  if (e.rank() != 2 || e.cols() != bank.phi.cols()) {
    throw ShapeError("dirichlet_alpha: embedding dim does not match prototypes");
  }
  if (!(tau > 0.0)) throw ConfigError("dirichlet_alpha: tau must be > 0");
  instrument::dirichlet_calls.fetch_add(1, std::memory_order_relaxed);
  Tensor q = similarity_matrix(e, bank.phi, beta);
  return add(exp(clamp_max(scale(q, 1.0 / tau), kEvidenceExpClamp)), Tensor::scalar(1.0));
}

/// Per-sample uncertainty from total evidence e_i = sum_k alpha[i][k].
/// `as_printed` computes 1 - c/e_i; `inverse` computes c/e_i, which flips the
/// direction of the evidence/uncertainty relationship.
inline Tensor uncertainty(const Tensor& alpha, UncertaintyForm form) {
  if (alpha.rank() != 2) throw ShapeError("uncertainty: expected NxC concentrations");
  const auto c = static_cast<double>(alpha.cols());
  for (double v : alpha.values()) {
    if (!(v > 1.0)) throw NumericError("uncertainty: concentrations must exceed 1");
  }
  Tensor ratio = div(Tensor::scalar(c), sum_rows(alpha));
  return form == UncertaintyForm::as_printed ? sub(Tensor::scalar(1.0), ratio) : ratio;
}

/// Aligns uncertainty with scaled average off-diagonal similarity:
/// mean_j (u_j - delta * h_j)^2 where h_j averages row j of the batch
/// similarity matrix without its diagonal. Negative targets are allowed.
inline Tensor loss_unc(const Tensor& u, const Tensor& q_batch, double delta) {
  if (q_batch.rank() != 2 || q_batch.rows() != q_batch.cols()) {
    throw ShapeError("loss_unc: expected square batch similarity matrix");
  }
  const std::size_t n = q_batch.rows();
  if (n < 2) throw ShapeError("loss_unc: needs a batch of at least 2");
  if (u.rank() != 1 || u.dim(0) != n) {
    throw ShapeError("loss_unc: uncertainty length does not match batch");
  }
  Tensor h = scale(sub(sum_rows(q_batch), gather_diagonal(q_batch)),
                   1.0 / static_cast<double>(n - 1));
  Tensor d = sub(u, scale(h, delta));
  return mean(mul(d, d));
}

}  // namespace cmkd

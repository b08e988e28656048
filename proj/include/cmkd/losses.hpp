#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "cmkd/error.hpp"
#include "cmkd/instrument.hpp"
#include "cmkd/task.hpp"
#include "cmkd/tensor.hpp"

// The loss kernels: batch-contrastive alignment, cross-head distillation,
// cross-entropy, concordance loss, and their weighted total. All of them are
// differentiable scalars on the shared tape.

namespace cmkd {

enum class UncertaintyForm {
  as_printed,  // u = 1 - c / e
  inverse,     // u = c / e
};

inline std::string to_string(UncertaintyForm f) {
  return f == UncertaintyForm::as_printed ? "as_printed" : "inverse";
}

inline UncertaintyForm uncertainty_form_from_string(const std::string& s) {
  if (s == "as_printed") return UncertaintyForm::as_printed;
  if (s == "inverse") return UncertaintyForm::inverse;
  throw ConfigError("unknown uncertainty_form '" + s + "'");
}

struct LossConfig {
  double beta = 5.0;   // similarity temperature
  double tau = 1.0;    // evidence temperature
  double delta = 0.2;  // uncertainty-target scale
  UncertaintyForm uncertainty_form = UncertaintyForm::as_printed;
  std::size_t cer_bins = 3;  // prototype bins for continuous labels

  void validate() const {
    if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(delta > 0.0)) throw ConfigError("delta must be > 0");
    if (cer_bins < 2) throw ConfigError("cer_bins must be >= 2");
  }
};

struct LossWeights {
  double sim = 1.0;
  double unc = 1.0;
  double kd = 1.0;
  double task = 1.0;

  void validate() const {
    if (sim < 0 || unc < 0 || kd < 0 || task < 0) {
      throw ConfigError("loss weights must be non-negative");
    }
    if (sim == 0 && unc == 0 && kd == 0 && task == 0) {
      throw ConfigError("at least one loss weight must be positive");
    }
  }
};

/// Temperature-scaled cosine similarities: Q[i][j] = beta * cos(a_i, b_j).
/// Serves both the in-batch student/teacher matrix and the
/// embedding/prototype matrix.
inline Tensor similarity_matrix(const Tensor& e_a, const Tensor& e_b, double beta) {
  if (e_a.rank() != 2 || e_b.rank() != 2 || e_a.cols() != e_b.cols()) {
    throw ShapeError("similarity_matrix: embedding dims do not match");
  }
  instrument::similarity_calls.fetch_add(1, std::memory_order_relaxed);
  return scale(matmul(row_l2_normalize(e_a), transpose(row_l2_normalize(e_b))), beta);
}

/// InfoNCE over a precomputed square similarity matrix: matched pairs on the
/// diagonal against their row. One-directional by construction.
inline Tensor loss_sim_from_q(const Tensor& q) {
  if (q.rank() != 2 || q.rows() != q.cols()) {
    throw ShapeError("loss_sim: expected square batch similarity matrix");
  }
  if (q.rows() == 0) throw ShapeError("loss_sim: empty batch");
  return neg(mean(log(gather_diagonal(softmax_rows(q)))));
}

inline Tensor loss_sim(const Tensor& e_s, const Tensor& e_t, double beta) {
  if (e_s.rank() != 2 || e_t.rank() != 2 || e_s.rows() != e_t.rows()) {
    throw ShapeError("loss_sim: student/teacher batches must pair up");
  }
  return loss_sim_from_q(similarity_matrix(e_s, e_t, beta));
}

/// Distillation loss between the teacher's own output and the cross-head
/// output. Classification: mean KL(softmax(y_t) || softmax(y_ts)) with the
/// teacher side constant. Regression: mean squared difference, the scalar
/// analogue of matching the teacher's prediction.
inline Tensor loss_kd(const Tensor& y_t, const Tensor& y_ts, Task task) {
  if (y_t.rank() != 2 || y_ts.rank() != 2 || y_t.shape() != y_ts.shape()) {
    throw ShapeError("loss_kd: output shapes must match");
  }
  const std::size_t n = y_t.rows();
  if (n == 0) throw ShapeError("loss_kd: empty batch");
  if (task == Task::cer) {
    if (y_t.cols() != 1) throw ShapeError("loss_kd: regression outputs must be Nx1");
    Tensor d = sub(y_t, y_ts);
    return mean(mul(d, d));
  }
  // Teacher outputs come from frozen parameters, so p_t carries no graph.
  Tensor p_t = softmax_rows(y_t);
  Tensor lp_t = log(p_t);
  Tensor lp_s = log(softmax_rows(y_ts));
  return scale(sum(mul(p_t, sub(lp_t, lp_s))), 1.0 / static_cast<double>(n));
}

/// Mean cross-entropy of logits against integer labels.
inline Tensor loss_ce(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("loss_ce: expected NxC logits");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw ShapeError("loss_ce: label count mismatch");
  std::vector<double> onehot(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ConfigError("loss_ce: label " + std::to_string(labels[i]) + " out of range [0, " +
                        std::to_string(c) + ")");
    }
    onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Tensor mask = Tensor::from_data({n, c}, std::move(onehot), false);
  return scale(sum(mul(mask, log(softmax_rows(logits)))), -1.0 / static_cast<double>(n));
}

/// 1 - CCC with population statistics. Perfect concordance gives 0, perfect
/// discordance 2. Two constant series leave the coefficient undefined and
/// are an error instead of a silent zero.
inline Tensor loss_ccc(const Tensor& pred, const Tensor& target) {
  if (!(pred.rank() == 2 && pred.cols() == 1) && pred.rank() != 1) {
    throw ShapeError("loss_ccc: expected Nx1 or length-N series");
  }
  if (pred.shape() != target.shape()) throw ShapeError("loss_ccc: shape mismatch");
  const std::size_t n = pred.numel();
  if (n < 2) throw ShapeError("loss_ccc: needs at least two samples");

  Tensor mu_p = mean(pred);
  Tensor mu_t = mean(target);
  Tensor cp = sub(pred, mu_p);
  Tensor ct = sub(target, mu_t);
  Tensor var_p = mean(mul(cp, cp));
  Tensor var_t = mean(mul(ct, ct));
  Tensor cov = mean(mul(cp, ct));
  Tensor dmu = sub(mu_p, mu_t);
  Tensor denom = add(add(var_p, var_t), mul(dmu, dmu));

  // var of a genuinely varying series is far above fp dust on a constant one
  if (var_p.value() <= 1e-18 && var_t.value() <= 1e-18) {
    throw NumericError("loss_ccc: both series constant, coefficient undefined");
  }
  if (denom.value() <= kStabilityFloor) {
    throw NumericError("loss_ccc: degenerate denominator");
  }
  return sub(Tensor::scalar(1.0), div(scale(cov, 2.0), denom));
}

struct LossParts {
  std::optional<Tensor> sim;
  std::optional<Tensor> unc;
  std::optional<Tensor> kd;
  std::optional<Tensor> task;
};

/// Weighted sum of the supplied parts. A part with zero weight must simply
/// not be supplied -- its graph is never built, which keeps ablations
/// structurally honest. A weight of one passes the part through untouched.
inline Tensor loss_total(const LossParts& parts, const LossWeights& w) {
  w.validate();
  auto pick = [](const std::optional<Tensor>& part, double weight,
                 const char* name) -> std::optional<Tensor> {
    if (weight == 0.0) return std::nullopt;
    if (!part.has_value()) {
      throw ConfigError(std::string("loss_total: weight for ") + name +
                        " is nonzero but the part is missing");
    }
    if (!part->is_scalar()) throw ShapeError("loss_total: parts must be scalars");
    return weight == 1.0 ? *part : scale(*part, weight);
  };
  std::optional<Tensor> total;
  for (auto& term : {pick(parts.sim, w.sim, "sim"), pick(parts.unc, w.unc, "unc"),
                     pick(parts.kd, w.kd, "kd"), pick(parts.task, w.task, "task")}) {
    if (!term) continue;
    total = total ? add(*total, *term) : *term;
  }
  if (!total) throw ConfigError("loss_total: no active parts");
  return *total;
}

}  // namespace cmkd

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "cmkd/error.hpp"

// Evaluation metrics. All of these are pure functions over plain vectors;
// the classification ones work on predicted class indices, the regression
// ones on value series.

namespace cmkd {

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
  if (pred.empty()) throw ShapeError("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Unweighted mean of per-class F1. A class with true samples but no usable
/// predictions scores 0; classes absent from both predictions and truth are
/// left out of the mean.
inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth,
                       std::size_t num_classes) {
  if (pred.size() != truth.size()) throw ShapeError("macro_f1: length mismatch");
  if (pred.empty()) throw ShapeError("macro_f1: empty input");
  std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], t = truth[i];
    if (p < 0 || static_cast<std::size_t>(p) >= num_classes || t < 0 ||
        static_cast<std::size_t>(t) >= num_classes) {
      throw ConfigError("macro_f1: label out of range");
    }
    if (p == t) {
      tp[static_cast<std::size_t>(p)] += 1;
    } else {
      fp[static_cast<std::size_t>(p)] += 1;
      fn[static_cast<std::size_t>(t)] += 1;
    }
  }
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double support = tp[c] + fn[c];
    const double predicted = tp[c] + fp[c];
    if (support == 0 && predicted == 0) continue;  // class absent on both sides
    ++counted;
    if (tp[c] > 0) {
      const double precision = tp[c] / predicted;
      const double recall = tp[c] / support;
      total += 2 * precision * recall / (precision + recall);
    }
  }
  if (counted == 0) throw ConfigError("macro_f1: no classes present");
  return total / static_cast<double>(counted);
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("rmse: length mismatch");
  if (pred.empty()) throw ShapeError("rmse: empty input");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

namespace detail {

struct SeriesStats {
  double mean_a = 0, mean_b = 0, var_a = 0, var_b = 0, cov = 0;
};

// two-pass population statistics
inline SeriesStats series_stats(const std::vector<double>& a, const std::vector<double>& b,
                                const char* who) {
  if (a.size() != b.size()) throw ShapeError(std::string(who) + ": length mismatch");
  if (a.size() < 2) throw ShapeError(std::string(who) + ": needs at least two samples");
  const auto n = static_cast<double>(a.size());
  SeriesStats s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s.mean_a += a[i];
    s.mean_b += b[i];
  }
  s.mean_a /= n;
  s.mean_b /= n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - s.mean_a, db = b[i] - s.mean_b;
    s.var_a += da * da;
    s.var_b += db * db;
    s.cov += da * db;
  }
  s.var_a /= n;
  s.var_b /= n;
  s.cov /= n;
  return s;
}

inline constexpr double kConstSeriesVar = 1e-18;

}  // namespace detail

inline double pcc(const std::vector<double>& pred, const std::vector<double>& truth) {
  auto s = detail::series_stats(pred, truth, "pcc");
  if (s.var_a <= detail::kConstSeriesVar || s.var_b <= detail::kConstSeriesVar) {
    throw NumericError("pcc: constant series, coefficient undefined");
  }
  return s.cov / std::sqrt(s.var_a * s.var_b);
}

inline double ccc(const std::vector<double>& pred, const std::vector<double>& truth) {
  auto s = detail::series_stats(pred, truth, "ccc");
  if (s.var_a <= detail::kConstSeriesVar && s.var_b <= detail::kConstSeriesVar) {
    throw NumericError("ccc: both series constant, coefficient undefined");
  }
  const double dmu = s.mean_a - s.mean_b;
  return 2 * s.cov / (s.var_a + s.var_b + dmu * dmu);
}

struct MeanStd {
  double mean = 0;
  double std = 0;
};

/// Mean and sample standard deviation (n-1), the form used for fold
/// aggregates. A single value aggregates to std 0.
inline MeanStd aggregate(const std::vector<double>& values) {
  if (values.empty()) throw ShapeError("aggregate: empty input");
  MeanStd out;
  bool all_equal = true;
  for (double v : values) all_equal = all_equal && v == values[0];
  if (all_equal) {
    out.mean = values[0];
    return out;
  }
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double s = 0;
    for (double v : values) s += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(s / static_cast<double>(values.size() - 1));
  }
  return out;
}

}  // namespace cmkd

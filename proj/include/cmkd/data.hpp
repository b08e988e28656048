#pragma once

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmkd/error.hpp"
#include "cmkd/random.hpp"
#include "cmkd/task.hpp"
#include "cmkd/tensor.hpp"

// Synthetic paired-modality data with controllable label noise, the on-disk
// dataset format, and grouped fold splitting. The teacher modality is clean
// by construction; the student modality carries configurable feature noise,
// and labels carry flip noise (classification) or additive noise
// (regression). The clean labels ride along for diagnostics only and never
// reach the training loop.

namespace cmkd {

struct PairedSample {
  std::int64_t trial_id = 0;
  std::vector<double> x_s;
  std::vector<double> x_t;
  std::optional<int> y_class;      // classification target
  std::optional<double> y_cont;    // regression target
  std::optional<int> clean_class;  // generator diagnostics
  std::optional<double> clean_cont;
};

struct Dataset {
  Task task = Task::dec;
  std::size_t dim_s = 0;
  std::size_t dim_t = 0;
  std::size_t num_classes = 0;  // 0 for regression
  std::vector<PairedSample> samples;

  bool has_clean() const {
    return !samples.empty() &&
           (task == Task::dec ? samples[0].clean_class.has_value()
                              : samples[0].clean_cont.has_value());
  }

  std::vector<std::int64_t> trial_ids() const {
    std::set<std::int64_t> ids;
    for (const auto& s : samples) ids.insert(s.trial_id);
    return {ids.begin(), ids.end()};
  }
};

struct GeneratorSpec {
  Task task = Task::dec;
  std::size_t n_trials = 27;
  std::size_t samples_per_trial = 40;
  std::size_t latent_dim = 6;
  std::size_t input_dim_s = 32;
  std::size_t input_dim_t = 64;
  std::size_t n_classes = 3;
  double label_noise_rate = 0.0;   // flip probability (dec) / noise sd (cer)
  double student_noise_scale = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_trials < 1 || samples_per_trial < 1 || latent_dim < 1) {
      throw ConfigError("generator: counts must be >= 1");
    }
    if (input_dim_s < 1 || input_dim_t < 1) throw ConfigError("generator: input dims must be >= 1");
    if (task == Task::dec && n_classes < 2) throw ConfigError("generator: need >= 2 classes");
    if (label_noise_rate < 0.0 || label_noise_rate > 1.0) {
      throw ConfigError("generator: label noise rate must lie in [0, 1]");
    }
    if (student_noise_scale < 0.0) throw ConfigError("generator: student noise must be >= 0");
  }
};

namespace detail {

// teacher-side feature noise; small on purpose so the teacher modality stays
// the high-quality one
inline constexpr double kTeacherNoise = 0.05;
// spread of per-trial latent means; makes trial identity load-bearing for
// grouped splitting
inline constexpr double kTrialShift = 1.0;

}  // namespace detail

/// Draws the full paired dataset. Latents are trial-conditioned, the teacher
/// view is a low-noise nonlinear map, the student view a different map plus
/// feature noise. Deterministic for a given spec.
inline Dataset generate(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  const std::size_t L = spec.latent_dim;
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(L));
  auto draw_map = [&](std::size_t rows) {
    std::vector<double> m(rows * L);
    for (auto& v : m) v = rng.normal(0.0, map_scale);
    return m;
  };
  const std::vector<double> map_t = draw_map(spec.input_dim_t);
  const std::vector<double> map_s = draw_map(spec.input_dim_s);
  const std::size_t readouts = spec.task == Task::dec ? spec.n_classes : 1;
  const std::vector<double> readout = draw_map(readouts);

  Dataset out;
  out.task = spec.task;
  out.dim_s = spec.input_dim_s;
  out.dim_t = spec.input_dim_t;
  out.num_classes = spec.task == Task::dec ? spec.n_classes : 0;
  out.samples.reserve(spec.n_trials * spec.samples_per_trial);

  std::vector<double> z(L);
  for (std::size_t trial = 0; trial < spec.n_trials; ++trial) {
    std::vector<double> mu(L);
    for (auto& v : mu) v = rng.normal(0.0, detail::kTrialShift);
    for (std::size_t s = 0; s < spec.samples_per_trial; ++s) {
      for (std::size_t j = 0; j < L; ++j) z[j] = mu[j] + rng.normal();

      PairedSample sample;
      sample.trial_id = static_cast<std::int64_t>(trial);
      sample.x_t.resize(spec.input_dim_t);
      for (std::size_t i = 0; i < spec.input_dim_t; ++i) {
        double a = 0.0;
        for (std::size_t j = 0; j < L; ++j) a += map_t[i * L + j] * z[j];
        sample.x_t[i] = std::tanh(a) + detail::kTeacherNoise * rng.normal();
      }
      sample.x_s.resize(spec.input_dim_s);
      for (std::size_t i = 0; i < spec.input_dim_s; ++i) {
        double a = 0.0;
        for (std::size_t j = 0; j < L; ++j) a += map_s[i * L + j] * z[j];
        sample.x_s[i] = std::tanh(a) + spec.student_noise_scale * rng.normal();
      }

      if (spec.task == Task::dec) {
        int best = 0;
        double best_v = -1e300;
        for (std::size_t k = 0; k < spec.n_classes; ++k) {
          double v = 0.0;
          for (std::size_t j = 0; j < L; ++j) v += readout[k * L + j] * z[j];
          if (v > best_v) {
            best_v = v;
            best = static_cast<int>(k);
          }
        }
        sample.clean_class = best;
        int observed = best;
        if (spec.label_noise_rate > 0.0 && rng.uniform(0.0, 1.0) < spec.label_noise_rate) {
          // uniform flip to one of the other classes
          auto off = rng.uniform_int(1, static_cast<std::int64_t>(spec.n_classes) - 1);
          observed = static_cast<int>((best + off) % static_cast<std::int64_t>(spec.n_classes));
        }
        sample.y_class = observed;
      } else {
        double v = 0.0;
        for (std::size_t j = 0; j < L; ++j) v += readout[j] * z[j];
        sample.clean_cont = v;
        sample.y_cont = v + (spec.label_noise_rate > 0.0
                                 ? rng.normal(0.0, spec.label_noise_rate)
                                 : 0.0);
      }
      out.samples.push_back(std::move(sample));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// grouped fold splitting
// ---------------------------------------------------------------------------

struct FoldPlan {
  std::size_t k = 0;
  std::map<std::int64_t, std::size_t> assignment;  // trial -> fold

  std::size_t fold_of(std::int64_t trial) const {
    auto it = assignment.find(trial);
    if (it == assignment.end()) {
      throw ConfigError("fold plan: unknown trial " + std::to_string(trial));
    }
    return it->second;
  }

  std::vector<std::int64_t> trials_in_fold(std::size_t fold) const {
    std::vector<std::int64_t> out;
    for (const auto& [trial, f] : assignment) {
      if (f == fold) out.push_back(trial);
    }
    return out;
  }
};

/// Shuffles trials by seed and deals them round-robin, so no trial ever
/// straddles folds and fold sizes differ by at most one trial.
inline FoldPlan split_group_by_trial(const std::vector<std::int64_t>& trials, std::size_t k,
                                     std::uint64_t seed) {
  if (k < 2) throw ConfigError("split: need at least 2 folds");
  if (trials.size() < k) {
    throw ConfigError("split: " + std::to_string(trials.size()) + " trials cannot fill " +
                      std::to_string(k) + " folds");
  }
  std::vector<std::int64_t> shuffled = trials;
  std::sort(shuffled.begin(), shuffled.end());
  Rng rng(seed);
  rng.shuffle(shuffled);
  FoldPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < shuffled.size(); ++i) plan.assignment[shuffled[i]] = i % k;
  return plan;
}

inline FoldPlan split_group_by_trial(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  return split_group_by_trial(ds.trial_ids(), k, seed);
}

inline std::vector<std::size_t> fold_indices(const Dataset& ds, const FoldPlan& plan,
                                             std::size_t fold, bool validation) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const bool in_fold = plan.fold_of(ds.samples[i].trial_id) == fold;
    if (in_fold == validation) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

inline Tensor gather_student(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<double> d;
  d.reserve(idx.size() * ds.dim_s);
  for (std::size_t i : idx) d.insert(d.end(), ds.samples[i].x_s.begin(), ds.samples[i].x_s.end());
  return Tensor::from_data({idx.size(), ds.dim_s}, std::move(d), false);
}

inline Tensor gather_teacher(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<double> d;
  d.reserve(idx.size() * ds.dim_t);
  for (std::size_t i : idx) d.insert(d.end(), ds.samples[i].x_t.begin(), ds.samples[i].x_t.end());
  return Tensor::from_data({idx.size(), ds.dim_t}, std::move(d), false);
}

inline std::vector<int> gather_class_labels(const Dataset& ds,
                                            const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    if (!ds.samples[i].y_class) throw ConfigError("dataset has no class labels");
    out.push_back(*ds.samples[i].y_class);
  }
  return out;
}

inline std::vector<double> gather_cont_labels(const Dataset& ds,
                                              const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    if (!ds.samples[i].y_cont) throw ConfigError("dataset has no continuous labels");
    out.push_back(*ds.samples[i].y_cont);
  }
  return out;
}

// ---------------------------------------------------------------------------
// on-disk format (v1)
// ---------------------------------------------------------------------------
//
//   #cmkd v1 task=<dec|cer> S=<int> T=<int> C=<int|0>
//   trial_id,y,xs_0..xs_{S-1},xt_0..xt_{T-1}
//   <rows>
//
// Values carry 17 significant digits so a write/read round trip is lossless.
// Clean labels are generator-internal and intentionally absent from files.

namespace detail {

inline void format_value(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

inline double parse_double(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  const char* b = cell.data();
  const char* e = b + cell.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) {
    throw IoError("dataset line " + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
  }
  return v;
}

inline std::int64_t parse_int(const std::string& cell, std::size_t line_no) {
  std::int64_t v = 0;
  const char* b = cell.data();
  const char* e = b + cell.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) {
    throw IoError("dataset line " + std::to_string(line_no) + ": non-integer cell '" + cell +
                  "'");
  }
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

inline std::string column_names(std::size_t dim_s, std::size_t dim_t) {
  std::string names = "trial_id,y";
  for (std::size_t i = 0; i < dim_s; ++i) names += ",xs_" + std::to_string(i);
  for (std::size_t i = 0; i < dim_t; ++i) names += ",xt_" + std::to_string(i);
  return names;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  std::string out = "#cmkd v1 task=" + to_string(ds.task) + " S=" + std::to_string(ds.dim_s) +
                    " T=" + std::to_string(ds.dim_t) + " C=" + std::to_string(ds.num_classes) +
                    "\n";
  out += column_names(ds.dim_s, ds.dim_t);
  out += '\n';
  for (const auto& s : ds.samples) {
    out += std::to_string(s.trial_id);
    out += ',';
    if (ds.task == Task::dec) {
      if (!s.y_class) throw IoError("save_dataset: sample lacks a class label");
      out += std::to_string(*s.y_class);
    } else {
      if (!s.y_cont) throw IoError("save_dataset: sample lacks a continuous label");
      detail::format_value(out, *s.y_cont);
    }
    for (double v : s.x_s) {
      out += ',';
      detail::format_value(out, v);
    }
    for (double v : s.x_t) {
      out += ',';
      detail::format_value(out, v);
    }
    out += '\n';
  }
  f << out;
  if (!f) throw IoError("write to '" + path + "' failed");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset '" + path + "'");
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(f, line)) throw IoError("dataset is empty");
  ++line_no;
  std::istringstream header(line);
  std::string magic, version, kv;
  header >> magic >> version;
  if (magic != "#cmkd" || version != "v1") {
    throw IoError("dataset line 1: bad header (expected '#cmkd v1 ...')");
  }
  std::map<std::string, std::string> fields;
  while (header >> kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw IoError("dataset line 1: malformed field '" + kv + "'");
    fields[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const char* key : {"task", "S", "T", "C"}) {
    if (!fields.count(key)) throw IoError(std::string("dataset line 1: missing field ") + key);
  }
  Dataset ds;
  ds.task = task_from_string(fields["task"]);
  ds.dim_s = static_cast<std::size_t>(detail::parse_int(fields["S"], 1));
  ds.dim_t = static_cast<std::size_t>(detail::parse_int(fields["T"], 1));
  ds.num_classes = static_cast<std::size_t>(detail::parse_int(fields["C"], 1));
  if (ds.dim_s < 1 || ds.dim_t < 1) throw IoError("dataset line 1: dims must be >= 1");
  if (ds.task == Task::dec && ds.num_classes < 2) {
    throw IoError("dataset line 1: classification needs C >= 2");
  }

  if (!std::getline(f, line)) throw IoError("dataset line 2: missing column names");
  ++line_no;
  if (line != column_names(ds.dim_s, ds.dim_t)) {
    throw IoError("dataset line 2: column names do not match the header dims");
  }

  const std::size_t want = 2 + ds.dim_s + ds.dim_t;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = detail::split_csv(line);
    if (cells.size() != want) {
      throw IoError("dataset line " + std::to_string(line_no) + ": expected " +
                    std::to_string(want) + " cells, found " + std::to_string(cells.size()));
    }
    PairedSample s;
    s.trial_id = detail::parse_int(cells[0], line_no);
    if (ds.task == Task::dec) {
      auto y = detail::parse_int(cells[1], line_no);
      if (y < 0 || static_cast<std::size_t>(y) >= ds.num_classes) {
        throw IoError("dataset line " + std::to_string(line_no) + ": class " + std::to_string(y) +
                      " out of range");
      }
      s.y_class = static_cast<int>(y);
    } else {
      s.y_cont = detail::parse_double(cells[1], line_no);
    }
    s.x_s.reserve(ds.dim_s);
    for (std::size_t i = 0; i < ds.dim_s; ++i) {
      s.x_s.push_back(detail::parse_double(cells[2 + i], line_no));
    }
    s.x_t.reserve(ds.dim_t);
    for (std::size_t i = 0; i < ds.dim_t; ++i) {
      s.x_t.push_back(detail::parse_double(cells[2 + ds.dim_s + i], line_no));
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw IoError("dataset has no rows");
  return ds;
}

}  // namespace cmkd

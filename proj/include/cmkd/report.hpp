#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmkd/losses.hpp"
#include "cmkd/metrics.hpp"
#include "cmkd/task.hpp"

// Run reports: everything the eval harness needs to reproduce or compare a
// cross-validation run. Serialized as JSON (schema cmkd-report/v1) with full
// double precision; aggregates are recomputable from the fold records.

namespace cmkd {

using Json = nlohmann::ordered_json;

struct EpochTrace {
  double lr = 0;
  double train_total = 0;
  double train_sim = 0;
  double train_unc = 0;
  double train_kd = 0;
  double train_task = 0;
  double val_task = 0;
};

struct FoldRecord {
  std::size_t fold = 0;
  std::vector<std::int64_t> val_trials;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_val_task = 0;
  std::map<std::string, double> metrics;        // against observed labels
  std::map<std::string, double> metrics_clean;  // against generator ground truth, if known
  std::vector<EpochTrace> trace;
};

struct RunReport {
  Task task = Task::dec;
  std::uint64_t seed = 0;
  LossWeights weights;
  Json config;  // effective configuration echo
  std::vector<FoldRecord> folds;
  std::map<std::string, MeanStd> aggregate;
  std::map<std::string, MeanStd> aggregate_clean;
};

inline void recompute_aggregates(RunReport& report) {
  report.aggregate.clear();
  report.aggregate_clean.clear();
  if (report.folds.empty()) return;
  for (const auto& [key, unused] : report.folds.front().metrics) {
    std::vector<double> vals;
    for (const auto& f : report.folds) vals.push_back(f.metrics.at(key));
    report.aggregate[key] = aggregate(vals);
  }
  if (!report.folds.front().metrics_clean.empty()) {
    for (const auto& [key, unused] : report.folds.front().metrics_clean) {
      std::vector<double> vals;
      for (const auto& f : report.folds) vals.push_back(f.metrics_clean.at(key));
      report.aggregate_clean[key] = aggregate(vals);
    }
  }
}

inline Json to_json(const MeanStd& ms) { return Json{{"mean", ms.mean}, {"std", ms.std}}; }

inline Json to_json(const LossWeights& w) {
  return Json{{"sim", w.sim}, {"unc", w.unc}, {"kd", w.kd}, {"task", w.task}};
}

inline Json to_json(const EpochTrace& t) {
  return Json{{"lr", t.lr},
              {"train_total", t.train_total},
              {"train_sim", t.train_sim},
              {"train_unc", t.train_unc},
              {"train_kd", t.train_kd},
              {"train_task", t.train_task},
              {"val_task", t.val_task}};
}

inline Json to_json(const FoldRecord& f) {
  Json j;
  j["fold"] = f.fold;
  j["val_trials"] = f.val_trials;
  j["best_epoch"] = f.best_epoch;
  j["epochs_run"] = f.epochs_run;
  j["best_val_task"] = f.best_val_task;
  j["metrics"] = f.metrics;
  if (!f.metrics_clean.empty()) j["metrics_clean"] = f.metrics_clean;
  Json trace = Json::array();
  for (const auto& t : f.trace) trace.push_back(to_json(t));
  j["trace"] = trace;
  return j;
}

inline Json to_json(const RunReport& r) {
  Json j;
  j["schema"] = "cmkd-report/v1";
  j["task"] = to_string(r.task);
  j["seed"] = r.seed;
  j["loss_weights"] = to_json(r.weights);
  j["config"] = r.config.is_null() ? Json::object() : r.config;
  Json folds = Json::array();
  for (const auto& f : r.folds) folds.push_back(to_json(f));
  j["folds"] = folds;
  Json agg = Json::object();
  for (const auto& [k, v] : r.aggregate) agg[k] = to_json(v);
  j["aggregate"] = agg;
  if (!r.aggregate_clean.empty()) {
    Json aggc = Json::object();
    for (const auto& [k, v] : r.aggregate_clean) aggc[k] = to_json(v);
    j["aggregate_clean"] = aggc;
  }
  return j;
}

}  // namespace cmkd

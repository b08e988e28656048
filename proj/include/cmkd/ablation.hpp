#pragma once

#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cmkd/training.hpp"

// The ablation runner: one cross-validation run per loss mask, all masks
// sharing one pretrained teacher and one fold plan so the comparison
// isolates the loss components. Also the embedding exporter for external
// projection tools.

namespace cmkd {

struct AblationMask {
  std::string name;
  bool sim = false;
  bool unc = false;
  bool kd = false;
};

/// The seven standard rows: each auxiliary subset, task loss always on.
inline std::vector<AblationMask> default_ablation_grid() {
  return {
      {"sim", true, false, false},      {"unc", false, true, false},
      {"kd", false, false, true},       {"sim+unc", true, true, false},
      {"sim+kd", true, false, true},    {"unc+kd", false, true, true},
      {"sim+unc+kd", true, true, true},
  };
}

/// Parses "sim+kd" style names; "task" denotes the task-only baseline.
inline AblationMask ablation_mask_from_string(const std::string& name) {
  AblationMask mask;
  mask.name = name;
  if (name == "task") return mask;
  std::string cur;
  auto apply = [&](const std::string& tok) {
    if (tok == "sim" && !mask.sim) {
      mask.sim = true;
    } else if (tok == "unc" && !mask.unc) {
      mask.unc = true;
    } else if (tok == "kd" && !mask.kd) {
      mask.kd = true;
    } else {
      throw ConfigError("bad ablation mask token '" + tok + "' in '" + name + "'");
    }
  };
  for (char ch : name + "+") {
    if (ch == '+') {
      if (cur.empty()) throw ConfigError("bad ablation mask '" + name + "'");
      apply(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return mask;
}

struct AblationRow {
  AblationMask mask;
  RunReport report;
};

struct AblationTable {
  Task task = Task::dec;
  std::vector<AblationRow> rows;
};

/// One run_cv per mask with a shared teacher and fold plan. The task weight
/// comes from the base config and must be active in every row.
inline AblationTable run_ablation(const Dataset& ds, const TrainConfig& base_cfg,
                                  const std::vector<AblationMask>& grid) {
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  std::set<std::string> names;
  for (const auto& m : grid) {
    if (!names.insert(m.name).second) {
      throw ConfigError("ablation grid repeats mask '" + m.name + "'");
    }
  }
  const TrainConfig cfg = resolve_config(base_cfg, ds);
  if (!(cfg.weights.task > 0)) throw ConfigError("ablation requires an active task loss");

  bool any_teacher = false;
  for (const auto& m : grid) any_teacher = any_teacher || m.sim || m.unc || m.kd;
  std::optional<ModelParams> teacher;
  if (any_teacher) teacher = pretrain_teacher(ds, cfg);
  auto plan = split_group_by_trial(ds, cfg.folds, Rng(cfg.seed).fork(kFoldPlanStream).seed());

  AblationTable table;
  table.task = ds.task;
  for (const auto& mask : grid) {
    TrainConfig run_cfg = cfg;
    run_cfg.weights.sim = mask.sim ? cfg.weights.sim : 0.0;
    run_cfg.weights.unc = mask.unc ? cfg.weights.unc : 0.0;
    run_cfg.weights.kd = mask.kd ? cfg.weights.kd : 0.0;
    const ModelParams* t =
        needs_teacher(run_cfg.weights) ? (teacher ? &*teacher : nullptr) : nullptr;
    auto outcome = run_cv_with(ds, run_cfg, t, plan);
    table.rows.push_back(AblationRow{mask, std::move(outcome.report)});
  }
  return table;
}

namespace detail {

inline std::string sig3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail

/// Comparison table, one row per mask. Values use 3 significant digits; the
/// JSON twin keeps full precision.
inline std::string ablation_csv(const AblationTable& table) {
  if (table.rows.empty()) return "";
  std::vector<std::string> metric_keys;
  for (const auto& [key, unused] : table.rows.front().report.aggregate) metric_keys.push_back(key);
  std::vector<std::string> clean_keys;
  for (const auto& [key, unused] : table.rows.front().report.aggregate_clean) {
    clean_keys.push_back(key);
  }
  std::string out = "mask,sim,unc,kd";
  for (const auto& k : metric_keys) out += "," + k + "_mean," + k + "_std";
  for (const auto& k : clean_keys) out += "," + k + "_clean_mean," + k + "_clean_std";
  out += "\n";
  for (const auto& row : table.rows) {
    out += row.mask.name;
    out += row.mask.sim ? ",1" : ",0";
    out += row.mask.unc ? ",1" : ",0";
    out += row.mask.kd ? ",1" : ",0";
    for (const auto& k : metric_keys) {
      const auto& ms = row.report.aggregate.at(k);
      out += "," + detail::sig3(ms.mean) + "," + detail::sig3(ms.std);
    }
    for (const auto& k : clean_keys) {
      const auto& ms = row.report.aggregate_clean.at(k);
      out += "," + detail::sig3(ms.mean) + "," + detail::sig3(ms.std);
    }
    out += "\n";
  }
  return out;
}

inline Json ablation_json(const AblationTable& table) {
  Json rows = Json::array();
  for (const auto& row : table.rows) {
    Json r;
    r["mask"] = row.mask.name;
    r["sim"] = row.mask.sim;
    r["unc"] = row.mask.unc;
    r["kd"] = row.mask.kd;
    r["report"] = to_json(row.report);
    rows.push_back(r);
  }
  return Json{{"schema", "cmkd-ablation/v1"}, {"task", to_string(table.task)}, {"rows", rows}};
}

/// Embedding export for external projection (t-SNE, PCA): one row per
/// sample, trial id and observed label first, then the embedding.
inline void export_embeddings(const ModelParams& model, const Dataset& ds,
                              const std::string& path, bool student_side = true) {
  NoGradGuard guard;
  std::vector<std::size_t> idx(ds.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  Tensor x = student_side ? gather_student(ds, idx) : gather_teacher(ds, idx);
  Tensor e = extract(model, x).e;

  std::string out = "trial_id,y";
  for (std::size_t j = 0; j < e.cols(); ++j) out += ",e_" + std::to_string(j);
  out += "\n";
  char buf[40];
  for (std::size_t i = 0; i < e.rows(); ++i) {
    out += std::to_string(ds.samples[i].trial_id);
    out += ',';
    if (ds.task == Task::dec) {
      out += std::to_string(*ds.samples[i].y_class);
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", *ds.samples[i].y_cont);
      out += buf;
    }
    for (std::size_t j = 0; j < e.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", e.at(i, j));
      out += ',';
      out += buf;
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << out;
  if (!f) throw IoError("write to '" + path + "' failed");
}

}  // namespace cmkd

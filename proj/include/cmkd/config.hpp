#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmkd/ablation.hpp"
#include "cmkd/data.hpp"
#include "cmkd/training.hpp"

// The command-line configuration file: one JSON document with data / model /
// loss / train / eval sections mapping onto the generator spec, the model
// and loss configs, the train config and the ablation grid. Every field has
// a default; unknown keys are rejected with their path.

namespace cmkd {

struct CliConfig {
  GeneratorSpec data;
  TrainConfig train = default_train_config();
  std::vector<std::string> grid = {"sim", "unc", "kd", "sim+unc", "sim+kd", "unc+kd",
                                   "sim+unc+kd"};
};

namespace detail {

class StrictObject {
 public:
  StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
  }

  template <class T>
  void load(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: bad value for " + path_ + "." + key);
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const Json& child(const char* key) { return j_.at(key); }

  void finish() const {
    for (const auto& [key, unused] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("config: unknown key " + path_ + "." + key);
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void parse_extractor(const Json& j, const std::string& path, ExtractorConfig& out) {
  StrictObject o(j, path);
  o.load("hidden", out.hidden_dims);
  o.load("feature", out.feature_dim);
  o.load("embed", out.embed_dim);
  o.finish();
}

}  // namespace detail

/// Applies a parsed JSON document on top of the defaults. Strict: unknown
/// keys anywhere are an error.
inline CliConfig cli_config_from_json(const Json& root) {
  CliConfig cfg;
  detail::StrictObject top(root, "");

  if (top.has("data")) {
    detail::StrictObject o(top.child("data"), "data");
    std::string task = to_string(cfg.data.task);
    o.load("task", task);
    cfg.data.task = task_from_string(task);
    o.load("trials", cfg.data.n_trials);
    o.load("samples_per_trial", cfg.data.samples_per_trial);
    o.load("latent_dim", cfg.data.latent_dim);
    o.load("input_dim_s", cfg.data.input_dim_s);
    o.load("input_dim_t", cfg.data.input_dim_t);
    o.load("classes", cfg.data.n_classes);
    o.load("label_noise", cfg.data.label_noise_rate);
    o.load("student_noise", cfg.data.student_noise_scale);
    o.load("seed", cfg.data.seed);
    o.finish();
  }

  if (top.has("model")) {
    detail::StrictObject o(top.child("model"), "model");
    if (o.has("student")) detail::parse_extractor(o.child("student"), "model.student", cfg.train.student);
    if (o.has("teacher")) detail::parse_extractor(o.child("teacher"), "model.teacher", cfg.train.teacher);
    if (o.has("activation")) {
      cfg.train.student.activation =
          activation_from_string(o.child("activation").get<std::string>());
      cfg.train.teacher.activation = cfg.train.student.activation;
    }
    if (o.has("head")) {
      detail::StrictObject h(o.child("head"), "model.head");
      h.load("hidden", cfg.train.head_hidden);
      h.load("injection_layer", cfg.train.injection_layer);
      h.finish();
    }
    o.finish();
  }

  if (top.has("loss")) {
    detail::StrictObject o(top.child("loss"), "loss");
    o.load("beta", cfg.train.loss.beta);
    o.load("tau", cfg.train.loss.tau);
    o.load("delta", cfg.train.loss.delta);
    if (o.has("uncertainty_form")) {
      cfg.train.loss.uncertainty_form =
          uncertainty_form_from_string(o.child("uncertainty_form").get<std::string>());
    }
    o.load("cer_bins", cfg.train.loss.cer_bins);
    if (o.has("lambda")) {
      detail::StrictObject l(o.child("lambda"), "loss.lambda");
      l.load("sim", cfg.train.weights.sim);
      l.load("unc", cfg.train.weights.unc);
      l.load("kd", cfg.train.weights.kd);
      l.load("task", cfg.train.weights.task);
      l.finish();
    }
    o.finish();
  }

  if (top.has("train")) {
    detail::StrictObject o(top.child("train"), "train");
    o.load("epochs", cfg.train.epochs);
    o.load("batch_size", cfg.train.batch_size);
    o.load("lr_start", cfg.train.lr_start);
    o.load("lr_end", cfg.train.lr_end);
    o.load("patience", cfg.train.patience);
    o.load("folds", cfg.train.folds);
    o.load("workers", cfg.train.workers);
    o.load("seed", cfg.train.seed);
    o.finish();
  }

  if (top.has("eval")) {
    detail::StrictObject o(top.child("eval"), "eval");
    o.load("grid", cfg.grid);
    o.finish();
  }

  top.finish();
  return cfg;
}

inline CliConfig load_cli_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  Json root;
  try {
    root = Json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return cli_config_from_json(root);
}

/// The post-default, post-override configuration, echoed into reports.
inline Json effective_config_json(const CliConfig& cfg) {
  Json j;
  j["data"] = {{"task", to_string(cfg.data.task)},
               {"trials", cfg.data.n_trials},
               {"samples_per_trial", cfg.data.samples_per_trial},
               {"latent_dim", cfg.data.latent_dim},
               {"input_dim_s", cfg.data.input_dim_s},
               {"input_dim_t", cfg.data.input_dim_t},
               {"classes", cfg.data.n_classes},
               {"label_noise", cfg.data.label_noise_rate},
               {"student_noise", cfg.data.student_noise_scale},
               {"seed", cfg.data.seed}};
  Json train_part = train_config_json(cfg.train);
  j["model"] = train_part["model"];
  j["loss"] = train_part["loss"];
  j["train"] = train_part["train"];
  j["eval"] = {{"grid", cfg.grid}};
  return j;
}

inline std::vector<AblationMask> parse_grid(const std::vector<std::string>& names) {
  std::vector<AblationMask> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(ablation_mask_from_string(n));
  return out;
}

}  // namespace cmkd

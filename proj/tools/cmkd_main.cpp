// cmkd: synthetic paired-modality data, cross-modal distillation training,
// evaluation, ablation sweeps, gradient verification and embedding export.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmkd/cmkd.hpp"

namespace fs = std::filesystem;

namespace {

struct Cli {
  std::string config_path;
  std::string data_path;
  std::string out_path;
  std::string checkpoint_path;
  std::string grid_csv;
  std::string corrupt;
  std::string trials_filter;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> folds;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> patience;
  std::optional<double> lambda_sim, lambda_unc, lambda_kd, lambda_task;
  std::optional<double> beta, tau, delta;
  std::optional<std::string> uncertainty_form;
  std::size_t gradcheck_instances = 20;

  // generate flags
  std::optional<std::string> task;
  std::optional<std::size_t> trials, samples, latent, dim_s, dim_t, classes;
  std::optional<double> noise, student_noise;
};

cmkd::CliConfig load_config(const Cli& cli) {
  cmkd::CliConfig cfg;
  if (!cli.config_path.empty()) cfg = cmkd::load_cli_config(cli.config_path);

  // flags win over the file
  if (cli.seed) {
    cfg.train.seed = *cli.seed;
    cfg.data.seed = *cli.seed;
  }
  if (cli.epochs) cfg.train.epochs = *cli.epochs;
  if (cli.batch_size) cfg.train.batch_size = *cli.batch_size;
  if (cli.folds) cfg.train.folds = *cli.folds;
  if (cli.workers) cfg.train.workers = *cli.workers;
  if (cli.patience) cfg.train.patience = *cli.patience;
  if (cli.lambda_sim) cfg.train.weights.sim = *cli.lambda_sim;
  if (cli.lambda_unc) cfg.train.weights.unc = *cli.lambda_unc;
  if (cli.lambda_kd) cfg.train.weights.kd = *cli.lambda_kd;
  if (cli.lambda_task) cfg.train.weights.task = *cli.lambda_task;
  if (cli.beta) cfg.train.loss.beta = *cli.beta;
  if (cli.tau) cfg.train.loss.tau = *cli.tau;
  if (cli.delta) cfg.train.loss.delta = *cli.delta;
  if (cli.uncertainty_form) {
    cfg.train.loss.uncertainty_form = cmkd::uncertainty_form_from_string(*cli.uncertainty_form);
  }

  if (cli.task) cfg.data.task = cmkd::task_from_string(*cli.task);
  if (cli.trials) cfg.data.n_trials = *cli.trials;
  if (cli.samples) cfg.data.samples_per_trial = *cli.samples;
  if (cli.latent) cfg.data.latent_dim = *cli.latent;
  if (cli.dim_s) cfg.data.input_dim_s = *cli.dim_s;
  if (cli.dim_t) cfg.data.input_dim_t = *cli.dim_t;
  if (cli.classes) cfg.data.n_classes = *cli.classes;
  if (cli.noise) cfg.data.label_noise_rate = *cli.noise;
  if (cli.student_noise) cfg.data.student_noise_scale = *cli.student_noise;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw cmkd::IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw cmkd::IoError("write to '" + path.string() + "' failed");
}

std::vector<std::size_t> filtered_indices(const cmkd::Dataset& ds, const std::string& filter) {
  std::vector<std::size_t> idx;
  if (filter.empty()) {
    idx.resize(ds.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  std::set<std::int64_t> keep;
  std::string cur;
  for (char ch : filter + ",") {
    if (ch == ',') {
      if (!cur.empty()) keep.insert(std::stoll(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (keep.count(ds.samples[i].trial_id)) idx.push_back(i);
  }
  if (idx.empty()) throw cmkd::ConfigError("trial filter matches no samples");
  return idx;
}

int cmd_generate(const Cli& cli) {
  auto cfg = load_config(cli);
  auto ds = cmkd::generate(cfg.data);
  cmkd::save_dataset(ds, cli.out_path);
  std::printf("wrote %zu samples (%zu trials) to %s\n", ds.samples.size(),
              ds.trial_ids().size(), cli.out_path.c_str());
  return 0;
}

int cmd_train(const Cli& cli) {
  auto cfg = load_config(cli);
  auto ds = cmkd::load_dataset(cli.data_path);
  auto resolved = cmkd::resolve_config(cfg.train, ds);

  const fs::path out_dir(cli.out_path);
  fs::create_directories(out_dir);

  auto outcome = cmkd::run_cv(ds, resolved);
  cfg.train = resolved;
  cfg.data.task = ds.task;
  cfg.data.input_dim_s = ds.dim_s;
  cfg.data.input_dim_t = ds.dim_t;
  if (ds.task == cmkd::Task::dec) cfg.data.n_classes = ds.num_classes;
  outcome.report.config = cmkd::effective_config_json(cfg);

  if (outcome.teacher) {
    cmkd::save_checkpoint(
        cmkd::Checkpoint{outcome.teacher->clone(), ds.task, "teacher", std::nullopt},
        (out_dir / "teacher.ckpt").string());
  }
  for (auto& fold : outcome.folds) {
    cmkd::save_checkpoint(
        cmkd::Checkpoint{fold.student.clone(), ds.task, "student", fold.bank},
        (out_dir / ("student_fold" + std::to_string(fold.record.fold) + ".ckpt")).string());
  }
  write_text(out_dir / "report.json", cmkd::to_json(outcome.report).dump(2) + "\n");

  for (const auto& [key, ms] : outcome.report.aggregate) {
    std::printf("%s: %.3g +/- %.3g\n", key.c_str(), ms.mean, ms.std);
  }
  std::printf("report: %s\n", (out_dir / "report.json").string().c_str());
  return 0;
}

int cmd_eval(const Cli& cli) {
  auto ckpt = cmkd::load_checkpoint(cli.checkpoint_path);
  auto ds = cmkd::load_dataset(cli.data_path);
  if (ckpt.task != ds.task) throw cmkd::ConfigError("checkpoint task does not match dataset");
  auto idx = filtered_indices(ds, cli.trials_filter);
  auto eval = cmkd::evaluate_model(ds, idx, ckpt.params, ckpt.role != "teacher");

  cmkd::Json j;
  j["schema"] = "cmkd-eval/v1";
  j["checkpoint"] = cli.checkpoint_path;
  j["samples"] = idx.size();
  j["metrics"] = eval.metrics;
  j["task_loss"] = eval.task_loss;
  const std::string text = j.dump(2) + "\n";
  if (!cli.out_path.empty()) write_text(cli.out_path, text);
  std::fputs(text.c_str(), stdout);
  return 0;
}

int cmd_ablate(const Cli& cli) {
  auto cfg = load_config(cli);
  auto ds = cmkd::load_dataset(cli.data_path);
  auto resolved = cmkd::resolve_config(cfg.train, ds);

  std::vector<std::string> names = cfg.grid;
  if (!cli.grid_csv.empty()) {
    names.clear();
    std::string cur;
    for (char ch : cli.grid_csv + ",") {
      if (ch == ',') {
        if (!cur.empty()) names.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
  }
  auto grid = cmkd::parse_grid(names);

  const fs::path out_dir(cli.out_path);
  fs::create_directories(out_dir);
  auto table = cmkd::run_ablation(ds, resolved, grid);

  write_text(out_dir / "ablation.csv", cmkd::ablation_csv(table));
  write_text(out_dir / "ablation.json", cmkd::ablation_json(table).dump(2) + "\n");
  std::fputs(cmkd::ablation_csv(table).c_str(), stdout);
  return 0;
}

int cmd_gradcheck(const Cli& cli) {
  const auto t0 = std::chrono::steady_clock::now();
  auto results = cmkd::run_gradcheck(cli.gradcheck_instances, cli.seed.value_or(2024),
                                     cli.corrupt);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("[%s] %-8s  max_rel_err=%.3e  (%zu instances)\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.max_rel_err, r.instances);
    all_pass = all_pass && r.pass;
  }
  std::printf("%zu kernels in %.2fs\n", results.size(), secs);
  return all_pass ? 0 : 1;
}

int cmd_export(const Cli& cli) {
  auto ckpt = cmkd::load_checkpoint(cli.checkpoint_path);
  auto ds = cmkd::load_dataset(cli.data_path);
  if (ckpt.task != ds.task) throw cmkd::ConfigError("checkpoint task does not match dataset");
  cmkd::export_embeddings(ckpt.params, ds, cli.out_path, ckpt.role != "teacher");
  std::printf("wrote %zu embeddings to %s\n", ds.samples.size(), cli.out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-modal knowledge distillation on synthetic paired-modality data"};
  app.require_subcommand(1);
  Cli cli;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "JSON config file (flags win)");
    sub->add_option("--seed", cli.seed, "root seed override");
  };
  auto add_train_overrides = [&](CLI::App* sub) {
    sub->add_option("--epochs", cli.epochs);
    sub->add_option("--batch-size", cli.batch_size);
    sub->add_option("--folds", cli.folds);
    sub->add_option("--workers", cli.workers, "fold worker pool size (0 = one per fold)");
    sub->add_option("--patience", cli.patience);
    sub->add_option("--lambda-sim", cli.lambda_sim);
    sub->add_option("--lambda-unc", cli.lambda_unc);
    sub->add_option("--lambda-kd", cli.lambda_kd);
    sub->add_option("--lambda-task", cli.lambda_task);
    sub->add_option("--beta", cli.beta);
    sub->add_option("--tau", cli.tau);
    sub->add_option("--delta", cli.delta);
    sub->add_option("--uncertainty-form", cli.uncertainty_form, "as_printed | inverse");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic paired-modality dataset");
  add_common(gen);
  gen->add_option("--task", cli.task, "dec | cer");
  gen->add_option("--trials", cli.trials);
  gen->add_option("--samples", cli.samples, "samples per trial");
  gen->add_option("--latent", cli.latent);
  gen->add_option("--dim-s", cli.dim_s);
  gen->add_option("--dim-t", cli.dim_t);
  gen->add_option("--classes", cli.classes);
  gen->add_option("--noise", cli.noise, "label noise rate (flip prob / noise sd)");
  gen->add_option("--student-noise", cli.student_noise);
  gen->add_option("-o,--out", cli.out_path, "output dataset file")->required();

  auto* train = app.add_subcommand("train", "teacher pretraining + student cross-validation");
  add_common(train);
  add_train_overrides(train);
  train->add_option("--data", cli.data_path, "dataset file")->required();
  train->add_option("--out", cli.out_path, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "metrics of a checkpoint on a dataset");
  add_common(eval);
  eval->add_option("--checkpoint", cli.checkpoint_path)->required();
  eval->add_option("--data", cli.data_path)->required();
  eval->add_option("--trials", cli.trials_filter, "restrict to these trial ids (csv)");
  eval->add_option("-o,--out", cli.out_path, "also write the metrics JSON here");

  auto* ablate = app.add_subcommand("ablate", "loss-component sweep with shared teacher/folds");
  add_common(ablate);
  add_train_overrides(ablate);
  ablate->add_option("--data", cli.data_path)->required();
  ablate->add_option("--out", cli.out_path, "output directory")->required();
  ablate->add_option("--grid", cli.grid_csv, "masks, e.g. task,kd,sim+unc+kd");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss kernel");
  add_common(gc);
  gc->add_option("--instances", cli.gradcheck_instances, "random instances per kernel");
  gc->add_option("--corrupt", cli.corrupt)->group("");  // negative-control hook

  auto* exp = app.add_subcommand("export-embeddings", "embeddings CSV for external projection");
  add_common(exp);
  exp->add_option("--checkpoint", cli.checkpoint_path)->required();
  exp->add_option("--data", cli.data_path)->required();
  exp->add_option("-o,--out", cli.out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(cli);
    if (train->parsed()) return cmd_train(cli);
    if (eval->parsed()) return cmd_eval(cli);
    if (ablate->parsed()) return cmd_ablate(cli);
    if (gc->parsed()) return cmd_gradcheck(cli);
    if (exp->parsed()) return cmd_export(cli);
    return 2;
  } catch (const cmkd::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

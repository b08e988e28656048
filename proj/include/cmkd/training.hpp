#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cmkd/data.hpp"
#include "cmkd/losses.hpp"
#include "cmkd/metrics.hpp"
#include "cmkd/model.hpp"
#include "cmkd/optimizer.hpp"
#include "cmkd/prototypes.hpp"
#include "cmkd/report.hpp"

// End-to-end training: teacher pretraining on the teacher modality, per-fold
// student training with the weighted total loss, cosine learning-rate decay
// and early stopping, and the grouped cross-validation driver.
//
// Randomness discipline (bitwise reproducibility): one root seed, teacher
// stream fork(kTeacherStream), fold plan fork(kFoldPlanStream), fold k
// stream fork(kFoldStreamBase + k). Within a stream the draw order is model
// init first, then one shuffle per epoch. Fold workers never share streams,
// so thread scheduling cannot change any number.

namespace cmkd {

inline constexpr std::uint64_t kTeacherStream = 11;
inline constexpr std::uint64_t kTeacherSplitStream = 12;
inline constexpr std::uint64_t kFoldPlanStream = 22;
inline constexpr std::uint64_t kFoldStreamBase = 100;

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  std::size_t patience = 20;
  std::size_t folds = 5;
  std::size_t workers = 0;  // 0 -> one per fold
  std::uint64_t seed = 1;
  LossWeights weights;
  LossConfig loss;
  ExtractorConfig student;
  ExtractorConfig teacher;
  std::vector<std::size_t> head_hidden = {32};
  std::size_t injection_layer = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (!(lr_end > 0.0) || lr_start < lr_end) {
      throw ConfigError("learning rates must satisfy lr_start >= lr_end > 0");
    }
    if (patience < 1 || patience > epochs) {
      throw ConfigError("patience must lie in [1, epochs]");
    }
    if (folds < 2) throw ConfigError("need at least 2 folds");
    weights.validate();
    loss.validate();
    if (student.embed_dim != teacher.embed_dim) {
      throw ConfigError("student and teacher embed dims must match (shared space)");
    }
  }
};

/// Desk-scale defaults; input dims are filled in from the dataset.
inline TrainConfig default_train_config() {
  TrainConfig cfg;
  cfg.student.hidden_dims = {64};
  cfg.student.feature_dim = 32;
  cfg.student.embed_dim = 16;
  cfg.teacher.hidden_dims = {64};
  cfg.teacher.feature_dim = 32;
  cfg.teacher.embed_dim = 16;
  return cfg;
}

inline bool needs_teacher(const LossWeights& w) { return w.sim > 0 || w.unc > 0 || w.kd > 0; }

inline HeadConfig resolved_head(const TrainConfig& cfg, const Dataset& ds) {
  HeadConfig head;
  head.layer_dims = cfg.head_hidden;
  head.layer_dims.push_back(ds.task == Task::dec ? ds.num_classes : 1);
  head.injection_layer = cfg.injection_layer;
  head.validate();
  return head;
}

/// Copy of the config with input dims resolved against the dataset.
inline TrainConfig resolve_config(TrainConfig cfg, const Dataset& ds) {
  if (cfg.student.input_dim == 0) cfg.student.input_dim = ds.dim_s;
  if (cfg.teacher.input_dim == 0) cfg.teacher.input_dim = ds.dim_t;
  if (cfg.student.input_dim != ds.dim_s || cfg.teacher.input_dim != ds.dim_t) {
    throw ConfigError("configured input dims do not match the dataset");
  }
  cfg.validate();
  return cfg;
}

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
  }

  /// Returns true when training should stop, i.e. exactly when the number of
  /// epochs since the last improvement reaches the patience. Lower is better.
  bool observe(double score, std::size_t epoch) {
    if (score < best_) {
      best_ = score;
      best_epoch_ = epoch;
      since_ = 0;
      return false;
    }
    ++since_;
    return since_ >= patience_;
  }

  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_improvement() const { return since_; }
  bool improved_at(std::size_t epoch) const { return best_epoch_ == epoch && since_ == 0; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_ = 0;
};

namespace detail {

inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<double> column(const Tensor& t) {
  std::vector<double> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i] = t.at(i, 0);
  return out;
}

// Consecutive chunks of the (already shuffled) index list. A trailing chunk
// of one sample is dropped: the batch losses need N >= 2.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& idx,
                                                          std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    if (end - start < 2) break;
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                     idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace detail

struct EvalResult {
  std::map<std::string, double> metrics;
  std::map<std::string, double> metrics_clean;
  double task_loss = 0;
};

/// Task metrics and the task-loss value of a model on the given samples,
/// computed off the tape. Clean-label metrics appear when the dataset still
/// carries generator ground truth.
inline EvalResult evaluate_model(const Dataset& ds, const std::vector<std::size_t>& idx,
                                 const ModelParams& model, bool student_side = true) {
  if (idx.empty()) throw ConfigError("evaluate_model: empty index set");
  NoGradGuard guard;
  EvalResult out;
  Tensor x = student_side ? gather_student(ds, idx) : gather_teacher(ds, idx);
  Tensor logits = head_forward(model, extract(model, x).f);
  if (ds.task == Task::dec) {
    auto labels = gather_class_labels(ds, idx);
    auto pred = detail::argmax_rows(logits);
    out.metrics["accuracy"] = accuracy(pred, labels);
    out.metrics["macro_f1"] = macro_f1(pred, labels, ds.num_classes);
    out.task_loss = loss_ce(logits, labels).value();
    if (ds.has_clean()) {
      std::vector<int> clean;
      for (auto i : idx) clean.push_back(*ds.samples[i].clean_class);
      out.metrics_clean["accuracy"] = accuracy(pred, clean);
      out.metrics_clean["macro_f1"] = macro_f1(pred, clean, ds.num_classes);
    }
  } else {
    auto labels = gather_cont_labels(ds, idx);
    auto pred = detail::column(logits);
    out.metrics["rmse"] = rmse(pred, labels);
    out.metrics["pcc"] = pcc(pred, labels);
    out.metrics["ccc"] = ccc(pred, labels);
    Tensor y = Tensor::from_data({labels.size(), 1}, labels, false);
    out.task_loss = loss_ccc(logits, y).value();
    if (ds.has_clean()) {
      std::vector<double> clean;
      for (auto i : idx) clean.push_back(*ds.samples[i].clean_cont);
      out.metrics_clean["rmse"] = rmse(pred, clean);
      out.metrics_clean["pcc"] = pcc(pred, clean);
      out.metrics_clean["ccc"] = ccc(pred, clean);
    }
  }
  return out;
}

/// Teacher pretraining: the teacher extractor and head are fit on the
/// teacher modality with the task loss only, early-stopped on a held-out
/// trial split, then frozen. The embedding projection is untouched by the
/// task loss and keeps its seeded init (it only matters as a fixed map into
/// the shared space).
inline ModelParams pretrain_teacher(const Dataset& ds, const TrainConfig& raw_cfg) {
  const TrainConfig cfg = resolve_config(raw_cfg, ds);
  ExtractorConfig tcfg = cfg.teacher;
  tcfg.input_dim = ds.dim_t;
  const HeadConfig head = resolved_head(cfg, ds);

  Rng rng = Rng(cfg.seed).fork(kTeacherStream);
  ModelParams model = init_model(tcfg, head, rng);

  // held-out trials for early stopping; tiny datasets fall back to
  // monitoring the training set
  const auto trials = ds.trial_ids();
  std::vector<std::size_t> train_idx, val_idx;
  if (trials.size() >= 2) {
    const std::size_t k = std::min<std::size_t>(5, trials.size());
    auto plan = split_group_by_trial(ds, k, Rng(cfg.seed).fork(kTeacherSplitStream).seed());
    train_idx = fold_indices(ds, plan, 0, false);
    val_idx = fold_indices(ds, plan, 0, true);
  } else {
    train_idx.resize(ds.samples.size());
    std::iota(train_idx.begin(), train_idx.end(), 0);
    val_idx = train_idx;
  }

  std::vector<Tensor*> params;
  for (auto& l : model.extractor) {
    params.push_back(&l.weight);
    params.push_back(&l.bias);
  }
  for (auto& l : model.head) {
    params.push_back(&l.weight);
    params.push_back(&l.bias);
  }
  Adam adam(params);
  EarlyStopping stopper(cfg.patience);
  ModelParams best = model.clone();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end);
    rng.shuffle(train_idx);
    try {
      for (const auto& batch : detail::make_batches(train_idx, cfg.batch_size)) {
        Tensor x = gather_teacher(ds, batch);
        Tensor logits = head_forward(model, extract(model, x).f);
        Tensor loss;
        if (ds.task == Task::dec) {
          loss = loss_ce(logits, gather_class_labels(ds, batch));
        } else {
          auto labels = gather_cont_labels(ds, batch);
          loss = loss_ccc(logits, Tensor::from_data({labels.size(), 1}, labels, false));
        }
        backward(loss);
        adam.step(params, lr);
      }
    } catch (const NumericError& e) {
      throw NumericError("teacher pretraining diverged at epoch " + std::to_string(epoch) +
                         ": " + e.what());
    }
    const double val = evaluate_model(ds, val_idx, model, /*student_side=*/false).task_loss;
    const bool stop = stopper.observe(val, epoch);
    if (stopper.improved_at(epoch)) best = model.clone();
    if (stop) break;
  }
  best.freeze();
  return best;
}

struct FoldOutcome {
  FoldRecord record;
  ModelParams student;
  std::optional<PrototypeBank> bank;
};

/// One fold of student training against a frozen teacher. The teacher may be
/// null only when every teacher-dependent loss weight is zero.
inline FoldOutcome train_student_fold(const Dataset& ds, const FoldPlan& plan, std::size_t fold,
                                      const ModelParams* teacher, const TrainConfig& raw_cfg) {
  const TrainConfig cfg = resolve_config(raw_cfg, ds);
  const LossWeights& w = cfg.weights;
  const bool use_sim = w.sim > 0, use_unc = w.unc > 0, use_kd = w.kd > 0, use_task = w.task > 0;
  const bool use_embed = use_sim || use_unc;
  if (needs_teacher(w)) {
    if (teacher == nullptr) throw ConfigError("fold training needs a pretrained teacher");
    if (!teacher->frozen) throw ConfigError("fold training needs the teacher frozen");
    validate_injection_contract(cfg.student, *teacher);
  }

  auto train_idx = fold_indices(ds, plan, fold, false);
  auto val_idx = fold_indices(ds, plan, fold, true);
  if (train_idx.size() < 2) throw ConfigError("fold has fewer than 2 training samples");
  if (val_idx.empty()) throw ConfigError("fold has no validation samples");

  ExtractorConfig scfg = cfg.student;
  scfg.input_dim = ds.dim_s;
  const HeadConfig head = resolved_head(cfg, ds);

  Rng rng = Rng(cfg.seed).fork(kFoldStreamBase + fold);
  ModelParams student = init_model(scfg, head, rng);

  std::optional<PrototypeBank> bank;
  if (use_unc) {
    NoGradGuard guard;
    Tensor e_t = extract(*teacher, gather_teacher(ds, train_idx)).e;
    if (ds.task == Task::dec) {
      bank = init_prototypes(e_t, gather_class_labels(ds, train_idx), ds.num_classes);
    } else {
      auto bins = bin_continuous_labels(gather_cont_labels(ds, train_idx), cfg.loss.cer_bins);
      bank = init_prototypes(e_t, bins, cfg.loss.cer_bins);
    }
  }

  std::vector<Tensor*> params;
  for (auto& l : student.extractor) {
    params.push_back(&l.weight);
    params.push_back(&l.bias);
  }
  if (use_embed) {
    params.push_back(&student.projection.weight);
    params.push_back(&student.projection.bias);
  }
  if (use_task) {
    for (auto& l : student.head) {
      params.push_back(&l.weight);
      params.push_back(&l.bias);
    }
  }
  if (use_unc) params.push_back(&bank->phi);

  Adam adam(params);
  EarlyStopping stopper(cfg.patience);
  ModelParams best_student = student.clone();
  std::optional<PrototypeBank> best_bank = bank ? std::optional(bank->clone()) : std::nullopt;

  FoldRecord record;
  record.fold = fold;
  record.val_trials = plan.trials_in_fold(fold);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end);
    rng.shuffle(train_idx);
    const auto batches = detail::make_batches(train_idx, cfg.batch_size);
    EpochTrace trace;
    trace.lr = lr;
    try {
      for (const auto& batch : batches) {
        Tensor xs = gather_student(ds, batch);
        Features fs = extract(student, xs);
        std::optional<Features> ft;
        if (use_embed || use_kd) ft = extract(*teacher, gather_teacher(ds, batch));

        LossParts parts;
        std::optional<Tensor> q_batch;
        if (use_embed) q_batch = similarity_matrix(fs.e, ft->e, cfg.loss.beta);
        if (use_sim) parts.sim = loss_sim_from_q(*q_batch);
        if (use_unc) {
          Tensor alpha = dirichlet_alpha(fs.e, *bank, cfg.loss.beta, cfg.loss.tau);
          Tensor u = uncertainty(alpha, cfg.loss.uncertainty_form);
          parts.unc = loss_unc(u, *q_batch, cfg.loss.delta);
        }
        if (use_kd) {
          Tensor y_t = head_forward(*teacher, ft->f);
          Tensor y_ts =
              head_forward_from_layer(*teacher, fs.f, teacher->head_cfg.injection_layer);
          parts.kd = loss_kd(y_t, y_ts, ds.task);
        }
        if (use_task) {
          Tensor y_s = head_forward(student, fs.f);
          if (ds.task == Task::dec) {
            parts.task = loss_ce(y_s, gather_class_labels(ds, batch));
          } else {
            auto labels = gather_cont_labels(ds, batch);
            parts.task = loss_ccc(y_s, Tensor::from_data({labels.size(), 1}, labels, false));
          }
        }
        Tensor total = loss_total(parts, w);
        backward(total);
        adam.step(params, lr);

        trace.train_total += total.value();
        if (parts.sim) trace.train_sim += parts.sim->value();
        if (parts.unc) trace.train_unc += parts.unc->value();
        if (parts.kd) trace.train_kd += parts.kd->value();
        if (parts.task) trace.train_task += parts.task->value();
      }
    } catch (const NumericError& e) {
      throw NumericError("student training diverged at epoch " + std::to_string(epoch) + ": " +
                         e.what());
    }
    const auto nb = static_cast<double>(std::max<std::size_t>(1, batches.size()));
    trace.train_total /= nb;
    trace.train_sim /= nb;
    trace.train_unc /= nb;
    trace.train_kd /= nb;
    trace.train_task /= nb;
    trace.val_task = evaluate_model(ds, val_idx, student).task_loss;
    record.trace.push_back(trace);

    const bool stop = stopper.observe(trace.val_task, epoch);
    if (stopper.improved_at(epoch)) {
      best_student = student.clone();
      if (bank) best_bank = bank->clone();
    }
    record.epochs_run = epoch + 1;
    if (stop) break;
  }

  record.best_epoch = stopper.best_epoch();
  record.best_val_task = stopper.best();
  auto eval = evaluate_model(ds, val_idx, best_student);
  record.metrics = std::move(eval.metrics);
  record.metrics_clean = std::move(eval.metrics_clean);
  return FoldOutcome{std::move(record), std::move(best_student), std::move(best_bank)};
}

struct CvOutcome {
  RunReport report;
  std::optional<ModelParams> teacher;
  std::vector<FoldOutcome> folds;
};

inline Json train_config_json(const TrainConfig& cfg);

/// Cross-validation against an existing teacher and fold plan (the ablation
/// runner path). Folds run on a small worker pool; every fold owns its
/// stream, model, tape and optimizer, so the schedule cannot affect results.
inline CvOutcome run_cv_with(const Dataset& ds, const TrainConfig& raw_cfg,
                             const ModelParams* teacher, const FoldPlan& plan) {
  const TrainConfig cfg = resolve_config(raw_cfg, ds);
  if (plan.k != cfg.folds) throw ConfigError("fold plan does not match configured fold count");

  std::vector<std::optional<FoldOutcome>> outcomes(cfg.folds);
  std::vector<std::pair<std::size_t, std::exception_ptr>> errors;
  std::mutex error_mutex;
  std::atomic<std::size_t> next{0};
  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min(cfg.workers == 0 ? cfg.folds : cfg.workers, cfg.folds));

  auto work = [&] {
    for (;;) {
      const std::size_t fold = next.fetch_add(1);
      if (fold >= cfg.folds) return;
      try {
        outcomes[fold] = train_student_fold(ds, plan, fold, teacher, cfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        errors.emplace_back(fold, std::current_exception());
      }
    }
  };
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (!errors.empty()) {
    std::sort(errors.begin(), errors.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    try {
      std::rethrow_exception(errors.front().second);
    } catch (const std::exception& e) {
      throw std::runtime_error("fold " + std::to_string(errors.front().first) + ": " + e.what());
    }
  }

  CvOutcome out;
  out.report.task = ds.task;
  out.report.seed = cfg.seed;
  out.report.weights = cfg.weights;
  out.report.config = train_config_json(cfg);
  for (auto& o : outcomes) {
    out.report.folds.push_back(o->record);
    out.folds.push_back(std::move(*o));
  }
  recompute_aggregates(out.report);
  return out;
}

/// Full run: pretrain the teacher once (when any teacher-dependent loss is
/// active), split the trials, train every fold, aggregate.
inline CvOutcome run_cv(const Dataset& ds, const TrainConfig& raw_cfg) {
  const TrainConfig cfg = resolve_config(raw_cfg, ds);
  std::optional<ModelParams> teacher;
  if (needs_teacher(cfg.weights)) teacher = pretrain_teacher(ds, cfg);
  auto plan = split_group_by_trial(ds, cfg.folds, Rng(cfg.seed).fork(kFoldPlanStream).seed());
  CvOutcome out = run_cv_with(ds, cfg, teacher ? &*teacher : nullptr, plan);
  out.teacher = std::move(teacher);
  return out;
}

inline Json train_config_json(const TrainConfig& cfg) {
  Json j;
  j["train"] = {{"epochs", cfg.epochs},   {"batch_size", cfg.batch_size},
                {"lr_start", cfg.lr_start}, {"lr_end", cfg.lr_end},
                {"patience", cfg.patience}, {"folds", cfg.folds},
                {"workers", cfg.workers},   {"seed", cfg.seed}};
  j["loss"] = {{"beta", cfg.loss.beta},
               {"tau", cfg.loss.tau},
               {"delta", cfg.loss.delta},
               {"uncertainty_form", to_string(cfg.loss.uncertainty_form)},
               {"cer_bins", cfg.loss.cer_bins},
               {"lambda", to_json(cfg.weights)}};
  j["model"] = {{"student",
                 {{"hidden", cfg.student.hidden_dims},
                  {"feature", cfg.student.feature_dim},
                  {"embed", cfg.student.embed_dim}}},
                {"teacher",
                 {{"hidden", cfg.teacher.hidden_dims},
                  {"feature", cfg.teacher.feature_dim},
                  {"embed", cfg.teacher.embed_dim}}},
                {"activation", to_string(cfg.student.activation)},
                {"head", {{"hidden", cfg.head_hidden}, {"injection_layer", cfg.injection_layer}}}};
  return j;
}

}  // namespace cmkd

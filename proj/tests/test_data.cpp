#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "cmkd/data.hpp"
#include "cmkd/losses.hpp"
#include "cmkd/metrics.hpp"
#include "cmkd/model.hpp"
#include "cmkd/optimizer.hpp"
#include "helpers.hpp"

using cmkd::Dataset;
using cmkd::GeneratorSpec;
using cmkd::Task;

namespace {

GeneratorSpec small_spec() {
  GeneratorSpec spec;
  spec.n_trials = 8;
  spec.samples_per_trial = 10;
  spec.latent_dim = 4;
  spec.input_dim_s = 6;
  spec.input_dim_t = 9;
  spec.n_classes = 3;
  spec.seed = 42;
  return spec;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("zero label noise keeps observed labels clean") {
  auto spec = small_spec();
  spec.label_noise_rate = 0.0;
  auto ds = cmkd::generate(spec);
  REQUIRE(ds.has_clean());
  for (const auto& s : ds.samples) CHECK(*s.y_class == *s.clean_class);
}

TEST_CASE("full label noise never agrees with the clean label") {
  auto spec = small_spec();
  spec.n_trials = 100;
  spec.samples_per_trial = 100;  // 10k samples
  spec.label_noise_rate = 1.0;
  auto ds = cmkd::generate(spec);
  std::size_t agree = 0;
  for (const auto& s : ds.samples) agree += *s.y_class == *s.clean_class;
  const double rate = static_cast<double>(agree) / static_cast<double>(ds.samples.size());
  CHECK(rate <= 0.02);
}

TEST_CASE("label flip rate is calibrated to the requested noise") {
  auto spec = small_spec();
  spec.n_trials = 100;
  spec.samples_per_trial = 100;
  spec.label_noise_rate = 0.3;
  auto ds = cmkd::generate(spec);
  std::size_t flipped = 0;
  for (const auto& s : ds.samples) flipped += *s.y_class != *s.clean_class;
  const double rate = static_cast<double>(flipped) / static_cast<double>(ds.samples.size());
  CHECK(rate > 0.28);
  CHECK(rate < 0.32);
}

TEST_CASE("regression labels carry additive noise of the requested scale") {
  auto spec = small_spec();
  spec.task = Task::cer;
  spec.n_trials = 100;
  spec.samples_per_trial = 100;
  spec.label_noise_rate = 0.3;
  auto ds = cmkd::generate(spec);
  double var = 0;
  for (const auto& s : ds.samples) {
    const double d = *s.y_cont - *s.clean_cont;
    var += d * d;
  }
  var /= static_cast<double>(ds.samples.size());
  CHECK(std::sqrt(var) == Catch::Approx(0.3).margin(0.02));
}

TEST_CASE("generation is bitwise deterministic under a seed") {
  auto a = cmkd::generate(small_spec());
  auto b = cmkd::generate(small_spec());
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].trial_id == b.samples[i].trial_id);
    CHECK(a.samples[i].x_s == b.samples[i].x_s);
    CHECK(a.samples[i].x_t == b.samples[i].x_t);
    CHECK(*a.samples[i].y_class == *b.samples[i].y_class);
  }
  auto spec2 = small_spec();
  spec2.seed = 43;
  auto c = cmkd::generate(spec2);
  CHECK(a.samples[0].x_s != c.samples[0].x_s);
}

TEST_CASE("five trials over five folds means one trial each") {
  auto plan = cmkd::split_group_by_trial({10, 11, 12, 13, 14}, 5, 7);
  std::set<std::size_t> folds;
  for (const auto& [trial, fold] : plan.assignment) folds.insert(fold);
  CHECK(folds.size() == 5);
  for (std::size_t f = 0; f < 5; ++f) CHECK(plan.trials_in_fold(f).size() == 1);
}

TEST_CASE("twenty-seven trials split 6-6-5-5-5") {
  std::vector<std::int64_t> trials;
  for (int i = 0; i < 27; ++i) trials.push_back(i);
  auto plan = cmkd::split_group_by_trial(trials, 5, 99);
  std::vector<std::size_t> sizes;
  for (std::size_t f = 0; f < 5; ++f) sizes.push_back(plan.trials_in_fold(f).size());
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{5, 5, 5, 6, 6});
}

TEST_CASE("no trial ever lands in two folds") {
  std::vector<std::int64_t> trials;
  for (int i = 0; i < 23; ++i) trials.push_back(i * 3 + 1);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto plan = cmkd::split_group_by_trial(trials, 4, seed);
    std::size_t total = 0;
    for (std::size_t f = 0; f < 4; ++f) {
      auto in_fold = plan.trials_in_fold(f);
      total += in_fold.size();
      std::set<std::int64_t> unique(in_fold.begin(), in_fold.end());
      CHECK(unique.size() == in_fold.size());
    }
    CHECK(total == trials.size());
  }
}

TEST_CASE("grouped samples stay together across train and validation") {
  auto ds = cmkd::generate(small_spec());
  auto plan = cmkd::split_group_by_trial(ds, 4, 3);
  for (std::size_t f = 0; f < 4; ++f) {
    auto train = cmkd::fold_indices(ds, plan, f, false);
    auto val = cmkd::fold_indices(ds, plan, f, true);
    CHECK(train.size() + val.size() == ds.samples.size());
    std::set<std::int64_t> train_trials, val_trials;
    for (auto i : train) train_trials.insert(ds.samples[i].trial_id);
    for (auto i : val) val_trials.insert(ds.samples[i].trial_id);
    for (auto t : val_trials) CHECK_FALSE(train_trials.count(t));
  }
}

TEST_CASE("splitting needs at least as many trials as folds") {
  CHECK_THROWS_AS(cmkd::split_group_by_trial({1, 2, 3}, 5, 0), cmkd::ConfigError);
}

TEST_CASE("dataset files round-trip exactly") {
  auto spec = small_spec();
  spec.label_noise_rate = 0.25;
  auto ds = cmkd::generate(spec);
  auto path = temp_file("cmkd_roundtrip.csv");
  cmkd::save_dataset(ds, path.string());
  auto back = cmkd::load_dataset(path.string());

  CHECK(back.task == ds.task);
  CHECK(back.dim_s == ds.dim_s);
  CHECK(back.dim_t == ds.dim_t);
  CHECK(back.num_classes == ds.num_classes);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].trial_id == ds.samples[i].trial_id);
    CHECK(back.samples[i].x_s == ds.samples[i].x_s);
    CHECK(back.samples[i].x_t == ds.samples[i].x_t);
    CHECK(*back.samples[i].y_class == *ds.samples[i].y_class);
  }
  // clean labels stay generator-internal
  CHECK_FALSE(back.has_clean());
  std::filesystem::remove(path);
}

TEST_CASE("regression datasets round-trip exactly too") {
  auto spec = small_spec();
  spec.task = Task::cer;
  spec.label_noise_rate = 0.1;
  auto ds = cmkd::generate(spec);
  auto path = temp_file("cmkd_roundtrip_cer.csv");
  cmkd::save_dataset(ds, path.string());
  auto back = cmkd::load_dataset(path.string());
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(*back.samples[i].y_cont == *ds.samples[i].y_cont);
  }
  std::filesystem::remove(path);
}

TEST_CASE("a row with the wrong width is rejected with its line number") {
  auto path = temp_file("cmkd_badrow.csv");
  {
    std::ofstream f(path);
    f << "#cmkd v1 task=dec S=2 T=2 C=2\n";
    f << cmkd::column_names(2, 2) << "\n";
    f << "0,1,0.5,0.5,0.25,0.25\n";
    f << "0,1,0.5,0.5,0.25\n";  // one cell short
  }
  try {
    cmkd::load_dataset(path.string());
    FAIL("expected IoError");
  } catch (const cmkd::IoError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("header dims drive the parsed widths") {
  auto path = temp_file("cmkd_dims.csv");
  {
    std::ofstream f(path);
    f << "#cmkd v1 task=dec S=8 T=16 C=2\n";
    f << cmkd::column_names(8, 16) << "\n";
    for (int r = 0; r < 3; ++r) {
      f << r << ",1";
      for (int i = 0; i < 24; ++i) f << "," << 0.125 * (i + r);
      f << "\n";
    }
  }
  auto ds = cmkd::load_dataset(path.string());
  CHECK(ds.dim_s == 8);
  CHECK(ds.dim_t == 16);
  CHECK(ds.samples.size() == 3);
  CHECK(ds.samples[1].x_t.size() == 16);
  std::filesystem::remove(path);
}

TEST_CASE("malformed headers and cells are rejected") {
  auto path = temp_file("cmkd_badheader.csv");
  auto write = [&](const std::string& text) {
    std::ofstream f(path);
    f << text;
  };

  write("#other v1 task=dec S=2 T=2 C=2\n");
  CHECK_THROWS_AS(cmkd::load_dataset(path.string()), cmkd::IoError);

  write("#cmkd v1 task=dec S=2 T=2\n" + cmkd::column_names(2, 2) + "\n0,1,1,1,1,1\n");
  CHECK_THROWS_AS(cmkd::load_dataset(path.string()), cmkd::IoError);

  write("#cmkd v1 task=dec S=2 T=2 C=2\nwrong,names\n0,1,1,1,1,1\n");
  CHECK_THROWS_AS(cmkd::load_dataset(path.string()), cmkd::IoError);

  write("#cmkd v1 task=dec S=2 T=2 C=2\n" + cmkd::column_names(2, 2) + "\n0,1,1,abc,1,1\n");
  CHECK_THROWS_AS(cmkd::load_dataset(path.string()), cmkd::IoError);

  write("#cmkd v1 task=dec S=2 T=2 C=2\n" + cmkd::column_names(2, 2) + "\n0,7,1,1,1,1\n");
  CHECK_THROWS_AS(cmkd::load_dataset(path.string()), cmkd::IoError);

  std::filesystem::remove(path);
}

TEST_CASE("batch gathering preserves sample order and widths") {
  auto ds = cmkd::generate(small_spec());
  auto xs = cmkd::gather_student(ds, {3, 0, 5});
  CHECK(xs.shape() == cmkd::Shape{3, ds.dim_s});
  CHECK(xs.at(0, 2) == ds.samples[3].x_s[2]);
  CHECK(xs.at(1, 0) == ds.samples[0].x_s[0]);
  auto labels = cmkd::gather_class_labels(ds, {3, 0, 5});
  CHECK(labels[2] == *ds.samples[5].y_class);
}

// A linear softmax probe trained on the teacher view should beat the same
// probe trained on the noisy student view; this is what makes distillation
// worth anything on this data.
TEST_CASE("teacher modality is learnably better than the student modality") {
  double teacher_wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GeneratorSpec spec;
    spec.n_trials = 12;
    spec.samples_per_trial = 20;
    spec.latent_dim = 4;
    spec.input_dim_s = 10;
    spec.input_dim_t = 10;
    spec.n_classes = 3;
    spec.student_noise_scale = 1.0;
    spec.seed = seed;
    auto ds = cmkd::generate(spec);

    auto train_probe = [&](bool use_teacher) {
      std::vector<std::size_t> train_idx, val_idx;
      for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        (ds.samples[i].trial_id < 9 ? train_idx : val_idx).push_back(i);
      }
      auto gather = [&](const std::vector<std::size_t>& idx) {
        return use_teacher ? cmkd::gather_teacher(ds, idx) : cmkd::gather_student(ds, idx);
      };
      // clean labels: this probe measures modality quality, not noise fit
      auto clean = [&](const std::vector<std::size_t>& idx) {
        std::vector<int> out;
        for (auto i : idx) out.push_back(*ds.samples[i].clean_class);
        return out;
      };
      cmkd::Rng rng(seed * 31 + use_teacher);
      const double bound = 1.0 / std::sqrt(10.0);
      std::vector<double> w0(10 * 3);
      for (auto& v : w0) v = rng.uniform(-bound, bound);
      auto w = cmkd::Tensor::from_data({10, 3}, w0, true);
      auto b = cmkd::Tensor::zeros({3}, true);
      std::vector<cmkd::Tensor*> params = {&w, &b};
      cmkd::Adam adam(params);
      auto x = gather(train_idx);
      auto y = clean(train_idx);
      for (int step = 0; step < 80; ++step) {
        auto logits = cmkd::add_rowvec(cmkd::matmul(x, w), b);
        auto loss = cmkd::loss_ce(logits, y);
        cmkd::backward(loss);
        adam.step(params, 0.05);
      }
      cmkd::NoGradGuard guard;
      auto logits = cmkd::add_rowvec(cmkd::matmul(gather(val_idx), w), b);
      std::vector<int> pred(val_idx.size());
      for (std::size_t i = 0; i < val_idx.size(); ++i) {
        int best = 0;
        for (int c = 1; c < 3; ++c) {
          if (logits.at(i, static_cast<std::size_t>(c)) >
              logits.at(i, static_cast<std::size_t>(best)))
            best = c;
        }
        pred[i] = best;
      }
      return cmkd::accuracy(pred, clean(val_idx));
    };

    const double acc_teacher = train_probe(true);
    const double acc_student = train_probe(false);
    teacher_wins += acc_teacher - acc_student;
  }
  CHECK(teacher_wins / 5.0 > 0.0);
}

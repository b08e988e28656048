#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <vector>

#include "cmkd/metrics.hpp"
#include "cmkd/random.hpp"

using cmkd::Rng;

namespace {

// confusion-matrix oracle for macro F1
double macro_f1_ref(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
  double total = 0;
  int counted = 0;
  for (int c = 0; c < classes; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c && truth[i] == c) tp += 1;
      if (pred[i] == c && truth[i] != c) fp += 1;
      if (pred[i] != c && truth[i] == c) fn += 1;
    }
    if (tp + fp + fn == 0) continue;
    ++counted;
    if (tp > 0) total += 2 * tp / (2 * tp + fp + fn);
  }
  return total / counted;
}

}  // namespace

TEST_CASE("perfect predictions score one on both classification metrics") {
  std::vector<int> y = {0, 1, 2, 1, 0, 2};
  CHECK(cmkd::accuracy(y, y) == 1.0);
  CHECK(cmkd::macro_f1(y, y, 3) == Catch::Approx(1.0));
}

TEST_CASE("degenerate constant predictions on a balanced binary set") {
  std::vector<int> pred(10, 0);
  std::vector<int> truth = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  CHECK(cmkd::accuracy(pred, truth) == Catch::Approx(0.5));
  // class 0: precision .5 recall 1 -> F1 2/3; class 1: no predictions -> 0
  CHECK(cmkd::macro_f1(pred, truth, 2) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("macro F1 matches the confusion-matrix oracle on random labelings") {
  Rng rng(71);
  for (int it = 0; it < 100; ++it) {
    std::vector<int> pred, truth;
    for (int i = 0; i < 40; ++i) {
      pred.push_back(static_cast<int>(rng.uniform_int(0, 4)));
      truth.push_back(static_cast<int>(rng.uniform_int(0, 4)));
    }
    CHECK(cmkd::macro_f1(pred, truth, 5) ==
          Catch::Approx(macro_f1_ref(pred, truth, 5)).margin(1e-12));
    double hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    CHECK(cmkd::accuracy(pred, truth) == Catch::Approx(hits / 40.0).margin(1e-12));
  }
}

TEST_CASE("classification metrics are invariant under consistent relabeling") {
  Rng rng(72);
  std::vector<int> map = {2, 0, 3, 1};
  std::vector<int> pred, truth;
  for (int i = 0; i < 60; ++i) {
    pred.push_back(static_cast<int>(rng.uniform_int(0, 3)));
    truth.push_back(static_cast<int>(rng.uniform_int(0, 3)));
  }
  std::vector<int> pred2, truth2;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred2.push_back(map[static_cast<std::size_t>(pred[i])]);
    truth2.push_back(map[static_cast<std::size_t>(truth[i])]);
  }
  CHECK(cmkd::accuracy(pred, truth) == Catch::Approx(cmkd::accuracy(pred2, truth2)));
  CHECK(cmkd::macro_f1(pred, truth, 4) == Catch::Approx(cmkd::macro_f1(pred2, truth2, 4)));
}

TEST_CASE("identical series give rmse zero and both correlations one") {
  std::vector<double> y = {0.1, 0.4, -0.2, 0.9};
  CHECK(cmkd::rmse(y, y) == 0.0);
  CHECK(cmkd::pcc(y, y) == Catch::Approx(1.0).margin(1e-12));
  CHECK(cmkd::ccc(y, y) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("doubling a zero-mean series keeps pcc at one but ccc at four fifths") {
  std::vector<double> y = {-1.5, -0.5, 0.5, 1.5};
  std::vector<double> doubled;
  for (double v : y) doubled.push_back(2 * v);
  CHECK(cmkd::pcc(doubled, y) == Catch::Approx(1.0).margin(1e-12));
  CHECK(cmkd::ccc(doubled, y) == Catch::Approx(0.8).margin(1e-12));
}

TEST_CASE("pcc is invariant under positive affine maps, ccc is not") {
  Rng rng(73);
  std::vector<double> y;
  for (int i = 0; i < 12; ++i) y.push_back(rng.uniform(-1, 1));
  std::vector<double> affine;
  for (double v : y) affine.push_back(2.0 * v + 1.0);
  CHECK(cmkd::pcc(affine, y) == Catch::Approx(1.0).margin(1e-12));
  CHECK(cmkd::ccc(affine, y) < 1.0);
}

TEST_CASE("regression metrics match two-pass statistics oracles") {
  Rng rng(74);
  for (int it = 0; it < 50; ++it) {
    std::vector<double> a, b;
    for (int i = 0; i < 15; ++i) {
      a.push_back(rng.uniform(-3, 3));
      b.push_back(rng.uniform(-3, 3));
    }
    const auto n = 15.0;
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double va = 0, vb = 0, cov = 0, se = 0;
    for (int i = 0; i < 15; ++i) {
      va += (a[i] - ma) * (a[i] - ma);
      vb += (b[i] - mb) * (b[i] - mb);
      cov += (a[i] - ma) * (b[i] - mb);
      se += (a[i] - b[i]) * (a[i] - b[i]);
    }
    va /= n;
    vb /= n;
    cov /= n;
    CHECK(cmkd::rmse(a, b) == Catch::Approx(std::sqrt(se / n)).margin(1e-12));
    CHECK(cmkd::pcc(a, b) == Catch::Approx(cov / std::sqrt(va * vb)).margin(1e-12));
    CHECK(cmkd::ccc(a, b) ==
          Catch::Approx(2 * cov / (va + vb + (ma - mb) * (ma - mb))).margin(1e-12));
  }
}

TEST_CASE("rmse is symmetric and zero only for equal series") {
  Rng rng(75);
  std::vector<double> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back(rng.uniform(-1, 1));
    b.push_back(rng.uniform(-1, 1));
  }
  CHECK(cmkd::rmse(a, b) == cmkd::rmse(b, a));
  CHECK(cmkd::rmse(a, b) > 0.0);
}

TEST_CASE("constant series are rejected by the correlation metrics") {
  std::vector<double> flat(5, 1.0);
  std::vector<double> varying = {1.0, 2.0, 3.0, 4.0, 5.0};
  CHECK_THROWS_AS(cmkd::pcc(flat, varying), cmkd::NumericError);
  CHECK_THROWS_AS(cmkd::pcc(varying, flat), cmkd::NumericError);
  CHECK_THROWS_AS(cmkd::ccc(flat, flat), cmkd::NumericError);
  // one constant side still defines ccc (it is simply poor)
  CHECK(cmkd::ccc(flat, varying) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("aggregation matches a direct two-pass computation") {
  std::vector<double> v = {0.52, 0.61, 0.49, 0.58, 0.55};
  auto agg = cmkd::aggregate(v);
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / 5.0;
  double s = 0;
  for (double x : v) s += (x - mean) * (x - mean);
  CHECK(agg.mean == Catch::Approx(mean).margin(1e-12));
  CHECK(agg.std == Catch::Approx(std::sqrt(s / 4.0)).margin(1e-12));

  auto flat = cmkd::aggregate({0.7, 0.7, 0.7});
  CHECK(flat.std == 0.0);
}

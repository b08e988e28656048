#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cmkd/prototypes.hpp"
#include "helpers.hpp"

using cmkd::PrototypeBank;
using cmkd::Tensor;
using cmkd::UncertaintyForm;
using testutil::random_tensor;

TEST_CASE("prototype init with one sample per class keeps the normalized embeddings") {
  auto emb = Tensor::matrix({{3.0, 4.0}, {0.0, 2.0}});
  auto bank = cmkd::init_prototypes(emb, {0, 1}, 2);
  CHECK(bank.phi.at(0, 0) == Catch::Approx(0.6).margin(1e-12));
  CHECK(bank.phi.at(0, 1) == Catch::Approx(0.8).margin(1e-12));
  CHECK(bank.phi.at(1, 0) == Catch::Approx(0.0).margin(1e-12));
  CHECK(bank.phi.at(1, 1) == Catch::Approx(1.0).margin(1e-12));
  CHECK(bank.phi.requires_grad());
}

TEST_CASE("prototype init is idempotent for duplicated samples") {
  auto one = cmkd::init_prototypes(Tensor::matrix({{1.0, 2.0}, {2.0, -1.0}}), {0, 1}, 2);
  auto two = cmkd::init_prototypes(
      Tensor::matrix({{1.0, 2.0}, {1.0, 2.0}, {2.0, -1.0}}), {0, 0, 1}, 2);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(one.phi.at(0, j) == Catch::Approx(two.phi.at(0, j)).margin(1e-12));
  }
}

TEST_CASE("prototype rows match a group-by-mean oracle") {
  cmkd::Rng rng(51);
  const std::size_t n = 24, d = 5, c = 3;
  std::vector<double> emb(n * d);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % c);
    for (std::size_t j = 0; j < d; ++j) emb[i * d + j] = rng.uniform(-2, 2) + labels[i];
  }
  auto bank = cmkd::init_prototypes(Tensor::from_data({n, d}, emb), labels, c);

  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> mean(d, 0.0);
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<std::size_t>(labels[i]) != k) continue;
      ++cnt;
      for (std::size_t j = 0; j < d; ++j) mean[j] += emb[i * d + j];
    }
    double norm = 0;
    for (auto& v : mean) {
      v /= static_cast<double>(cnt);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(bank.phi.at(k, j) == Catch::Approx(mean[j] / norm).margin(1e-12));
    }
  }
}

TEST_CASE("prototype init rejects empty classes") {
  auto emb = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  CHECK_THROWS_AS(cmkd::init_prototypes(emb, {0, 0}, 2), cmkd::ConfigError);
}

TEST_CASE("continuous labels bin into equal-width prototype classes") {
  std::vector<double> y = {0.0, 0.3, 0.35, 0.99, 1.0, 0.7};
  auto bins = cmkd::bin_continuous_labels(y, 3);
  CHECK(bins == std::vector<int>{0, 0, 1, 2, 2, 2});
  auto flat = cmkd::bin_continuous_labels({2.0, 2.0, 2.0}, 3);
  CHECK(flat == std::vector<int>{0, 0, 0});
}

TEST_CASE("orthogonal embeddings give concentration 2 everywhere") {
  PrototypeBank bank{Tensor::matrix({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}, true), 2};
  auto e = Tensor::matrix({{0.0, 0.0, 3.0}});
  auto alpha = cmkd::dirichlet_alpha(e, bank, 1.0, 1.0);
  CHECK(alpha.at(0, 0) == Catch::Approx(2.0).margin(1e-12));
  CHECK(alpha.at(0, 1) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("aligned embedding concentrates to e+1") {
  PrototypeBank bank{Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}, true), 2};
  auto e = Tensor::matrix({{2.5, 0.0}});  // cos to prototype 0 is 1
  auto alpha = cmkd::dirichlet_alpha(e, bank, 1.0, 1.0);
  CHECK(alpha.at(0, 0) == Catch::Approx(std::exp(1.0) + 1.0).margin(1e-12));
  CHECK(alpha.at(0, 0) == Catch::Approx(3.7182818284590452).margin(1e-10));
}

TEST_CASE("concentrations match a scalar-loop oracle") {
  cmkd::Rng rng(52);
  auto phi = random_tensor(rng, {4, 6}, false);
  PrototypeBank bank{Tensor::from_data(phi.shape(), phi.to_vector(), true), 4};
  auto e = random_tensor(rng, {5, 6}, false);
  const double beta = 1.9, tau = 0.7;
  auto alpha = cmkd::dirichlet_alpha(e, bank, beta, tau);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double dot = 0, ne = 0, np = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        dot += e.at(i, j) * phi.at(k, j);
        ne += e.at(i, j) * e.at(i, j);
        np += phi.at(k, j) * phi.at(k, j);
      }
      const double q = beta * dot / (std::sqrt(ne) * std::sqrt(np));
      CHECK(alpha.at(i, k) == Catch::Approx(std::exp(q / tau) + 1.0).margin(1e-12));
    }
  }
}

TEST_CASE("extreme similarity temperatures hit the exponent clamp, not overflow") {
  PrototypeBank bank{Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}, true), 2};
  auto e = Tensor::matrix({{5.0, 0.0}});
  auto alpha = cmkd::dirichlet_alpha(e, bank, 1000.0, 0.001);
  CHECK(alpha.at(0, 0) == Catch::Approx(std::exp(60.0) + 1.0).epsilon(1e-12));
}

TEST_CASE("concentrations always exceed one") {
  cmkd::Rng rng(53);
  for (int it = 0; it < 200; ++it) {
    auto phi = random_tensor(rng, {3, 4}, false);
    PrototypeBank bank{Tensor::from_data(phi.shape(), phi.to_vector(), true), 3};
    auto e = random_tensor(rng, {4, 4}, false);
    auto alpha = cmkd::dirichlet_alpha(e, bank, rng.uniform(0.1, 8.0), rng.uniform(0.1, 4.0));
    for (double v : alpha.values()) CHECK(v > 1.0);
  }
}

TEST_CASE("uncertainty of flat evidence at c=2 is one half exactly") {
  auto alpha = Tensor::matrix({{2.0, 2.0}});
  auto u = cmkd::uncertainty(alpha, UncertaintyForm::as_printed);
  CHECK(u.at(0) == 0.5);
}

TEST_CASE("uncertainty approaches zero as concentrations approach one") {
  auto alpha = Tensor::matrix({{1.0 + 1e-9, 1.0 + 1e-9}});
  auto u = cmkd::uncertainty(alpha, UncertaintyForm::as_printed);
  CHECK(u.at(0) == Catch::Approx(0.0).margin(1e-8));
}

TEST_CASE("uncertainty stays in the unit interval") {
  cmkd::Rng rng(54);
  for (int it = 0; it < 1000; ++it) {
    std::vector<double> a(6);
    for (auto& v : a) v = 1.0 + rng.uniform(1e-6, 50.0);
    auto u = cmkd::uncertainty(Tensor::from_data({2, 3}, a), UncertaintyForm::as_printed);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(u.at(i) >= 0.0);
      CHECK(u.at(i) < 1.0);
    }
  }
  CHECK_THROWS_AS(cmkd::uncertainty(Tensor::matrix({{0.5, 2.0}}), UncertaintyForm::as_printed),
                  cmkd::NumericError);
}

TEST_CASE("raising any concentration raises printed uncertainty and lowers inverse") {
  cmkd::Rng rng(55);
  for (int it = 0; it < 50; ++it) {
    std::vector<double> a(4);
    for (auto& v : a) v = 1.0 + rng.uniform(0.1, 5.0);
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(0, 3));
    auto bumped = a;
    bumped[k] += 0.25;

    auto u0 = cmkd::uncertainty(Tensor::from_data({1, 4}, a), UncertaintyForm::as_printed);
    auto u1 = cmkd::uncertainty(Tensor::from_data({1, 4}, bumped), UncertaintyForm::as_printed);
    CHECK(u1.at(0) > u0.at(0));

    auto v0 = cmkd::uncertainty(Tensor::from_data({1, 4}, a), UncertaintyForm::inverse);
    auto v1 = cmkd::uncertainty(Tensor::from_data({1, 4}, bumped), UncertaintyForm::inverse);
    CHECK(v1.at(0) < v0.at(0));
  }
}

TEST_CASE("uncertainty is invariant under prototype permutation") {
  cmkd::Rng rng(56);
  auto alpha = random_tensor(rng, {3, 5}, false, 1.1, 9.0);
  std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
  std::vector<double> permuted(alpha.numel());
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) permuted[i * 5 + j] = alpha.at(i, perm[j]);
  auto u0 = cmkd::uncertainty(alpha, UncertaintyForm::as_printed);
  auto u1 = cmkd::uncertainty(Tensor::from_data({3, 5}, permuted), UncertaintyForm::as_printed);
  for (std::size_t i = 0; i < 3; ++i) CHECK(u0.at(i) == Catch::Approx(u1.at(i)).margin(1e-14));
}

TEST_CASE("class means score their own prototype highest on separable clusters") {
  cmkd::Rng rng(57);
  const std::size_t c = 4, d = 8, per = 12;
  std::vector<double> emb;
  std::vector<int> labels;
  std::vector<std::vector<double>> centers(c, std::vector<double>(d));
  for (auto& ctr : centers)
    for (auto& v : ctr) v = rng.uniform(-1, 1);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t s = 0; s < per; ++s) {
      labels.push_back(static_cast<int>(k));
      for (std::size_t j = 0; j < d; ++j) emb.push_back(centers[k][j] + rng.normal(0, 0.05));
    }
  }
  auto all = Tensor::from_data({c * per, d}, emb);
  auto bank = cmkd::init_prototypes(all, labels, c);

  // recompute class means as the probe embeddings
  std::vector<double> means(c * d, 0.0);
  for (std::size_t i = 0; i < c * per; ++i)
    for (std::size_t j = 0; j < d; ++j)
      means[static_cast<std::size_t>(labels[i]) * d + j] += emb[i * d + j] / per;
  auto alpha = cmkd::dirichlet_alpha(Tensor::from_data({c, d}, means), bank, 2.0, 1.0);
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (alpha.at(k, j) > alpha.at(k, best)) best = j;
    CHECK(best == k);
  }
}

TEST_CASE("uncertainty loss vanishes when targets align") {
  auto q = Tensor::matrix({{9.0, 0.4}, {0.4, -3.0}});
  auto u = Tensor::from_data({2}, {0.2, 0.2}, false);
  CHECK(cmkd::loss_unc(u, q, 0.5).value() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("uncertainty loss matches the hand-evaluated pair") {
  auto q = Tensor::matrix({{1.0, 0.2}, {0.6, -1.0}});
  auto u = Tensor::from_data({2}, {0.5, 0.5}, false);
  CHECK(cmkd::loss_unc(u, q, 1.0).value() == Catch::Approx(0.05).margin(1e-12));
}

TEST_CASE("uncertainty loss matches a double-loop oracle") {
  cmkd::Rng rng(58);
  const std::size_t n = 7;
  auto q = random_tensor(rng, {n, n}, false, -2.0, 2.0);
  std::vector<double> uv(n);
  for (auto& v : uv) v = rng.uniform(0, 1);
  const double delta = 0.8;
  auto loss = cmkd::loss_unc(Tensor::from_data({n}, uv), q, delta);

  double ref = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double h = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != j) h += q.at(j, k);
    h /= static_cast<double>(n - 1);
    ref += (uv[j] - delta * h) * (uv[j] - delta * h);
  }
  ref /= static_cast<double>(n);
  CHECK(loss.value() == Catch::Approx(ref).margin(1e-12));
}

TEST_CASE("uncertainty loss needs a batch of at least two") {
  auto q = Tensor::matrix({{1.0}});
  auto u = Tensor::from_data({1}, {0.5});
  CHECK_THROWS_AS(cmkd::loss_unc(u, q, 1.0), cmkd::ShapeError);
}

TEST_CASE("uncertainty pipeline is differentiable end to end") {
  cmkd::Rng rng(59);
  auto e0 = random_tensor(rng, {4, 5}, false);
  auto et = random_tensor(rng, {4, 5}, false);
  auto phi0 = random_tensor(rng, {3, 5}, false);
  auto out = testutil::finite_difference_check({e0, phi0}, [&](const std::vector<Tensor>& in) {
    PrototypeBank bank{in[1], 3};
    auto q_batch = cmkd::similarity_matrix(in[0], et, 1.4);
    auto alpha = cmkd::dirichlet_alpha(in[0], bank, 1.4, 0.9);
    auto u = cmkd::uncertainty(alpha, UncertaintyForm::as_printed);
    return cmkd::loss_unc(u, q_batch, 0.6);
  });
  INFO("max rel err " << out.max_rel_err);
  CHECK(out.pass);
}

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmkd/losses.hpp"
#include "cmkd/model.hpp"
#include "cmkd/prototypes.hpp"
#include "cmkd/random.hpp"
#include "cmkd/tensor.hpp"

// Verification gate for the loss kernels: every analytic gradient is checked
// against central finite differences on freshly drawn instances. The checks
// cover the five kernels plus the fully composed total through both
// extractors, the prototype bank and the cross-head injection path.
//
// Fixtures use tanh activations so the probed functions are smooth; the
// finite-difference step would otherwise trip over relu kinks.

namespace cmkd {

struct GradCheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_err = 0;
  bool pass = true;
};

namespace gradcheck_detail {

inline constexpr double kStep = 1e-5;
inline constexpr double kTol = 1e-4;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-3);
}

using Builder = std::function<Tensor(const std::vector<Tensor>&)>;

// one analytic backward vs elementwise central differences
inline double check_instance(const std::vector<Tensor>& leaves, const Builder& build) {
  std::vector<Tensor> grad_leaves;
  grad_leaves.reserve(leaves.size());
  for (const auto& l : leaves) {
    grad_leaves.push_back(Tensor::from_data(l.shape(), l.to_vector(), true));
  }
  backward(build(grad_leaves));

  double worst = 0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto grad = grad_leaves[li].grad();
    const auto base = leaves[li].to_vector();
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto eval_at = [&](double delta) {
        std::vector<Tensor> probe;
        probe.reserve(leaves.size());
        for (std::size_t lj = 0; lj < leaves.size(); ++lj) {
          auto vals = leaves[lj].to_vector();
          if (lj == li) vals[i] += delta;
          probe.push_back(Tensor::from_data(leaves[lj].shape(), std::move(vals), false));
        }
        NoGradGuard guard;
        return build(probe).value();
      };
      const double fd = (eval_at(kStep) - eval_at(-kStep)) / (2.0 * kStep);
      worst = std::max(worst, rel_err(grad[i], fd));
    }
  }
  return worst;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(d), false);
}

}  // namespace gradcheck_detail

/// Runs every kernel check on `instances` fresh random instances. `corrupt`
/// names a kernel whose analytic gradient is deliberately perturbed before
/// comparison; it exists so the checker itself can be shown to catch a wrong
/// gradient.
inline std::vector<GradCheckResult> run_gradcheck(std::size_t instances = 20,
                                                  std::uint64_t seed = 2024,
                                                  const std::string& corrupt = "") {
  namespace gd = gradcheck_detail;
  Rng root(seed);
  std::vector<GradCheckResult> results;

  auto run_kernel = [&](const std::string& name,
                        const std::function<double(Rng&)>& one_instance) {
    GradCheckResult r;
    r.name = name;
    r.instances = instances;
    Rng rng = root.fork(std::hash<std::string>{}(name));
    for (std::size_t i = 0; i < instances; ++i) {
      r.max_rel_err = std::max(r.max_rel_err, one_instance(rng));
    }
    if (corrupt == name) r.max_rel_err += 1e-2;
    r.pass = r.max_rel_err <= gd::kTol;
    results.push_back(r);
  };

  run_kernel("loss_sim", [&](Rng& rng) {
    const std::size_t n = 4 + static_cast<std::size_t>(rng.uniform_int(0, 2));
    auto e_s = gd::random_tensor(rng, {n, 5});
    auto e_t = gd::random_tensor(rng, {n, 5});
    const double beta = rng.uniform(0.5, 4.0);
    return gd::check_instance({e_s, e_t}, [&, beta](const std::vector<Tensor>& in) {
      return loss_sim(in[0], in[1], beta);
    });
  });

  run_kernel("loss_unc", [&](Rng& rng) {
    const std::size_t n = 4, c = 3, d = 5;
    auto e = gd::random_tensor(rng, {n, d});
    auto e_t = gd::random_tensor(rng, {n, d});
    auto phi = gd::random_tensor(rng, {c, d});
    const double beta = rng.uniform(0.5, 3.0);
    const double tau = rng.uniform(0.5, 2.0);
    const double delta = rng.uniform(0.1, 1.0);
    return gd::check_instance({e, e_t, phi}, [=](const std::vector<Tensor>& in) {
      PrototypeBank bank{in[2], c};
      Tensor q = similarity_matrix(in[0], in[1], beta);
      Tensor alpha = dirichlet_alpha(in[0], bank, beta, tau);
      Tensor u = uncertainty(alpha, UncertaintyForm::as_printed);
      return loss_unc(u, q, delta);
    });
  });

  run_kernel("loss_kd", [&](Rng& rng) {
    auto y_t = gd::random_tensor(rng, {4, 3}, -2.0, 2.0);
    auto y_ts = gd::random_tensor(rng, {4, 3}, -2.0, 2.0);
    const double dec = gd::check_instance({y_ts}, [&](const std::vector<Tensor>& in) {
      return loss_kd(y_t, in[0], Task::dec);
    });
    auto s_t = gd::random_tensor(rng, {5, 1});
    auto s_ts = gd::random_tensor(rng, {5, 1});
    const double cer = gd::check_instance({s_ts}, [&](const std::vector<Tensor>& in) {
      return loss_kd(s_t, in[0], Task::cer);
    });
    return std::max(dec, cer);
  });

  run_kernel("loss_ce", [&](Rng& rng) {
    const std::size_t n = 5, c = 4;
    auto logits = gd::random_tensor(rng, {n, c}, -2.0, 2.0);
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
      labels.push_back(static_cast<int>(rng.uniform_int(0, static_cast<int>(c) - 1)));
    }
    return gd::check_instance({logits}, [&](const std::vector<Tensor>& in) {
      return loss_ce(in[0], labels);
    });
  });

  run_kernel("loss_ccc", [&](Rng& rng) {
    auto pred = gd::random_tensor(rng, {6, 1});
    auto target = gd::random_tensor(rng, {6, 1});
    return gd::check_instance({pred, target}, [](const std::vector<Tensor>& in) {
      return loss_ccc(in[0], in[1]);
    });
  });

  // the fully composed objective: gradients flow through the student
  // extractor, the embedding projection, the prototype bank, both inputs
  // (hence both extractor graphs) and the teacher-head injection
  run_kernel("total", [&](Rng& rng) {
    const std::size_t batch = 4, in_s = 3, in_t = 4, feat = 4, emb = 3, c = 3;
    ExtractorConfig scfg;
    scfg.input_dim = in_s;
    scfg.hidden_dims = {4};
    scfg.feature_dim = feat;
    scfg.embed_dim = emb;
    scfg.activation = Activation::tanh;
    ExtractorConfig tcfg = scfg;
    tcfg.input_dim = in_t;
    HeadConfig head;
    head.layer_dims = {feat, c};
    head.injection_layer = 1;

    Rng teacher_rng(static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 30)));
    ModelParams teacher = init_model(tcfg, head, teacher_rng);
    teacher.freeze();

    std::vector<int> labels;
    for (std::size_t i = 0; i < batch; ++i) {
      labels.push_back(static_cast<int>(rng.uniform_int(0, static_cast<int>(c) - 1)));
    }
    const double beta = 1.5, tau = 1.0, delta = 0.4;
    const LossWeights w{1.0, 1.0, 1.0, 1.0};

    std::vector<Tensor> leaves = {
        gd::random_tensor(rng, {in_s, 4}),  gd::random_tensor(rng, {4}),
        gd::random_tensor(rng, {4, feat}),  gd::random_tensor(rng, {feat}),
        gd::random_tensor(rng, {feat, emb}), gd::random_tensor(rng, {emb}),
        gd::random_tensor(rng, {feat, feat}), gd::random_tensor(rng, {feat}),
        gd::random_tensor(rng, {feat, c}),  gd::random_tensor(rng, {c}),
        gd::random_tensor(rng, {c, emb}),   // prototype bank
        gd::random_tensor(rng, {batch, in_s}),
        gd::random_tensor(rng, {batch, in_t}),
    };
    return gd::check_instance(leaves, [&, beta, tau, delta, w](const std::vector<Tensor>& in) {
      ModelParams student;
      student.extractor_cfg = scfg;
      student.head_cfg = head;
      student.extractor = {{in[0], in[1]}, {in[2], in[3]}};
      student.projection = {in[4], in[5]};
      student.head = {{in[6], in[7]}, {in[8], in[9]}};
      PrototypeBank bank{in[10], c};
      const Tensor& x_s = in[11];
      const Tensor& x_t = in[12];

      Features fs = extract(student, x_s);
      Features ft = extract(teacher, x_t);
      LossParts parts;
      Tensor q = similarity_matrix(fs.e, ft.e, beta);
      parts.sim = loss_sim_from_q(q);
      Tensor alpha = dirichlet_alpha(fs.e, bank, beta, tau);
      parts.unc = loss_unc(uncertainty(alpha, UncertaintyForm::as_printed), q, delta);
      Tensor y_t = head_forward(teacher, ft.f);
      Tensor y_ts = head_forward_from_layer(teacher, fs.f, head.injection_layer);
      parts.kd = loss_kd(y_t, y_ts, Task::dec);
      parts.task = loss_ce(head_forward(student, fs.f), labels);
      return loss_total(parts, w);
    });
  });

  return results;
}

}  // namespace cmkd

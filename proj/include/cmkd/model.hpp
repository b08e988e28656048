#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cmkd/error.hpp"
#include "cmkd/instrument.hpp"
#include "cmkd/random.hpp"
#include "cmkd/tensor.hpp"

// Feature extractors and task heads. Both are plain fully connected stacks;
// the extractor returns the feature f plus a linear projection e into the
// shared embedding space, and the teacher head can be entered part-way
// through for cross-head distillation.

namespace cmkd {

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

struct ExtractorConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t feature_dim = 0;
  std::size_t embed_dim = 0;
  Activation activation = Activation::relu;

  void validate() const {
    if (input_dim < 1 || feature_dim < 1 || embed_dim < 1) {
      throw ConfigError("extractor dims must be >= 1");
    }
    for (std::size_t h : hidden_dims) {
      if (h < 1) throw ConfigError("extractor hidden dims must be >= 1");
    }
  }
};

struct HeadConfig {
  // Widths of the fully connected stack, ending in the output width
  // (class count for classification, 1 for regression).
  std::vector<std::size_t> layer_dims;
  // Entry layer for cross-head injection; the student feature is fed into
  // layers [injection_layer, end).
  std::size_t injection_layer = 1;

  std::size_t output_dim() const { return layer_dims.empty() ? 0 : layer_dims.back(); }

  void validate() const {
    if (layer_dims.size() < 2) throw ConfigError("head needs at least two layers");
    for (std::size_t d : layer_dims) {
      if (d < 1) throw ConfigError("head layer dims must be >= 1");
    }
    if (injection_layer < 1 || injection_layer >= layer_dims.size()) {
      throw ConfigError("injection layer must satisfy 1 <= l < " +
                        std::to_string(layer_dims.size()));
    }
  }

  // Width expected at the entry of layer l.
  std::size_t input_width_at(std::size_t l, std::size_t head_input_dim) const {
    return l == 0 ? head_input_dim : layer_dims[l - 1];
  }
};

struct LinearLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct ModelParams {
  ExtractorConfig extractor_cfg;
  HeadConfig head_cfg;
  std::vector<LinearLayer> extractor;  // input -> hidden... -> feature
  LinearLayer projection;              // feature -> embed
  std::vector<LinearLayer> head;       // feature -> layer_dims...
  bool frozen = false;

  /// Parameters eligible for gradient updates, in a fixed order.
  std::vector<Tensor*> trainable() {
    if (frozen) return {};
    std::vector<Tensor*> out;
    for (auto& l : extractor) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    out.push_back(&projection.weight);
    out.push_back(&projection.bias);
    for (auto& l : head) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::vector<const Tensor*> all_params() const {
    std::vector<const Tensor*> out;
    for (const auto& l : extractor) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    out.push_back(&projection.weight);
    out.push_back(&projection.bias);
    for (const auto& l : head) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  /// Rebinds every parameter with requires_grad off and marks the model frozen.
  void freeze() {
    auto off = [](Tensor& t) { t = Tensor::from_data(t.shape(), t.to_vector(), false); };
    for (auto& l : extractor) {
      off(l.weight);
      off(l.bias);
    }
    off(projection.weight);
    off(projection.bias);
    for (auto& l : head) {
      off(l.weight);
      off(l.bias);
    }
    frozen = true;
  }

  ModelParams clone() const {
    ModelParams out;
    out.extractor_cfg = extractor_cfg;
    out.head_cfg = head_cfg;
    out.frozen = frozen;
    auto copy = [&](const LinearLayer& l) {
      return LinearLayer{Tensor::from_data(l.weight.shape(), l.weight.to_vector(), !frozen),
                         Tensor::from_data(l.bias.shape(), l.bias.to_vector(), !frozen)};
    };
    for (const auto& l : extractor) out.extractor.push_back(copy(l));
    out.projection = copy(projection);
    for (const auto& l : head) out.head.push_back(copy(l));
    return out;
  }
};

namespace detail {

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero bias
inline LinearLayer init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return LinearLayer{Tensor::from_data({in, out}, std::move(w), true),
                     Tensor::zeros({out}, true)};
}

inline Tensor apply_activation(const Tensor& x, Activation a) {
  return a == Activation::relu ? relu(x) : tanh(x);
}

}  // namespace detail

/// Builds a model with seeded init. Draw order is fixed: extractor layers,
/// projection, head layers.
inline ModelParams init_model(const ExtractorConfig& ecfg, const HeadConfig& hcfg, Rng& rng) {
  ecfg.validate();
  hcfg.validate();
  ModelParams m;
  m.extractor_cfg = ecfg;
  m.head_cfg = hcfg;
  std::size_t prev = ecfg.input_dim;
  for (std::size_t h : ecfg.hidden_dims) {
    m.extractor.push_back(detail::init_linear(prev, h, rng));
    prev = h;
  }
  m.extractor.push_back(detail::init_linear(prev, ecfg.feature_dim, rng));
  m.projection = detail::init_linear(ecfg.feature_dim, ecfg.embed_dim, rng);
  prev = ecfg.feature_dim;
  for (std::size_t d : hcfg.layer_dims) {
    m.head.push_back(detail::init_linear(prev, d, rng));
    prev = d;
  }
  return m;
}

struct Features {
  Tensor f;  // [batch x feature_dim]
  Tensor e;  // [batch x embed_dim]
};

/// Feature f (activated output of the extractor stack) and embedding e
/// (linear projection of f, no activation).
inline Features extract(const ModelParams& m, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != m.extractor_cfg.input_dim) {
    throw ShapeError("extract: input " + shape_str(x.shape()) + " does not match input_dim " +
                     std::to_string(m.extractor_cfg.input_dim));
  }
  Tensor h = x;
  for (const auto& layer : m.extractor) {
    h = detail::apply_activation(add_rowvec(matmul(h, layer.weight), layer.bias),
                                 m.extractor_cfg.activation);
  }
  Tensor e = add_rowvec(matmul(h, m.projection.weight), m.projection.bias);
  return Features{h, e};
}

/// Full head pass; emits raw logits (classification) or one scalar per row
/// (regression). No softmax here.
inline Tensor head_forward(const ModelParams& m, const Tensor& f) {
  if (f.rank() != 2 || f.cols() != m.extractor_cfg.feature_dim) {
    throw ShapeError("head_forward: feature " + shape_str(f.shape()) +
                     " does not match feature_dim " +
                     std::to_string(m.extractor_cfg.feature_dim));
  }
  Tensor h = f;
  for (std::size_t i = 0; i < m.head.size(); ++i) {
    h = add_rowvec(matmul(h, m.head[i].weight), m.head[i].bias);
    if (i + 1 < m.head.size()) h = detail::apply_activation(h, m.extractor_cfg.activation);
  }
  return h;
}

/// Runs a foreign feature through the teacher head from layer l onward.
/// Gradients flow into the feature, never into the frozen teacher.
inline Tensor head_forward_from_layer(const ModelParams& teacher, const Tensor& f_s,
                                      std::size_t l) {
  if (!teacher.frozen) {
    throw ConfigError("head_forward_from_layer: teacher must be frozen");
  }
  if (l < 1 || l >= teacher.head.size()) {
    throw ConfigError("head_forward_from_layer: layer index " + std::to_string(l) +
                      " out of range [1, " + std::to_string(teacher.head.size()) + ")");
  }
  const std::size_t want =
      teacher.head_cfg.input_width_at(l, teacher.extractor_cfg.feature_dim);
  if (f_s.rank() != 2 || f_s.cols() != want) {
    throw ShapeError("head_forward_from_layer: feature width " +
                     std::to_string(f_s.rank() == 2 ? f_s.cols() : 0) +
                     " violates the injection contract (expected " + std::to_string(want) + ")");
  }
  instrument::injection_forwards.fetch_add(1, std::memory_order_relaxed);
  Tensor h = f_s;
  for (std::size_t i = l; i < teacher.head.size(); ++i) {
    h = add_rowvec(matmul(h, teacher.head[i].weight), teacher.head[i].bias);
    if (i + 1 < teacher.head.size()) h = detail::apply_activation(h, teacher.extractor_cfg.activation);
  }
  return h;
}

/// Construction-time check that the student feature can enter the teacher
/// head at its configured injection layer.
inline void validate_injection_contract(const ExtractorConfig& student,
                                        const ModelParams& teacher) {
  const std::size_t l = teacher.head_cfg.injection_layer;
  const std::size_t want =
      teacher.head_cfg.input_width_at(l, teacher.extractor_cfg.feature_dim);
  if (student.feature_dim != want) {
    throw ConfigError("injection contract: student feature_dim " +
                      std::to_string(student.feature_dim) + " != teacher head input width " +
                      std::to_string(want) + " at layer " + std::to_string(l));
  }
}

}  // namespace cmkd

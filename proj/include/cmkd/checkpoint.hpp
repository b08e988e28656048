#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cmkd/data.hpp"
#include "cmkd/model.hpp"
#include "cmkd/prototypes.hpp"
#include "cmkd/task.hpp"

// Model checkpoints: a line-oriented text container of named parameter
// arrays plus the config records, versioned with a magic string. Values are
// written with 17 significant digits, so save -> load -> save is
// byte-identical.

namespace cmkd {

inline constexpr const char* kCheckpointMagic = "cmkd-checkpoint v1";

struct Checkpoint {
  ModelParams params;
  Task task = Task::dec;
  std::string role;  // "teacher" or "student"
  std::optional<PrototypeBank> bank;
};

namespace detail {

inline void write_dims(std::string& out, const std::vector<std::size_t>& dims) {
  for (std::size_t i = 0; i < dims.size(); ++i) {
    out += (i ? "," : "");
    out += std::to_string(dims[i]);
  }
  if (dims.empty()) out += "-";
}

inline std::vector<std::size_t> parse_dims(const std::string& s) {
  if (s == "-") return {};
  std::vector<std::size_t> out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',') {
      if (cur.empty()) throw IoError("checkpoint: malformed dim list '" + s + "'");
      out.push_back(static_cast<std::size_t>(std::stoull(cur)));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return out;
}

inline void write_tensor(std::string& out, const std::string& name, const Tensor& t) {
  out += "tensor " + name + " " + std::to_string(t.rank());
  for (std::size_t i = 0; i < t.rank(); ++i) out += " " + std::to_string(t.dim(i));
  out += "\n";
  char buf[40];
  auto vals = t.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", vals[i]);
    out += buf;
    out += (i + 1 == vals.size()) ? "\n" : " ";
  }
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const ModelParams& m = ckpt.params;
  std::string out = std::string(kCheckpointMagic) + "\n";
  out += "role " + ckpt.role + "\n";
  out += "task " + to_string(ckpt.task) + "\n";
  out += "frozen " + std::string(m.frozen ? "1" : "0") + "\n";
  out += "activation " + to_string(m.extractor_cfg.activation) + "\n";
  out += "extractor.input_dim " + std::to_string(m.extractor_cfg.input_dim) + "\n";
  out += "extractor.hidden ";
  detail::write_dims(out, m.extractor_cfg.hidden_dims);
  out += "\nextractor.feature_dim " + std::to_string(m.extractor_cfg.feature_dim) + "\n";
  out += "extractor.embed_dim " + std::to_string(m.extractor_cfg.embed_dim) + "\n";
  out += "head.layers ";
  detail::write_dims(out, m.head_cfg.layer_dims);
  out += "\nhead.injection " + std::to_string(m.head_cfg.injection_layer) + "\n";
  for (std::size_t i = 0; i < m.extractor.size(); ++i) {
    detail::write_tensor(out, "extractor." + std::to_string(i) + ".weight", m.extractor[i].weight);
    detail::write_tensor(out, "extractor." + std::to_string(i) + ".bias", m.extractor[i].bias);
  }
  detail::write_tensor(out, "projection.weight", m.projection.weight);
  detail::write_tensor(out, "projection.bias", m.projection.bias);
  for (std::size_t i = 0; i < m.head.size(); ++i) {
    detail::write_tensor(out, "head." + std::to_string(i) + ".weight", m.head[i].weight);
    detail::write_tensor(out, "head." + std::to_string(i) + ".bias", m.head[i].bias);
  }
  if (ckpt.bank) {
    detail::write_tensor(out, "prototypes", ckpt.bank->phi);
  }
  out += "end\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << out;
  if (!f) throw IoError("write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line != kCheckpointMagic) {
    throw IoError("checkpoint '" + path + "': bad magic");
  }

  Checkpoint ckpt;
  ModelParams& m = ckpt.params;
  bool frozen = false;
  std::map<std::string, Tensor> tensors;
  std::vector<std::string> order;

  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line == "end") break;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "role") {
      is >> ckpt.role;
    } else if (key == "task") {
      std::string t;
      is >> t;
      ckpt.task = task_from_string(t);
    } else if (key == "frozen") {
      int v = 0;
      is >> v;
      frozen = v != 0;
    } else if (key == "activation") {
      std::string a;
      is >> a;
      m.extractor_cfg.activation = activation_from_string(a);
    } else if (key == "extractor.input_dim") {
      is >> m.extractor_cfg.input_dim;
    } else if (key == "extractor.hidden") {
      std::string dims;
      is >> dims;
      m.extractor_cfg.hidden_dims = detail::parse_dims(dims);
    } else if (key == "extractor.feature_dim") {
      is >> m.extractor_cfg.feature_dim;
    } else if (key == "extractor.embed_dim") {
      is >> m.extractor_cfg.embed_dim;
    } else if (key == "head.layers") {
      std::string dims;
      is >> dims;
      m.head_cfg.layer_dims = detail::parse_dims(dims);
    } else if (key == "head.injection") {
      is >> m.head_cfg.injection_layer;
    } else if (key == "tensor") {
      std::string name;
      std::size_t rank = 0;
      is >> name >> rank;
      Shape shape(rank);
      for (auto& d : shape) is >> d;
      if (!is) throw IoError("checkpoint: malformed tensor header '" + line + "'");
      std::vector<double> vals(shape_numel(shape));
      for (auto& v : vals) {
        if (!(f >> v)) throw IoError("checkpoint: truncated values for tensor " + name);
      }
      std::getline(f, line);  // consume trailing newline
      tensors.emplace(name, Tensor::from_data(shape, std::move(vals), true));
      order.push_back(name);
    } else {
      throw IoError("checkpoint: unknown key '" + key + "'");
    }
  }

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint: missing tensor " + name);
    return it->second;
  };

  const std::size_t n_extractor = m.extractor_cfg.hidden_dims.size() + 1;
  for (std::size_t i = 0; i < n_extractor; ++i) {
    m.extractor.push_back(LinearLayer{take("extractor." + std::to_string(i) + ".weight"),
                                      take("extractor." + std::to_string(i) + ".bias")});
  }
  m.projection = LinearLayer{take("projection.weight"), take("projection.bias")};
  for (std::size_t i = 0; i < m.head_cfg.layer_dims.size(); ++i) {
    m.head.push_back(LinearLayer{take("head." + std::to_string(i) + ".weight"),
                                 take("head." + std::to_string(i) + ".bias")});
  }
  if (tensors.count("prototypes")) {
    Tensor phi = take("prototypes");
    ckpt.bank = PrototypeBank{phi, phi.rows()};
  }
  m.extractor_cfg.validate();
  m.head_cfg.validate();
  if (frozen) ckpt.params.freeze();
  return ckpt;
}

}  // namespace cmkd

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diflab/common.hpp"
#include "diflab/dif.hpp"
#include "diflab/params.hpp"

// Model files: {"version": "dif-lab/model/v1", "dim", "layers": [...],
// "params": <store blob>}. The architecture section is enough to re-register
// every parameter slice in a fixed order, after which the blob restores the
// values by name.

namespace diflab {

inline constexpr const char* kModelFormatVersion = "dif-lab/model/v1";

struct ModelBundle {
  bool is_conditional = false;
  DifStack stack;
  ConditionalDifLayer conditional;
  ParameterStore store;
  nlohmann::json arch;  // {"dim":..., "layers":[...]}
};

namespace detail {

inline std::vector<Index> hidden_sizes(const nlohmann::json& j,
                                       const char* key,
                                       std::vector<Index> fallback) {
  if (!j.contains(key)) return fallback;
  std::vector<Index> out;
  for (const auto& v : j[key]) {
    Index h = v.get<Index>();
    check(h >= 1, std::string("model: hidden width must be >= 1 in ") + key);
    out.push_back(h);
  }
  check(!out.empty(), std::string("model: empty hidden list in ") + key);
  return out;
}

}  // namespace detail

// Registers all parameters for the architecture (values zeroed); callers
// initialize or load afterwards.
inline ModelBundle build_model(const nlohmann::json& arch) {
  check(arch.is_object() && arch.contains("dim") && arch.contains("layers"),
        "model: architecture needs 'dim' and 'layers'");
  ModelBundle b;
  b.arch = {{"dim", arch["dim"]}, {"layers", arch["layers"]}};
  Index dim = arch["dim"].get<Index>();
  check(dim >= 1, "model: dim must be >= 1");
  const auto& layers = arch["layers"];
  check(layers.is_array() && !layers.empty(),
        "model: 'layers' must be a non-empty array");
  b.stack.dim = dim;

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& lj = layers[i];
    std::string where = "model: layers[" + std::to_string(i) + "]";
    check(lj.is_object() && lj.contains("kind"), where + " needs 'kind'");
    std::string kind = lj["kind"].get<std::string>();
    std::string prefix = "layer" + std::to_string(i);

    if (kind == "dif") {
      Index k = lj.value("K", Index{1});
      check(k >= 1, where + ": K must be >= 1");
      auto wj = lj.value("weightnet", nlohmann::json::object());
      auto hidden = detail::hidden_sizes(wj, "hidden", {128, 128, 128});
      Activation act =
          activation_from_string(wj.value("activation", std::string("tanh")));
      b.stack.layers.push_back(
          make_dif_layer(b.store, prefix, dim, k, hidden, act));
    } else if (kind == "coupling") {
      int parity = lj.value("parity", static_cast<int>(i % 2));
      auto hidden = detail::hidden_sizes(lj, "hidden", {32, 32});
      check(dim >= 2, where + ": coupling layers need dim >= 2");
      b.stack.layers.push_back(
          make_coupling_layer(b.store, prefix, dim, parity, hidden));
    } else if (kind == "conditional_dif") {
      check(layers.size() == 1,
            where + ": conditional models have exactly one layer");
      Index k = lj.value("K", Index{1});
      Index cov_dim = lj.value("cov_dim", Index{0});
      check(k >= 1, where + ": K must be >= 1");
      check(cov_dim >= 1, where + ": conditional_dif needs cov_dim >= 1");
      auto wj = lj.value("weightnet", nlohmann::json::object());
      auto whidden = detail::hidden_sizes(wj, "hidden", {128, 128, 128});
      Activation act =
          activation_from_string(wj.value("activation", std::string("tanh")));
      auto chidden = detail::hidden_sizes(lj, "cov_hidden", {64});
      b.is_conditional = true;
      b.conditional = ConditionalDifLayer(b.store, prefix, dim, cov_dim, k,
                                          chidden, whidden, act);
    } else {
      throw std::invalid_argument(where + ": unknown kind '" + kind + "'");
    }
  }
  return b;
}

inline nlohmann::json model_to_json(const ModelBundle& b) {
  nlohmann::json j;
  j["version"] = kModelFormatVersion;
  j["dim"] = b.arch["dim"];
  j["layers"] = b.arch["layers"];
  j["params"] = b.store.to_json();
  return j;
}

inline ModelBundle load_model_json(const nlohmann::json& j) {
  check(j.is_object(), "model: expected a JSON object");
  check(j.value("version", "") == kModelFormatVersion,
        "model: unsupported version");
  check(j.contains("params"), "model: missing 'params'");
  ModelBundle b = build_model(j);
  b.store.load_json(j["params"]);
  return b;
}

inline void save_model(const std::string& path, const ModelBundle& b) {
  std::ofstream out(path);
  check(out.good(), "cannot write model file: " + path);
  out << model_to_json(b).dump(2) << "\n";
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("corrupt model file " + path + ": " +
                                e.what());
  }
  return load_model_json(j);
}

}  // namespace diflab

#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "diflab/common.hpp"

namespace diflab {

inline constexpr const char* kParamsFormatVersion = "dif-lab/params/v1";

// Handle to one named slice of the flat parameter vector.
struct ParamSlice {
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

// The single home of all trainable parameters: a flat real64 vector plus a
// registry of named, shaped, non-overlapping slices that covers it exactly.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    ParamSlice slice;
  };

  ParamSlice add(const std::string& name, Index rows, Index cols) {
    check(rows > 0 && cols > 0, "parameter shape must be positive: " + name);
    check(index_.find(name) == index_.end(),
          "parameter name already registered: " + name);
    ParamSlice s{size(), rows, cols};
    index_[name] = registry_.size();
    registry_.push_back({name, s});
    values_.conservativeResize(s.offset + s.size());
    values_.segment(s.offset, s.size()).setZero();
    return s;
  }

  Index size() const { return values_.size(); }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  bool has(const std::string& name) const {
    return index_.find(name) != index_.end();
  }

  ParamSlice slice(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "unregistered parameter name: " + name);
    return registry_[it->second].slice;
  }

  const std::vector<Entry>& registry() const { return registry_; }

  // Column-major matrix view of a slice.
  Eigen::Map<Matrix> view(const ParamSlice& s) {
    return Eigen::Map<Matrix>(values_.data() + s.offset, s.rows, s.cols);
  }
  Eigen::Map<const Matrix> view(const ParamSlice& s) const {
    return Eigen::Map<const Matrix>(values_.data() + s.offset, s.rows, s.cols);
  }

  // JSON blob: {"version": ..., name: {"shape": [r, c], "values": row-major}}.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = kParamsFormatVersion;
    for (const auto& e : registry_) {
      auto m = view(e.slice);
      std::vector<double> vals;
      vals.reserve(e.slice.size());
      for (Index r = 0; r < e.slice.rows; ++r)
        for (Index c = 0; c < e.slice.cols; ++c) vals.push_back(m(r, c));
      j[e.name] = {{"shape", {e.slice.rows, e.slice.cols}}, {"values", vals}};
    }
    return j;
  }

  // Loads values into already-registered slices; names and shapes must match.
  void load_json(const nlohmann::json& j) {
    check(j.is_object(), "params blob: expected JSON object");
    check(j.value("version", "") == kParamsFormatVersion,
          "params blob: unsupported version");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "version") continue;
      ParamSlice s = slice(it.key());
      const auto& entry = it.value();
      check(entry.contains("shape") && entry.contains("values"),
            "params blob: malformed entry " + it.key());
      const auto& shape = entry["shape"];
      check(shape.size() == 2 && shape[0].get<Index>() == s.rows &&
                shape[1].get<Index>() == s.cols,
            "params blob: shape mismatch for " + it.key());
      const auto& vals = entry["values"];
      check(static_cast<Index>(vals.size()) == s.size(),
            "params blob: value count mismatch for " + it.key());
      auto m = view(s);
      Index i = 0;
      for (Index r = 0; r < s.rows; ++r)
        for (Index c = 0; c < s.cols; ++c) m(r, c) = vals[i++].get<double>();
    }
  }

 private:
  Vector values_;
  std::vector<Entry> registry_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace diflab

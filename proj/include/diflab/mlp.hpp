#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "diflab/ad.hpp"
#include "diflab/common.hpp"
#include "diflab/params.hpp"
#include "diflab/random.hpp"

namespace diflab {

enum class Activation { kTanh, kSigmoid };

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation: " + s);
}

inline std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "sigmoid";
}

// Fully connected network; hidden layers use the configured nonlinearity and
// the output layer is linear. Parameters live in a ParameterStore under
// "<prefix>.W<l>" / "<prefix>.b<l>", so an Mlp object is a cheap handle that
// can be evaluated against any store sharing the registration layout.
class Mlp {
 public:
  Mlp() = default;

  Mlp(ParameterStore& store, const std::string& prefix,
      std::vector<Index> sizes, Activation act = Activation::kTanh)
      : sizes_(std::move(sizes)), act_(act) {
    check(sizes_.size() >= 2, "mlp needs input and output sizes: " + prefix);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weights_.push_back(store.add(prefix + ".W" + std::to_string(l),
                                   sizes_[l + 1], sizes_[l]));
      biases_.push_back(
          store.add(prefix + ".b" + std::to_string(l), sizes_[l + 1], 1));
    }
  }

  // Uniform [-a, a] with a = sqrt(6/(n_in+n_out)) on hidden layers, zero
  // biases. With zero_last the output layer starts all-zero so the network
  // is initially constant.
  void init(ParameterStore& store, RngStream& rng,
            bool zero_last = false) const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      auto w = store.view(weights_[l]);
      store.view(biases_[l]).setZero();
      if (zero_last && l + 1 == weights_.size()) {
        w.setZero();
        continue;
      }
      double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      for (Index j = 0; j < w.cols(); ++j)
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-a, a);
    }
  }

  template <class E>
  typename E::Value operator()(E& eng, typename E::Value x) const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      x = eng.add_col(eng.matmul(eng.param(weights_[l]), x),
                      eng.param(biases_[l]));
      if (l + 1 < weights_.size())
        x = act_ == Activation::kTanh ? eng.tanh(x) : eng.sigmoid(x);
    }
    return x;
  }

  Index in_dim() const { return sizes_.front(); }
  Index out_dim() const { return sizes_.back(); }
  const std::vector<Index>& sizes() const { return sizes_; }
  Activation activation() const { return act_; }
  const ParamSlice& weight(std::size_t l) const { return weights_[l]; }
  const ParamSlice& bias(std::size_t l) const { return biases_[l]; }
  std::size_t num_layers() const { return weights_.size(); }

 private:
  std::vector<Index> sizes_;
  Activation act_ = Activation::kTanh;
  std::vector<ParamSlice> weights_;
  std::vector<ParamSlice> biases_;
};

// Layer size list [in, hidden..., out].
inline std::vector<Index> mlp_sizes(Index in, const std::vector<Index>& hidden,
                                    Index out) {
  std::vector<Index> s;
  s.push_back(in);
  for (Index h : hidden) s.push_back(h);
  s.push_back(out);
  return s;
}

}  // namespace diflab

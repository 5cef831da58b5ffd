#pragma once

#include <string>
#include <variant>
#include <vector>

#include "diflab/ad.hpp"
#include "diflab/common.hpp"
#include "diflab/maps.hpp"
#include "diflab/mlp.hpp"
#include "diflab/params.hpp"

// Simplex-valued weight functions w_1(z),...,w_K(z), evaluated in log space
// so the K entries always exponentiate to a normalized vector.

namespace diflab {

// K-label classifier: MLP logits followed by log-softmax.
class WeightNetwork {
 public:
  WeightNetwork() = default;
  WeightNetwork(ParameterStore& store, const std::string& prefix, Index in_dim,
                Index k, const std::vector<Index>& hidden = {128, 128, 128},
                Activation act = Activation::kTanh)
      : k_(k), net_(store, prefix, mlp_sizes(in_dim, hidden, k), act) {}

  void init(ParameterStore& store, RngStream& rng) const {
    net_.init(store, rng, /*zero_last=*/true);  // starts uniform over K
  }

  // Zero final weights and b_L = log(alpha): w(z) = alpha for every z, the
  // constant-weight (mixture-model) regime.
  void init_for_mixture(ParameterStore& store, const Vector& alpha) const {
    check(alpha.size() == k_, "mixture weight length must equal K");
    check((alpha.array() > 0.0).all(), "mixture weights must be positive");
    std::size_t last = net_.num_layers() - 1;
    store.view(net_.weight(last)).setZero();
    store.view(net_.bias(last)) = alpha.array().log().matrix();
  }

  template <class E>
  typename E::Value log_weights(E& eng, typename E::Value z) const {
    auto logits = net_(eng, z);
    return eng.sub_row(logits, eng.logsumexp_colwise(logits));
  }

  Index k() const { return k_; }
  const Mlp& net() const { return net_; }

 private:
  Index k_ = 0;
  Mlp net_;
};

// Degenerate K=1 simplex: log w_1(z) = 0 everywhere. Lets plain NF layers
// share the DIF code path with no parameters and no wasted evaluation.
class UnitWeight {
 public:
  template <class E>
  typename E::Value log_weights(E& eng, typename E::Value z) const {
    return eng.constant(Matrix::Zero(1, eng.cols(z)));
  }
  Index k() const { return 1; }
};

class CascadeWeight;
using WeightFnAny = std::variant<WeightNetwork, UnitWeight, CascadeWeight>;

template <class E>
typename E::Value weight_log(const WeightFnAny& w, E& eng,
                             typename E::Value z);
Index weight_count(const WeightFnAny& w);

// Weights of a two-layer cascade expanded to a single layer with K0*K1
// components: w_{k0,k1}(z) = w0_{k0}(inverse(T1_{k1})(z)) * w1_{k1}(z),
// component (k0,k1) stored at row k1*K0 + k0 to match the expanded map order.
class CascadeWeight {
 public:
  CascadeWeight() = default;
  CascadeWeight(std::vector<WeightFnAny> inner_outer,
                std::vector<MapAny> outer_maps)
      : w01_(std::move(inner_outer)), outer_maps_(std::move(outer_maps)) {
    check(w01_.size() == 2, "cascade weight needs inner and outer weights");
  }

  template <class E>
  typename E::Value log_weights(E& eng, typename E::Value z) const {
    auto lw1 = weight_log(w01_[1], eng, z);  // K1 x N
    std::vector<typename E::Value> blocks;
    for (std::size_t k1 = 0; k1 < outer_maps_.size(); ++k1) {
      auto z0 = map_inverse(outer_maps_[k1], eng, z);
      auto lw0 = weight_log(w01_[0], eng, z0);  // K0 x N
      blocks.push_back(eng.add_row(
          lw0, eng.select_rows(lw1, {static_cast<int>(k1)})));
    }
    return eng.vstack(blocks);
  }

  Index k() const {
    return weight_count(w01_[0]) * static_cast<Index>(outer_maps_.size());
  }

 private:
  std::vector<WeightFnAny> w01_;  // [0]: inner (data side), [1]: outer
  std::vector<MapAny> outer_maps_;
};

template <class E>
typename E::Value weight_log(const WeightFnAny& w, E& eng,
                             typename E::Value z) {
  return std::visit([&](const auto& fn) { return fn.log_weights(eng, z); }, w);
}

inline Index weight_count(const WeightFnAny& w) {
  return std::visit([](const auto& fn) { return fn.k(); }, w);
}

}  // namespace diflab

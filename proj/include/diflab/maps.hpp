#pragma once

#include <string>
#include <variant>
#include <vector>

#include "diflab/ad.hpp"
#include "diflab/common.hpp"
#include "diflab/mlp.hpp"
#include "diflab/params.hpp"

// C1-diffeomorphisms with batched forward / inverse / log|det J| evaluation.
// The forward direction runs data-side to prior-side; log_det_forward is
// log|det J_T(x)| of that direction (the inverse Jacobian is its negation at
// the image point). All evaluation is engine-generic: pass ad::Direct for
// plain values or ad::Tape to record gradients.

namespace diflab {

// z = s^{-1} (x - mu), x = mu + s z, with s = exp(log_scale) elementwise.
class DiagonalAffineMap {
 public:
  DiagonalAffineMap() = default;
  DiagonalAffineMap(ParameterStore& store, const std::string& prefix, Index d)
      : d_(d),
        loc_(store.add(prefix + ".loc", d, 1)),
        log_scale_(store.add(prefix + ".log_scale", d, 1)) {}

  template <class E>
  typename E::Value forward(E& eng, typename E::Value x) const {
    auto inv_s = eng.exp(eng.neg(eng.param(log_scale_)));
    return eng.mul_col(eng.sub_col(x, eng.param(loc_)), inv_s);
  }

  template <class E>
  typename E::Value inverse(E& eng, typename E::Value z) const {
    auto s = eng.exp(eng.param(log_scale_));
    return eng.add_col(eng.mul_col(z, s), eng.param(loc_));
  }

  // Constant in x: -sum_j log s_j, broadcast to one entry per column of x.
  template <class E>
  typename E::Value log_det_forward(E& eng, typename E::Value x) const {
    auto t = eng.neg(eng.colwise_sum(eng.param(log_scale_)));
    return eng.broadcast_row(t, eng.cols(x));
  }

  Index dim() const { return d_; }
  const ParamSlice& loc() const { return loc_; }
  const ParamSlice& log_scale() const { return log_scale_; }

 private:
  Index d_ = 0;
  ParamSlice loc_;
  ParamSlice log_scale_;
};

// Real-NVP style affine coupling: coordinates at even (parity 0) or odd
// (parity 1) positions pass through and condition scale/shift networks for
// the rest. Scale outputs go through the bounded soft clamp 5*tanh(s/5) so
// the Jacobian cannot blow up. forward: z_B = x_B * exp(s(x_A)) + t(x_A).
class AffineCouplingMap {
 public:
  AffineCouplingMap() = default;
  AffineCouplingMap(ParameterStore& store, const std::string& prefix, Index d,
                    int parity, const std::vector<Index>& hidden = {32, 32})
      : d_(d) {
    check(d >= 2, "coupling map needs dimension >= 2");
    for (Index i = 0; i < d; ++i) {
      if (i % 2 == parity % 2)
        idx_a_.push_back(static_cast<int>(i));
      else
        idx_b_.push_back(static_cast<int>(i));
    }
    Index na = static_cast<Index>(idx_a_.size());
    Index nb = static_cast<Index>(idx_b_.size());
    scale_net_ = Mlp(store, prefix + ".scale", mlp_sizes(na, hidden, nb));
    shift_net_ = Mlp(store, prefix + ".shift", mlp_sizes(na, hidden, nb));
  }

  // Zero output layers make the map start as the identity.
  void init(ParameterStore& store, RngStream& rng) const {
    scale_net_.init(store, rng, /*zero_last=*/true);
    shift_net_.init(store, rng, /*zero_last=*/true);
  }

  template <class E>
  typename E::Value forward(E& eng, typename E::Value x) const {
    auto a = eng.select_rows(x, idx_a_);
    auto b = eng.select_rows(x, idx_b_);
    auto s = clamped_scale(eng, a);
    auto zb = eng.add(eng.cmul(b, eng.exp(s)), shift_net_(eng, a));
    return eng.interleave_rows(d_, idx_a_, a, idx_b_, zb);
  }

  template <class E>
  typename E::Value inverse(E& eng, typename E::Value z) const {
    auto a = eng.select_rows(z, idx_a_);
    auto b = eng.select_rows(z, idx_b_);
    auto s = clamped_scale(eng, a);
    auto xb = eng.cmul(eng.sub(b, shift_net_(eng, a)), eng.exp(eng.neg(s)));
    return eng.interleave_rows(d_, idx_a_, a, idx_b_, xb);
  }

  template <class E>
  typename E::Value log_det_forward(E& eng, typename E::Value x) const {
    return eng.colwise_sum(clamped_scale(eng, eng.select_rows(x, idx_a_)));
  }

  Index dim() const { return d_; }
  const Mlp& scale_net() const { return scale_net_; }
  const Mlp& shift_net() const { return shift_net_; }

 private:
  template <class E>
  typename E::Value clamped_scale(E& eng, typename E::Value a) const {
    return eng.scale(eng.tanh(eng.scale(scale_net_(eng, a), 1.0 / 5.0)), 5.0);
  }

  Index d_ = 0;
  std::vector<int> idx_a_, idx_b_;
  Mlp scale_net_, shift_net_;
};

class MapChain;
using MapAny = std::variant<DiagonalAffineMap, AffineCouplingMap, MapChain>;

// Composition: forward applies parts in order, inverse in reverse order;
// log|det J| accumulates the parts' contributions at the intermediate points.
class MapChain {
 public:
  MapChain() = default;
  explicit MapChain(std::vector<MapAny> parts) : parts_(std::move(parts)) {}

  template <class E>
  typename E::Value forward(E& eng, typename E::Value x) const;
  template <class E>
  typename E::Value inverse(E& eng, typename E::Value z) const;
  template <class E>
  typename E::Value log_det_forward(E& eng, typename E::Value x) const;

  Index dim() const;
  const std::vector<MapAny>& parts() const { return parts_; }

 private:
  std::vector<MapAny> parts_;
};

template <class E>
typename E::Value map_forward(const MapAny& m, E& eng, typename E::Value x) {
  return std::visit([&](const auto& map) { return map.forward(eng, x); }, m);
}

template <class E>
typename E::Value map_inverse(const MapAny& m, E& eng, typename E::Value z) {
  return std::visit([&](const auto& map) { return map.inverse(eng, z); }, m);
}

// 1 x N row of log|det J_T| at each column of x.
template <class E>
typename E::Value map_log_det_forward(const MapAny& m, E& eng,
                                      typename E::Value x) {
  return std::visit(
      [&](const auto& map) { return map.log_det_forward(eng, x); }, m);
}

inline Index map_dim(const MapAny& m) {
  return std::visit([](const auto& map) { return map.dim(); }, m);
}

template <class E>
typename E::Value MapChain::forward(E& eng, typename E::Value x) const {
  for (const auto& p : parts_) x = map_forward(p, eng, x);
  return x;
}

template <class E>
typename E::Value MapChain::inverse(E& eng, typename E::Value z) const {
  for (auto it = parts_.rbegin(); it != parts_.rend(); ++it)
    z = map_inverse(*it, eng, z);
  return z;
}

template <class E>
typename E::Value MapChain::log_det_forward(E& eng, typename E::Value x) const {
  check(!parts_.empty(), "empty map chain");
  auto acc = map_log_det_forward(parts_.front(), eng, x);
  x = map_forward(parts_.front(), eng, x);
  for (std::size_t i = 1; i < parts_.size(); ++i) {
    acc = eng.add(acc, map_log_det_forward(parts_[i], eng, x));
    if (i + 1 < parts_.size()) x = map_forward(parts_[i], eng, x);
  }
  return acc;
}

inline Index MapChain::dim() const {
  check(!parts_.empty(), "empty map chain");
  return map_dim(parts_.front());
}

}  // namespace diflab

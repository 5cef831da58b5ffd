#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "diflab/ad.hpp"
#include "diflab/common.hpp"
#include "diflab/maps.hpp"
#include "diflab/random.hpp"
#include "diflab/weightnet.hpp"

// Discretely indexed flows: a categorical index U selects one of K
// diffeomorphisms, giving a stochastic transport whose marginal density is
// exact. A stack composes DIF layers (K=1 layers are plain NF elements) over
// a standard-normal terminal prior; layers[0] sits nearest the data.

namespace diflab {

template <class E>
typename E::Value std_normal_log_density(E& eng, typename E::Value z,
                                         Index d) {
  auto q = eng.scale(eng.colwise_sum(eng.cmul(z, z)), -0.5);
  return eng.add_scalar(q, -0.5 * static_cast<double>(d) * kLogTwoPi);
}

struct DifLayer {
  Index dim = 0;
  std::vector<MapAny> maps;
  WeightFnAny weights = UnitWeight{};

  Index K() const { return static_cast<Index>(maps.size()); }
};

struct DifStack {
  Index dim = 0;
  std::vector<DifLayer> layers;  // layers[0] nearest data, back() nearest prior
};

// K x N matrix of per-component log terms at each column x_i:
//   row k = log w_k(T_k(x)) + inner_log_density(T_k(x)) + log|det J_{T_k}(x)|
// so that log psi = logsumexp over rows.
template <class E, class InnerFn>
typename E::Value layer_log_terms(E& eng, const DifLayer& layer,
                                  typename E::Value x, InnerFn&& inner) {
  std::vector<typename E::Value> rows;
  rows.reserve(layer.maps.size());
  for (std::size_t k = 0; k < layer.maps.size(); ++k) {
    auto zk = map_forward(layer.maps[k], eng, x);
    auto lw = weight_log(layer.weights, eng, zk);
    auto wk = eng.select_rows(lw, {static_cast<int>(k)});
    auto ld = map_log_det_forward(layer.maps[k], eng, x);
    rows.push_back(eng.add(eng.add(wk, inner(eng, zk)), ld));
  }
  return eng.vstack(rows);
}

template <class E>
typename E::Value stack_log_density_from(E& eng, const DifStack& model,
                                         std::size_t li, typename E::Value x) {
  if (li == model.layers.size())
    return std_normal_log_density(eng, x, model.dim);
  auto terms = layer_log_terms(
      eng, model.layers[li], x, [&](E& e, typename E::Value z) {
        return stack_log_density_from(e, model, li + 1, z);
      });
  return eng.logsumexp_colwise(terms);
}

// 1 x N row of log psi(x_i); -inf where psi underflows.
template <class E>
typename E::Value stack_log_density(E& eng, const DifStack& model,
                                    typename E::Value x) {
  return stack_log_density_from(eng, model, 0, x);
}

inline RowVector log_density(const DifStack& model,
                             const ParameterStore& store, const Matrix& x) {
  ad::Direct eng(store);
  return stack_log_density(eng, model, x);
}

// ---------------------------------------------------------------------------
// Forward transport of a standalone layer (inner density = standard normal).

struct ForwardWeights {
  RowVector log_psi;  // 1 x N
  Matrix log_terms;   // K x N: numerator terms log(w_k q |det J|)
  Matrix log_v;       // K x N: log v_k = log_terms - log_psi
};

inline ForwardWeights forward_log_weights(const DifLayer& layer,
                                          const ParameterStore& store,
                                          const Matrix& x) {
  ad::Direct eng(store);
  Matrix terms = layer_log_terms(eng, layer, x, [&](ad::Direct& e, Matrix z) {
    return std_normal_log_density(e, z, layer.dim);
  });
  ForwardWeights fw;
  fw.log_terms = terms;
  fw.log_psi = eng.logsumexp_colwise(terms);
  fw.log_v = (terms.array().rowwise() - fw.log_psi.array()).matrix();
  return fw;
}

// ---------------------------------------------------------------------------
// Sampling

struct BackwardSamples {
  Matrix x;                            // d x n
  std::vector<std::vector<int>> path;  // path[layer][i], layer 0 nearest data
};

// z ~ N(0, I); per layer from prior side to data side: U ~ Cat(w(z)),
// z <- T_U^{-1}(z). Deterministic given the stream.
inline BackwardSamples sample_backward(const DifStack& model,
                                       const ParameterStore& store, Index n,
                                       RngStream& rng) {
  ad::Direct eng(store);
  BackwardSamples out;
  out.x = rng.normal_matrix(model.dim, n);
  out.path.assign(model.layers.size(), std::vector<int>(n, 0));
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const DifLayer& layer = model.layers[li];
    Index K = layer.K();
    if (K == 1) {
      out.x = map_inverse(layer.maps[0], eng, out.x);
      continue;
    }
    Matrix lw = weight_log(layer.weights, eng, out.x);
    std::vector<int>& u = out.path[li];
    for (Index i = 0; i < n; ++i) {
      Vector probs = lw.col(i).array().exp().matrix();
      u[i] = rng.categorical(probs);
    }
    // Batch the K inverse evaluations over the columns that drew each k.
    for (Index k = 0; k < K; ++k) {
      std::vector<Index> cols;
      for (Index i = 0; i < n; ++i)
        if (u[i] == k) cols.push_back(i);
      if (cols.empty()) continue;
      Matrix sub(model.dim, static_cast<Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c)
        sub.col(c) = out.x.col(cols[c]);
      Matrix inv = map_inverse(layer.maps[k], eng, sub);
      for (std::size_t c = 0; c < cols.size(); ++c)
        out.x.col(cols[c]) = inv.col(c);
    }
  }
  return out;
}

struct ForwardSamples {
  Matrix z;           // d x n
  std::vector<int> u;  // selected component per column
};

// U ~ Cat(v_1(x),...,v_K(x)); returns T_U(x).
inline ForwardSamples sample_forward(const DifLayer& layer,
                                     const ParameterStore& store,
                                     const Matrix& x, RngStream& rng) {
  ad::Direct eng(store);
  ForwardWeights fw = forward_log_weights(layer, store, x);
  Index n = x.cols();
  ForwardSamples out;
  out.z.resize(layer.dim, n);
  out.u.resize(n);
  for (Index i = 0; i < n; ++i) {
    Vector probs = fw.log_v.col(i).array().exp().matrix();
    out.u[i] = rng.categorical(probs);
  }
  for (Index k = 0; k < layer.K(); ++k) {
    std::vector<Index> cols;
    for (Index i = 0; i < n; ++i)
      if (out.u[i] == k) cols.push_back(i);
    if (cols.empty()) continue;
    Matrix sub(layer.dim, static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) sub.col(c) = x.col(cols[c]);
    Matrix fwd = map_forward(layer.maps[k], eng, sub);
    for (std::size_t c = 0; c < cols.size(); ++c)
      out.z.col(cols[c]) = fwd.col(c);
  }
  return out;
}

// log phi(z) = log sum_k v_k(T_k^{-1}(z)) p(T_k^{-1}(z)) |det J_{T_k^{-1}}(z)|
// for a standalone layer; log_p maps a d x m batch to a 1 x m row.
inline RowVector phi_log_density(
    const DifLayer& layer, const ParameterStore& store,
    const std::function<RowVector(const Matrix&)>& log_p, const Matrix& z) {
  ad::Direct eng(store);
  Index n = z.cols();
  Matrix terms(layer.K(), n);
  for (Index k = 0; k < layer.K(); ++k) {
    Matrix xk = map_inverse(layer.maps[k], eng, z);
    ForwardWeights fw = forward_log_weights(layer, store, xk);
    RowVector ld = map_log_det_forward(layer.maps[k], eng, xk);
    terms.row(k) =
        fw.log_v.row(k) + log_p(xk) - ld;  // |det J_inv|(z) = 1/|det J|(x_k)
  }
  return eng.logsumexp_colwise(terms);
}

// ---------------------------------------------------------------------------
// Cascade expansion

// Two stacked layers collapse to one explicit layer with K0*K1 components:
//   T_{k0,k1} = T1_{k1} o T0_{k0}
//   w_{k0,k1}(z) = w0_{k0}(T1_{k1}^{-1}(z)) * w1_{k1}(z)
// Component (k0,k1) lives at index k1*K0 + k0. Parameter slices are shared
// with the original layers, so gradients flow to the same store.
inline DifLayer expand_cascade(const DifStack& model) {
  check(model.layers.size() == 2, "cascade expansion needs exactly 2 layers");
  const DifLayer& l0 = model.layers[0];
  const DifLayer& l1 = model.layers[1];
  check(l0.dim == l1.dim, "cascade expansion: layer dimension mismatch");
  DifLayer out;
  out.dim = l0.dim;
  for (std::size_t k1 = 0; k1 < l1.maps.size(); ++k1)
    for (std::size_t k0 = 0; k0 < l0.maps.size(); ++k0)
      out.maps.push_back(
          MapChain{std::vector<MapAny>{l0.maps[k0], l1.maps[k1]}});
  out.weights = CascadeWeight{{l0.weights, l1.weights}, l1.maps};
  return out;
}

// ---------------------------------------------------------------------------
// Builders and initialization

inline DifLayer make_dif_layer(ParameterStore& store, const std::string& prefix,
                               Index d, Index k,
                               const std::vector<Index>& weight_hidden =
                                   {128, 128, 128},
                               Activation act = Activation::kTanh) {
  check(k >= 1, "DIF layer needs K >= 1");
  DifLayer layer;
  layer.dim = d;
  for (Index i = 0; i < k; ++i)
    layer.maps.push_back(
        DiagonalAffineMap(store, prefix + ".map" + std::to_string(i), d));
  if (k > 1)
    layer.weights =
        WeightNetwork(store, prefix + ".weights", d, k, weight_hidden, act);
  return layer;
}

inline DifLayer make_coupling_layer(ParameterStore& store,
                                    const std::string& prefix, Index d,
                                    int parity,
                                    const std::vector<Index>& hidden = {32,
                                                                        32}) {
  DifLayer layer;
  layer.dim = d;
  layer.maps.push_back(AffineCouplingMap(store, prefix + ".map0", d, parity,
                                         hidden));
  return layer;
}

// Per-dimension data quantiles at (k+1)/(K+1) spread the component centers
// through the sample cloud before training.
inline Matrix quantile_locations(const Matrix& data, Index k) {
  Matrix mu(data.rows(), k);
  std::vector<double> row(data.cols());
  for (Index j = 0; j < data.rows(); ++j) {
    for (Index i = 0; i < data.cols(); ++i) row[i] = data(j, i);
    std::sort(row.begin(), row.end());
    for (Index c = 0; c < k; ++c) {
      double q = static_cast<double>(c + 1) / static_cast<double>(k + 1);
      auto pos = static_cast<std::size_t>(q * (row.size() - 1));
      mu(j, c) = row[pos];
    }
  }
  return mu;
}

// Random initialization: weight nets start uniform over K (zero last layer),
// coupling maps start at the identity, affine locations come from data
// quantiles when data is given and from prior draws otherwise; log-scales 0.
inline void init_layer(DifLayer& layer, ParameterStore& store, RngStream& rng,
                       const Matrix* data = nullptr) {
  Matrix mu;
  if (data != nullptr && data->cols() > 0)
    mu = quantile_locations(*data, layer.K());
  for (std::size_t k = 0; k < layer.maps.size(); ++k) {
    if (auto* aff = std::get_if<DiagonalAffineMap>(&layer.maps[k])) {
      auto loc = store.view(aff->loc());
      if (mu.size() > 0)
        loc = mu.col(static_cast<Index>(k));
      else
        loc = rng.normal_matrix(layer.dim, 1);
      store.view(aff->log_scale()).setZero();
    } else if (auto* cpl = std::get_if<AffineCouplingMap>(&layer.maps[k])) {
      cpl->init(store, rng);
    }
  }
  if (auto* wn = std::get_if<WeightNetwork>(&layer.weights))
    wn->init(store, rng);
}

inline void init_stack(DifStack& model, ParameterStore& store, RngStream& rng,
                       const Matrix* data = nullptr) {
  for (auto& layer : model.layers) init_layer(layer, store, rng, data);
}

// ---------------------------------------------------------------------------
// Conditional DIF: map parameters mu_k(omega), log s_k(omega) come from a
// covariate network and the weight network reads (z, omega).

class ConditionalDifLayer {
 public:
  ConditionalDifLayer() = default;
  ConditionalDifLayer(ParameterStore& store, const std::string& prefix,
                      Index d, Index cov_dim, Index k,
                      const std::vector<Index>& cov_hidden = {64},
                      const std::vector<Index>& weight_hidden = {128, 128,
                                                                 128},
                      Activation act = Activation::kTanh)
      : d_(d), p_(cov_dim), k_(k) {
    check(k >= 1, "conditional DIF layer needs K >= 1");
    check(cov_dim >= 1, "conditional DIF layer needs a covariate dimension");
    cov_net_ = Mlp(store, prefix + ".cov", mlp_sizes(p_, cov_hidden, 2 * k_ * d_),
                   act);
    if (k_ > 1)
      weight_net_ = Mlp(store, prefix + ".weights",
                        mlp_sizes(d_ + p_, weight_hidden, k_), act);
  }

  // log psi(x | omega); x is d x N, omega is p x N, columns aligned.
  template <class E>
  typename E::Value log_density(E& eng, typename E::Value x,
                                typename E::Value omega) const {
    auto cov = cov_net_(eng, omega);  // (2 K d) x N
    std::vector<typename E::Value> rows;
    for (Index k = 0; k < k_; ++k) {
      std::vector<int> mu_idx(d_), ls_idx(d_);
      for (Index j = 0; j < d_; ++j) {
        mu_idx[j] = static_cast<int>(k * d_ + j);
        ls_idx[j] = static_cast<int>(k_ * d_ + k * d_ + j);
      }
      auto mu = eng.select_rows(cov, mu_idx);
      auto ls = eng.select_rows(cov, ls_idx);
      auto zk = eng.cmul(eng.sub(x, mu), eng.exp(eng.neg(ls)));
      auto term = eng.add(std_normal_log_density(eng, zk, d_),
                          eng.neg(eng.colwise_sum(ls)));
      if (k_ > 1) {
        auto logits = weight_net_(eng, eng.vstack({zk, omega}));
        auto lw = eng.sub_row(logits, eng.logsumexp_colwise(logits));
        term = eng.add(term, eng.select_rows(lw, {static_cast<int>(k)}));
      }
      rows.push_back(term);
    }
    if (k_ == 1) return rows[0];
    return eng.logsumexp_colwise(eng.vstack(rows));
  }

  // Zero-last-layer networks plus a location spread on the covariate bias:
  // initially mu_k(omega) is a constant per-component quantile of the data.
  void init(ParameterStore& store, RngStream& rng,
            const Matrix* data = nullptr) const {
    cov_net_.init(store, rng, /*zero_last=*/true);
    if (k_ > 1) weight_net_.init(store, rng, /*zero_last=*/true);
    if (data != nullptr && data->cols() > 0) {
      Matrix mu = quantile_locations(*data, k_);
      auto b = store.view(cov_net_.bias(cov_net_.num_layers() - 1));
      for (Index k = 0; k < k_; ++k)
        for (Index j = 0; j < d_; ++j) b(k * d_ + j, 0) = mu(j, k);
    }
  }

  Index dim() const { return d_; }
  Index cov_dim() const { return p_; }
  Index K() const { return k_; }
  const Mlp& cov_net() const { return cov_net_; }
  const Mlp& weight_net() const { return weight_net_; }

 private:
  Index d_ = 0, p_ = 0, k_ = 0;
  Mlp cov_net_;
  Mlp weight_net_;
};

inline RowVector conditional_log_density(const ConditionalDifLayer& model,
                                         const ParameterStore& store,
                                         const Matrix& x, const Matrix& omega) {
  ad::Direct eng(store);
  return model.log_density(eng, x, omega);
}

}  // namespace diflab

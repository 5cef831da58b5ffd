#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include "diflab/ad.hpp"
#include "diflab/common.hpp"
#include "diflab/dif.hpp"
#include "diflab/targets.hpp"

// The differentiable training objectives: negative mean log-likelihood, the
// GEM minorizing surrogate, and the Rao-Blackwellized reverse-KL estimator
// (with its cascaded form). Everything is engine-generic; log-densities are
// never exponentiated, so the terms stay finite and products with underflowed
// weights are exact zeros rather than NaNs.

namespace diflab {

// Type-erased differentiable unnormalized log-target, callable from either
// engine. Build one with make_target_density (any engine-generic functor
// mapping a d x N batch to a 1 x N row) or from a Target.
struct TargetDensity {
  std::function<Matrix(const Matrix&)> direct;
  std::function<ad::Tape::Ref(ad::Tape&, ad::Tape::Ref)> taped;
};

template <class F>
TargetDensity make_target_density(F f) {
  TargetDensity t;
  t.direct = [f](const Matrix& x) -> Matrix {
    ad::Direct eng;
    return f(eng, x);
  };
  t.taped = [f](ad::Tape& tape, ad::Tape::Ref x) { return f(tape, x); };
  return t;
}

inline TargetDensity target_density(const Target& target) {
  check(target.can_eval, "target has no evaluable density");
  return make_target_density(
      [target](auto& eng, auto x) { return target.unnorm_log_pdf_e(eng, x); });
}

inline Matrix eval_log_p(const TargetDensity& t, ad::Direct&, const Matrix& x) {
  return t.direct(x);
}
inline ad::Tape::Ref eval_log_p(const TargetDensity& t, ad::Tape& tape,
                                ad::Tape::Ref x) {
  return t.taped(tape, x);
}

// ---------------------------------------------------------------------------
// Maximum likelihood

// -(1/M) sum_i log psi(x_i)
template <class E>
typename E::Value mle_loss(E& eng, const DifStack& model, typename E::Value x) {
  Index n = eng.cols(x);
  check(n >= 1, "mle loss needs a non-empty batch");
  auto lp = stack_log_density(eng, model, x);
  return eng.scale(eng.total_sum(lp), -1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// GEM surrogate g_{theta_t}(theta)
//
//   g(theta) = sum_i sum_k v_k^(t)(x_i) [log h_k(x_i) - log v_k^(t)(x_i)]
//   h_k(x)   = w_k(T_k(x)) q(T_k(x)) |det J_{T_k}(x)|
//
// The frozen forward weights v^(t) enter as constants (no gradient), giving
// the E-step / M-step split: tangency g(theta_t) = sum_i log psi^(t)(x_i),
// equal gradients at theta_t, and minorization everywhere.

struct GemFrozen {
  DifLayer layer;      // single layer, or the expanded two-layer cascade
  Matrix v;            // K x N frozen forward weights (underflow -> exact 0)
  double entropy_sum;  // sum over entries of v log v (0 log 0 := 0)
  double loglik_sum;   // sum_i log psi^(t)(x_i), the tangency value
};

// Snapshot the forward weights of the model at the parameter values held in
// `snapshot`. A two-layer stack is expanded to its equivalent single layer
// (Pi K components); the expanded layer shares parameter slices with the
// live model, so surrogate gradients flow to the original parameters.
inline GemFrozen gem_freeze(const DifStack& model,
                            const ParameterStore& snapshot,
                            const Matrix& batch) {
  GemFrozen fr;
  if (model.layers.size() == 1)
    fr.layer = model.layers[0];
  else if (model.layers.size() == 2)
    fr.layer = expand_cascade(model);
  else
    throw std::invalid_argument(
        "GEM supports single-layer models and two-layer cascades");
  ForwardWeights fw = forward_log_weights(fr.layer, snapshot, batch);
  fr.v = fw.log_v.array().exp().matrix();
  fr.entropy_sum = 0.0;
  for (Index k = 0; k < fr.v.rows(); ++k)
    for (Index i = 0; i < fr.v.cols(); ++i)
      if (fr.v(k, i) > 0.0) fr.entropy_sum += fr.v(k, i) * fw.log_v(k, i);
  fr.loglik_sum = fw.log_psi.sum();
  return fr;
}

// sum_i sum_k v_frozen(k,i) * log h_k(x_i) for one batch slice; the column
// count of x and v must match.
template <class E>
typename E::Value gem_weighted_terms(E& eng, const DifLayer& layer,
                                     typename E::Value x, const Matrix& v) {
  auto terms = layer_log_terms(eng, layer, x, [&](E& e, typename E::Value z) {
    return std_normal_log_density(e, z, layer.dim);
  });
  return eng.total_sum(eng.cmul(terms, eng.constant(v)));
}

// Full surrogate over the batch that produced `fr`.
template <class E>
typename E::Value gem_surrogate(E& eng, typename E::Value x,
                                const GemFrozen& fr) {
  return eng.add_scalar(gem_weighted_terms(eng, fr.layer, x, fr.v),
                        -fr.entropy_sum);
}

// ---------------------------------------------------------------------------
// Rao-Blackwellized reverse KL
//
// The crude estimator samples the categorical index; RB takes its conditional
// expectation given Z, summing over components with weights w_k(z). Applied
// per layer from the prior side inward, this is for one layer
//   (1/M) sum_i sum_k w_k(z_i) log(psi/p~)(T_k^{-1}(z_i))
// and for a two-layer stack the doubly marginalized form
//   (1/M) sum_i sum_{k1} w1_{k1}(z_i) sum_{k0} w0_{k0}(T1_{k1}^{-1}(z_i))
//            log(psi/p~)(T0_{k0}^{-1}(T1_{k1}^{-1}(z_i))).
// K=1 layers contribute a deterministic hop with weight 1.

template <class E>
typename E::Value rb_walk(E& eng, const DifStack& model, int li,
                          typename E::Value z, const TargetDensity& log_p) {
  if (li < 0) {
    auto lpsi = stack_log_density(eng, model, z);
    return eng.sub(lpsi, eval_log_p(log_p, eng, z));
  }
  const DifLayer& layer = model.layers[static_cast<std::size_t>(li)];
  if (layer.K() == 1)
    return rb_walk(eng, model, li - 1, map_inverse(layer.maps[0], eng, z),
                   log_p);
  auto w = eng.exp(weight_log(layer.weights, eng, z));
  typename E::Value acc{};
  for (std::size_t k = 0; k < layer.maps.size(); ++k) {
    auto zk = map_inverse(layer.maps[k], eng, z);
    auto inner = rb_walk(eng, model, li - 1, zk, log_p);
    auto term = eng.cmul(eng.select_rows(w, {static_cast<int>(k)}), inner);
    acc = (k == 0) ? term : eng.add(acc, term);
  }
  return acc;
}

template <class E>
typename E::Value rb_kl_loss(E& eng, const DifStack& model,
                             const TargetDensity& log_p,
                             typename E::Value z_batch) {
  Index m = eng.cols(z_batch);
  check(m >= 1, "reverse-KL loss needs a non-empty z batch");
  auto per = rb_walk(eng, model, static_cast<int>(model.layers.size()) - 1,
                     z_batch, log_p);
  return eng.scale(eng.total_sum(per), 1.0 / static_cast<double>(m));
}

template <class E>
typename E::Value rb_kl_loss_cascaded(E& eng, const DifStack& model,
                                      const TargetDensity& log_p,
                                      typename E::Value z_batch) {
  check(model.layers.size() == 2, "cascaded reverse-KL needs exactly 2 layers");
  return rb_kl_loss(eng, model, log_p, z_batch);
}

// Crude counterpart used as the variance baseline in tests: samples the
// index path instead of marginalizing it. Not differentiable; evaluation
// only.
inline double crude_kl_loss(const DifStack& model, const ParameterStore& store,
                            const TargetDensity& log_p, const Matrix& z_batch,
                            RngStream& rng) {
  ad::Direct eng(store);
  Matrix x = z_batch;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const DifLayer& layer = model.layers[li];
    if (layer.K() == 1) {
      x = map_inverse(layer.maps[0], eng, x);
      continue;
    }
    Matrix lw = weight_log(layer.weights, eng, x);
    for (Index i = 0; i < x.cols(); ++i) {
      Vector probs = lw.col(i).array().exp().matrix();
      int u = rng.categorical(probs);
      Matrix xi = map_inverse(layer.maps[u], eng, Matrix(x.col(i)));
      x.col(i) = xi.col(0);
    }
  }
  RowVector lpsi = log_density(model, store, x);
  Matrix lp = log_p.direct(x);
  return (lpsi - RowVector(lp.row(0))).mean();
}

// ---------------------------------------------------------------------------
// Conditional likelihood

// -(1/M) sum_i log psi(x_i | omega_i)
template <class E>
typename E::Value conditional_mle_loss(E& eng, const ConditionalDifLayer& model,
                                       typename E::Value x,
                                       typename E::Value omega) {
  Index n = eng.cols(x);
  check(n >= 1, "conditional mle loss needs a non-empty batch");
  auto lp = model.log_density(eng, x, omega);
  return eng.scale(eng.total_sum(lp), -1.0 / static_cast<double>(n));
}

}  // namespace diflab

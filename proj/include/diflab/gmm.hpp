#pragma once

#include <cmath>
#include <vector>

#include "diflab/common.hpp"
#include "diflab/dif.hpp"
#include "diflab/random.hpp"

// Diagonal-covariance Gaussian mixtures: EM fitting (the warm-start baseline)
// and exact density evaluation, coded independently of the DIF machinery so
// the two can be cross-checked.

namespace diflab {

struct DiagonalGmm {
  Vector alpha;  // K mixture weights
  Matrix means;  // d x K
  Matrix vars;   // d x K diagonal covariance entries

  Index K() const { return alpha.size(); }
  Index dim() const { return means.rows(); }
};

// 1 x N row of log densities.
inline RowVector gmm_log_density(const DiagonalGmm& g, const Matrix& x) {
  Index n = x.cols(), d = g.dim();
  Matrix terms(g.K(), n);
  for (Index k = 0; k < g.K(); ++k) {
    double log_norm = -0.5 * d * kLogTwoPi -
                      0.5 * g.vars.col(k).array().log().sum() +
                      std::log(g.alpha[k]);
    for (Index i = 0; i < n; ++i) {
      double quad =
          ((x.col(i) - g.means.col(k)).array().square() /
           g.vars.col(k).array())
              .sum();
      terms(k, i) = log_norm - 0.5 * quad;
    }
  }
  RowVector out(n);
  for (Index i = 0; i < n; ++i) {
    double m = terms.col(i).maxCoeff();
    out[i] = std::isfinite(m)
                 ? m + std::log((terms.col(i).array() - m).exp().sum())
                 : m;
  }
  return out;
}

inline Matrix gmm_sample(const DiagonalGmm& g, Index n, RngStream& rng) {
  Matrix x(g.dim(), n);
  for (Index i = 0; i < n; ++i) {
    int k = rng.categorical(g.alpha);
    for (Index j = 0; j < g.dim(); ++j)
      x(j, i) = g.means(j, k) + std::sqrt(g.vars(j, k)) * rng.normal();
  }
  return x;
}

struct GmmFitResult {
  DiagonalGmm gmm;
  std::vector<double> loglik_trace;  // mean log-likelihood per iteration
};

// Standard EM for a diagonal-covariance GMM. Components whose responsibility
// mass collapses below 1e-10 are re-seeded at a random data point.
inline GmmFitResult gmm_em_fit(const Matrix& data, Index k, int iters,
                               RngStream& rng) {
  Index d = data.rows(), n = data.cols();
  check(k >= 1, "GMM needs K >= 1");
  check(n >= k, "GMM needs at least K data points");

  DiagonalGmm g;
  g.alpha = Vector::Constant(k, 1.0 / static_cast<double>(k));
  g.means.resize(d, k);
  for (Index c = 0; c < k; ++c)
    g.means.col(c) = data.col(static_cast<Index>(rng.integer(n)));
  Vector global_mean = data.rowwise().mean();
  Vector global_var =
      (data.colwise() - global_mean).array().square().rowwise().mean();
  global_var = global_var.cwiseMax(1e-8);
  g.vars = global_var.replicate(1, k);

  GmmFitResult result;
  constexpr double kVarFloor = 1e-8;
  for (int it = 0; it < iters; ++it) {
    // E-step in log space.
    Matrix log_r(k, n);
    for (Index c = 0; c < k; ++c) {
      double log_norm = std::log(g.alpha[c]) - 0.5 * d * kLogTwoPi -
                        0.5 * g.vars.col(c).array().log().sum();
      for (Index i = 0; i < n; ++i)
        log_r(c, i) = log_norm -
                      0.5 * ((data.col(i) - g.means.col(c)).array().square() /
                             g.vars.col(c).array())
                                .sum();
    }
    double loglik = 0.0;
    for (Index i = 0; i < n; ++i) {
      double m = log_r.col(i).maxCoeff();
      double lse = m + std::log((log_r.col(i).array() - m).exp().sum());
      loglik += lse;
      log_r.col(i) = (log_r.col(i).array() - lse).matrix();
    }
    result.loglik_trace.push_back(loglik / static_cast<double>(n));

    // M-step.
    Matrix r = log_r.array().exp().matrix();
    for (Index c = 0; c < k; ++c) {
      double mass = r.row(c).sum();
      if (mass < 1e-10) {
        g.means.col(c) = data.col(static_cast<Index>(rng.integer(n)));
        g.vars.col(c) = global_var;
        g.alpha[c] = 1.0 / static_cast<double>(n);
        continue;
      }
      g.alpha[c] = mass / static_cast<double>(n);
      Vector mu = Vector::Zero(d);
      for (Index i = 0; i < n; ++i) mu += r(c, i) * data.col(i);
      mu /= mass;
      Vector var = Vector::Zero(d);
      for (Index i = 0; i < n; ++i)
        var += r(c, i) * (data.col(i) - mu).array().square().matrix();
      var /= mass;
      g.means.col(c) = mu;
      g.vars.col(c) = var.cwiseMax(kVarFloor);
    }
    g.alpha /= g.alpha.sum();
  }
  result.gmm = g;
  return result;
}

inline double gmm_mean_loglik(const DiagonalGmm& g, const Matrix& x) {
  return gmm_log_density(g, x).mean();
}

// Sets a diagonal-affine DIF layer to coincide exactly with the mixture:
// loc_k = mu_k, log_scale_k = 0.5 log var_k, constant weights alpha.
inline void warm_start_from_gmm(DifLayer& layer, ParameterStore& store,
                                const DiagonalGmm& g) {
  check(layer.K() == g.K(), "warm start: component count mismatch");
  check(layer.dim == g.dim(), "warm start: dimension mismatch");
  for (Index k = 0; k < layer.K(); ++k) {
    auto* aff = std::get_if<DiagonalAffineMap>(&layer.maps[k]);
    check(aff != nullptr, "warm start needs diagonal affine maps");
    store.view(aff->loc()) = g.means.col(k);
    store.view(aff->log_scale()) = (0.5 * g.vars.col(k).array().log()).matrix();
  }
  if (layer.K() > 1) {
    auto* wn = std::get_if<WeightNetwork>(&layer.weights);
    check(wn != nullptr, "warm start needs a weight network");
    wn->init_for_mixture(store, g.alpha);
  }
}

}  // namespace diflab

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "diflab/common.hpp"
#include "diflab/dif.hpp"
#include "diflab/gmm.hpp"
#include "diflab/io.hpp"
#include "diflab/objectives.hpp"
#include "diflab/random.hpp"

// Optimization drivers. Adaptive-moment steps for the stochastic objectives
// (MLE, reverse KL, conditional MLE); plain ascent with a halving line search
// for GEM, which preserves the non-decreasing log-likelihood guarantee.
// Every loop is deterministic given the config seed.

namespace diflab {

enum class Objective { kMle, kGem, kRbKl, kConditionalMle };

inline Objective objective_from_string(const std::string& s) {
  if (s == "mle") return Objective::kMle;
  if (s == "gem") return Objective::kGem;
  if (s == "rb_kl") return Objective::kRbKl;
  if (s == "conditional_mle") return Objective::kConditionalMle;
  throw std::invalid_argument("unknown objective: " + s);
}

struct TrainConfig {
  Objective objective = Objective::kMle;
  int steps = 100;
  int batch = 128;      // minibatch size (mle/conditional), M draws (rb_kl),
                        // 0 = full batch; GEM defaults to full batch
  double lr = 1e-3;
  bool line_search = true;  // GEM only
  std::uint64_t seed = 0;
  Index tape_chunk = 512;  // column chunk for full-batch gradient tapes
  bool fixed_z = false;    // rb_kl: reuse one z batch instead of redrawing
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    check(steps >= 0, "train config: steps must be >= 0");
    check(batch >= 0, "train config: batch must be >= 0");
    check(lr > 0.0, "train config: learning rate must be > 0");
    check(tape_chunk >= 1, "train config: tape_chunk must be >= 1");
  }
};

struct TraceRow {
  int step = 0;
  double objective = 0.0;  // value at the pre-update parameters
  double grad_norm = 0.0;
  double seconds = 0.0;
};
using TraceRecord = std::vector<TraceRow>;

inline void write_trace_csv(const std::string& path,
                            const TraceRecord& trace) {
  std::ofstream out(path);
  check(out.good(), "cannot write trace file: " + path);
  out << "step,objective,grad_norm,seconds\n";
  for (const auto& r : trace)
    out << r.step << "," << detail::format_double(r.objective) << ","
        << detail::format_double(r.grad_norm) << ","
        << detail::format_double(r.seconds) << "\n";
}

class AdamOptimizer {
 public:
  explicit AdamOptimizer(Index n) { reset(n); }
  void reset(Index n) {
    m_ = Vector::Zero(n);
    v_ = Vector::Zero(n);
    t_ = 0;
  }

  void step(Vector& theta, const Vector& grad, const TrainConfig& cfg) {
    ++t_;
    m_ = cfg.adam_beta1 * m_ + (1.0 - cfg.adam_beta1) * grad;
    v_ = cfg.adam_beta2 * v_ +
         (1.0 - cfg.adam_beta2) * grad.array().square().matrix();
    double bc1 = 1.0 - std::pow(cfg.adam_beta1, t_);
    double bc2 = 1.0 - std::pow(cfg.adam_beta2, t_);
    theta -= (cfg.lr * (m_ / bc1).array() /
              ((v_ / bc2).array().sqrt() + cfg.adam_eps))
                 .matrix();
  }

 private:
  Vector m_, v_;
  int t_ = 0;
};

namespace detail {

inline double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

[[noreturn]] inline void rethrow_at_step(int step, const NumericError& e) {
  throw NumericError("step " + std::to_string(step) + ": " + e.what());
}

inline Matrix gather_cols(const Matrix& data, const std::vector<Index>& idx) {
  Matrix out(data.rows(), static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(i) = data.col(idx[i]);
  return out;
}

inline std::vector<Index> draw_batch(Index n, int batch, RngStream& rng) {
  std::vector<Index> idx;
  if (batch <= 0 || batch >= n) {
    idx.resize(n);
    for (Index i = 0; i < n; ++i) idx[i] = i;
  } else {
    idx.resize(batch);
    for (int i = 0; i < batch; ++i)
      idx[i] = static_cast<Index>(rng.integer(static_cast<std::uint64_t>(n)));
  }
  return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MLE (adaptive-moment, minibatched)

inline TraceRecord fit_mle(DifStack& model, ParameterStore& store,
                           const Matrix& data, const TrainConfig& cfg) {
  cfg.validate();
  check(data.cols() >= 1, "mle fit needs data");
  TraceRecord trace;
  RngStream batch_rng(cfg.seed, 11);
  AdamOptimizer opt(store.size());
  for (int step = 0; step < cfg.steps; ++step) {
    double t0 = detail::now_seconds();
    Matrix xb = detail::gather_cols(
        data, detail::draw_batch(data.cols(), cfg.batch, batch_rng));
    try {
      auto [value, grad] = ad::value_and_gradient(store, [&](ad::Tape& tape) {
        return mle_loss(tape, model, tape.constant(xb));
      });
      opt.step(store.values(), grad, cfg);
      trace.push_back(
          {step, value, grad.norm(), detail::now_seconds() - t0});
    } catch (const NumericError& e) {
      detail::rethrow_at_step(step, e);
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// GEM (Algorithm: freeze v at theta_t, one ascent step on the surrogate,
// halving line search on the surrogate value)

struct GemReport {
  TraceRecord trace;
  bool converged = false;  // line search exhausted; theta left unchanged
};

namespace detail {

// Surrogate value/gradient accumulated over column chunks (sums are exact
// in a fixed order; chunking only bounds tape memory).
inline std::pair<double, Vector> gem_value_grad(const DifLayer& layer,
                                                const ParameterStore& store,
                                                const Matrix& data,
                                                const GemFrozen& fr,
                                                Index chunk) {
  double value = -fr.entropy_sum;
  Vector grad = Vector::Zero(store.size());
  for (Index start = 0; start < data.cols(); start += chunk) {
    Index len = std::min(chunk, data.cols() - start);
    Matrix xb = data.middleCols(start, len);
    Matrix vb = fr.v.middleCols(start, len);
    auto [v, g] = ad::value_and_gradient(store, [&](ad::Tape& tape) {
      return gem_weighted_terms(tape, layer, tape.constant(xb), vb);
    });
    value += v;
    grad += g;
  }
  return {value, grad};
}

inline double gem_value(const DifLayer& layer, const ParameterStore& store,
                        const Matrix& data, const GemFrozen& fr, Index chunk) {
  double value = -fr.entropy_sum;
  ad::Direct eng(store);
  for (Index start = 0; start < data.cols(); start += chunk) {
    Index len = std::min(chunk, data.cols() - start);
    Matrix xb = data.middleCols(start, len);
    Matrix vb = fr.v.middleCols(start, len);
    value += eng.scalar(gem_weighted_terms(eng, layer, xb, vb));
  }
  return value;
}

}  // namespace detail

inline GemReport fit_gem(DifStack& model, ParameterStore& store,
                         const Matrix& data, const TrainConfig& cfg) {
  cfg.validate();
  check(data.cols() >= 1, "gem fit needs data");
  GemReport report;
  RngStream batch_rng(cfg.seed, 11);
  for (int step = 0; step < cfg.steps; ++step) {
    double t0 = detail::now_seconds();
    // Minibatch GEM (batch > 0) drops the monotonicity guarantee; default is
    // the full batch.
    Matrix xb = (cfg.batch > 0 && cfg.batch < data.cols())
                    ? detail::gather_cols(
                          data, detail::draw_batch(data.cols(), cfg.batch,
                                                   batch_rng))
                    : data;
    try {
      ParameterStore snapshot = store;
      GemFrozen fr = gem_freeze(model, snapshot, xb);
      auto [g_now, grad] =
          detail::gem_value_grad(fr.layer, store, xb, fr, cfg.tape_chunk);
      Vector theta0 = store.values();
      bool accepted = false;
      double eta = cfg.lr;
      if (!cfg.line_search) {
        store.values() = theta0 + eta * grad;
        accepted = true;
      } else {
        for (int halve = 0; halve <= 30; ++halve) {
          store.values() = theta0 + eta * grad;
          double g_new =
              detail::gem_value(fr.layer, store, xb, fr, cfg.tape_chunk);
          if (std::isfinite(g_new) && g_new >= g_now) {
            accepted = true;
            break;
          }
          eta *= 0.5;
        }
      }
      double mean_loglik = fr.loglik_sum / static_cast<double>(xb.cols());
      if (!accepted) {
        store.values() = theta0;
        report.converged = true;
        report.trace.push_back({step, -mean_loglik, grad.norm(),
                                detail::now_seconds() - t0});
        break;
      }
      report.trace.push_back(
          {step, -mean_loglik, grad.norm(), detail::now_seconds() - t0});
    } catch (const NumericError& e) {
      detail::rethrow_at_step(step, e);
    }
  }
  return report;
}

// One GEM update in isolation: theta <- theta + eta * grad g, with the
// halving line search on the surrogate. Returns false when the line search
// is exhausted (theta unchanged, treat as converged).
inline bool gem_step(DifStack& model, ParameterStore& store, const Matrix& data,
                     double eta, bool line_search, Index tape_chunk = 512) {
  check(eta > 0.0, "gem step needs a positive learning rate");
  TrainConfig cfg;
  cfg.objective = Objective::kGem;
  cfg.steps = 1;
  cfg.batch = 0;
  cfg.lr = eta;
  cfg.line_search = line_search;
  cfg.tape_chunk = tape_chunk;
  GemReport r = fit_gem(model, store, data, cfg);
  return !r.converged;
}

// ---------------------------------------------------------------------------
// Reverse KL (adaptive-moment, fresh prior draws per step)

inline TraceRecord fit_rb_kl(DifStack& model, ParameterStore& store,
                             const TargetDensity& log_p,
                             const TrainConfig& cfg) {
  cfg.validate();
  check(cfg.batch >= 1, "rb_kl fit needs a positive batch of prior draws");
  TraceRecord trace;
  RngStream zrng(cfg.seed, 12);
  AdamOptimizer opt(store.size());
  Matrix z_fixed;
  if (cfg.fixed_z) z_fixed = zrng.normal_matrix(model.dim, cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    double t0 = detail::now_seconds();
    Matrix z =
        cfg.fixed_z ? z_fixed : zrng.normal_matrix(model.dim, cfg.batch);
    try {
      auto [value, grad] = ad::value_and_gradient(store, [&](ad::Tape& tape) {
        return rb_kl_loss(tape, model, log_p, tape.constant(z));
      });
      opt.step(store.values(), grad, cfg);
      trace.push_back(
          {step, value, grad.norm(), detail::now_seconds() - t0});
    } catch (const NumericError& e) {
      detail::rethrow_at_step(step, e);
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Conditional MLE

inline TraceRecord fit_conditional(ConditionalDifLayer& model,
                                   ParameterStore& store, const Dataset& data,
                                   const TrainConfig& cfg) {
  cfg.validate();
  check(data.size() >= 1, "conditional fit needs data");
  check(data.cov_dim() >= 1, "conditional fit needs covariate columns");
  TraceRecord trace;
  RngStream batch_rng(cfg.seed, 11);
  AdamOptimizer opt(store.size());
  for (int step = 0; step < cfg.steps; ++step) {
    double t0 = detail::now_seconds();
    auto idx = detail::draw_batch(data.size(), cfg.batch, batch_rng);
    Matrix xb = detail::gather_cols(data.x, idx);
    Matrix wb = detail::gather_cols(data.w, idx);
    try {
      auto [value, grad] = ad::value_and_gradient(store, [&](ad::Tape& tape) {
        return conditional_mle_loss(tape, model, tape.constant(xb),
                                    tape.constant(wb));
      });
      opt.step(store.values(), grad, cfg);
      trace.push_back(
          {step, value, grad.norm(), detail::now_seconds() - t0});
    } catch (const NumericError& e) {
      detail::rethrow_at_step(step, e);
    }
  }
  return trace;
}

// Dispatchers matching the configured objective.
inline TraceRecord fit(DifStack& model, ParameterStore& store,
                       const Matrix& data, const TrainConfig& cfg) {
  if (cfg.objective == Objective::kGem)
    return fit_gem(model, store, data, cfg).trace;
  check(cfg.objective == Objective::kMle,
        "sample-based fit supports mle or gem objectives");
  return fit_mle(model, store, data, cfg);
}

inline TraceRecord fit(DifStack& model, ParameterStore& store,
                       const TargetDensity& log_p, const TrainConfig& cfg) {
  check(cfg.objective == Objective::kRbKl,
        "target-based fit supports the rb_kl objective");
  return fit_rb_kl(model, store, log_p, cfg);
}

// ---------------------------------------------------------------------------
// SIR post-processing

struct SirResult {
  Matrix samples;          // d x n_out resampled points
  double log_const = 0.0;  // log mean(p~/psi) over proposals
  double const_estimate = 0.0;
  double const_se = 0.0;  // standard error of the mean importance weight
};

// Proposals from the model, importance weights p~/psi, multinomial resample.
inline SirResult sir_resample(const DifStack& model,
                              const ParameterStore& store,
                              const TargetDensity& log_p, Index n_proposals,
                              Index n_out, RngStream& rng) {
  check(n_proposals >= 1 && n_out >= 1, "SIR needs positive sample counts");
  check(n_proposals >= n_out, "SIR needs n_proposals >= n_out");
  BackwardSamples prop = sample_backward(model, store, n_proposals, rng);
  RowVector lpsi = log_density(model, store, prop.x);
  Matrix lpt = log_p.direct(prop.x);
  RowVector logw = RowVector(lpt.row(0)) - lpsi;

  double m = logw.maxCoeff();
  if (!std::isfinite(m))
    throw NumericError("SIR importance weights are all zero");
  RowVector wtil = (logw.array() - m).exp();
  double total = wtil.sum();
  double n = static_cast<double>(n_proposals);
  SirResult out;
  out.log_const = m + std::log(total / n);
  out.const_estimate = std::exp(out.log_const);
  double mean_wtil = total / n;
  double ss = (wtil.array() - mean_wtil).square().sum();
  out.const_se =
      n > 1.0 ? std::exp(m) * std::sqrt(ss / (n - 1.0) / n) : 0.0;

  Vector cum(n_proposals);
  double acc = 0.0;
  for (Index i = 0; i < n_proposals; ++i) {
    acc += wtil[i] / total;
    cum[i] = acc;
  }
  cum[n_proposals - 1] = 1.0;
  out.samples.resize(model.dim, n_out);
  for (Index i = 0; i < n_out; ++i) {
    double u = rng.uniform();
    Index lo = 0, hi = n_proposals - 1;
    while (lo < hi) {
      Index mid = (lo + hi) / 2;
      if (cum[mid] > u)
        hi = mid;
      else
        lo = mid + 1;
    }
    out.samples.col(i) = prop.x.col(lo);
  }
  return out;
}

}  // namespace diflab

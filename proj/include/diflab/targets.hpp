#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "diflab/ad.hpp"
#include "diflab/common.hpp"
#include "diflab/gmm.hpp"
#include "diflab/io.hpp"
#include "diflab/random.hpp"

// Benchmark targets. Each target can sample and/or evaluate an unnormalized
// log-density; density evaluation is written against the engine interface so
// reverse-KL objectives can differentiate through it.

namespace diflab {

enum class TargetKind {
  kTwoMoons,
  kSCurve,
  kGaussianMixture,
  kImageDensity,
  kFiveModes,
};

struct Target {
  TargetKind kind = TargetKind::kGaussianMixture;
  Index dim = 1;
  bool can_sample = false;
  bool can_eval = false;

  DiagonalGmm gmm;            // gaussian_mixture / five_modes
  double log_shift = 0.0;     // log p~ = log p + log_shift (known constant)
  double noise = 0.05;        // two_moons / s_curve
  Matrix image;               // intensities, row 0 at the top
  Vector pixel_cdf;           // cumulative pixel probabilities, row-major

  Matrix sample(Index n, RngStream& rng) const;
  RowVector unnorm_log_pdf(const Matrix& x) const;
  template <class E>
  typename E::Value unnorm_log_pdf_e(E& eng, typename E::Value x) const;
};

// ---------------------------------------------------------------------------
// Constructors

inline Target make_gaussian_mixture_target(DiagonalGmm g,
                                           double log_shift = 0.0) {
  Target t;
  t.kind = TargetKind::kGaussianMixture;
  t.dim = g.dim();
  t.can_sample = true;
  t.can_eval = true;
  t.gmm = std::move(g);
  t.log_shift = log_shift;
  return t;
}

// Equal mixture of 5 unit-weight modes at {-4,-2,0,2,4}, sigma = 0.35.
inline Target make_five_modes_target() {
  DiagonalGmm g;
  g.alpha = Vector::Constant(5, 0.2);
  g.means.resize(1, 5);
  g.means << -4.0, -2.0, 0.0, 2.0, 4.0;
  g.vars = Matrix::Constant(1, 5, 0.35 * 0.35);
  Target t = make_gaussian_mixture_target(std::move(g));
  t.kind = TargetKind::kFiveModes;
  return t;
}

// Two interleaved half-circle arcs: moon 1 is the upper unit arc at the
// origin, moon 2 its point reflection through (0.5, 0.25). The analytic
// surrogate density is a ring Gaussian times a half-plane factor per moon.
inline Target make_two_moons_target(double noise = 0.05) {
  Target t;
  t.kind = TargetKind::kTwoMoons;
  t.dim = 2;
  t.can_sample = true;
  t.can_eval = true;
  t.noise = noise;
  return t;
}

inline Target make_s_curve_target(double noise = 0.05) {
  Target t;
  t.kind = TargetKind::kSCurve;
  t.dim = 2;
  t.can_sample = true;
  t.can_eval = false;
  t.noise = noise;
  return t;
}

// Density proportional to pixel intensity on [0,1]^2; row 0 of the image is
// the top of the box (y-axis flipped). Sampling picks a pixel by intensity
// and jitters uniformly within its cell.
inline Target make_image_target(Matrix image) {
  Target t;
  t.kind = TargetKind::kImageDensity;
  t.dim = 2;
  t.can_sample = true;
  t.can_eval = false;
  double total = image.sum();
  check((image.array() >= 0.0).all(), "image intensities must be >= 0");
  check(total > 0.0, "image is all zero");
  t.pixel_cdf.resize(image.size());
  double acc = 0.0;
  Index i = 0;
  for (Index r = 0; r < image.rows(); ++r)
    for (Index c = 0; c < image.cols(); ++c) {
      acc += image(r, c) / total;
      t.pixel_cdf[i++] = acc;
    }
  t.pixel_cdf[image.size() - 1] = 1.0;
  t.image = std::move(image);
  return t;
}

inline Target load_image_density(const std::string& path) {
  return make_image_target(read_pgm(path));
}

// ---------------------------------------------------------------------------
// Sampling

inline Matrix Target::sample(Index n, RngStream& rng) const {
  check(can_sample, "target cannot sample");
  Matrix x(dim, n);
  switch (kind) {
    case TargetKind::kGaussianMixture:
    case TargetKind::kFiveModes:
      return gmm_sample(gmm, n, rng);
    case TargetKind::kTwoMoons:
      for (Index i = 0; i < n; ++i) {
        bool second = rng.uniform() < 0.5;
        double a = rng.uniform() * 3.14159265358979323846;
        double px = std::cos(a), py = std::sin(a);
        if (second) {
          px = 1.0 - px;
          py = 0.5 - py;
        }
        x(0, i) = px + noise * rng.normal();
        x(1, i) = py + noise * rng.normal();
      }
      return x;
    case TargetKind::kSCurve:
      for (Index i = 0; i < n; ++i) {
        double t = 3.0 * 3.14159265358979323846 * (rng.uniform() - 0.5);
        double px = std::sin(t);
        double py = (t >= 0.0 ? 1.0 : -1.0) * (std::cos(t) - 1.0);
        x(0, i) = px + noise * rng.normal();
        x(1, i) = py + noise * rng.normal();
      }
      return x;
    case TargetKind::kImageDensity: {
      Index w = image.cols(), h = image.rows();
      for (Index i = 0; i < n; ++i) {
        double u = rng.uniform();
        Index lo = 0, hi = pixel_cdf.size() - 1;
        while (lo < hi) {  // first index with cdf > u
          Index mid = (lo + hi) / 2;
          if (pixel_cdf[mid] > u)
            hi = mid;
          else
            lo = mid + 1;
        }
        Index r = lo / w, c = lo % w;
        x(0, i) = (static_cast<double>(c) + rng.uniform()) /
                  static_cast<double>(w);
        x(1, i) = (static_cast<double>(h - 1 - r) + rng.uniform()) /
                  static_cast<double>(h);
      }
      return x;
    }
  }
  throw std::logic_error("unreachable target kind");
}

// ---------------------------------------------------------------------------
// Unnormalized log-density (engine-generic)

template <class E>
typename E::Value Target::unnorm_log_pdf_e(E& eng, typename E::Value x) const {
  check(can_eval, "target cannot evaluate an unnormalized log-density");
  switch (kind) {
    case TargetKind::kGaussianMixture:
    case TargetKind::kFiveModes: {
      std::vector<typename E::Value> rows;
      for (Index k = 0; k < gmm.K(); ++k) {
        double c = std::log(gmm.alpha[k]) -
                   0.5 * static_cast<double>(dim) * kLogTwoPi -
                   0.5 * gmm.vars.col(k).array().log().sum();
        auto centered =
            eng.sub_col(x, eng.constant(gmm.means.col(k)));
        auto scaled = eng.mul_col(
            centered, eng.constant(gmm.vars.col(k).cwiseInverse()));
        auto quad = eng.colwise_sum(eng.cmul(centered, scaled));
        rows.push_back(eng.add_scalar(eng.scale(quad, -0.5), c + log_shift));
      }
      if (rows.size() == 1) return rows[0];
      return eng.logsumexp_colwise(eng.vstack(rows));
    }
    case TargetKind::kTwoMoons: {
      // log p~ per moon: -((r-1)^2 + min(y,0)^2) / (2 sigma^2) in the moon's
      // own frame; moon 2 uses the reflected frame (1-x, 0.5-y).
      double coef = -0.5 / (noise * noise);
      auto moon_log = [&](typename E::Value px, typename E::Value py) {
        auto r = eng.sqrt(eng.add(eng.cmul(px, px), eng.cmul(py, py)));
        auto ring = eng.add_scalar(r, -1.0);
        auto below = eng.relu(eng.neg(py));
        auto q = eng.add(eng.cmul(ring, ring), eng.cmul(below, below));
        return eng.add_scalar(eng.scale(q, coef), std::log(0.5));
      };
      auto px = eng.select_rows(x, {0});
      auto py = eng.select_rows(x, {1});
      auto m1 = moon_log(px, py);
      auto m2 = moon_log(eng.add_scalar(eng.neg(px), 1.0),
                         eng.add_scalar(eng.neg(py), 0.5));
      return eng.logsumexp_colwise(eng.vstack({m1, m2}));
    }
    default:
      throw std::invalid_argument("target has no evaluable density");
  }
}

inline RowVector Target::unnorm_log_pdf(const Matrix& x) const {
  ad::Direct eng;
  return unnorm_log_pdf_e(eng, x);
}

// ---------------------------------------------------------------------------
// Config parsing

inline Target target_from_json(const nlohmann::json& j) {
  check(j.is_object() && j.contains("kind"), "target: missing 'kind'");
  std::string kind = j["kind"].get<std::string>();
  double noise = j.value("noise", 0.05);
  if (kind == "five_modes_1d") return make_five_modes_target();
  if (kind == "two_moons") return make_two_moons_target(noise);
  if (kind == "s_curve") return make_s_curve_target(noise);
  if (kind == "image_density") {
    check(j.contains("path"), "target: image_density needs 'path'");
    return load_image_density(j["path"].get<std::string>());
  }
  if (kind == "gaussian_mixture") {
    check(j.contains("alpha") && j.contains("means") && j.contains("vars"),
          "target: gaussian_mixture needs 'alpha', 'means', 'vars'");
    DiagonalGmm g;
    auto alpha = j["alpha"].get<std::vector<double>>();
    auto means = j["means"].get<std::vector<std::vector<double>>>();
    auto vars = j["vars"].get<std::vector<std::vector<double>>>();
    Index k = static_cast<Index>(alpha.size());
    check(k >= 1, "target: gaussian_mixture needs at least one component");
    check(static_cast<Index>(means.size()) == k &&
              static_cast<Index>(vars.size()) == k,
          "target: 'means' and 'vars' must have one entry per component");
    Index d = static_cast<Index>(means[0].size());
    g.alpha.resize(k);
    g.means.resize(d, k);
    g.vars.resize(d, k);
    for (Index c = 0; c < k; ++c) {
      g.alpha[c] = alpha[c];
      check(static_cast<Index>(means[c].size()) == d &&
                static_cast<Index>(vars[c].size()) == d,
            "target: ragged 'means'/'vars'");
      for (Index r = 0; r < d; ++r) {
        g.means(r, c) = means[c][r];
        check(vars[c][r] > 0.0, "target: variances must be positive");
        g.vars(r, c) = vars[c][r];
      }
    }
    check((g.alpha.array() > 0.0).all(), "target: weights must be positive");
    g.alpha /= g.alpha.sum();
    return make_gaussian_mixture_target(std::move(g),
                                        j.value("log_norm_const", 0.0));
  }
  throw std::invalid_argument("target: unknown kind '" + kind + "'");
}

}  // namespace diflab

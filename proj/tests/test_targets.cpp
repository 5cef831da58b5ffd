#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <diflab/diflab.hpp>

#include "support/stats.hpp"

using namespace diflab;

namespace {

namespace fs = std::filesystem;

// Scratch directory for files written by these tests.
fs::path scratch_dir() {
  fs::path p = fs::path("targets_scratch");
  fs::create_directories(p);
  return p;
}

std::string write_text(const std::string& name, const std::string& body) {
  fs::path p = scratch_dir() / name;
  std::ofstream out(p);
  out << body;
  return p.string();
}

double normal_cdf(double x, double mu, double sigma) {
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0)));
}

// Independent log-density for a diagonal-covariance mixture, computed from
// the textbook formula without reusing the library evaluation path.
double mixture_log_density_oracle(const std::vector<double>& alpha,
                                  const std::vector<double>& mean,
                                  const std::vector<double>& sigma, double x) {
  double acc = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    double z = (x - mean[k]) / sigma[k];
    acc += alpha[k] / (sigma[k] * std::sqrt(2.0 * M_PI)) *
           std::exp(-0.5 * z * z);
  }
  return std::log(acc);
}

DiagonalGmm single_standard_normal() {
  DiagonalGmm g;
  g.alpha = Vector::Constant(1, 1.0);
  g.means = Matrix::Zero(1, 1);
  g.vars = Matrix::Constant(1, 1, 1.0);
  return g;
}

}  // namespace

TEST_CASE("gaussian mixture sampling hits the target mean") {
  Target t = make_gaussian_mixture_target(single_standard_normal());
  RngStream rng(7, 0);
  Matrix x = t.sample(100000, rng);
  REQUIRE(x.rows() == 1);
  REQUIRE(x.cols() == 100000);
  REQUIRE(std::abs(x.row(0).mean()) < 0.01);
}

TEST_CASE("zero-noise moons lie exactly on the two arcs") {
  Target t = make_two_moons_target(0.0);
  RngStream rng(11, 0);
  Matrix x = t.sample(2000, rng);
  for (Index i = 0; i < x.cols(); ++i) {
    double px = x(0, i), py = x(1, i);
    double r1 = std::hypot(px, py);
    double r2 = std::hypot(1.0 - px, 0.5 - py);
    bool on_first = std::abs(r1 - 1.0) <= 1e-12 && py >= -1e-12;
    bool on_second = std::abs(r2 - 1.0) <= 1e-12 && 0.5 - py >= -1e-12;
    REQUIRE((on_first || on_second));
  }
}

TEST_CASE("white-image samples are uniform over the box") {
  Target t = make_image_target(Matrix::Constant(16, 16, 255.0));
  RngStream rng(3, 0);
  const Index n = 100000;
  Matrix x = t.sample(n, rng);
  std::vector<double> observed(100, 0.0), expected(100, n / 100.0);
  for (Index i = 0; i < n; ++i) {
    int cx = std::min(9, static_cast<int>(x(0, i) * 10.0));
    int cy = std::min(9, static_cast<int>(x(1, i) * 10.0));
    observed[static_cast<std::size_t>(cy * 10 + cx)] += 1.0;
  }
  REQUIRE(testsupport::chi2_pvalue(observed, expected) > 0.01);
}

TEST_CASE("standard normal log-density and known-constant shift") {
  Target base = make_gaussian_mixture_target(single_standard_normal());
  Matrix zero = Matrix::Zero(1, 1);
  double at_zero = base.unnorm_log_pdf(zero)[0];
  REQUIRE(at_zero == Catch::Approx(-0.5 * kLogTwoPi).margin(1e-15));

  // Multiplying the unnormalized density by e must shift the log by one.
  Target shifted = make_gaussian_mixture_target(single_standard_normal(), 1.0);
  REQUIRE(shifted.unnorm_log_pdf(zero)[0] - at_zero == 1.0);
  RngStream rng(5, 0);
  Matrix pts = rng.normal_matrix(1, 50);
  RowVector a = base.unnorm_log_pdf(pts);
  RowVector b = shifted.unnorm_log_pdf(pts);
  REQUIRE((b - a).array().abs().maxCoeff() ==
          Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("mixture log-density matches a direct formula") {
  nlohmann::json j = {{"kind", "gaussian_mixture"},
                      {"alpha", {0.3, 0.7}},
                      {"means", {{-1.5}, {2.0}}},
                      {"vars", {{0.49}, {1.21}}}};
  Target t = target_from_json(j);
  REQUIRE(t.dim == 1);
  REQUIRE(t.can_sample);
  REQUIRE(t.can_eval);
  RngStream rng(9, 0);
  for (int i = 0; i < 40; ++i) {
    double x = rng.uniform(-6.0, 6.0);
    Matrix pt = Matrix::Constant(1, 1, x);
    double got = t.unnorm_log_pdf(pt)[0];
    double want =
        mixture_log_density_oracle({0.3, 0.7}, {-1.5, 2.0}, {0.7, 1.1}, x);
    REQUIRE(got == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("moons surrogate density is reflection symmetric") {
  Target t = make_two_moons_target();
  RngStream rng(13, 0);
  for (int i = 0; i < 200; ++i) {
    Matrix p(2, 2);
    p(0, 0) = rng.uniform(-2.0, 3.0);
    p(1, 0) = rng.uniform(-2.0, 2.5);
    p(0, 1) = 1.0 - p(0, 0);
    p(1, 1) = 0.5 - p(1, 0);
    RowVector v = t.unnorm_log_pdf(p);
    REQUIRE(v[0] == Catch::Approx(v[1]).margin(1e-9));
  }
}

TEST_CASE("quadrature integrates the standard normal to one") {
  auto density = [](const Matrix& pts) -> RowVector {
    return (-0.5 * pts.row(0).array().square() - 0.5 * kLogTwoPi).exp();
  };
  double integral = quadrature_integral(density, {{-10.0, 10.0, 20001}});
  REQUIRE(integral == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("quadrature of a constant returns the box volume exactly") {
  auto one = [](const Matrix& pts) -> RowVector {
    return RowVector::Ones(pts.cols());
  };
  REQUIRE(quadrature_integral(one, {{0.0, 1.0, 5}}) == 1.0);
  REQUIRE(quadrature_integral(one, {{0.0, 1.0, 5}, {0.0, 2.0, 9}}) == 2.0);
}

TEST_CASE("two-dimensional quadrature integrates the standard normal") {
  auto density = [](const Matrix& pts) -> RowVector {
    return (-0.5 * pts.array().square().colwise().sum() - kLogTwoPi).exp();
  };
  double integral =
      quadrature_integral(density, {{-8.0, 8.0, 801}, {-8.0, 8.0, 801}});
  REQUIRE(integral == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("quadrature error shrinks at second order") {
  // Smooth integrand with a known integral: e^x over [0, 1].
  auto f = [](const Matrix& pts) -> RowVector {
    return pts.row(0).array().exp();
  };
  double truth = std::exp(1.0) - 1.0;
  double e_coarse = std::abs(quadrature_integral(f, {{0.0, 1.0, 9}}) - truth);
  double e_mid = std::abs(quadrature_integral(f, {{0.0, 1.0, 17}}) - truth);
  double e_fine = std::abs(quadrature_integral(f, {{0.0, 1.0, 33}}) - truth);
  double r1 = e_coarse / e_mid;
  double r2 = e_mid / e_fine;
  REQUIRE(r1 > 3.5);
  REQUIRE(r1 < 4.5);
  REQUIRE(r2 > 3.5);
  REQUIRE(r2 < 4.5);
}

TEST_CASE("single-pixel image yields uniform samples") {
  Target t = make_image_target(Matrix::Constant(1, 1, 200.0));
  RngStream rng(17, 0);
  const Index n = 10000;
  Matrix x = t.sample(n, rng);
  REQUIRE((x.array() >= 0.0).all());
  REQUIRE((x.array() < 1.0).all());
  double sd3 = 3.0 / std::sqrt(12.0 * static_cast<double>(n));
  REQUIRE(std::abs(x.row(0).mean() - 0.5) < sd3);
  REQUIRE(std::abs(x.row(1).mean() - 0.5) < sd3);
}

TEST_CASE("pixel intensities set cell frequencies") {
  Matrix img(1, 2);
  img << 3.0, 1.0;
  Target t = make_image_target(img);
  RngStream rng(19, 0);
  const double n = 100000;
  Matrix x = t.sample(static_cast<Index>(n), rng);
  double left = static_cast<double>((x.row(0).array() < 0.5).count());
  REQUIRE(std::abs(left - 0.75 * n) < 3.0 * testsupport::binomial_sd(n, 0.75));
}

TEST_CASE("checkerboard zero cells are never hit") {
  Matrix img(2, 2);
  img << 255.0, 0.0, 0.0, 255.0;
  Target t = make_image_target(img);
  RngStream rng(23, 0);
  Matrix x = t.sample(20000, rng);
  for (Index i = 0; i < x.cols(); ++i) {
    bool left = x(0, i) < 0.5;
    bool top = x(1, i) >= 0.5;
    // Intensity sits on the main diagonal: top-left and bottom-right.
    REQUIRE(left == top);
  }
}

TEST_CASE("pgm rows are flipped so row zero is the top of the box") {
  Matrix img(2, 1);
  img << 7.0, 0.0;  // bright pixel in row 0
  fs::path p = scratch_dir() / "flip.pgm";
  write_pgm(p.string(), img);
  Target t = load_image_density(p.string());
  RngStream rng(29, 0);
  Matrix x = t.sample(5000, rng);
  REQUIRE((x.row(1).array() >= 0.5).all());
}

TEST_CASE("pgm validation rejects malformed input") {
  REQUIRE_THROWS_AS(
      read_pgm(write_text("magic.pgm", "P5\n2 2\n255\n0 1 2 3\n")),
      std::invalid_argument);
  REQUIRE_THROWS_AS(read_pgm(write_text("short.pgm", "P2\n2\n")),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      read_pgm(write_text("depth.pgm", "P2\n1 1\n70000\n1\n")),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      read_pgm(write_text("count.pgm", "P2\n2 2\n255\n1 2 3\n")),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      read_pgm(write_text("range.pgm", "P2\n1 2\n10\n4 11\n")),
      std::invalid_argument);
  REQUIRE_THROWS_AS(read_pgm(write_text("nan.pgm", "P2\n1 1\n255\nxyz\n")),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      load_image_density(write_text("zero.pgm", "P2\n2 1\n255\n0 0\n")),
      std::invalid_argument);

  // 16-bit depth and comment lines are accepted.
  Matrix deep = read_pgm(
      write_text("deep.pgm", "P2\n# comment\n2 1\n65535\n65535 123\n"));
  REQUIRE(deep.rows() == 1);
  REQUIRE(deep.cols() == 2);
  REQUIRE(deep(0, 0) == 65535.0);
  REQUIRE(deep(0, 1) == 123.0);
}

TEST_CASE("csv datasets split covariates from observations") {
  Dataset plain = load_csv_dataset(
      write_text("plain.csv", "x0,x1\n1,2\n3,4\n5,6\n"));
  REQUIRE(plain.dim() == 2);
  REQUIRE(plain.cov_dim() == 0);
  REQUIRE(plain.size() == 3);
  REQUIRE(plain.x(0, 1) == 3.0);
  REQUIRE(plain.x(1, 2) == 6.0);

  Dataset cond = load_csv_dataset(
      write_text("cond.csv", "w_0,x0\n0.5,1.5\n-1,2\n"));
  REQUIRE(cond.dim() == 1);
  REQUIRE(cond.cov_dim() == 1);
  REQUIRE(cond.size() == 2);
  REQUIRE(cond.w(0, 0) == 0.5);
  REQUIRE(cond.x(0, 0) == 1.5);

  REQUIRE_THROWS_AS(
      load_csv_dataset(write_text("ragged.csv", "x0,x1\n1,2\n3\n")),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      load_csv_dataset(write_text("text.csv", "x0\n1\nfoo\n")),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      load_csv_dataset(write_text("onlyw.csv", "w_0\n1\n")),
      std::invalid_argument);
}

TEST_CASE("csv datasets survive a write and reload bit for bit") {
  RngStream rng(31, 0);
  Dataset ds;
  ds.x = rng.normal_matrix(3, 40);
  ds.w = rng.normal_matrix(2, 40);
  ds.x(0, 0) = 1.0 / 3.0;
  ds.x(1, 0) = 1e-17;
  ds.x(2, 0) = -0.0;
  ds.w(0, 0) = 1e300;
  fs::path p = scratch_dir() / "roundtrip.csv";
  save_csv_dataset(p.string(), ds);
  Dataset back = load_csv_dataset(p.string());
  REQUIRE(back.dim() == 3);
  REQUIRE(back.cov_dim() == 2);
  REQUIRE(back.size() == 40);
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.dim(); ++j) REQUIRE(back.x(j, i) == ds.x(j, i));
    for (Index j = 0; j < ds.cov_dim(); ++j)
      REQUIRE(back.w(j, i) == ds.w(j, i));
  }
}

TEST_CASE("mixture samples match the analytic distribution function") {
  nlohmann::json j = {{"kind", "gaussian_mixture"},
                      {"alpha", {0.4, 0.6}},
                      {"means", {{-2.0}, {1.0}}},
                      {"vars", {{1.0}, {0.25}}}};
  Target t = target_from_json(j);
  RngStream rng(37, 0);
  const Index n = 100000;
  Matrix x = t.sample(n, rng);
  std::vector<double> samples(x.data(), x.data() + n);
  auto cdf = [](double v) {
    return 0.4 * normal_cdf(v, -2.0, 1.0) + 0.6 * normal_cdf(v, 1.0, 0.5);
  };
  REQUIRE(testsupport::ks_statistic(samples, cdf) < 0.006);
}

TEST_CASE("five-modes target is the declared five-component mixture") {
  Target t = make_five_modes_target();
  REQUIRE(t.dim == 1);
  REQUIRE(t.can_sample);
  REQUIRE(t.can_eval);
  std::vector<double> alpha(5, 0.2), mean = {-4.0, -2.0, 0.0, 2.0, 4.0},
                      sigma(5, 0.35);
  RngStream rng(41, 0);
  for (int i = 0; i < 30; ++i) {
    double x = rng.uniform(-5.5, 5.5);
    Matrix pt = Matrix::Constant(1, 1, x);
    double want = mixture_log_density_oracle(alpha, mean, sigma, x);
    REQUIRE(t.unnorm_log_pdf(pt)[0] == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("targets enforce their capability flags") {
  Target s = make_s_curve_target();
  REQUIRE(s.can_sample);
  REQUIRE_FALSE(s.can_eval);
  Matrix pt = Matrix::Zero(2, 1);
  REQUIRE_THROWS_AS(s.unnorm_log_pdf(pt), std::invalid_argument);

  Target none;
  none.can_sample = false;
  RngStream rng(43, 0);
  REQUIRE_THROWS_AS(none.sample(10, rng), std::invalid_argument);

  RngStream rng2(43, 0);
  Matrix sx = s.sample(500, rng2);
  REQUIRE(sx.rows() == 2);
  REQUIRE(sx.cols() == 500);
  REQUIRE(sx.allFinite());
}

TEST_CASE("grid axes are validated") {
  auto one = [](const Matrix& pts) -> RowVector {
    return RowVector::Ones(pts.cols());
  };
  REQUIRE_THROWS_AS(quadrature_integral(one, {{0.0, 1.0, 1}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(quadrature_integral(one, std::vector<GridAxis>{}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(quadrature_integral(one, {{1.0, 0.0, 5}}),
                    std::invalid_argument);
}

TEST_CASE("density grid export carries the axis header") {
  auto f = [](const Matrix& pts) -> RowVector {
    return pts.row(0) + 2.0 * pts.row(1);
  };
  DensityGrid grid = evaluate_grid(f, {{0.0, 1.0, 3}, {0.0, 1.0, 4}});
  fs::path p = scratch_dir() / "grid.csv";
  write_density_grid_csv(p.string(), grid);

  std::ifstream in(p.string());
  std::string line;
  REQUIRE(static_cast<bool>(std::getline(in, line)));
  REQUIRE(line.rfind("#", 0) == 0);
  REQUIRE(line.find("axis0 0 1 3") != std::string::npos);
  REQUIRE(line.find("axis1 0 1 4") != std::string::npos);
  REQUIRE(static_cast<bool>(std::getline(in, line)));
  REQUIRE(line == "x0,x1,density");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 12);
}

TEST_CASE("target json parsing verifies its fields") {
  REQUIRE_THROWS_AS(target_from_json({{"kind", "warp_field"}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(target_from_json(nlohmann::json::object()),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      target_from_json({{"kind", "gaussian_mixture"}, {"alpha", {1.0}}}),
      std::invalid_argument);
  REQUIRE_THROWS_AS(target_from_json({{"kind", "gaussian_mixture"},
                                      {"alpha", {0.5, 0.5}},
                                      {"means", {{0.0}, {1.0, 2.0}}},
                                      {"vars", {{1.0}, {1.0}}}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(target_from_json({{"kind", "gaussian_mixture"},
                                      {"alpha", {1.0}},
                                      {"means", {{0.0}}},
                                      {"vars", {{-1.0}}}}),
                    std::invalid_argument);

  // Unnormalized weights are normalized on load.
  Target t = target_from_json({{"kind", "gaussian_mixture"},
                               {"alpha", {2.0, 2.0}},
                               {"means", {{-1.0}, {1.0}}},
                               {"vars", {{1.0}, {1.0}}}});
  REQUIRE(t.gmm.alpha[0] == 0.5);
  REQUIRE(t.gmm.alpha[1] == 0.5);
}

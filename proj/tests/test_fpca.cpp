#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "imgscc/errors.hpp"
#include "imgscc/estimator.hpp"
#include "imgscc/fpca.hpp"

namespace {

using imgscc::CovarianceModel;
using imgscc::ErrorCovariance;
using imgscc::FitContext;
using imgscc::ImageStack;
using imgscc::KappaRule;
using imgscc::MeanFitResult;
using imgscc::Point2;
using imgscc::SplineBasisSystem;
using imgscc::TriangulationMesh;

// Unit-square pixel grid of m x m cell centers (all inside a square mesh).
std::vector<Point2> unit_grid(int m) {
  std::vector<Point2> pts;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      pts.push_back({(i + 0.5) / m, (j + 0.5) / m});
    }
  }
  return pts;
}

// Independent smoother oracle: beta_i = (U'U + rho D)^{-1} U' r_i by full
// pivoting, one row per subject.
Eigen::MatrixXd oracle_eta_coeffs(const FitContext& ctx, const Eigen::MatrixXd& residuals,
                                  double rho) {
  const Eigen::MatrixXd lhs = ctx.normal_matrix() + rho * ctx.reduced_penalty();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
  return lu.solve(ctx.design().transpose() * residuals.transpose()).transpose();
}

// Stack whose rows are smooth fields plus Gaussian noise, plus a mean.
ImageStack synthetic_stack(const FitContext& ctx, int n_subjects, double noise_sd,
                           unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto& pts = ctx.pixels();
  const int n_pixels = static_cast<int>(pts.size());

  ImageStack stack;
  stack.pixels = pts;
  stack.values.resize(n_subjects, n_pixels);
  for (int i = 0; i < n_subjects; ++i) {
    const double a = gauss(rng);
    const double b = gauss(rng);
    for (int j = 0; j < n_pixels; ++j) {
      const double base = 1.0 + pts[j].z1 + 0.5 * pts[j].z2 * pts[j].z2;
      const double bump = a * std::sin(2.0 * pts[j].z1) + b * pts[j].z1 * pts[j].z2;
      stack.values(i, j) = base + bump + noise_sd * gauss(rng);
    }
  }
  return stack;
}

}  // namespace

TEST_CASE("zero residuals give a zero covariance and no positive eigenvalues") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(9));

  ImageStack stack;
  stack.pixels = ctx.pixels();
  stack.values.resize(3, ctx.n_pixels());
  MeanFitResult fit;
  fit.fitted.resize(ctx.n_pixels());
  for (int j = 0; j < ctx.n_pixels(); ++j) fit.fitted(j) = 2.0 + ctx.pixels()[j].z1;
  for (int i = 0; i < 3; ++i) stack.values.row(i) = fit.fitted.transpose();

  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx, 0.75);
  CHECK(model.eta_coeffs.rows() == 3);
  CHECK(model.eta_coeffs.norm() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(model.s_eta.norm() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(model.pixel_area == doctest::Approx(1.0 / 81).epsilon(1e-12));
  CHECK(model.rho_eta == 0.75);
  CHECK_THROWS_AS(imgscc::eigen_decompose(model, ctx), imgscc::NoPositiveEigenvalues);
}

TEST_CASE("single subject covariance is the squared smoothed deviation") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(11));
  const double rho = 0.3;

  ImageStack stack = synthetic_stack(ctx, 1, 0.05, 42);
  MeanFitResult fit;
  fit.fitted = Eigen::VectorXd::Zero(ctx.n_pixels());

  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx, rho);
  imgscc::eigen_decompose(model, ctx, KappaRule{0.95, std::nullopt});

  const Eigen::MatrixXd oracle = oracle_eta_coeffs(ctx, stack.values, rho);
  CHECK((model.eta_coeffs - oracle).norm() < 1e-9 * (1.0 + oracle.norm()));

  // Rank one: a single positive eigenvalue equal to the squared discrete
  // norm of eta_1, and G(z_j, z_j) = eta_1(z_j)^2 at every pixel.
  REQUIRE(model.eigenvalues.size() == 1);
  CHECK(model.kappa == 1);
  const Eigen::VectorXd eta_values = ctx.design() * oracle.row(0).transpose();
  const double norm2 = model.pixel_area * eta_values.squaredNorm();
  CHECK(model.eigenvalues(0) == doctest::Approx(norm2).epsilon(1e-10));
  for (int j = 0; j < ctx.n_pixels(); ++j) {
    CHECK(model.geta_diag(j) ==
          doctest::Approx(eta_values(j) * eta_values(j)).epsilon(1e-8));
  }
}

TEST_CASE("coefficient-space eigenpairs match a dense pixel-space eigensolve") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(15));
  const int n_pixels = ctx.n_pixels();
  const double rho = 0.8;

  ImageStack stack = synthetic_stack(ctx, 12, 0.1, 2026);
  MeanFitResult fit = imgscc::fit_mean(stack, ctx, 0.0);

  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx, rho);
  imgscc::eigen_decompose(model, ctx);

  // Dense oracle: eigenpairs of A * G with G the n^-1 V' V pixel covariance
  // of the independently smoothed deviations.
  const Eigen::MatrixXd residuals =
      stack.values.rowwise() - fit.fitted.transpose();
  const Eigen::MatrixXd beta = oracle_eta_coeffs(ctx, residuals, rho);
  const Eigen::MatrixXd values = beta * ctx.design().transpose();  // n x N
  const Eigen::MatrixXd g_dense = values.transpose() * values / stack.n_subjects();
  const double area = 1.0 / n_pixels;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> dense(g_dense * area);
  REQUIRE(dense.info() == Eigen::Success);

  REQUIRE(model.eigenvalues.size() >= 3);
  const double scale = dense.eigenvalues().cwiseAbs().maxCoeff();
  for (int k = 0; k < model.eigenvalues.size(); ++k) {
    const double lambda_dense = dense.eigenvalues()(n_pixels - 1 - k);
    CHECK(model.eigenvalues(k) == doctest::Approx(lambda_dense).epsilon(1e-6));

    // Compare eigenfunctions where the eigenvalue is simple enough for the
    // two solvers to agree on the direction.
    const double next = k + 1 < n_pixels ? dense.eigenvalues()(n_pixels - 2 - k) : 0.0;
    if (lambda_dense - next < 1e-5 * scale) continue;
    Eigen::VectorXd psi_dense = dense.eigenvectors().col(n_pixels - 1 - k) / std::sqrt(area);
    const Eigen::VectorXd psi_model = model.psi_pixels.row(k).transpose();
    if (psi_dense.dot(psi_model) < 0.0) psi_dense = -psi_dense;
    CHECK((psi_dense - psi_model).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("eigenfunctions are orthonormal under the discrete measure") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 3, 1);
  FitContext ctx(system, unit_grid(13));

  ImageStack stack = synthetic_stack(ctx, 8, 0.05, 7);
  MeanFitResult fit = imgscc::fit_mean(stack, ctx, 0.0);
  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx, 0.2);
  imgscc::eigen_decompose(model, ctx);

  REQUIRE(model.eigenvalues.size() >= 2);
  for (int k = 0; k < model.eigenvalues.size(); ++k) {
    CHECK(model.eigenvalues(k) >= 0.0);
    if (k > 0) CHECK(model.eigenvalues(k) <= model.eigenvalues(k - 1));
    for (int l = 0; l <= k; ++l) {
      const double inner =
          model.pixel_area * model.psi_pixels.row(k).dot(model.psi_pixels.row(l));
      CHECK(inner == doctest::Approx(k == l ? 1.0 : 0.0).epsilon(1e-6));
    }
    // Nonnegative-mean sign convention.
    CHECK(model.psi_pixels.row(k).sum() * model.pixel_area >= -1e-9);
    // Pixel rows are the evaluated coefficient vectors.
    const Eigen::VectorXd direct = ctx.design() * model.eigenfunction_coeffs[k];
    CHECK((model.psi_pixels.row(k).transpose() - direct).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("positive eigenpairs reconstruct the covariance at probe pixels") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(12));

  ImageStack stack = synthetic_stack(ctx, 6, 0.08, 99);
  MeanFitResult fit = imgscc::fit_mean(stack, ctx, 0.0);
  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx, 0.5);
  imgscc::eigen_decompose(model, ctx);

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pick(0, ctx.n_pixels() - 1);
  for (int probe = 0; probe < 50; ++probe) {
    const int a = pick(rng);
    const int b = pick(rng);
    const double direct =
        ctx.design().row(a) * model.s_eta * ctx.design().row(b).transpose();
    double recon = 0.0;
    for (int k = 0; k < model.eigenvalues.size(); ++k) {
      recon += model.eigenvalues(k) * model.psi_pixels(k, a) * model.psi_pixels(k, b);
    }
    CHECK(recon == doctest::Approx(direct).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("automatic eta smoothing matches the pooled GCV choice") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(10));

  ImageStack stack = synthetic_stack(ctx, 5, 0.2, 31);
  MeanFitResult fit = imgscc::fit_mean(stack, ctx, 0.0);

  const Eigen::MatrixXd residuals = stack.values.rowwise() - fit.fitted.transpose();
  const double expected = imgscc::pooled_gcv_select(ctx, residuals);
  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx);
  CHECK(model.rho_eta == expected);
}

TEST_CASE("component count selection follows the variance-fraction rule") {
  Eigen::VectorXd lam(3);
  lam << 1.0, 0.0, 0.0;
  CHECK(imgscc::select_kappa(lam, KappaRule{0.95, std::nullopt}) == 1);

  Eigen::VectorXd two(2);
  two << 0.5, 0.2;
  CHECK(imgscc::select_kappa(two, KappaRule{0.95, std::nullopt}) == 2);
  CHECK(imgscc::select_kappa(two, KappaRule{0.5, std::nullopt}) == 1);
  CHECK(imgscc::select_kappa(two, KappaRule{1.0, std::nullopt}) == 2);
  CHECK(imgscc::select_kappa(two, KappaRule{0.95, 2}) == 2);
  CHECK(imgscc::select_kappa(two, KappaRule{0.95, 1}) == 1);
  CHECK(imgscc::select_kappa(two, KappaRule{0.95, 7}) == 2);  // clamped

  CHECK_THROWS_AS(imgscc::select_kappa(Eigen::VectorXd(), KappaRule{}), imgscc::BadConfig);
  CHECK_THROWS_AS(imgscc::select_kappa(two, KappaRule{0.95, 0}), imgscc::BadConfig);
  CHECK_THROWS_AS(imgscc::select_kappa(two, KappaRule{0.0, std::nullopt}), imgscc::BadConfig);
  CHECK_THROWS_AS(imgscc::select_kappa(two, KappaRule{1.5, std::nullopt}), imgscc::BadConfig);
}

TEST_CASE("noise variance vanishes for exactly representable curves") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(12));

  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd coeffs(4, ctx.reduced_dim());
  for (int i = 0; i < coeffs.rows(); ++i) {
    for (int k = 0; k < coeffs.cols(); ++k) coeffs(i, k) = gauss(rng);
  }
  ImageStack stack;
  stack.pixels = ctx.pixels();
  stack.values = coeffs * ctx.design().transpose();
  MeanFitResult fit;
  fit.fitted = Eigen::VectorXd::Zero(ctx.n_pixels());

  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx, 0.0);
  const Eigen::VectorXd sigma2 = imgscc::estimate_noise(stack, fit, model, ctx);
  CHECK(sigma2.lpNorm<Eigen::Infinity>() < 1e-16);
}

TEST_CASE("noise variance recovers the true level on average") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(15));
  const double sigma = 0.2;

  ImageStack stack = synthetic_stack(ctx, 200, sigma, 321);
  MeanFitResult fit = imgscc::fit_mean(stack, ctx);
  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx, 1e-4);
  const Eigen::VectorXd sigma2 = imgscc::estimate_noise(stack, fit, model, ctx);

  CHECK(sigma2.minCoeff() >= 0.0);
  CHECK(std::abs(sigma2.mean() - sigma * sigma) < 0.01);

  // Wiring oracle: the same quantity assembled densely in the test.
  const Eigen::MatrixXd residuals = stack.values.rowwise() - fit.fitted.transpose();
  const Eigen::MatrixXd eps =
      residuals - model.eta_coeffs * ctx.design().transpose();
  const Eigen::VectorXd oracle =
      eps.array().square().colwise().sum().transpose() / stack.n_subjects();
  CHECK((sigma2 - oracle).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("error covariance factor matches the dense normal-equation oracle") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(13));
  const int n_subjects = 17;
  const double rho_mu = 2.5;
  const int n_pixels = ctx.n_pixels();

  CovarianceModel model;
  model.sigma2_grid.resize(n_pixels);
  for (int j = 0; j < n_pixels; ++j) {
    const auto& p = ctx.pixels()[j];
    model.sigma2_grid(j) = 0.02 + 0.05 * p.z1 + 0.03 * p.z2 * p.z2;
  }

  const ErrorCovariance err = imgscc::error_covariance(model, ctx, rho_mu, n_subjects);

  const Eigen::MatrixXd gamma =
      (ctx.normal_matrix() + (rho_mu / n_subjects) * ctx.reduced_penalty()) / n_pixels;
  const Eigen::MatrixXd gamma_inv = Eigen::FullPivLU<Eigen::MatrixXd>(gamma).inverse();
  const Eigen::MatrixXd weighted =
      ctx.design().transpose() * model.sigma2_grid.asDiagonal() * ctx.design();
  const Eigen::MatrixXd oracle = gamma_inv * weighted * gamma_inv /
                                 (double(n_subjects) * n_pixels * n_pixels);

  CHECK((err.m_eps - oracle).norm() < 1e-10 * (1.0 + oracle.norm()));
  CHECK((err.m_eps - err.m_eps.transpose()).norm() < 1e-12);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(err.m_eps);
  CHECK(eig.eigenvalues().minCoeff() > -1e-12 * eig.eigenvalues().cwiseAbs().maxCoeff());

  for (int j = 0; j < n_pixels; ++j) {
    const double direct = ctx.design().row(j) * oracle * ctx.design().row(j).transpose();
    CHECK(err.diag_pixels(j) == doctest::Approx(direct).epsilon(1e-9));
  }
}

TEST_CASE("zero noise variance gives a zero error covariance") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  FitContext ctx(system, unit_grid(10));

  CovarianceModel model;
  model.sigma2_grid = Eigen::VectorXd::Zero(ctx.n_pixels());
  const ErrorCovariance err = imgscc::error_covariance(model, ctx, 1.0, 5);
  CHECK(err.m_eps.norm() == 0.0);
  CHECK(err.diag_pixels.norm() == 0.0);
}

TEST_CASE("error covariance diagonal shrinks roughly linearly in pixel count") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);
  const int n_subjects = 40;

  auto mean_diag = [&](int m) {
    FitContext ctx(system, unit_grid(m));
    CovarianceModel model;
    model.sigma2_grid = Eigen::VectorXd::Constant(ctx.n_pixels(), 0.04);
    const ErrorCovariance err = imgscc::error_covariance(model, ctx, 0.0, n_subjects);
    return err.diag_pixels.mean();
  };

  const double coarse = mean_diag(15);   // N = 225
  const double fine = mean_diag(21);     // N = 441, close to doubling
  const double expected_ratio = 441.0 / 225.0;
  CHECK(std::abs(coarse / fine / expected_ratio - 1.0) < 0.25);
}

TEST_CASE("error covariance propagates a singular Gram and bad sizes") {
  const TriangulationMesh mesh = testutil::square4();
  const SplineBasisSystem system(mesh, 2, 0);

  // Fewer pixels than reduced dimensions: the Gram cannot be PD.
  std::vector<Point2> few = {{0.2, 0.2}, {0.8, 0.2}, {0.5, 0.8}, {0.5, 0.4}};
  FitContext tiny(system, few);
  CovarianceModel model;
  model.sigma2_grid = Eigen::VectorXd::Constant(4, 0.1);
  CHECK_THROWS_AS(imgscc::error_covariance(model, tiny, 0.0, 3), imgscc::NotPD);

  FitContext ok(system, unit_grid(10));
  model.sigma2_grid = Eigen::VectorXd::Constant(3, 0.1);  // wrong length
  CHECK_THROWS_AS(imgscc::error_covariance(model, ok, 1.0, 3), imgscc::GridMismatch);
}

TEST_CASE("small synthetic generator recovers the planted spectrum") {
  // Two discretely orthonormalized smooth fields act as eigenfunctions on
  // the unit square; the leading estimated eigenvalues should land near the
  // planted (0.5, 0.2) at a moderate sample size.
  const TriangulationMesh mesh = testutil::square_grid(3);
  const SplineBasisSystem system(mesh, 3, 1);
  FitContext ctx(system, unit_grid(16));
  const int n_pixels = ctx.n_pixels();
  const double area = 1.0 / n_pixels;

  Eigen::VectorXd f1(n_pixels), f2(n_pixels);
  for (int j = 0; j < n_pixels; ++j) {
    const auto& p = ctx.pixels()[j];
    f1(j) = std::sin(3.141592653589793 * p.z1);
    f2(j) = std::cos(3.141592653589793 * p.z2);
  }
  // Discrete Gram-Schmidt under weight A.
  f1 /= std::sqrt(area * f1.squaredNorm());
  f2 -= (area * f1.dot(f2)) * f1;
  f2 /= std::sqrt(area * f2.squaredNorm());

  std::mt19937_64 rng(2468);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n_subjects = 300;
  ImageStack stack;
  stack.pixels = ctx.pixels();
  stack.values.resize(n_subjects, n_pixels);
  for (int i = 0; i < n_subjects; ++i) {
    const double x1 = std::sqrt(0.5) * gauss(rng);
    const double x2 = std::sqrt(0.2) * gauss(rng);
    for (int j = 0; j < n_pixels; ++j) {
      stack.values(i, j) = 5.0 + x1 * f1(j) + x2 * f2(j) + 0.05 * gauss(rng);
    }
  }

  MeanFitResult fit = imgscc::fit_mean(stack, ctx);
  CovarianceModel model = imgscc::estimate_covariance(stack, fit, ctx, 1e-5);
  imgscc::eigen_decompose(model, ctx);

  REQUIRE(model.eigenvalues.size() >= 2);
  CHECK(std::abs(model.eigenvalues(0) - 0.5) < 0.12);
  CHECK(std::abs(model.eigenvalues(1) - 0.2) < 0.08);
  CHECK(model.kappa == 2);  // (0.5 + 0.2) dominates the residual spectrum

  // Leading eigenfunction close to the planted one after sign alignment.
  Eigen::VectorXd psi1 = model.psi_pixels.row(0).transpose();
  if (psi1.dot(f1) < 0.0) psi1 = -psi1;
  const double l2 = std::sqrt(area * (psi1 - f1).squaredNorm());
  CHECK(l2 < 0.15);
}

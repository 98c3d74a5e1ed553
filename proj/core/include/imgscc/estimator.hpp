#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "imgscc/basis.hpp"
#include "imgscc/geometry.hpp"

namespace imgscc {

// A collection of images observed on a common in-domain pixel grid.
// values(i, j) is subject i's measurement at pixel j.
struct ImageStack {
  std::vector<Point2> pixels;
  Eigen::MatrixXd values;

  int n_subjects() const { return static_cast<int>(values.rows()); }
  int n_pixels() const { return static_cast<int>(values.cols()); }
};

struct GcvPoint {
  double rho = 0.0;
  double gcv = 0.0;
  double hat_trace = 0.0;
  bool valid = false;
};

struct GcvResult {
  double best_rho = 0.0;
  std::vector<GcvPoint> curve;
};

struct MeanFitResult {
  Eigen::VectorXd theta;   // reduced coefficients
  Eigen::VectorXd gamma;   // full coefficient vector, gamma = Q2 * theta
  Eigen::VectorXd fitted;  // fitted mean at the stack pixels
  double rho = 0.0;        // penalty actually used
  double hat_trace = 0.0;  // tr S(rho)
  double gcv = 0.0;        // GCV at rho (NaN when rho was fixed by the caller)
  int n_subjects = 0;
  std::vector<GcvPoint> gcv_curve;  // empty when rho was fixed
};

// Precomputed quantities tying one basis system to one pixel grid: the basis
// evaluation B, the reduced design U = B Q2 and its normal matrix, and the
// reduced penalty D = Q2' P Q2.  Reused across fits on the same grid.
// Throws DomainMismatch if any pixel lies outside the mesh domain.
class FitContext {
 public:
  FitContext(const SplineBasisSystem& system, std::vector<Point2> pixels);

  const SplineBasisSystem& system() const { return *system_; }
  const std::vector<Point2>& pixels() const { return pixels_; }
  int n_pixels() const { return static_cast<int>(pixels_.size()); }
  int reduced_dim() const { return static_cast<int>(design_.cols()); }

  const BasisEvalMatrix& basis() const { return basis_; }
  const Eigen::MatrixXd& design() const { return design_; }
  const Eigen::MatrixXd& normal_matrix() const { return normal_; }
  const Eigen::MatrixXd& reduced_penalty() const { return reduced_penalty_; }

  // 21 log-spaced penalties spanning [1e-6, 1e3] times N / tr(D).
  std::vector<double> default_rho_grid() const;

 private:
  const SplineBasisSystem* system_;
  std::vector<Point2> pixels_;
  BasisEvalMatrix basis_;
  Eigen::MatrixXd design_;
  Eigen::MatrixXd normal_;
  Eigen::MatrixXd reduced_penalty_;
};

// Factorization of (U'U + c D) for one effective penalty multiplier c, with
// a rank-revealing fallback when the Cholesky factor is unusable.
class ReducedSolver {
 public:
  ReducedSolver(const FitContext& ctx, double multiplier);
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  Eigen::MatrixXd solve_many(const Eigen::MatrixXd& rhs) const;
  double hat_trace() const { return hat_trace_; }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
  bool use_qr_ = false;
  double hat_trace_ = 0.0;
};

// Penalized least squares fit of the mean image: solves
//   theta = (U'U + (rho/n) D)^{-1} U' ybar
// where ybar is the pixelwise average over subjects.  With rho unset the
// penalty is selected by generalized cross validation over the grid (the
// context default grid when none is given); ties prefer the smaller rho.
MeanFitResult fit_mean(const ImageStack& stack, const FitContext& ctx,
                       std::optional<double> rho = std::nullopt,
                       const std::vector<double>& rho_grid = {});

// GCV profile for the averaged image; grid points where the effective
// degrees of freedom reach the pixel count are marked invalid.
// Throws AllInvalid when no grid point is usable.
GcvResult gcv_select(const ImageStack& stack, const FitContext& ctx,
                     const std::vector<double>& rho_grid = {});

// Empirical Gram operator of the reduced basis with energy regularization:
//   (1/N) sum_j Btilde(z_j) Btilde(z_j)' + rho/(n N) Q2' [energy products] Q2
// which equals (U'U + (rho/n) D) / N.  Symmetric positive definite for any
// rho >= 0 once N >= reduced dimension; NotPD is thrown otherwise.
Eigen::MatrixXd gram_operator(const FitContext& ctx, double rho, int n_subjects);

// Single-curve smoother (U'U + rho D)^{-1} U' y reused across many curves,
// e.g. per-subject residual smoothing.
class CurveSmoother {
 public:
  CurveSmoother(const FitContext& ctx, double rho);
  double rho() const { return rho_; }
  double hat_trace() const { return solver_.hat_trace(); }
  // Reduced coefficients of one smoothed curve (length N input).
  Eigen::VectorXd coeffs(const Eigen::VectorXd& curve) const;
  // One row of coefficients per input row (curves is n x N).
  Eigen::MatrixXd coeffs_all(const Eigen::MatrixXd& curves) const;

 private:
  const FitContext* ctx_;
  double rho_;
  ReducedSolver solver_;
};

// GCV with the residual sum pooled over all curves (rows of `curves`);
// used to pick a common smoothing level for per-subject curves.
double pooled_gcv_select(const FitContext& ctx, const Eigen::MatrixXd& curves,
                         const std::vector<double>& rho_grid = {});

}  // namespace imgscc

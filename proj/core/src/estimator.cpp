#include "imgscc/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "imgscc/errors.hpp"

namespace imgscc {

namespace {

// GCV score of one penalty multiplier for a set of curves (rows); the
// residual sum of squares is pooled across curves.
struct GcvEval {
  double gcv = std::numeric_limits<double>::quiet_NaN();
  double hat_trace = 0.0;
  bool valid = false;
};

GcvEval evaluate_gcv(const FitContext& ctx, const Eigen::MatrixXd& curves,
                     double multiplier) {
  const double N = static_cast<double>(ctx.n_pixels());
  GcvEval out;
  ReducedSolver solver(ctx, multiplier);
  out.hat_trace = solver.hat_trace();
  const double denom = 1.0 - out.hat_trace / N;
  if (!(denom > 0.0)) return out;
  const Eigen::MatrixXd rhs = ctx.design().transpose() * curves.transpose();
  const Eigen::MatrixXd theta = solver.solve_many(rhs);  // p x n_curves
  const Eigen::MatrixXd fitted = ctx.design() * theta;
  const double rss = (curves.transpose() - fitted).squaredNorm();
  const double value = rss / (N * denom * denom);
  if (!std::isfinite(value)) return out;
  out.gcv = value;
  out.valid = true;
  return out;
}

// Shared grid search; returns index of the best point in `sorted_grid`.
std::vector<GcvPoint> profile_gcv(const FitContext& ctx,
                                  const Eigen::MatrixXd& curves,
                                  const std::vector<double>& sorted_grid) {
  std::vector<GcvPoint> curve;
  curve.reserve(sorted_grid.size());
  for (double rho : sorted_grid) {
    GcvPoint pt;
    pt.rho = rho;
    const GcvEval ev = evaluate_gcv(ctx, curves, rho);
    pt.gcv = ev.gcv;
    pt.hat_trace = ev.hat_trace;
    pt.valid = ev.valid;
    curve.push_back(pt);
  }
  return curve;
}

int best_gcv_index(const std::vector<GcvPoint>& curve) {
  int best = -1;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (!curve[i].valid) continue;
    if (best < 0 || curve[i].gcv < curve[best].gcv) best = static_cast<int>(i);
  }
  if (best < 0)
    throw AllInvalid("no penalty grid point yields positive residual degrees of freedom");
  return best;
}

std::vector<double> sorted_grid_or_default(const FitContext& ctx,
                                           const std::vector<double>& grid) {
  std::vector<double> g = grid.empty() ? ctx.default_rho_grid() : grid;
  for (double rho : g)
    if (!(rho >= 0.0) || !std::isfinite(rho))
      throw BadConfig("penalty grid values must be finite and nonnegative");
  std::sort(g.begin(), g.end());
  return g;
}

}  // namespace

FitContext::FitContext(const SplineBasisSystem& system, std::vector<Point2> pixels)
    : system_(&system), pixels_(std::move(pixels)) {
  if (pixels_.empty()) throw BadConfig("pixel grid is empty");
  basis_ = system.eval(pixels_);
  if (!basis_.all_inside()) {
    int outside = static_cast<int>(pixels_.size()) - basis_.n_inside;
    throw DomainMismatch(std::to_string(outside) +
                         " pixel(s) fall outside the mesh domain");
  }
  design_ = basis_.values * system.null_space();
  normal_.noalias() = design_.transpose() * design_;
  reduced_penalty_.noalias() = system.null_space().transpose() *
                               (system.penalty_matrix() * system.null_space());
}

std::vector<double> FitContext::default_rho_grid() const {
  const double trace_d = reduced_penalty_.trace();
  const double scale =
      trace_d > 0.0 ? static_cast<double>(n_pixels()) / trace_d : 1.0;
  std::vector<double> grid;
  grid.reserve(21);
  for (int i = 0; i < 21; ++i)
    grid.push_back(std::pow(10.0, -6.0 + 9.0 * i / 20.0) * scale);
  return grid;
}

ReducedSolver::ReducedSolver(const FitContext& ctx, double multiplier) {
  const Eigen::MatrixXd a = ctx.normal_matrix() + multiplier * ctx.reduced_penalty();
  llt_.compute(a);
  bool ok = llt_.info() == Eigen::Success;
  if (ok) {
    ok = llt_.rcond() > 1e-12;
  }
  if (!ok) {
    qr_.compute(a);
    use_qr_ = true;
    if (qr_.rank() < a.rows())
      throw SingularSystem(
          "reduced normal matrix is singular (rank " + std::to_string(qr_.rank()) +
          " of " + std::to_string(a.rows()) +
          "); increase the penalty or reduce the basis dimension");
  }
  // tr S = tr((U'U + c D)^{-1} U'U)
  const Eigen::MatrixXd inv_times_normal = solve_many(ctx.normal_matrix());
  hat_trace_ = inv_times_normal.trace();
}

Eigen::VectorXd ReducedSolver::solve(const Eigen::VectorXd& rhs) const {
  return use_qr_ ? Eigen::VectorXd(qr_.solve(rhs)) : Eigen::VectorXd(llt_.solve(rhs));
}

Eigen::MatrixXd ReducedSolver::solve_many(const Eigen::MatrixXd& rhs) const {
  return use_qr_ ? Eigen::MatrixXd(qr_.solve(rhs)) : Eigen::MatrixXd(llt_.solve(rhs));
}

MeanFitResult fit_mean(const ImageStack& stack, const FitContext& ctx,
                       std::optional<double> rho,
                       const std::vector<double>& rho_grid) {
  if (stack.n_pixels() != ctx.n_pixels())
    throw GridMismatch("stack has " + std::to_string(stack.n_pixels()) +
                       " pixels but the fit context has " +
                       std::to_string(ctx.n_pixels()));
  const int n = stack.n_subjects();
  if (n < 1) throw BadConfig("stack has no subjects");
  const Eigen::VectorXd ybar = stack.values.colwise().mean().transpose();
  const Eigen::MatrixXd ybar_row = ybar.transpose();

  MeanFitResult out;
  out.n_subjects = n;
  if (rho) {
    if (!(*rho >= 0.0) || !std::isfinite(*rho))
      throw BadConfig("rho must be finite and nonnegative");
    out.rho = *rho;
    out.gcv = std::numeric_limits<double>::quiet_NaN();
    ReducedSolver solver(ctx, *rho / n);
    out.theta = solver.solve(ctx.design().transpose() * ybar);
    out.hat_trace = solver.hat_trace();
  } else {
    const std::vector<double> grid = sorted_grid_or_default(ctx, rho_grid);
    std::vector<double> multipliers(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) multipliers[i] = grid[i] / n;
    std::vector<GcvPoint> curve = profile_gcv(ctx, ybar_row, multipliers);
    for (std::size_t i = 0; i < curve.size(); ++i) curve[i].rho = grid[i];
    const int best = best_gcv_index(curve);
    out.rho = grid[best];
    out.gcv = curve[best].gcv;
    out.hat_trace = curve[best].hat_trace;
    out.gcv_curve = std::move(curve);
    ReducedSolver solver(ctx, out.rho / n);
    out.theta = solver.solve(ctx.design().transpose() * ybar);
  }
  out.gamma = ctx.system().null_space() * out.theta;
  out.fitted = ctx.design() * out.theta;
  return out;
}

GcvResult gcv_select(const ImageStack& stack, const FitContext& ctx,
                     const std::vector<double>& rho_grid) {
  if (stack.n_pixels() != ctx.n_pixels())
    throw GridMismatch("stack pixel count does not match fit context");
  const int n = stack.n_subjects();
  const Eigen::MatrixXd ybar_row = stack.values.colwise().mean();
  const std::vector<double> grid = sorted_grid_or_default(ctx, rho_grid);
  std::vector<double> multipliers(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) multipliers[i] = grid[i] / n;
  GcvResult res;
  res.curve = profile_gcv(ctx, ybar_row, multipliers);
  for (std::size_t i = 0; i < res.curve.size(); ++i) res.curve[i].rho = grid[i];
  res.best_rho = grid[best_gcv_index(res.curve)];
  return res;
}

Eigen::MatrixXd gram_operator(const FitContext& ctx, double rho, int n_subjects) {
  if (!(rho >= 0.0)) throw BadConfig("rho must be nonnegative");
  if (n_subjects < 1) throw BadConfig("n_subjects must be positive");
  const double N = static_cast<double>(ctx.n_pixels());
  Eigen::MatrixXd gamma =
      (ctx.normal_matrix() + (rho / n_subjects) * ctx.reduced_penalty()) / N;
  Eigen::LLT<Eigen::MatrixXd> llt(gamma);
  if (llt.info() != Eigen::Success)
    throw NotPD("Gram operator is not positive definite; the basis is too rich "
                "for the pixel grid");
  return gamma;
}

CurveSmoother::CurveSmoother(const FitContext& ctx, double rho)
    : ctx_(&ctx), rho_(rho), solver_(ctx, rho) {
  if (!(rho >= 0.0) || !std::isfinite(rho))
    throw BadConfig("rho must be finite and nonnegative");
}

Eigen::VectorXd CurveSmoother::coeffs(const Eigen::VectorXd& curve) const {
  if (curve.size() != ctx_->n_pixels())
    throw GridMismatch("curve length does not match pixel grid");
  return solver_.solve(ctx_->design().transpose() * curve);
}

Eigen::MatrixXd CurveSmoother::coeffs_all(const Eigen::MatrixXd& curves) const {
  if (curves.cols() != ctx_->n_pixels())
    throw GridMismatch("curve matrix width does not match pixel grid");
  const Eigen::MatrixXd rhs = ctx_->design().transpose() * curves.transpose();
  return solver_.solve_many(rhs).transpose();
}

double pooled_gcv_select(const FitContext& ctx, const Eigen::MatrixXd& curves,
                         const std::vector<double>& rho_grid) {
  const std::vector<double> grid = sorted_grid_or_default(ctx, rho_grid);
  std::vector<GcvPoint> curve = profile_gcv(ctx, curves, grid);
  for (std::size_t i = 0; i < curve.size(); ++i) curve[i].rho = grid[i];
  return grid[best_gcv_index(curve)];
}

}  // namespace imgscc

#include "imgscc/fpca.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "imgscc/errors.hpp"

namespace imgscc {

namespace {

Eigen::MatrixXd residual_matrix(const ImageStack& stack, const MeanFitResult& fit) {
  if (fit.fitted.size() != stack.n_pixels()) {
    throw GridMismatch("mean fit has " + std::to_string(fit.fitted.size()) +
                       " fitted values but the stack has " + std::to_string(stack.n_pixels()) +
                       " pixels");
  }
  return stack.values.rowwise() - fit.fitted.transpose();
}

}  // namespace

double CovarianceModel::geta_diag(int j) const {
  double total = 0.0;
  for (int k = 0; k < kappa; ++k) {
    const double v = psi_pixels(k, j);
    total += eigenvalues(k) * v * v;
  }
  return total;
}

CovarianceModel estimate_covariance(const ImageStack& stack, const MeanFitResult& fit,
                                    const FitContext& ctx_eta, std::optional<double> rho_eta) {
  if (stack.n_subjects() < 1) {
    throw BadConfig("covariance estimation needs at least one subject");
  }
  const Eigen::MatrixXd residuals = residual_matrix(stack, fit);
  const double rho = rho_eta ? *rho_eta : pooled_gcv_select(ctx_eta, residuals);
  if (rho < 0.0) {
    throw BadConfig("eta smoothing penalty must be nonnegative, got " + std::to_string(rho));
  }
  CurveSmoother smoother(ctx_eta, rho);

  CovarianceModel model;
  model.eta_coeffs = smoother.coeffs_all(residuals);
  model.s_eta = model.eta_coeffs.transpose() * model.eta_coeffs / stack.n_subjects();
  model.pixel_area = ctx_eta.system().mesh().domain_area() / stack.n_pixels();
  model.rho_eta = rho;
  return model;
}

void eigen_decompose(CovarianceModel& model, const FitContext& ctx_eta, const KappaRule& rule) {
  const int k_red = ctx_eta.reduced_dim();
  if (model.s_eta.rows() != k_red || model.s_eta.cols() != k_red) {
    throw GridMismatch("covariance matrix dimension does not match the eta basis");
  }
  // G_A = A sum_j b_j b_j' is the coefficient Gram of the discrete measure.
  const Eigen::MatrixXd gram = ctx_eta.normal_matrix() * model.pixel_area;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw NotPD("discrete basis Gram is not positive definite; the pixel grid is too coarse "
                "for the eta basis");
  }
  const Eigen::MatrixXd lmat = llt.matrixL();
  const Eigen::MatrixXd middle = lmat.transpose() * model.s_eta * lmat;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (middle + middle.transpose()));
  if (eig.info() != Eigen::Success) {
    throw NoPositiveEigenvalues("eigen decomposition of the covariance failed to converge");
  }
  const double lambda_max = eig.eigenvalues().maxCoeff();
  if (!(lambda_max > 0.0)) {
    throw NoPositiveEigenvalues("covariance has no positive eigenvalue; all smoothed "
                                "deviations are zero");
  }
  const double floor = lambda_max * 1e-14;

  std::vector<int> keep;
  for (int k = k_red - 1; k >= 0; --k) {  // solver sorts ascending
    if (eig.eigenvalues()(k) > floor) keep.push_back(k);
  }
  const int n_pos = static_cast<int>(keep.size());
  model.eigenvalues.resize(n_pos);
  model.eigenfunction_coeffs.assign(n_pos, Eigen::VectorXd());
  model.psi_pixels.resize(n_pos, ctx_eta.n_pixels());

  for (int out = 0; out < n_pos; ++out) {
    model.eigenvalues(out) = eig.eigenvalues()(keep[out]);
    Eigen::VectorXd w = llt.matrixU().solve(eig.eigenvectors().col(keep[out]));
    Eigen::VectorXd values = ctx_eta.design() * w;
    double mean = values.sum() * model.pixel_area;
    if (mean == 0.0) {
      for (int j = 0; j < values.size(); ++j) {
        if (values(j) != 0.0) {
          mean = values(j);
          break;
        }
      }
    }
    if (mean < 0.0) {
      w = -w;
      values = -values;
    }
    model.eigenfunction_coeffs[out] = std::move(w);
    model.psi_pixels.row(out) = values.transpose();
  }
  model.kappa = select_kappa(model.eigenvalues, rule);
}

int select_kappa(const Eigen::VectorXd& eigenvalues, const KappaRule& rule) {
  if (eigenvalues.size() == 0) {
    throw BadConfig("component selection needs a nonempty spectrum");
  }
  if (rule.fixed_k) {
    if (*rule.fixed_k <= 0) {
      throw BadConfig("fixed component count must be positive, got " +
                      std::to_string(*rule.fixed_k));
    }
    return std::min<int>(*rule.fixed_k, static_cast<int>(eigenvalues.size()));
  }
  if (!(rule.fve > 0.0) || rule.fve > 1.0) {
    throw BadConfig("variance fraction must lie in (0, 1], got " + std::to_string(rule.fve));
  }
  const double total = eigenvalues.sum();
  double partial = 0.0;
  for (int k = 0; k < eigenvalues.size(); ++k) {
    partial += eigenvalues(k);
    if (partial >= rule.fve * total) return k + 1;
  }
  return static_cast<int>(eigenvalues.size());
}

Eigen::VectorXd estimate_noise(const ImageStack& stack, const MeanFitResult& fit,
                               const CovarianceModel& model, const FitContext& ctx_eta) {
  if (model.eta_coeffs.rows() != stack.n_subjects()) {
    throw GridMismatch("covariance model was built from a different number of subjects");
  }
  const Eigen::MatrixXd residuals = residual_matrix(stack, fit);
  const Eigen::MatrixXd eta_values = model.eta_coeffs * ctx_eta.design().transpose();
  const Eigen::MatrixXd eps = residuals - eta_values;
  return eps.array().square().colwise().sum().transpose() / stack.n_subjects();
}

ErrorCovariance error_covariance(const CovarianceModel& model, const FitContext& ctx_mu,
                                 double rho_mu, int n_subjects) {
  if (model.sigma2_grid.size() != ctx_mu.n_pixels()) {
    throw GridMismatch("noise variance grid does not match the mean-fit pixel grid");
  }
  const int n_pixels = ctx_mu.n_pixels();
  const Eigen::MatrixXd gamma = gram_operator(ctx_mu, rho_mu, n_subjects);
  Eigen::LLT<Eigen::MatrixXd> llt(gamma);
  if (llt.info() != Eigen::Success) {
    throw NotPD("Gram operator of the mean fit is not positive definite");
  }
  const Eigen::MatrixXd& design = ctx_mu.design();
  const Eigen::MatrixXd weighted =
      design.transpose() * model.sigma2_grid.asDiagonal() * design;
  const Eigen::MatrixXd half = llt.solve(weighted);
  Eigen::MatrixXd m = llt.solve(half.transpose());
  m /= static_cast<double>(n_subjects) * n_pixels * n_pixels;
  m = 0.5 * (m + m.transpose());

  ErrorCovariance err;
  err.diag_pixels.resize(n_pixels);
  for (int j = 0; j < n_pixels; ++j) {
    err.diag_pixels(j) = design.row(j) * m * design.row(j).transpose();
  }
  err.m_eps = std::move(m);
  return err;
}

}  // namespace imgscc

#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "imgscc/estimator.hpp"

namespace imgscc {

// Functional principal component model of the subject-level deviations
// eta_i.  The covariance G_eta(z,z') = n^-1 sum_i eta_i(z) eta_i(z') is
// carried in coefficient space as Btilde(z)' S Btilde(z'), and eigenpairs
// are taken under the discrete pixel measure with uniform weight
// A = domain_area / N per pixel, so that sum_j psi_k(z_j)^2 A = 1.
struct CovarianceModel {
  Eigen::MatrixXd eta_coeffs;   // n x reduced_dim, row i = coefficients of eta_i
  Eigen::MatrixXd s_eta;        // reduced_dim square, S = n^-1 sum_i beta_i beta_i'
  Eigen::VectorXd eigenvalues;  // positive eigenvalues, nonincreasing
  std::vector<Eigen::VectorXd> eigenfunction_coeffs;  // coefficients of psi_k
  Eigen::MatrixXd psi_pixels;   // one row per eigenpair: psi_k at the stack pixels
  int kappa = 0;                // retained leading components
  Eigen::VectorXd sigma2_grid;  // noise variance estimate per pixel
  double pixel_area = 0.0;      // A = domain_area / N
  double rho_eta = 0.0;         // smoothing penalty used for the eta_i

  // G_eta(z_j, z_j) truncated to the retained kappa components.
  double geta_diag(int j) const;
};

// Component count rule: fraction-of-variance-explained threshold, or an
// explicit count (clamped to the number of positive eigenvalues).
struct KappaRule {
  double fve = 0.95;
  std::optional<int> fixed_k;
};

// Measurement-error covariance correction.  G_eps(z,z') is carried as
// Btilde(z)' M Btilde(z') in the mean-fit basis, with
//   M = n^-1 N^-2 Gamma^-1 {sum_j Btilde(z_j) sigma2_j Btilde(z_j)'} Gamma^-1.
struct ErrorCovariance {
  Eigen::MatrixXd m_eps;
  Eigen::VectorXd diag_pixels;  // G_eps(z_j, z_j) at the stack pixels
};

// Smooth the per-subject residuals Y_i - mu_hat into eta_i coefficients and
// form S. With rho_eta unset, a common penalty is chosen by pooled GCV over
// all subjects' residual curves.  Eigenpairs are not computed here.
CovarianceModel estimate_covariance(const ImageStack& stack, const MeanFitResult& fit,
                                    const FitContext& ctx_eta,
                                    std::optional<double> rho_eta = std::nullopt);

// Solve the pixel-discretized eigenproblem
//   sum_j G_eta(z, z_j) psi(z_j) A = lambda psi(z)
// through its coefficient-space equivalent: with G_A = A sum_j b_j b_j'
// = L L', the symmetric problem L' S L u = lambda u gives psi_k = B' L^-T u_k.
// Fills eigenvalues, coefficients, pixel values, and kappa (per rule).
// Signs are fixed so sum_j psi_k(z_j) A >= 0, ties broken by making the
// first nonzero pixel value positive.  Throws NoPositiveEigenvalues when
// the covariance has no positive spectrum and NotPD when G_A is singular.
void eigen_decompose(CovarianceModel& model, const FitContext& ctx_eta,
                     const KappaRule& rule = {});

// Smallest kappa whose leading eigenvalues explain at least rule.fve of the
// total, or the fixed count when set.  Throws BadConfig on an empty spectrum
// or a non-positive fixed count.
int select_kappa(const Eigen::VectorXd& eigenvalues, const KappaRule& rule);

// Pixelwise noise variance sigma2_j = n^-1 sum_i (R_ij - eta_i(z_j))^2 from
// the residuals around the smoothed subject deviations.
Eigen::VectorXd estimate_noise(const ImageStack& stack, const MeanFitResult& fit,
                               const CovarianceModel& model, const FitContext& ctx_eta);

// Error-covariance factor in the mean-fit basis, using that fit's penalty
// in the Gram operator.  Requires model.sigma2_grid.
ErrorCovariance error_covariance(const CovarianceModel& model, const FitContext& ctx_mu,
                                 double rho_mu, int n_subjects);

}  // namespace imgscc

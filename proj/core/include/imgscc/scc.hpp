#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "imgscc/estimator.hpp"
#include "imgscc/fpca.hpp"

namespace imgscc {

// Band flavors: Basic standardizes by the subject-deviation covariance
// G_eta(z,z) alone; Adjusted adds the measurement-error component and
// widens the band to Sigma(z,z) = G_eta(z,z) + n G_eps(z,z).
enum class SccVariant { Basic, Adjusted };

struct QuantileOptions {
  int threads = 1;
  bool keep_maxima = false;  // retain the per-draw suprema in the estimate
};

// Empirical (1-alpha) quantile of the simulated sup-abs process, taken as
// the order statistic ceil((1-alpha) B) of the sorted per-draw maxima.
struct QuantileEstimate {
  double alpha = 0.0;
  double value = 0.0;
  int n_draws = 0;
  std::vector<double> maxima;  // per-draw order, filled when requested
};

// The same order statistic recomputed from retained per-draw maxima, so one
// simulation can serve several alpha levels.  Throws BadConfig on an empty
// maxima vector or an alpha outside (0,1).
double quantile_from_maxima(const std::vector<double>& maxima, double alpha);

// Simultaneous confidence corridor on the stack pixel grid.  The band is
// symmetric about the center: lower/upper = center -/+ half_width with
// half_width >= 0 at every pixel.
struct SccBand {
  double alpha = 0.0;
  double quantile = 0.0;
  SccVariant variant = SccVariant::Basic;
  int n_draws = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXd center;
  Eigen::VectorXd half_width;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

// Measurement-error adjustment data for one group.  noise_weight maps a
// vector of per-pixel standard normal draws to reduced coefficients of the
// smoothed-noise field:  Gamma^-1 (1/N) U' diag(sigma_hat), with Gamma the
// mean-fit Gram operator; design carries those coefficients back to pixel
// values.  Built once and reused across quantile draws.
struct AdjustedTerm {
  ErrorCovariance errcov;
  Eigen::MatrixXd design;        // mean-fit design U, pixels x reduced
  Eigen::MatrixXd noise_weight;  // reduced x pixels
  int n_subjects = 0;
};

// Requires model.sigma2_grid (estimate_noise) and the mean-fit context and
// penalty actually used for the fit being banded.
AdjustedTerm make_adjusted_term(const CovarianceModel& model, const FitContext& ctx_mu,
                                double rho_mu, int n_subjects);

// Inputs of a two-group comparison on a common pixel grid and mesh.  The
// pooled variance field is V(z,z) = G_1eta(z,z) + tau G_2eta(z,z) with
// tau = n1/n2 (Xi(z,z) = Sigma_1 + (n1/n2) Sigma_2 when adjusted).
struct TwoSampleContext {
  MeanFitResult fit1;
  MeanFitResult fit2;
  CovarianceModel model1;
  CovarianceModel model2;
  int n1 = 0;
  int n2 = 0;
  std::optional<AdjustedTerm> adjusted1;  // required for Adjusted bands
  std::optional<AdjustedTerm> adjusted2;

  double tau() const { return static_cast<double>(n1) / static_cast<double>(n2); }
};

// Draw-consumption contract shared by all quantile simulations: draw b uses
// the dedicated stream RngStream(seed, rngtag::kQuantile, b) with b counted
// from zero, so draws parallelize without changing results.  Within a draw
// the stream is consumed group-major (group 1 fully before group 2), inside
// a group the kappa component draws first (k ascending), then for Adjusted
// variants one noise draw per pixel (pixel order).  One-sample simulations
// are the single-group case of the same order.

// Empirical quantile of sup_j |zeta_b(z_j)| for the one-sample process
//   zeta_b(z) = G_eta(z,z)^{-1/2} sum_k lambda_k^{1/2} Z_kb psi_k(z),
// standardized by Sigma(z,z) and including the smoothed-noise term when
// adjusted is given.  Pixels whose variance field falls below 1e-12 of its
// maximum are excluded from the supremum.  Throws DegenerateCovariance when
// no retained component or no pixel survives the floor.
QuantileEstimate simulate_quantile_one(const CovarianceModel& model, double alpha,
                                       int n_draws, std::uint64_t seed,
                                       const AdjustedTerm* adjusted = nullptr,
                                       const QuantileOptions& opt = {});

// One-sample band mu_hat(z_j) -/+ n^{-1/2} q_{1-alpha} field(z_j)^{1/2},
// field = G_eta for Basic and Sigma = G_eta + n G_eps for Adjusted (the
// quantile is simulated with the matching standardization).  Floored pixels
// get their half width from the floor value.  Adjusted requires `adjusted`.
SccBand build_scc_one(const MeanFitResult& fit, const CovarianceModel& model,
                      double alpha, int n_draws, std::uint64_t seed,
                      SccVariant variant = SccVariant::Basic,
                      const AdjustedTerm* adjusted = nullptr,
                      const QuantileOptions& opt = {});

// The same band assembled from an externally obtained quantile, for example
// one recomputed from retained maxima at another alpha.  n_draws and seed are
// recorded in the band unchanged; the quantile must be finite and >= 0.
SccBand band_from_quantile_one(const MeanFitResult& fit, const CovarianceModel& model,
                               double alpha, double quantile, int n_draws,
                               std::uint64_t seed,
                               SccVariant variant = SccVariant::Basic,
                               const AdjustedTerm* adjusted = nullptr);

// Empirical quantile of sup_j |W_b(z_j)| for the two-sample process
//   W_b(z) = V(z,z)^{-1/2} { sum_k lambda_1k^{1/2} Z_1kb psi_1k(z)
//                            - tau^{1/2} sum_k lambda_2k^{1/2} Z_2kb psi_2k(z) },
// standardized by Xi(z,z) and with per-group noise terms when adjusted.
QuantileEstimate simulate_quantile_two(const TwoSampleContext& ctx, double alpha,
                                       int n_draws, std::uint64_t seed,
                                       SccVariant variant = SccVariant::Basic,
                                       const QuantileOptions& opt = {});

// Two-sample band (mu1_hat - mu2_hat)(z_j) -/+ n1^{-1/2} q V(z_j,z_j)^{1/2}
// (Xi for Adjusted).  Throws GridMismatch when the groups disagree on the
// pixel grid.
SccBand build_scc_two(const TwoSampleContext& ctx, double alpha, int n_draws,
                      std::uint64_t seed, SccVariant variant = SccVariant::Basic,
                      const QuantileOptions& opt = {});

// Two-sample counterpart of band_from_quantile_one.
SccBand band_from_quantile_two(const TwoSampleContext& ctx, double alpha,
                               double quantile, int n_draws, std::uint64_t seed,
                               SccVariant variant = SccVariant::Basic);

// Position of zero relative to the band at each pixel.  AboveUpper means
// zero lies above the upper bound (upper < 0), BelowLower that zero lies
// below the lower bound (lower > 0); Contains0 iff lower <= 0 <= upper.
enum class Exceedance { Contains0, AboveUpper, BelowLower };

std::vector<Exceedance> exceedance_map(const SccBand& band);

}  // namespace imgscc

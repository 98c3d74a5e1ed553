#include "imgscc/scc.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "imgscc/errors.hpp"
#include "imgscc/rng.hpp"
#include "imgscc/threading.hpp"

namespace imgscc {
namespace {

// Pixels whose variance field falls below this fraction of the field
// maximum are excluded from the supremum and floored in the band width.
constexpr double kFieldFloorRel = 1e-12;

void check_draw_params(double alpha, int n_draws) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw BadConfig("alpha must lie strictly between 0 and 1");
  if (n_draws < 1) throw BadConfig("quantile simulation needs at least one draw");
}

struct FieldInfo {
  Eigen::VectorXd clamped;    // variance field with the floor applied
  Eigen::VectorXd inv_sqrt;   // clamped^{-1/2}
  std::vector<int> included;  // pixels above the floor; the sup runs over these
};

FieldInfo analyze_field(const Eigen::VectorXd& field) {
  const double max_field = field.maxCoeff();
  if (!(max_field > 0.0))
    throw DegenerateCovariance("variance field vanishes at every pixel");
  const double floor = kFieldFloorRel * max_field;
  FieldInfo info;
  info.clamped = field.cwiseMax(floor);
  info.inv_sqrt = info.clamped.cwiseSqrt().cwiseInverse();
  info.included.reserve(static_cast<std::size_t>(field.size()));
  for (int j = 0; j < static_cast<int>(field.size()); ++j)
    if (field(j) > floor) info.included.push_back(j);
  return info;
}

// One group inside a quantile draw: rows of sqrt(lambda_k) psi_k, the
// optional noise operator, and the signed weight of the group's term.
struct GroupSpec {
  Eigen::MatrixXd scaled;  // kappa x pixels
  const AdjustedTerm* adjusted = nullptr;
  double weight = 1.0;
};

Eigen::MatrixXd scaled_components(const CovarianceModel& model) {
  if (model.kappa < 1)
    throw DegenerateCovariance("covariance model retains no components");
  if (model.eigenvalues.size() < model.kappa ||
      model.psi_pixels.rows() < model.kappa)
    throw BadConfig("covariance model is missing retained eigenpairs");
  Eigen::MatrixXd rows = model.psi_pixels.topRows(model.kappa);
  for (int k = 0; k < model.kappa; ++k)
    rows.row(k) *= std::sqrt(std::max(model.eigenvalues(k), 0.0));
  return rows;
}

void check_adjusted_grid(const AdjustedTerm& adjusted, int n_pixels) {
  if (adjusted.errcov.diag_pixels.size() != n_pixels ||
      adjusted.design.rows() != n_pixels ||
      adjusted.noise_weight.cols() != n_pixels)
    throw GridMismatch(
        "adjusted error term and covariance model disagree on the pixel grid");
}

// Variance field of one group: G_eta(z_j,z_j), plus n G_eps(z_j,z_j) when
// the group carries a measurement-error adjustment.
Eigen::VectorXd group_field(const CovarianceModel& model, const AdjustedTerm* adjusted) {
  const int n_pixels = static_cast<int>(model.psi_pixels.cols());
  Eigen::VectorXd field(n_pixels);
  for (int j = 0; j < n_pixels; ++j) field(j) = model.geta_diag(j);
  if (adjusted) {
    check_adjusted_grid(*adjusted, n_pixels);
    field += static_cast<double>(adjusted->n_subjects) * adjusted->errcov.diag_pixels;
  }
  return field;
}

// Consumes the group's share of the stream in the documented order (the
// kappa component draws, then one noise draw per pixel when adjusted) and
// accumulates weight * group term into the unstandardized draw.
void add_group_draw(const GroupSpec& group, RngStream& stream, Eigen::VectorXd& draw) {
  const int kappa = static_cast<int>(group.scaled.rows());
  Eigen::VectorXd z(kappa);
  for (int k = 0; k < kappa; ++k) z(k) = stream.normal();
  draw.noalias() += group.weight * (group.scaled.transpose() * z);
  if (group.adjusted) {
    Eigen::VectorXd eps(draw.size());
    for (int j = 0; j < static_cast<int>(draw.size()); ++j) eps(j) = stream.normal();
    draw.noalias() +=
        group.weight * (group.adjusted->design * (group.adjusted->noise_weight * eps));
  }
}

// Order statistic ceil((1-alpha) B); the small slack guards the rank
// against floating-point error when (1-alpha) B is integral.
double order_statistic(std::vector<double> maxima, double alpha) {
  const int n = static_cast<int>(maxima.size());
  int rank = static_cast<int>(std::ceil((1.0 - alpha) * n - 1e-9));
  rank = std::clamp(rank, 1, n);
  std::nth_element(maxima.begin(), maxima.begin() + (rank - 1), maxima.end());
  return maxima[static_cast<std::size_t>(rank - 1)];
}

QuantileEstimate run_simulation(const std::vector<GroupSpec>& groups,
                                const FieldInfo& info, double alpha, int n_draws,
                                std::uint64_t seed, const QuantileOptions& opt) {
  const int n_pixels = static_cast<int>(info.clamped.size());
  std::vector<double> maxima(static_cast<std::size_t>(n_draws));
  parallel_for(static_cast<std::size_t>(n_draws), opt.threads, [&](std::size_t b) {
    RngStream stream(seed, rngtag::kQuantile, static_cast<std::uint64_t>(b));
    Eigen::VectorXd draw = Eigen::VectorXd::Zero(n_pixels);
    for (const GroupSpec& group : groups) add_group_draw(group, stream, draw);
    double sup = 0.0;
    for (int j : info.included)
      sup = std::max(sup, std::abs(draw(j)) * info.inv_sqrt(j));
    maxima[b] = sup;
  });
  QuantileEstimate est;
  est.alpha = alpha;
  est.n_draws = n_draws;
  est.value = order_statistic(maxima, alpha);
  if (opt.keep_maxima) est.maxima = std::move(maxima);
  return est;
}

void check_band_quantile(double quantile) {
  if (!std::isfinite(quantile) || quantile < 0.0)
    throw BadConfig("band quantile must be finite and nonnegative");
}

// Shared validation and group assembly for the one-sample constructions.
std::pair<std::vector<GroupSpec>, FieldInfo> one_sample_setup(
    const MeanFitResult& fit, const CovarianceModel& model, SccVariant variant,
    const AdjustedTerm* adjusted) {
  const int n_pixels = static_cast<int>(model.psi_pixels.cols());
  if (static_cast<int>(fit.fitted.size()) != n_pixels)
    throw GridMismatch("mean fit and covariance model disagree on the pixel grid");
  if (fit.n_subjects < 1) throw BadConfig("mean fit carries no subject count");

  const AdjustedTerm* term = nullptr;
  if (variant == SccVariant::Adjusted) {
    if (!adjusted) throw BadConfig("adjusted band requires an adjusted error term");
    if (adjusted->n_subjects != fit.n_subjects)
      throw BadConfig("adjusted error term was built for a different subject count");
    term = adjusted;
  }
  std::vector<GroupSpec> groups(1);
  groups[0].scaled = scaled_components(model);
  groups[0].adjusted = term;
  groups[0].weight = 1.0;
  FieldInfo info = analyze_field(group_field(model, term));
  return {std::move(groups), std::move(info)};
}

SccBand assemble_band(Eigen::VectorXd center, const FieldInfo& info, double quantile,
                      int n_subjects, double alpha, int n_draws, std::uint64_t seed,
                      SccVariant variant) {
  SccBand band;
  band.alpha = alpha;
  band.quantile = quantile;
  band.variant = variant;
  band.n_draws = n_draws;
  band.seed = seed;
  band.center = std::move(center);
  band.half_width =
      (quantile / std::sqrt(static_cast<double>(n_subjects))) * info.clamped.cwiseSqrt();
  band.lower = band.center - band.half_width;
  band.upper = band.center + band.half_width;
  return band;
}

}  // namespace

AdjustedTerm make_adjusted_term(const CovarianceModel& model, const FitContext& ctx_mu,
                                double rho_mu, int n_subjects) {
  if (n_subjects < 1) throw BadConfig("adjusted error term needs a positive subject count");
  if (model.sigma2_grid.size() != ctx_mu.n_pixels())
    throw GridMismatch("noise variance grid and mean-fit context disagree on pixels");
  AdjustedTerm term;
  term.errcov = error_covariance(model, ctx_mu, rho_mu, n_subjects);
  term.design = ctx_mu.design();
  term.n_subjects = n_subjects;

  Eigen::LLT<Eigen::MatrixXd> llt(gram_operator(ctx_mu, rho_mu, n_subjects));
  if (llt.info() != Eigen::Success)
    throw NotPD("Gram operator of the mean fit is not positive definite");
  const int n_pixels = ctx_mu.n_pixels();
  Eigen::MatrixXd weighted = ctx_mu.design().transpose();
  for (int j = 0; j < n_pixels; ++j)
    weighted.col(j) *= std::sqrt(std::max(model.sigma2_grid(j), 0.0)) /
                       static_cast<double>(n_pixels);
  term.noise_weight = llt.solve(weighted);
  return term;
}

QuantileEstimate simulate_quantile_one(const CovarianceModel& model, double alpha,
                                       int n_draws, std::uint64_t seed,
                                       const AdjustedTerm* adjusted,
                                       const QuantileOptions& opt) {
  check_draw_params(alpha, n_draws);
  std::vector<GroupSpec> groups(1);
  groups[0].scaled = scaled_components(model);
  groups[0].adjusted = adjusted;
  groups[0].weight = 1.0;
  const FieldInfo info = analyze_field(group_field(model, adjusted));
  return run_simulation(groups, info, alpha, n_draws, seed, opt);
}

double quantile_from_maxima(const std::vector<double>& maxima, double alpha) {
  if (maxima.empty()) throw BadConfig("quantile needs at least one retained maximum");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw BadConfig("alpha must lie strictly between 0 and 1");
  return order_statistic(maxima, alpha);
}

SccBand build_scc_one(const MeanFitResult& fit, const CovarianceModel& model,
                      double alpha, int n_draws, std::uint64_t seed, SccVariant variant,
                      const AdjustedTerm* adjusted, const QuantileOptions& opt) {
  check_draw_params(alpha, n_draws);
  auto [groups, info] = one_sample_setup(fit, model, variant, adjusted);
  const QuantileEstimate q = run_simulation(groups, info, alpha, n_draws, seed, opt);
  return assemble_band(fit.fitted, info, q.value, fit.n_subjects, alpha, n_draws,
                       seed, variant);
}

SccBand band_from_quantile_one(const MeanFitResult& fit, const CovarianceModel& model,
                               double alpha, double quantile, int n_draws,
                               std::uint64_t seed, SccVariant variant,
                               const AdjustedTerm* adjusted) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw BadConfig("alpha must lie strictly between 0 and 1");
  check_band_quantile(quantile);
  auto [groups, info] = one_sample_setup(fit, model, variant, adjusted);
  return assemble_band(fit.fitted, info, quantile, fit.n_subjects, alpha, n_draws,
                       seed, variant);
}

namespace {

// Shared validation and group assembly for the two-sample simulations.
std::pair<std::vector<GroupSpec>, FieldInfo> two_sample_setup(
    const TwoSampleContext& ctx, SccVariant variant) {
  if (ctx.n1 < 1 || ctx.n2 < 1)
    throw BadConfig("two-sample context needs positive group sizes");
  const int n_pixels = static_cast<int>(ctx.model1.psi_pixels.cols());
  if (static_cast<int>(ctx.model2.psi_pixels.cols()) != n_pixels)
    throw GridMismatch("the two groups disagree on the pixel grid");

  const AdjustedTerm* a1 = nullptr;
  const AdjustedTerm* a2 = nullptr;
  if (variant == SccVariant::Adjusted) {
    if (!ctx.adjusted1 || !ctx.adjusted2)
      throw BadConfig("adjusted band requires adjusted error terms for both groups");
    if (ctx.adjusted1->n_subjects != ctx.n1 || ctx.adjusted2->n_subjects != ctx.n2)
      throw BadConfig("adjusted error terms were built for different group sizes");
    a1 = &*ctx.adjusted1;
    a2 = &*ctx.adjusted2;
  }

  const double tau = ctx.tau();
  std::vector<GroupSpec> groups(2);
  groups[0].scaled = scaled_components(ctx.model1);
  groups[0].adjusted = a1;
  groups[0].weight = 1.0;
  groups[1].scaled = scaled_components(ctx.model2);
  groups[1].adjusted = a2;
  groups[1].weight = -std::sqrt(tau);
  const Eigen::VectorXd field =
      group_field(ctx.model1, a1) + tau * group_field(ctx.model2, a2);
  return {std::move(groups), analyze_field(field)};
}

}  // namespace

QuantileEstimate simulate_quantile_two(const TwoSampleContext& ctx, double alpha,
                                       int n_draws, std::uint64_t seed,
                                       SccVariant variant, const QuantileOptions& opt) {
  check_draw_params(alpha, n_draws);
  auto [groups, info] = two_sample_setup(ctx, variant);
  return run_simulation(groups, info, alpha, n_draws, seed, opt);
}

SccBand build_scc_two(const TwoSampleContext& ctx, double alpha, int n_draws,
                      std::uint64_t seed, SccVariant variant,
                      const QuantileOptions& opt) {
  if (ctx.fit1.fitted.size() != ctx.fit2.fitted.size() ||
      ctx.fit1.fitted.size() != ctx.model1.psi_pixels.cols())
    throw GridMismatch("the two groups disagree on the pixel grid");
  if (ctx.fit1.n_subjects != ctx.n1 || ctx.fit2.n_subjects != ctx.n2)
    throw BadConfig("group sizes disagree with the mean fits");
  check_draw_params(alpha, n_draws);
  auto [groups, info] = two_sample_setup(ctx, variant);
  const QuantileEstimate q = run_simulation(groups, info, alpha, n_draws, seed, opt);
  return assemble_band(ctx.fit1.fitted - ctx.fit2.fitted, info, q.value, ctx.n1,
                       alpha, n_draws, seed, variant);
}

SccBand band_from_quantile_two(const TwoSampleContext& ctx, double alpha,
                               double quantile, int n_draws, std::uint64_t seed,
                               SccVariant variant) {
  if (ctx.fit1.fitted.size() != ctx.fit2.fitted.size() ||
      ctx.fit1.fitted.size() != ctx.model1.psi_pixels.cols())
    throw GridMismatch("the two groups disagree on the pixel grid");
  if (ctx.fit1.n_subjects != ctx.n1 || ctx.fit2.n_subjects != ctx.n2)
    throw BadConfig("group sizes disagree with the mean fits");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw BadConfig("alpha must lie strictly between 0 and 1");
  check_band_quantile(quantile);
  auto [groups, info] = two_sample_setup(ctx, variant);
  return assemble_band(ctx.fit1.fitted - ctx.fit2.fitted, info, quantile, ctx.n1,
                       alpha, n_draws, seed, variant);
}

std::vector<Exceedance> exceedance_map(const SccBand& band) {
  std::vector<Exceedance> labels(static_cast<std::size_t>(band.lower.size()));
  for (int j = 0; j < static_cast<int>(band.lower.size()); ++j) {
    if (band.upper(j) < 0.0)
      labels[static_cast<std::size_t>(j)] = Exceedance::AboveUpper;
    else if (band.lower(j) > 0.0)
      labels[static_cast<std::size_t>(j)] = Exceedance::BelowLower;
    else
      labels[static_cast<std::size_t>(j)] = Exceedance::Contains0;
  }
  return labels;
}

}  // namespace imgscc

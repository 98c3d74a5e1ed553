#include "imgscc/simulate.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <utility>

#include "imgscc/basis.hpp"
#include "imgscc/errors.hpp"
#include "imgscc/rng.hpp"
#include "imgscc/threading.hpp"

namespace imgscc {
namespace {

constexpr double kPi = std::numbers::pi;

void validate_design(const SimDesign& design) {
  if (design.n1 < 1) throw BadConfig("design needs at least one subject in group 1");
  if (design.n2 < 0) throw BadConfig("group-2 size cannot be negative");
  if (design.pixels.empty()) throw BadConfig("design carries no pixels");
  if (design.mean == MeanSurface::Custom && !design.custom_mean)
    throw BadConfig("custom mean surface needs a custom_mean callable");
  if (static_cast<std::size_t>(design.lambdas.size()) != design.components.size())
    throw BadConfig("component variances and component callables disagree in count");
  for (Eigen::Index k = 0; k < design.lambdas.size(); ++k)
    if (!(design.lambdas(k) >= 0.0))
      throw BadConfig("component variances cannot be negative");
  for (const auto& component : design.components)
    if (!component) throw BadConfig("design carries an empty component callable");
  if (!design.sigma) throw BadConfig("design carries no noise field callable");
}

void check_alphas(const std::vector<double>& alphas) {
  if (alphas.empty()) throw BadConfig("study needs at least one alpha level");
  for (double alpha : alphas)
    if (!(alpha > 0.0 && alpha < 1.0))
      throw BadConfig("alpha must lie strictly between 0 and 1");
}

void check_reps(int reps) {
  if (reps < 1) throw BadConfig("study needs at least one replication");
}

double design_mean(const SimDesign& design, const Point2& z) {
  return design.mean == MeanSurface::Custom ? design.custom_mean(z)
                                            : mean_surface(design.mean, z);
}

// Per-replication seed for the band quantile draws: a dedicated derivation
// stream keyed away from both the data streams and the draw streams it feeds.
std::uint64_t draw_seed(std::uint64_t seed, int rep) {
  return RngStream(seed, rngtag::kQuantile, static_cast<std::uint64_t>(rep), 1)
      .next_u64();
}

// Mean fit, covariance model with eigenpairs and noise, and the adjustment
// term when the band variant needs it: the full one-sample pipeline run on
// one stack.
struct PipelineFit {
  MeanFitResult fit;
  CovarianceModel model;
  std::optional<AdjustedTerm> adjusted;

  const AdjustedTerm* term() const { return adjusted ? &*adjusted : nullptr; }
};

// Basis systems and fit contexts for one mesh, built once per study and
// shared read-only across replications.
struct PipelineContext {
  SplineBasisSystem mean_system;
  SplineBasisSystem eta_system;
  FitContext ctx_mu;
  FitContext ctx_eta;

  PipelineContext(const TriangulationMesh& mesh, const std::vector<Point2>& pixels,
                  const FitParams& params)
      : mean_system(mesh, params.mean_degree, params.mean_smoothness),
        eta_system(mesh, params.eta_degree, params.eta_smoothness),
        ctx_mu(mean_system, pixels),
        ctx_eta(eta_system, pixels) {}
};

PipelineFit fit_pipeline(const ImageStack& stack, const PipelineContext& pc,
                         const FitParams& params) {
  PipelineFit out;
  out.fit = fit_mean(stack, pc.ctx_mu, params.rho_mu);
  out.model = estimate_covariance(stack, out.fit, pc.ctx_eta, params.rho_eta);
  eigen_decompose(out.model, pc.ctx_eta, params.kappa);
  out.model.sigma2_grid = estimate_noise(stack, out.fit, out.model, pc.ctx_eta);
  if (params.variant == SccVariant::Adjusted)
    out.adjusted =
        make_adjusted_term(out.model, pc.ctx_mu, out.fit.rho, out.fit.n_subjects);
  return out;
}

std::string fixed_decimals(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return std::string(buf);
}

// |t| > t_crit for the one-sample t statistic mean/sqrt(var/n); zero spread
// makes any nonzero mean infinitely significant.
bool t_exceeds(double mean, double var, int n, double t_crit) {
  if (var <= 0.0) return mean != 0.0;
  return std::abs(mean) * std::sqrt(static_cast<double>(n) / var) > t_crit;
}

int max_component_size(const std::vector<int>& labels) {
  int n_labels = 0;
  for (int label : labels) n_labels = std::max(n_labels, label + 1);
  std::vector<int> sizes(static_cast<std::size_t>(n_labels), 0);
  for (int label : labels)
    if (label >= 0) ++sizes[static_cast<std::size_t>(label)];
  int largest = 0;
  for (int size : sizes) largest = std::max(largest, size);
  return largest;
}

}  // namespace

double mean_surface(MeanSurface id, const Point2& z) {
  const double r2 = (z.z1 - 0.5) * (z.z1 - 0.5) + (z.z2 - 0.5) * (z.z2 - 0.5);
  switch (id) {
    case MeanSurface::Quadratic:
      return 20.0 * r2;
    case MeanSurface::Exponential:
      return 5.0 * std::exp(-15.0 * r2) + 0.5;
    case MeanSurface::Cubic:
      return 3.2 * (-z.z1 * z.z1 * z.z1 + z.z2 * z.z2 * z.z2) + 2.4;
    case MeanSurface::Sine:
      return -10.0 * (std::sin(5.0 * kPi * (z.z1 + 0.22)) -
                      std::sin(5.0 * kPi * (z.z2 - 0.18))) +
             2.8;
    case MeanSurface::Bump:
      return r2 <= 0.10 ? std::exp(-30.0 * r2) : 0.0;
    case MeanSurface::Custom:
      break;
  }
  throw BadConfig("custom mean surface has no built-in formula");
}

MeanSurface mean_surface_from_name(const std::string& name) {
  if (name == "quadratic") return MeanSurface::Quadratic;
  if (name == "exponential") return MeanSurface::Exponential;
  if (name == "cubic") return MeanSurface::Cubic;
  if (name == "sine") return MeanSurface::Sine;
  if (name == "bump") return MeanSurface::Bump;
  if (name == "custom") return MeanSurface::Custom;
  throw BadConfig("unknown mean surface name: " + name);
}

std::string mean_surface_name(MeanSurface id) {
  switch (id) {
    case MeanSurface::Quadratic: return "quadratic";
    case MeanSurface::Exponential: return "exponential";
    case MeanSurface::Cubic: return "cubic";
    case MeanSurface::Sine: return "sine";
    case MeanSurface::Bump: return "bump";
    case MeanSurface::Custom: return "custom";
  }
  throw BadConfig("unknown mean surface id");
}

double study_psi1(const Point2& z) { return 0.988 * std::sin(kPi * z.z1) + 0.5; }

double study_psi2(const Point2& z) { return 2.157 * std::cos(kPi * z.z2) - 0.084; }

double study_sigma(const Point2& z) {
  return 0.25 * (1.0 - (z.z1 - 0.5) * (z.z1 - 0.5) - (z.z2 - 0.5) * (z.z2 - 0.5));
}

double study_shift(const Point2& z) {
  return -z.z1 * z.z1 * z.z1 + z.z2 * z.z2 * z.z2;
}

std::vector<Point2> study_grid(int resolution) {
  // Both resolutions index into the fine 79 x 79 lattice so that the coarse
  // pixel set is exactly the even-index subsample of the fine one.
  constexpr int kFine = 79;
  int stride = 0;
  if (resolution == kFine) stride = 1;
  else if (resolution == 40) stride = 2;
  else throw BadConfig("study grid resolution must be 40 or 79");

  std::vector<Point2> pixels;
  pixels.reserve(static_cast<std::size_t>(resolution) * resolution);
  for (int i = 0; i < resolution; ++i)
    for (int j = 0; j < resolution; ++j)
      pixels.push_back({(stride * i + 0.5) / kFine, (stride * j + 0.5) / kFine});
  return pixels;
}

std::vector<Point2> study_grid(int resolution, const TriangulationMesh& domain) {
  std::vector<Point2> pixels = study_grid(resolution);
  std::vector<Point2> inside;
  inside.reserve(pixels.size());
  for (const Point2& z : pixels)
    if (domain.locate(z)) inside.push_back(z);
  if (inside.empty())
    throw DomainMismatch("no study-grid pixel falls inside the mesh domain");
  return inside;
}

std::vector<Point2> image_grid(int cols, int rows) {
  if (cols < 1 || rows < 1) throw BadConfig("image grid needs positive dimensions");
  std::vector<Point2> pixels;
  pixels.reserve(static_cast<std::size_t>(cols) * rows);
  for (int i = 0; i < cols; ++i)
    for (int j = 0; j < rows; ++j)
      pixels.push_back({(i + 0.5) / cols, (j + 0.5) / rows});
  return pixels;
}

namespace {

SimDesign base_design(std::vector<Point2> pixels, std::uint64_t seed) {
  SimDesign design;
  design.pixels = std::move(pixels);
  design.lambdas = Eigen::Vector2d(0.5, 0.2);
  design.components = {study_psi1, study_psi2};
  design.sigma = study_sigma;
  design.seed = seed;
  return design;
}

}  // namespace

SimDesign study_design(MeanSurface mean, int n, std::vector<Point2> pixels,
                       std::uint64_t seed) {
  SimDesign design = base_design(std::move(pixels), seed);
  design.mean = mean;
  design.n1 = n;
  return design;
}

SimDesign two_sample_design(int n1, int n2, double delta, std::vector<Point2> pixels,
                            std::uint64_t seed) {
  SimDesign design = base_design(std::move(pixels), seed);
  design.mean = MeanSurface::Quadratic;
  design.n1 = n1;
  design.n2 = n2;
  design.delta = delta;
  design.sigma = [](const Point2&) { return 0.1; };
  return design;
}

SimDesign detection_design(int n, std::uint64_t seed) {
  SimDesign design = base_design(image_grid(79, 95), seed);
  design.mean = MeanSurface::Bump;
  design.n1 = n;
  design.lambdas = Eigen::Vector2d(0.2, 0.05);
  return design;
}

double TrueModel::g_eta(Eigen::Index j, Eigen::Index l) const {
  double sum = 0.0;
  for (Eigen::Index k = 0; k < lambdas.size(); ++k)
    sum += lambdas(k) * psi(k, j) * psi(k, l);
  return sum;
}

TrueModel true_model(const SimDesign& design) {
  validate_design(design);
  const Eigen::Index n_pixels = static_cast<Eigen::Index>(design.pixels.size());
  const Eigen::Index kappa = design.lambdas.size();

  TrueModel truth;
  truth.lambdas = design.lambdas;
  truth.mu.resize(n_pixels);
  truth.sigma.resize(n_pixels);
  truth.psi.resize(kappa, n_pixels);
  for (Eigen::Index j = 0; j < n_pixels; ++j) {
    const Point2& z = design.pixels[static_cast<std::size_t>(j)];
    truth.mu(j) = design_mean(design, z);
    truth.sigma(j) = design.sigma(z);
    for (Eigen::Index k = 0; k < kappa; ++k)
      truth.psi(k, j) = design.components[static_cast<std::size_t>(k)](z);
  }
  if (design.n2 > 0) {
    truth.mu2.resize(n_pixels);
    for (Eigen::Index j = 0; j < n_pixels; ++j)
      truth.mu2(j) = truth.mu(j) +
                     design.delta * study_shift(design.pixels[static_cast<std::size_t>(j)]);
  }
  return truth;
}

ImageStack generate_stack(const SimDesign& design, int rep, int group) {
  if (rep < 0) throw BadConfig("replication index cannot be negative");
  const int n_groups = design.n2 > 0 ? 2 : 1;
  if (group < 0 || group >= n_groups)
    throw BadConfig("group index out of range for the design");

  const TrueModel truth = true_model(design);
  const Eigen::VectorXd& mean = group == 0 ? truth.mu : truth.mu2;
  const Eigen::VectorXd root_lambda = truth.lambdas.cwiseSqrt();
  const int n = group == 0 ? design.n1 : design.n2;
  const Eigen::Index n_pixels = mean.size();
  const Eigen::Index kappa = truth.lambdas.size();

  RngStream stream(design.seed, rngtag::kDataGen, static_cast<std::uint64_t>(rep),
                   static_cast<std::uint64_t>(group));
  ImageStack stack;
  stack.pixels = design.pixels;
  stack.values.resize(n, n_pixels);
  Eigen::VectorXd xi(kappa);
  Eigen::VectorXd row(n_pixels);
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < kappa; ++k) xi(k) = stream.normal();
    row = mean;
    if (kappa > 0) row.noalias() += truth.psi.transpose() * root_lambda.cwiseProduct(xi);
    for (Eigen::Index j = 0; j < n_pixels; ++j)
      row(j) += truth.sigma(j) * stream.normal();
    stack.values.row(i) = row.transpose();
  }
  return stack;
}

std::vector<CoverageCell> run_coverage(const SimDesign& design,
                                       const std::vector<MeshCandidate>& meshes,
                                       const std::vector<double>& alphas, int reps,
                                       const FitParams& params) {
  validate_design(design);
  if (design.n2 != 0) throw BadConfig("coverage study expects a one-sample design");
  if (meshes.empty()) throw BadConfig("coverage study needs at least one mesh");
  for (const MeshCandidate& cand : meshes)
    if (!cand.mesh) throw BadConfig("mesh candidate carries no mesh");
  check_alphas(alphas);
  check_reps(reps);

  const TrueModel truth = true_model(design);
  const std::size_t n_alpha = alphas.size();
  std::vector<CoverageCell> cells;
  cells.reserve(meshes.size() * n_alpha);

  for (const MeshCandidate& cand : meshes) {
    const PipelineContext pc(*cand.mesh, design.pixels, params);
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(reps) * n_alpha, 0);
    std::vector<double> widths(static_cast<std::size_t>(reps) * n_alpha, 0.0);

    parallel_for(static_cast<std::size_t>(reps), params.threads, [&](std::size_t r) {
      const ImageStack stack = generate_stack(design, static_cast<int>(r));
      const PipelineFit pipe = fit_pipeline(stack, pc, params);
      const std::uint64_t seed = draw_seed(design.seed, static_cast<int>(r));
      QuantileOptions qopt;
      qopt.keep_maxima = true;
      const QuantileEstimate est = simulate_quantile_one(
          pipe.model, alphas.front(), params.n_draws, seed, pipe.term(), qopt);
      for (std::size_t a = 0; a < n_alpha; ++a) {
        const double q = quantile_from_maxima(est.maxima, alphas[a]);
        const SccBand band =
            band_from_quantile_one(pipe.fit, pipe.model, alphas[a], q, est.n_draws,
                                   seed, params.variant, pipe.term());
        bool inside = true;
        for (Eigen::Index j = 0; j < truth.mu.size() && inside; ++j)
          inside = band.lower(j) <= truth.mu(j) && truth.mu(j) <= band.upper(j);
        covered[r * n_alpha + a] = inside ? 1 : 0;
        widths[r * n_alpha + a] = band_mean_width(band);
      }
    });

    for (std::size_t a = 0; a < n_alpha; ++a) {
      CoverageCell cell;
      cell.mesh = cand.name;
      cell.alpha = alphas[a];
      cell.reps = reps;
      double hits = 0.0;
      double width = 0.0;
      for (std::size_t r = 0; r < static_cast<std::size_t>(reps); ++r) {
        hits += covered[r * n_alpha + a];
        width += widths[r * n_alpha + a];
      }
      cell.coverage = hits / reps;
      cell.mean_width = width / reps;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::vector<PowerCell> run_power(const SimDesign& design, const TriangulationMesh& mesh,
                                 const std::vector<double>& deltas,
                                 const std::vector<double>& alphas, int reps,
                                 const FitParams& params) {
  validate_design(design);
  if (design.n2 < 1) throw BadConfig("power study expects a two-sample design");
  if (deltas.empty()) throw BadConfig("power study needs at least one offset");
  check_alphas(alphas);
  check_reps(reps);

  const PipelineContext pc(mesh, design.pixels, params);
  const std::size_t n_alpha = alphas.size();
  const std::size_t n_delta = deltas.size();
  std::vector<std::uint8_t> rejected(
      static_cast<std::size_t>(reps) * n_delta * n_alpha, 0);

  parallel_for(static_cast<std::size_t>(reps), params.threads, [&](std::size_t r) {
    // Group 1 and the data streams do not depend on the offset, so each
    // replication fits group 1 once and reuses its noise across the grid.
    const ImageStack stack1 = generate_stack(design, static_cast<int>(r), 0);
    const PipelineFit pipe1 = fit_pipeline(stack1, pc, params);
    const std::uint64_t seed = draw_seed(design.seed, static_cast<int>(r));
    for (std::size_t d = 0; d < n_delta; ++d) {
      SimDesign offset = design;
      offset.delta = deltas[d];
      const ImageStack stack2 = generate_stack(offset, static_cast<int>(r), 1);
      const PipelineFit pipe2 = fit_pipeline(stack2, pc, params);
      TwoSampleContext ctx;
      ctx.fit1 = pipe1.fit;
      ctx.fit2 = pipe2.fit;
      ctx.model1 = pipe1.model;
      ctx.model2 = pipe2.model;
      ctx.n1 = design.n1;
      ctx.n2 = design.n2;
      ctx.adjusted1 = pipe1.adjusted;
      ctx.adjusted2 = pipe2.adjusted;
      QuantileOptions qopt;
      qopt.keep_maxima = true;
      const QuantileEstimate est = simulate_quantile_two(
          ctx, alphas.front(), params.n_draws, seed, params.variant, qopt);
      for (std::size_t a = 0; a < n_alpha; ++a) {
        const double q = quantile_from_maxima(est.maxima, alphas[a]);
        const SccBand band = band_from_quantile_two(ctx, alphas[a], q, est.n_draws,
                                                    seed, params.variant);
        bool excludes = false;
        for (Eigen::Index j = 0; j < band.lower.size() && !excludes; ++j)
          excludes = band.lower(j) > 0.0 || band.upper(j) < 0.0;
        rejected[(r * n_delta + d) * n_alpha + a] = excludes ? 1 : 0;
      }
    }
  });

  std::vector<PowerCell> cells;
  cells.reserve(n_delta * n_alpha);
  for (std::size_t d = 0; d < n_delta; ++d) {
    for (std::size_t a = 0; a < n_alpha; ++a) {
      PowerCell cell;
      cell.delta = deltas[d];
      cell.alpha = alphas[a];
      cell.reps = reps;
      double hits = 0.0;
      for (std::size_t r = 0; r < static_cast<std::size_t>(reps); ++r)
        hits += rejected[(r * n_delta + d) * n_alpha + a];
      cell.reject_rate = hits / reps;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

DetectionMetrics detection_metrics(const std::vector<bool>& discovered,
                                   const std::vector<bool>& truth) {
  if (discovered.size() != truth.size())
    throw GridMismatch("detection mask and truth mask disagree on the pixel count");
  int false_pos = 0;
  int false_neg = 0;
  int n_null = 0;
  int n_signal = 0;
  int n_discovered = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    if (discovered[j]) ++n_discovered;
    if (truth[j]) {
      ++n_signal;
      if (!discovered[j]) ++false_neg;
    } else {
      ++n_null;
      if (discovered[j]) ++false_pos;
    }
  }
  DetectionMetrics m;
  m.discoveries = n_discovered;
  m.fpr = n_null > 0 ? static_cast<double>(false_pos) / n_null : 0.0;
  m.fnr = n_signal > 0 ? static_cast<double>(false_neg) / n_signal : 0.0;
  m.fdr = n_discovered > 0 ? static_cast<double>(false_pos) / n_discovered : 0.0;
  return m;
}

std::vector<double> pixel_p_values(const ImageStack& stack) {
  const int n = stack.n_subjects();
  if (n < 2) throw BadConfig("pixel t-tests need at least two subjects");
  const boost::math::students_t_distribution<double> dist(n - 1);
  std::vector<double> p(static_cast<std::size_t>(stack.n_pixels()));
  for (int j = 0; j < stack.n_pixels(); ++j) {
    const double mean = stack.values.col(j).mean();
    const double var =
        (stack.values.col(j).array() - mean).square().sum() / (n - 1);
    if (var <= 0.0) {
      p[static_cast<std::size_t>(j)] = mean == 0.0 ? 1.0 : 0.0;
      continue;
    }
    const double t = std::abs(mean) * std::sqrt(static_cast<double>(n) / var);
    p[static_cast<std::size_t>(j)] =
        2.0 * boost::math::cdf(boost::math::complement(dist, t));
  }
  return p;
}

std::vector<bool> bonferroni_detect(const ImageStack& stack, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw BadConfig("alpha must lie strictly between 0 and 1");
  const std::vector<double> p = pixel_p_values(stack);
  const double cutoff = alpha / stack.n_pixels();
  std::vector<bool> mask(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) mask[j] = p[j] < cutoff;
  return mask;
}

std::vector<int> component_labels(const std::vector<bool>& mask, int cols, int rows) {
  if (cols < 1 || rows < 1 ||
      mask.size() != static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows))
    throw GridMismatch("mask size disagrees with the grid dimensions");
  std::vector<int> labels(mask.size(), -1);
  std::vector<int> frontier;
  int next = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || labels[start] >= 0) continue;
    labels[start] = next;
    frontier.assign(1, static_cast<int>(start));
    while (!frontier.empty()) {
      const int idx = frontier.back();
      frontier.pop_back();
      const int i = idx / rows;
      const int j = idx % rows;
      const int neighbours[4] = {
          i > 0 ? idx - rows : -1,
          i + 1 < cols ? idx + rows : -1,
          j > 0 ? idx - 1 : -1,
          j + 1 < rows ? idx + 1 : -1,
      };
      for (int nb : neighbours) {
        if (nb < 0 || !mask[static_cast<std::size_t>(nb)]) continue;
        if (labels[static_cast<std::size_t>(nb)] >= 0) continue;
        labels[static_cast<std::size_t>(nb)] = next;
        frontier.push_back(nb);
      }
    }
    ++next;
  }
  return labels;
}

std::vector<bool> cluster_detect(const ImageStack& stack, int cols, int rows,
                                 double p_threshold, std::uint64_t seed,
                                 std::uint64_t stream, int null_reps) {
  const int n = stack.n_subjects();
  const int n_pixels = stack.n_pixels();
  if (n < 2) throw BadConfig("pixel t-tests need at least two subjects");
  if (cols < 1 || rows < 1 || static_cast<std::size_t>(cols) * rows !=
                                  static_cast<std::size_t>(n_pixels))
    throw GridMismatch("grid dimensions disagree with the stack's pixel count");
  if (!(p_threshold > 0.0 && p_threshold < 1.0))
    throw BadConfig("cluster p threshold must lie strictly between 0 and 1");
  if (null_reps < 1)
    throw BadConfig("cluster null calibration needs at least one sign flip");

  const boost::math::students_t_distribution<double> dist(n - 1);
  const double t_crit =
      boost::math::quantile(boost::math::complement(dist, p_threshold / 2.0));

  std::vector<bool> base(static_cast<std::size_t>(n_pixels));
  for (int j = 0; j < n_pixels; ++j) {
    const double mean = stack.values.col(j).mean();
    const double var =
        (stack.values.col(j).array() - mean).square().sum() / (n - 1);
    base[static_cast<std::size_t>(j)] = t_exceeds(mean, var, n, t_crit);
  }

  // Null maximum cluster sizes under sign flips.  Flipping leaves the sum of
  // squares alone, so each flip needs only its mean: sum (d y - m)^2 =
  // sum y^2 - n m^2.
  const Eigen::VectorXd sumsq = stack.values.colwise().squaredNorm().transpose();
  std::vector<double> null_sizes(static_cast<std::size_t>(null_reps));
  std::vector<bool> flipped(static_cast<std::size_t>(n_pixels));
  Eigen::VectorXd flips(n);
  for (int b = 0; b < null_reps; ++b) {
    RngStream rs(seed, rngtag::kSignFlip, stream, static_cast<std::uint64_t>(b));
    for (int i = 0; i < n; ++i) flips(i) = rs.rademacher();
    const Eigen::VectorXd mean_b = stack.values.transpose() * flips / n;
    for (int j = 0; j < n_pixels; ++j) {
      const double var = std::max(
          (sumsq(j) - n * mean_b(j) * mean_b(j)) / (n - 1), 0.0);
      flipped[static_cast<std::size_t>(j)] = t_exceeds(mean_b(j), var, n, t_crit);
    }
    null_sizes[static_cast<std::size_t>(b)] =
        max_component_size(component_labels(flipped, cols, rows));
  }

  // Null 95th percentile via the order statistic ceil(0.95 B), the same rank
  // rule as the band quantile.
  std::sort(null_sizes.begin(), null_sizes.end());
  int rank = static_cast<int>(std::ceil(0.95 * null_reps - 1e-9));
  rank = std::clamp(rank, 1, null_reps);
  const double size_cut = null_sizes[static_cast<std::size_t>(rank - 1)];

  const std::vector<int> labels = component_labels(base, cols, rows);
  int n_labels = 0;
  for (int label : labels) n_labels = std::max(n_labels, label + 1);
  std::vector<int> sizes(static_cast<std::size_t>(n_labels), 0);
  for (int label : labels)
    if (label >= 0) ++sizes[static_cast<std::size_t>(label)];
  std::vector<bool> out(static_cast<std::size_t>(n_pixels), false);
  for (std::size_t idx = 0; idx < out.size(); ++idx)
    out[idx] = labels[idx] >= 0 &&
               static_cast<double>(sizes[static_cast<std::size_t>(labels[idx])]) >
                   size_cut;
  return out;
}

std::vector<bool> scc_detect(const SccBand& band) {
  const std::vector<Exceedance> labels = exceedance_map(band);
  std::vector<bool> mask(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j)
    mask[j] = labels[j] != Exceedance::Contains0;
  return mask;
}

std::vector<DetectionRow> run_detection(const SimDesign& design,
                                        const TriangulationMesh& mesh, int cols,
                                        int rows, double alpha,
                                        const std::vector<double>& cluster_thresholds,
                                        int reps, const FitParams& params) {
  validate_design(design);
  if (design.n2 != 0) throw BadConfig("detection study expects a one-sample design");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw BadConfig("alpha must lie strictly between 0 and 1");
  for (double thr : cluster_thresholds)
    if (!(thr > 0.0 && thr < 1.0))
      throw BadConfig("cluster p threshold must lie strictly between 0 and 1");
  if (cols < 1 || rows < 1 ||
      static_cast<std::size_t>(cols) * rows != design.pixels.size())
    throw GridMismatch("grid dimensions disagree with the design's pixel count");
  check_reps(reps);

  const TrueModel truth = true_model(design);
  std::vector<bool> signal(design.pixels.size());
  for (std::size_t j = 0; j < signal.size(); ++j)
    signal[j] = truth.mu(static_cast<Eigen::Index>(j)) != 0.0;

  const PipelineContext pc(mesh, design.pixels, params);
  const std::size_t n_methods = 2 + cluster_thresholds.size();
  std::vector<DetectionMetrics> metrics(static_cast<std::size_t>(reps) * n_methods);

  parallel_for(static_cast<std::size_t>(reps), params.threads, [&](std::size_t r) {
    const ImageStack stack = generate_stack(design, static_cast<int>(r));
    const PipelineFit pipe = fit_pipeline(stack, pc, params);
    const SccBand band =
        build_scc_one(pipe.fit, pipe.model, alpha, params.n_draws,
                      draw_seed(design.seed, static_cast<int>(r)), params.variant,
                      pipe.term());
    std::size_t slot = r * n_methods;
    metrics[slot++] = detection_metrics(scc_detect(band), signal);
    metrics[slot++] = detection_metrics(bonferroni_detect(stack, alpha), signal);
    for (double thr : cluster_thresholds)
      metrics[slot++] = detection_metrics(
          cluster_detect(stack, cols, rows, thr, design.seed, r), signal);
  });

  std::vector<DetectionRow> out;
  out.reserve(n_methods);
  for (std::size_t m = 0; m < n_methods; ++m) {
    DetectionRow row;
    if (m == 0) {
      row.method = "scc";
      row.level = alpha;
    } else if (m == 1) {
      row.method = "bonferroni";
      row.level = alpha;
    } else {
      row.method = "cluster";
      row.level = cluster_thresholds[m - 2];
    }
    row.reps = reps;
    for (std::size_t r = 0; r < static_cast<std::size_t>(reps); ++r) {
      const DetectionMetrics& one = metrics[r * n_methods + m];
      row.mean.fpr += one.fpr;
      row.mean.fnr += one.fnr;
      row.mean.fdr += one.fdr;
      row.mean.discoveries += one.discoveries;
    }
    row.mean.fpr /= reps;
    row.mean.fnr /= reps;
    row.mean.fdr /= reps;
    row.mean.discoveries /= reps;
    out.push_back(std::move(row));
  }
  return out;
}

ResultTable coverage_table(const std::vector<CoverageCell>& cells) {
  ResultTable table;
  table.columns = {"mesh", "alpha", "coverage", "mean_width", "reps"};
  for (const CoverageCell& cell : cells)
    table.rows.push_back({cell.mesh, format_number(cell.alpha),
                          format_number(cell.coverage),
                          format_number(cell.mean_width), std::to_string(cell.reps)});
  return table;
}

ResultTable coverage_layout(const std::vector<CoverageCell>& cells) {
  std::vector<std::string> mesh_names;
  std::vector<double> alphas;
  for (const CoverageCell& cell : cells) {
    if (std::find(mesh_names.begin(), mesh_names.end(), cell.mesh) == mesh_names.end())
      mesh_names.push_back(cell.mesh);
    if (std::find(alphas.begin(), alphas.end(), cell.alpha) == alphas.end())
      alphas.push_back(cell.alpha);
  }
  ResultTable table;
  table.columns = {"alpha"};
  table.columns.insert(table.columns.end(), mesh_names.begin(), mesh_names.end());
  for (double alpha : alphas) {
    std::vector<std::string> row{format_number(alpha)};
    for (const std::string& name : mesh_names) {
      std::string text;
      for (const CoverageCell& cell : cells)
        if (cell.mesh == name && cell.alpha == alpha)
          text = fixed_decimals(cell.coverage, 3) + " (" +
                 fixed_decimals(cell.mean_width, 3) + ")";
      row.push_back(std::move(text));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ResultTable power_table(const std::vector<PowerCell>& cells) {
  ResultTable table;
  table.columns = {"delta", "alpha", "reject_rate", "reps"};
  for (const PowerCell& cell : cells)
    table.rows.push_back({format_number(cell.delta), format_number(cell.alpha),
                          format_number(cell.reject_rate), std::to_string(cell.reps)});
  return table;
}

ResultTable power_layout(const std::vector<PowerCell>& cells) {
  std::vector<double> deltas;
  std::vector<double> alphas;
  for (const PowerCell& cell : cells) {
    if (std::find(deltas.begin(), deltas.end(), cell.delta) == deltas.end())
      deltas.push_back(cell.delta);
    if (std::find(alphas.begin(), alphas.end(), cell.alpha) == alphas.end())
      alphas.push_back(cell.alpha);
  }
  ResultTable table;
  table.columns = {"delta"};
  for (double alpha : alphas) table.columns.push_back("alpha=" + format_number(alpha));
  for (double delta : deltas) {
    std::vector<std::string> row{fixed_decimals(delta, 2)};
    for (double alpha : alphas) {
      std::string text;
      for (const PowerCell& cell : cells)
        if (cell.delta == delta && cell.alpha == alpha)
          text = fixed_decimals(cell.reject_rate, 3);
      row.push_back(std::move(text));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ResultTable detection_table(const std::vector<DetectionRow>& rows) {
  ResultTable table;
  table.columns = {"method", "level", "fpr", "fnr", "fdr", "reps"};
  for (const DetectionRow& row : rows)
    table.rows.push_back({row.method, format_number(row.level),
                          format_number(row.mean.fpr), format_number(row.mean.fnr),
                          format_number(row.mean.fdr), std::to_string(row.reps)});
  return table;
}

ResultTable detection_layout(const std::vector<DetectionRow>& rows) {
  ResultTable table;
  table.columns = {"method", "FPR", "FNR", "FDR"};
  for (const DetectionRow& row : rows)
    table.rows.push_back({row.method + "(" + format_number(row.level) + ")",
                          fixed_decimals(row.mean.fpr, 4),
                          fixed_decimals(row.mean.fnr, 4),
                          fixed_decimals(row.mean.fdr, 4)});
  return table;
}

}  // namespace imgscc

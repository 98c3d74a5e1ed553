#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "imgscc/estimator.hpp"
#include "imgscc/fpca.hpp"
#include "imgscc/geometry.hpp"
#include "imgscc/io.hpp"
#include "imgscc/scc.hpp"

namespace imgscc {

// Built-in mean surfaces of the Monte Carlo studies.  Bump is the localized
// signal of the detection study: exp[-30 r^2] on the disk r^2 <= 0.10 around
// (0.5, 0.5) and exactly zero outside, so the nonzero pixels are the truth
// mask of the signal.
enum class MeanSurface { Quadratic, Exponential, Cubic, Sine, Bump, Custom };

// Evaluates a built-in surface; Custom has no formula and throws BadConfig.
double mean_surface(MeanSurface id, const Point2& z);

// Name round-trip for configuration and reports: "quadratic", "exponential",
// "cubic", "sine", "bump", "custom".  Unknown names throw BadConfig.
MeanSurface mean_surface_from_name(const std::string& name);
std::string mean_surface_name(MeanSurface id);

// Second-moment defaults shared by the studies: a component pair built to be
// orthonormal under the pixel measure of the horseshoe study domain, the
// heteroscedastic noise field, and the surface whose multiples separate the
// two groups in the power study.
double study_psi1(const Point2& z);   // 0.988 sin(pi z1) + 0.5
double study_psi2(const Point2& z);   // 2.157 cos(pi z2) - 0.084
double study_sigma(const Point2& z);  // 0.25 {1 - (z1-0.5)^2 - (z2-0.5)^2}
double study_shift(const Point2& z);  // -z1^3 + z2^3

// Pixel centers of the study images over the unit square.  Resolution 79
// gives the centers of a 79 x 79 image; resolution 40 gives its even-index
// (stride two) subsample, so the coarse pixels are a subset of the fine ones
// and a domain mask nests across the two resolutions.  Other resolutions
// throw BadConfig.  The masked overload keeps the pixels inside the mesh
// domain and throws DomainMismatch when none are.
std::vector<Point2> study_grid(int resolution);
std::vector<Point2> study_grid(int resolution, const TriangulationMesh& domain);

// Centers of a cols x rows image of the unit square,
// (i, j) -> ((i+0.5)/cols, (j+0.5)/rows) with the column index i varying
// slowest.
std::vector<Point2> image_grid(int cols, int rows);

// Data-generating design of one study.  Pixel j of subject i in group g is
//   Y_ij = mu_g(z_j) + sum_k sqrt(lambda_k) xi_ik psi_k(z_j) + sigma(z_j) e_ij
// with xi and e independent standard normals.  Two-sample designs (n2 > 0)
// give group 2 the mean mu + delta * study_shift.  Components and the noise
// field are callables so tests can substitute degenerate or custom fields.
struct SimDesign {
  MeanSurface mean = MeanSurface::Quadratic;
  std::function<double(const Point2&)> custom_mean;  // Custom surfaces only
  int n1 = 0;
  int n2 = 0;                                        // 0 for one-sample designs
  double delta = 0.0;                                // group-2 mean offset scale
  std::vector<Point2> pixels;
  Eigen::VectorXd lambdas;                           // one variance per component
  std::vector<std::function<double(const Point2&)>> components;
  std::function<double(const Point2&)> sigma;
  std::uint64_t seed = 0;
};

// Standard designs.  study_design carries the default component pair with
// variances (0.5, 0.2) and the heteroscedastic noise field;
// two_sample_design additionally sets sigma = 0.1 for both groups;
// detection_design puts the bump mean on the full 79 x 95 image with
// variances (0.2, 0.05).
SimDesign study_design(MeanSurface mean, int n, std::vector<Point2> pixels,
                       std::uint64_t seed);
SimDesign two_sample_design(int n1, int n2, double delta, std::vector<Point2> pixels,
                            std::uint64_t seed);
SimDesign detection_design(int n, std::uint64_t seed);

// Model surfaces of a design evaluated at its pixels.
struct TrueModel {
  Eigen::VectorXd mu;       // group-1 mean
  Eigen::VectorXd mu2;      // group-2 mean; empty for one-sample designs
  Eigen::MatrixXd psi;      // one component per row
  Eigen::VectorXd lambdas;
  Eigen::VectorXd sigma;

  // True deviation covariance sum_k lambda_k psi_k(z_j) psi_k(z_l).
  double g_eta(Eigen::Index j, Eigen::Index l) const;
};

TrueModel true_model(const SimDesign& design);

// Replication rep of the design for one group, drawn from the dedicated
// stream RngStream(seed, rngtag::kDataGen, rep, group).  The stream is
// consumed subject-major: the component draws first (k ascending), then one
// noise draw per pixel in pixel order.  Replications and groups are
// independent and reproducible regardless of execution order.
ImageStack generate_stack(const SimDesign& design, int rep, int group = 0);

// Fitting choices shared by the study drivers: a smoother basis for the mean
// than for the subject deviations, penalties chosen by GCV unless fixed, and
// the adjusted band construction by default.  threads caps the replication
// parallelism; 0 takes every core.
struct FitParams {
  int mean_degree = 5;
  int mean_smoothness = 1;
  int eta_degree = 2;
  int eta_smoothness = 0;
  std::optional<double> rho_mu;
  std::optional<double> rho_eta;
  KappaRule kappa;
  SccVariant variant = SccVariant::Adjusted;
  int n_draws = 1000;  // band quantile draws per replication
  int threads = 0;
};

// Named triangulation candidate; the mesh is borrowed, not owned.
struct MeshCandidate {
  std::string name;
  const TriangulationMesh* mesh = nullptr;
};

// Empirical coverage of the one-sample band: the fraction of replications
// whose band contains the true mean at every pixel, and the mean over pixels
// and replications of the band width.  One set of quantile draws per
// replication serves every alpha through the retained maxima.  Cells come
// back mesh-major, alphas in input order within a mesh.
struct CoverageCell {
  std::string mesh;
  double alpha = 0.0;
  double coverage = 0.0;
  double mean_width = 0.0;
  int reps = 0;
};

std::vector<CoverageCell> run_coverage(const SimDesign& design,
                                       const std::vector<MeshCandidate>& meshes,
                                       const std::vector<double>& alphas, int reps,
                                       const FitParams& params);

// Rejection rate of the two-sample comparison over a grid of group offsets:
// a replication rejects at level alpha when the band for the group
// difference excludes zero somewhere.  The design's own delta is ignored;
// each grid value replaces it.  Replication noise and quantile draws are
// shared across offsets (the offset only moves the group-2 mean), which
// makes the power curve monotone apart from refitting noise.  Cells come
// back delta-major, alphas in input order within an offset.
struct PowerCell {
  double delta = 0.0;
  double alpha = 0.0;
  double reject_rate = 0.0;
  int reps = 0;
};

std::vector<PowerCell> run_power(const SimDesign& design, const TriangulationMesh& mesh,
                                 const std::vector<double>& deltas,
                                 const std::vector<double>& alphas, int reps,
                                 const FitParams& params);

// Error rates of a pixel detection mask against a truth mask.  Rates over an
// empty reference set are 0: FPR with no true-null pixels, FNR with no
// signal pixels, FDR with no discoveries.
struct DetectionMetrics {
  double fpr = 0.0;          // false positives over true-null pixels
  double fnr = 0.0;          // false negatives over true-signal pixels
  double fdr = 0.0;          // false positives over discoveries
  double discoveries = 0.0;  // discovered pixels (a mean when aggregated)
};

DetectionMetrics detection_metrics(const std::vector<bool>& discovered,
                                   const std::vector<bool>& truth);

// Two-sided one-sample t-test p-values per pixel for a zero mean.  A pixel
// with zero sample variance gets p = 1 when its mean is zero and p = 0
// otherwise.  Needs at least two subjects.
std::vector<double> pixel_p_values(const ImageStack& stack);

// Pixels significant at level alpha after Bonferroni correction over the
// stack's pixel count.
std::vector<bool> bonferroni_detect(const ImageStack& stack, double alpha);

// 4-neighbour connected components of a cols x rows mask stored with the
// column (z1) index varying slowest.  Labels count from zero in scan order;
// -1 marks pixels outside the mask.
std::vector<int> component_labels(const std::vector<bool>& mask, int cols, int rows);

// Cluster-threshold detection: pixelwise t-tests at p_threshold, keeping the
// connected components strictly larger than the null 95th-percentile maximum
// cluster size.  The null is calibrated by sign-flipping the subject images
// null_reps times, flip b drawing its signs from
// RngStream(seed, rngtag::kSignFlip, stream, b).
std::vector<bool> cluster_detect(const ImageStack& stack, int cols, int rows,
                                 double p_threshold, std::uint64_t seed,
                                 std::uint64_t stream = 0, int null_reps = 100);

// Pixels whose band excludes zero.
std::vector<bool> scc_detect(const SccBand& band);

// Mean error rates over replications of the band detector and the Bonferroni
// detector at level alpha and one cluster detector per threshold, against
// the truth mask mu != 0.  Rows come back in that order: "scc",
// "bonferroni", then "cluster" per threshold, with level carrying alpha or
// the cluster threshold.
struct DetectionRow {
  std::string method;
  double level = 0.0;
  DetectionMetrics mean;
  int reps = 0;
};

std::vector<DetectionRow> run_detection(const SimDesign& design,
                                        const TriangulationMesh& mesh, int cols,
                                        int rows, double alpha,
                                        const std::vector<double>& cluster_thresholds,
                                        int reps, const FitParams& params);

// Machine-readable tables (full-precision flat columns) and display layouts
// (coverage as alpha rows by mesh columns with "coverage (width)" cells,
// power as delta rows by alpha columns, detection as method rows with error
// rate columns).
ResultTable coverage_table(const std::vector<CoverageCell>& cells);
ResultTable coverage_layout(const std::vector<CoverageCell>& cells);
ResultTable power_table(const std::vector<PowerCell>& cells);
ResultTable power_layout(const std::vector<PowerCell>& cells);
ResultTable detection_table(const std::vector<DetectionRow>& rows);
ResultTable detection_layout(const std::vector<DetectionRow>& rows);

}  // namespace imgscc

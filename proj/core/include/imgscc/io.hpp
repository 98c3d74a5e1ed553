#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "imgscc/estimator.hpp"
#include "imgscc/geometry.hpp"
#include "imgscc/scc.hpp"

namespace imgscc {

// Run provenance embedded in every output file: JSON outputs carry it as a
// "provenance" object, CSV outputs as leading "# key: value" comment lines.
// Readers skip comment lines, so write -> read -> write is stable.
struct Provenance {
  std::string version;  // tool or library version string
  std::string command;  // invocation that produced the file
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;  // verbatim flags
};

// Shortest round-trip decimal form of a double; the formatting used by every
// CSV writer, so identical values always produce identical bytes.
std::string format_number(double v);

// Wide image-stack CSV: header "z1,z2,y1,...,yn", one row per pixel, leading
// '#' lines ignored.  Pixel order is file order; subject count comes from
// the header.  Throws ParseError naming the path and line on malformed input.
ImageStack load_image_stack_csv(const std::string& path);
void save_image_stack_csv(const ImageStack& stack, const std::string& path,
                          const Provenance& prov = {});

// Raw little-endian float64 stack (subject-major) with a JSON sidecar that
// records dimensions, pixel coordinates, the data file name (relative to the
// sidecar), and provenance.  The loader checks the byte count against the
// recorded dimensions.
void save_image_stack_raw(const ImageStack& stack, const std::string& data_path,
                          const std::string& sidecar_path,
                          const Provenance& prov = {});
ImageStack load_image_stack_raw(const std::string& sidecar_path);

// Count report for restricting a stack to a mesh domain.  Pixels outside the
// mesh are dropped and counted, never silently; the caller decides how to
// surface the report.  Throws DomainMismatch when no pixel lies inside.
struct DomainFilter {
  int n_total = 0;
  int n_kept = 0;
  int n_dropped = 0;
};
ImageStack restrict_to_domain(const ImageStack& stack, const TriangulationMesh& mesh,
                              DomainFilter* report = nullptr);

// Surface CSV: "z1,z2,value" per pixel.
void save_surface_csv(const std::vector<Point2>& pixels, const Eigen::VectorXd& values,
                      const std::string& path, const Provenance& prov = {});

// Band CSV: "z1,z2,center,lower,upper,label"; label is the exceedance of the
// band against zero: +1 band entirely above zero, -1 entirely below, 0 the
// band contains zero.
void save_band_csv(const SccBand& band, const std::vector<Point2>& pixels,
                   const std::string& path, const Provenance& prov = {});

// Band summary JSON: {alpha, q, B, seed, variant, mean_width} plus
// provenance; mean_width is the average over pixels of (upper - lower).
void save_band_summary_json(const SccBand& band, const std::string& path,
                            const Provenance& prov = {});
double band_mean_width(const SccBand& band);

// Mean-fit JSON: coefficients (reduced and full), fitted surface, penalty,
// hat trace, GCV value and curve, subject count.  Round-trips exactly.
void save_fit_json(const MeanFitResult& fit, const std::string& path,
                   const Provenance& prov = {});
MeanFitResult load_fit_json(const std::string& path);

// Rectangular report table; cells are preformatted strings.
struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};
void save_table_csv(const ResultTable& table, const std::string& path,
                    const Provenance& prov = {});
// Human-readable aligned rendering of the same table.
std::string render_table(const ResultTable& table, const std::string& title = "");
void save_table_text(const ResultTable& table, const std::string& path,
                     const std::string& title = "");

}  // namespace imgscc

#include "imgscc/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "imgscc/version.hpp"
#include "text_util.hpp"

namespace imgscc {

namespace {

using nlohmann::ordered_json;

std::string effective_version(const Provenance& prov) {
  return prov.version.empty() ? std::string(kVersion) : prov.version;
}

void write_comment_block(std::ostream& out, const Provenance& prov) {
  out << "# version: " << effective_version(prov) << "\n";
  out << "# command: " << prov.command << "\n";
  out << "# seed: " << prov.seed << "\n";
  for (const auto& [key, value] : prov.config)
    out << "# config " << key << ": " << value << "\n";
}

ordered_json provenance_json(const Provenance& prov) {
  ordered_json cfg = ordered_json::object();
  for (const auto& [key, value] : prov.config) cfg[key] = value;
  ordered_json out = ordered_json::object();
  out["version"] = effective_version(prov);
  out["command"] = prov.command;
  out["seed"] = prov.seed;
  out["config"] = cfg;
  return out;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  return out;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  return in;
}

void write_json_file(const ordered_json& doc, const std::string& path) {
  auto out = open_output(path);
  out << doc.dump(2) << "\n";
  if (!out) throw ParseError(path + ": write failed");
}

ordered_json read_json_file(const std::string& path) {
  auto in = open_input(path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

bool comment_or_blank(std::string_view line) {
  return line.empty() || line.front() == '#';
}

// RFC 4180 quoting for the rare cell containing a delimiter.
std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string quoted = "\"";
  for (char c : cell) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

std::uint64_t to_little_endian(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t y = 0;
    for (int b = 0; b < 8; ++b) y |= ((x >> (8 * b)) & 0xffULL) << (8 * (7 - b));
    return y;
  }
  return x;
}

void write_doubles_le(std::ostream& out, const double* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, data + i, sizeof bits);
    bits = to_little_endian(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

void read_doubles_le(std::istream& in, double* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    bits = to_little_endian(bits);
    std::memcpy(data + i, &bits, sizeof bits);
  }
}

ordered_json vector_json(const Eigen::VectorXd& v) {
  ordered_json arr = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vector_from_json(const ordered_json& arr, const std::string& context) {
  if (!arr.is_array()) throw ParseError(context + ": expected an array");
  Eigen::VectorXd v(arr.size());
  Eigen::Index i = 0;
  for (const auto& x : arr) {
    if (!x.is_number()) throw ParseError(context + ": expected numbers");
    v(i++) = x.get<double>();
  }
  return v;
}

double number_or_nan(const ordered_json& value, const std::string& context) {
  if (value.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!value.is_number()) throw ParseError(context + ": expected a number or null");
  return value.get<double>();
}

const ordered_json& require_key(const ordered_json& doc, const std::string& key,
                                const std::string& path) {
  auto it = doc.find(key);
  if (it == doc.end()) throw ParseError(path + ": missing key '" + key + "'");
  return *it;
}

}  // namespace

std::string format_number(double v) { return detail::format_double(v); }

ImageStack load_image_stack_csv(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  long line_no = 0;
  auto next_line = [&](std::string& out_line) {
    while (std::getline(in, out_line)) {
      ++line_no;
      out_line = std::string(detail::strip_cr(out_line));
      if (!comment_or_blank(out_line)) return true;
    }
    return false;
  };

  if (!next_line(line)) throw ParseError(path + ": empty file");
  auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "z1" || header[1] != "z2")
    throw ParseError(path + ":" + std::to_string(line_no) +
                     ": header must be z1,z2,y1,...,yn");
  const int n_subjects = static_cast<int>(header.size()) - 2;

  std::vector<Point2> pixels;
  std::vector<double> cells;
  while (next_line(line)) {
    auto fields = detail::split_csv_line(line);
    if (static_cast<int>(fields.size()) != n_subjects + 2)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(n_subjects + 2) + " fields, got " +
                       std::to_string(fields.size()));
    const std::string context = path + ":" + std::to_string(line_no);
    Point2 p;
    p.z1 = detail::parse_double(fields[0], context);
    p.z2 = detail::parse_double(fields[1], context);
    pixels.push_back(p);
    for (int i = 0; i < n_subjects; ++i)
      cells.push_back(detail::parse_double(fields[2 + i], context));
  }
  if (pixels.empty()) throw ParseError(path + ": no pixel rows");

  ImageStack stack;
  stack.pixels = std::move(pixels);
  const int n_pixels = static_cast<int>(stack.pixels.size());
  stack.values.resize(n_subjects, n_pixels);
  for (int j = 0; j < n_pixels; ++j)
    for (int i = 0; i < n_subjects; ++i)
      stack.values(i, j) = cells[static_cast<std::size_t>(j) * n_subjects + i];
  return stack;
}

void save_image_stack_csv(const ImageStack& stack, const std::string& path,
                          const Provenance& prov) {
  auto out = open_output(path);
  write_comment_block(out, prov);
  out << "z1,z2";
  for (int i = 1; i <= stack.n_subjects(); ++i) out << ",y" << i;
  out << "\n";
  for (int j = 0; j < stack.n_pixels(); ++j) {
    out << detail::format_double(stack.pixels[j].z1) << ','
        << detail::format_double(stack.pixels[j].z2);
    for (int i = 0; i < stack.n_subjects(); ++i)
      out << ',' << detail::format_double(stack.values(i, j));
    out << "\n";
  }
  if (!out) throw ParseError(path + ": write failed");
}

void save_image_stack_raw(const ImageStack& stack, const std::string& data_path,
                          const std::string& sidecar_path, const Provenance& prov) {
  {
    auto out = open_output(data_path);
    std::vector<double> row(stack.n_pixels());
    for (int i = 0; i < stack.n_subjects(); ++i) {
      for (int j = 0; j < stack.n_pixels(); ++j) row[j] = stack.values(i, j);
      write_doubles_le(out, row.data(), row.size());
    }
    if (!out) throw ParseError(data_path + ": write failed");
  }
  const std::filesystem::path data_fs(data_path);
  const std::string stored_name =
      data_fs.parent_path() == std::filesystem::path(sidecar_path).parent_path()
          ? data_fs.filename().string()
          : std::filesystem::absolute(data_fs).string();
  ordered_json doc = ordered_json::object();
  doc["format"] = "raw-f64le";
  doc["order"] = "subject-major";
  doc["n_subjects"] = stack.n_subjects();
  doc["n_pixels"] = stack.n_pixels();
  doc["data_file"] = stored_name;
  ordered_json px = ordered_json::array();
  for (const auto& p : stack.pixels) px.push_back({p.z1, p.z2});
  doc["pixels"] = px;
  doc["provenance"] = provenance_json(prov);
  write_json_file(doc, sidecar_path);
}

ImageStack load_image_stack_raw(const std::string& sidecar_path) {
  const ordered_json doc = read_json_file(sidecar_path);
  if (require_key(doc, "format", sidecar_path) != "raw-f64le")
    throw ParseError(sidecar_path + ": unsupported format '" +
                     doc["format"].get<std::string>() + "'");
  const int n_subjects = require_key(doc, "n_subjects", sidecar_path).get<int>();
  const int n_pixels = require_key(doc, "n_pixels", sidecar_path).get<int>();
  if (n_subjects < 1 || n_pixels < 1)
    throw ParseError(sidecar_path + ": dimensions must be positive");
  const auto& px = require_key(doc, "pixels", sidecar_path);
  if (!px.is_array() || static_cast<int>(px.size()) != n_pixels)
    throw ParseError(sidecar_path + ": pixels array does not match n_pixels");

  ImageStack stack;
  stack.pixels.reserve(n_pixels);
  for (const auto& pair : px) {
    if (!pair.is_array() || pair.size() != 2)
      throw ParseError(sidecar_path + ": pixels entries must be [z1, z2]");
    stack.pixels.push_back({pair[0].get<double>(), pair[1].get<double>()});
  }

  std::filesystem::path data_file(
      require_key(doc, "data_file", sidecar_path).get<std::string>());
  if (data_file.is_relative())
    data_file = std::filesystem::path(sidecar_path).parent_path() / data_file;

  auto in = open_input(data_file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t expected =
      8ULL * static_cast<std::uint64_t>(n_subjects) * static_cast<std::uint64_t>(n_pixels);
  if (bytes != expected)
    throw ParseError(data_file.string() + ": expected " + std::to_string(expected) +
                     " bytes for " + std::to_string(n_subjects) + "x" +
                     std::to_string(n_pixels) + ", found " + std::to_string(bytes));
  in.seekg(0, std::ios::beg);

  stack.values.resize(n_subjects, n_pixels);
  std::vector<double> row(n_pixels);
  for (int i = 0; i < n_subjects; ++i) {
    read_doubles_le(in, row.data(), row.size());
    for (int j = 0; j < n_pixels; ++j) stack.values(i, j) = row[j];
  }
  if (!in) throw ParseError(data_file.string() + ": read failed");
  return stack;
}

ImageStack restrict_to_domain(const ImageStack& stack, const TriangulationMesh& mesh,
                              DomainFilter* report) {
  std::vector<int> keep;
  keep.reserve(stack.pixels.size());
  for (int j = 0; j < stack.n_pixels(); ++j)
    if (mesh.locate(stack.pixels[j]).has_value()) keep.push_back(j);

  DomainFilter filter;
  filter.n_total = stack.n_pixels();
  filter.n_kept = static_cast<int>(keep.size());
  filter.n_dropped = filter.n_total - filter.n_kept;
  if (report) *report = filter;
  if (keep.empty())
    throw DomainMismatch("none of the " + std::to_string(filter.n_total) +
                         " pixels lie inside the mesh domain");
  if (filter.n_dropped == 0) return stack;

  ImageStack out;
  out.pixels.reserve(keep.size());
  out.values.resize(stack.n_subjects(), filter.n_kept);
  for (int jj = 0; jj < filter.n_kept; ++jj) {
    out.pixels.push_back(stack.pixels[keep[jj]]);
    out.values.col(jj) = stack.values.col(keep[jj]);
  }
  return out;
}

void save_surface_csv(const std::vector<Point2>& pixels, const Eigen::VectorXd& values,
                      const std::string& path, const Provenance& prov) {
  if (static_cast<Eigen::Index>(pixels.size()) != values.size())
    throw GridMismatch("surface has " + std::to_string(values.size()) +
                       " values for " + std::to_string(pixels.size()) + " pixels");
  auto out = open_output(path);
  write_comment_block(out, prov);
  out << "z1,z2,value\n";
  for (std::size_t j = 0; j < pixels.size(); ++j)
    out << detail::format_double(pixels[j].z1) << ','
        << detail::format_double(pixels[j].z2) << ','
        << detail::format_double(values(static_cast<Eigen::Index>(j))) << "\n";
  if (!out) throw ParseError(path + ": write failed");
}

void save_band_csv(const SccBand& band, const std::vector<Point2>& pixels,
                   const std::string& path, const Provenance& prov) {
  if (static_cast<Eigen::Index>(pixels.size()) != band.center.size())
    throw GridMismatch("band covers " + std::to_string(band.center.size()) +
                       " pixels, grid has " + std::to_string(pixels.size()));
  const auto labels = exceedance_map(band);
  auto out = open_output(path);
  write_comment_block(out, prov);
  out << "# label: +1 band above zero, -1 band below zero, 0 band contains zero\n";
  out << "z1,z2,center,lower,upper,label\n";
  for (std::size_t j = 0; j < pixels.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    int label = 0;
    if (labels[j] == Exceedance::BelowLower) label = 1;
    if (labels[j] == Exceedance::AboveUpper) label = -1;
    out << detail::format_double(pixels[j].z1) << ','
        << detail::format_double(pixels[j].z2) << ','
        << detail::format_double(band.center(i)) << ','
        << detail::format_double(band.lower(i)) << ','
        << detail::format_double(band.upper(i)) << ',' << label << "\n";
  }
  if (!out) throw ParseError(path + ": write failed");
}

double band_mean_width(const SccBand& band) {
  if (band.center.size() == 0) return 0.0;
  return (band.upper - band.lower).mean();
}

void save_band_summary_json(const SccBand& band, const std::string& path,
                            const Provenance& prov) {
  ordered_json doc = ordered_json::object();
  doc["alpha"] = band.alpha;
  doc["q"] = band.quantile;
  doc["B"] = band.n_draws;
  doc["seed"] = band.seed;
  doc["variant"] = band.variant == SccVariant::Adjusted ? "adjusted" : "basic";
  doc["mean_width"] = band_mean_width(band);
  doc["n_pixels"] = band.center.size();
  doc["provenance"] = provenance_json(prov);
  write_json_file(doc, path);
}

void save_fit_json(const MeanFitResult& fit, const std::string& path,
                   const Provenance& prov) {
  ordered_json doc = ordered_json::object();
  doc["theta"] = vector_json(fit.theta);
  doc["gamma"] = vector_json(fit.gamma);
  doc["fitted"] = vector_json(fit.fitted);
  doc["rho"] = fit.rho;
  doc["hat_trace"] = fit.hat_trace;
  doc["gcv"] = std::isnan(fit.gcv) ? ordered_json() : ordered_json(fit.gcv);
  doc["n_subjects"] = fit.n_subjects;
  ordered_json curve = ordered_json::array();
  for (const auto& point : fit.gcv_curve) {
    ordered_json entry = ordered_json::object();
    entry["rho"] = point.rho;
    entry["gcv"] = std::isnan(point.gcv) ? ordered_json() : ordered_json(point.gcv);
    entry["hat_trace"] = point.hat_trace;
    entry["valid"] = point.valid;
    curve.push_back(entry);
  }
  doc["gcv_curve"] = curve;
  doc["provenance"] = provenance_json(prov);
  write_json_file(doc, path);
}

MeanFitResult load_fit_json(const std::string& path) {
  const ordered_json doc = read_json_file(path);
  MeanFitResult fit;
  fit.theta = vector_from_json(require_key(doc, "theta", path), path + ": theta");
  fit.gamma = vector_from_json(require_key(doc, "gamma", path), path + ": gamma");
  fit.fitted = vector_from_json(require_key(doc, "fitted", path), path + ": fitted");
  fit.rho = require_key(doc, "rho", path).get<double>();
  fit.hat_trace = require_key(doc, "hat_trace", path).get<double>();
  fit.gcv = number_or_nan(require_key(doc, "gcv", path), path + ": gcv");
  fit.n_subjects = require_key(doc, "n_subjects", path).get<int>();
  for (const auto& entry : require_key(doc, "gcv_curve", path)) {
    GcvPoint point;
    point.rho = require_key(entry, "rho", path).get<double>();
    point.gcv = number_or_nan(require_key(entry, "gcv", path), path + ": gcv_curve");
    point.hat_trace = require_key(entry, "hat_trace", path).get<double>();
    point.valid = require_key(entry, "valid", path).get<bool>();
    fit.gcv_curve.push_back(point);
  }
  return fit;
}

void save_table_csv(const ResultTable& table, const std::string& path,
                    const Provenance& prov) {
  auto out = open_output(path);
  write_comment_block(out, prov);
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    out << (c ? "," : "") << csv_escape(table.columns[c]);
  out << "\n";
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size())
      throw GridMismatch("table row has " + std::to_string(row.size()) +
                         " cells for " + std::to_string(table.columns.size()) +
                         " columns");
    for (std::size_t c = 0; c < row.size(); ++c)
      out << (c ? "," : "") << csv_escape(row[c]);
    out << "\n";
  }
  if (!out) throw ParseError(path + ": write failed");
}

std::string render_table(const ResultTable& table, const std::string& title) {
  for (const auto& row : table.rows)
    if (row.size() != table.columns.size())
      throw GridMismatch("table row has " + std::to_string(row.size()) +
                         " cells for " + std::to_string(table.columns.size()) +
                         " columns");
  std::vector<std::size_t> width(table.columns.size());
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    width[c] = table.columns[c].size();
  for (const auto& row : table.rows)
    for (std::size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], row[c].size());

  std::ostringstream out;
  if (!title.empty()) out << title << "\n";
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out << "  ";
      const std::string& cell = cells[c];
      if (c == 0)
        out << cell << std::string(width[c] - cell.size(), ' ');
      else
        out << std::string(width[c] - cell.size(), ' ') << cell;
    }
    out << "\n";
  };
  emit(table.columns);
  std::size_t total = 0;
  for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
  out << std::string(total, '-') << "\n";
  for (const auto& row : table.rows) emit(row);
  return out.str();
}

void save_table_text(const ResultTable& table, const std::string& path,
                     const std::string& title) {
  auto out = open_output(path);
  out << render_table(table, title);
  if (!out) throw ParseError(path + ": write failed");
}

}  // namespace imgscc

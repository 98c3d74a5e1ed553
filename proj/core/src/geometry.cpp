#include "imgscc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "text_util.hpp"

namespace imgscc {

namespace {

double edge_len(const Point2& a, const Point2& b) {
  return std::hypot(a.z1 - b.z1, a.z2 - b.z2);
}

double signed_area(const Point2& a, const Point2& b, const Point2& c) {
  return 0.5 * ((b.z1 - a.z1) * (c.z2 - a.z2) - (c.z1 - a.z1) * (b.z2 - a.z2));
}

}  // namespace

TriangulationMesh::TriangulationMesh(std::vector<Point2> vertices,
                                     std::vector<std::array<int, 3>> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  const int nv = n_vertices();
  const int nt = n_triangles();
  if (nv < 3) throw InvalidMesh("mesh needs at least 3 vertices, got " + std::to_string(nv));
  if (nt < 1) throw InvalidMesh("mesh needs at least 1 triangle");

  std::vector<char> referenced(nv, 0);
  areas_.resize(nt);
  bbox_.resize(nt);
  for (int t = 0; t < nt; ++t) {
    auto& tri = triangles_[t];
    for (int v : tri)
      if (v < 0 || v >= nv)
        throw InvalidMesh("triangle " + std::to_string(t) + " references vertex " +
                          std::to_string(v) + " outside [0," + std::to_string(nv) + ")");
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
      throw InvalidMesh("triangle " + std::to_string(t) + " repeats a vertex");
    const Point2& a = vertices_[tri[0]];
    const Point2& b = vertices_[tri[1]];
    const Point2& c = vertices_[tri[2]];
    double area = signed_area(a, b, c);
    if (area < 0.0) {  // normalize to counterclockwise
      std::swap(tri[1], tri[2]);
      area = -area;
    }
    const double longest = std::max({edge_len(a, b), edge_len(b, c), edge_len(c, a)});
    if (area <= 1e-12 * longest * longest)
      throw DegenerateTriangle("triangle " + std::to_string(t) +
                               " is degenerate (area " + std::to_string(area) + ")");
    areas_[t] = area;
    bbox_[t] = {std::min({a.z1, b.z1, c.z1}), std::max({a.z1, b.z1, c.z1}),
                std::min({a.z2, b.z2, c.z2}), std::max({a.z2, b.z2, c.z2})};
    for (int v : tri) referenced[v] = 1;
  }
  for (int v = 0; v < nv; ++v)
    if (!referenced[v])
      throw InvalidMesh("vertex " + std::to_string(v) + " is not referenced by any triangle");

  // Edge incidence: conforming means every undirected edge belongs to at most
  // two triangles, and shared edges are traversed in opposite directions
  // (consistent orientation).
  std::map<std::pair<int, int>, std::vector<int>> incidence;
  for (int t = 0; t < nt; ++t) {
    const auto& tri = triangles_[t];
    for (int e = 0; e < 3; ++e) {
      int u = tri[e], v = tri[(e + 1) % 3];
      auto key = std::minmax(u, v);
      incidence[{key.first, key.second}].push_back(t);
    }
  }
  std::map<std::array<int, 3>, int> seen;
  for (int t = 0; t < nt; ++t) {
    std::array<int, 3> sorted = triangles_[t];
    std::sort(sorted.begin(), sorted.end());
    if (!seen.emplace(sorted, t).second)
      throw InvalidMesh("duplicate triangle at index " + std::to_string(t));
  }
  for (const auto& [edge, tris] : incidence) {
    if (tris.size() > 2)
      throw InvalidMesh("edge (" + std::to_string(edge.first) + "," +
                        std::to_string(edge.second) + ") is shared by " +
                        std::to_string(tris.size()) + " triangles");
    if (tris.size() == 2)
      interior_edges_.push_back({edge.first, edge.second, tris[0], tris[1]});
    else
      ++n_boundary_edges_;
  }
  domain_area_ = 0.0;
  for (double a : areas_) domain_area_ += a;
}

BaryCoord TriangulationMesh::barycentric(int t, const Point2& p) const {
  const auto& tri = triangles_[t];
  const Point2& a = vertices_[tri[0]];
  const Point2& b = vertices_[tri[1]];
  const Point2& c = vertices_[tri[2]];
  const double det = (b.z1 - a.z1) * (c.z2 - a.z2) - (c.z1 - a.z1) * (b.z2 - a.z2);
  const double l1 = ((b.z1 - p.z1) * (c.z2 - p.z2) - (c.z1 - p.z1) * (b.z2 - p.z2)) / det;
  const double l2 = ((c.z1 - p.z1) * (a.z2 - p.z2) - (a.z1 - p.z1) * (c.z2 - p.z2)) / det;
  return {l1, l2, 1.0 - l1 - l2};
}

std::optional<int> TriangulationMesh::locate(const Point2& p) const {
  for (int t = 0; t < n_triangles(); ++t) {
    const auto& box = bbox_[t];
    if (p.z1 < box[0] - 1e-9 || p.z1 > box[1] + 1e-9 || p.z2 < box[2] - 1e-9 ||
        p.z2 > box[3] + 1e-9)
      continue;
    const BaryCoord bc = barycentric(t, p);
    if (bc.b1 >= kInsideTol && bc.b2 >= kInsideTol && bc.b3 >= kInsideTol) return t;
  }
  return std::nullopt;
}

std::array<Point2, 3> TriangulationMesh::bary_gradients(int t) const {
  const auto& tri = triangles_[t];
  const Point2& a = vertices_[tri[0]];
  const Point2& b = vertices_[tri[1]];
  const Point2& c = vertices_[tri[2]];
  const double det = (b.z1 - a.z1) * (c.z2 - a.z2) - (c.z1 - a.z1) * (b.z2 - a.z2);
  return {Point2{(b.z2 - c.z2) / det, (c.z1 - b.z1) / det},
          Point2{(c.z2 - a.z2) / det, (a.z1 - c.z1) / det},
          Point2{(a.z2 - b.z2) / det, (b.z1 - a.z1) / det}};
}

MeshStats TriangulationMesh::stats() const {
  MeshStats s;
  s.n_vertices = n_vertices();
  s.n_triangles = n_triangles();
  s.domain_area = domain_area_;
  for (int t = 0; t < n_triangles(); ++t) {
    const auto& tri = triangles_[t];
    const Point2& a = vertices_[tri[0]];
    const Point2& b = vertices_[tri[1]];
    const Point2& c = vertices_[tri[2]];
    const double longest = std::max({edge_len(a, b), edge_len(b, c), edge_len(c, a)});
    const double perimeter = edge_len(a, b) + edge_len(b, c) + edge_len(c, a);
    const double inradius = 2.0 * areas_[t] / perimeter;
    s.size = std::max(s.size, longest);
    s.shape_ratio = std::max(s.shape_ratio, longest / inradius);
  }
  return s;
}

TriangulationMesh load_mesh(const std::string& vertex_csv,
                            const std::string& triangle_csv) {
  auto read_lines = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      auto sv = detail::strip_cr(line);
      if (!sv.empty()) lines.emplace_back(sv);
    }
    return lines;
  };

  const auto vlines = read_lines(vertex_csv);
  if (vlines.empty() || detail::split_csv_line(vlines[0]) !=
                            std::vector<std::string_view>{"id", "z1", "z2"})
    throw ParseError(vertex_csv + ": expected header 'id,z1,z2'");
  std::vector<Point2> vertices;
  vertices.reserve(vlines.size() - 1);
  for (std::size_t i = 1; i < vlines.size(); ++i) {
    const auto cells = detail::split_csv_line(vlines[i]);
    if (cells.size() != 3)
      throw ParseError(vertex_csv + ":" + std::to_string(i + 1) + ": expected 3 columns");
    const long id = detail::parse_long(cells[0], vertex_csv);
    if (id != static_cast<long>(i - 1))
      throw ParseError(vertex_csv + ": vertex ids must be contiguous from 0, got " +
                       std::to_string(id) + " at row " + std::to_string(i));
    vertices.push_back({detail::parse_double(cells[1], vertex_csv),
                        detail::parse_double(cells[2], vertex_csv)});
  }

  const auto tlines = read_lines(triangle_csv);
  if (tlines.empty() || detail::split_csv_line(tlines[0]) !=
                            std::vector<std::string_view>{"id", "v1", "v2", "v3"})
    throw ParseError(triangle_csv + ": expected header 'id,v1,v2,v3'");
  std::vector<std::array<int, 3>> triangles;
  triangles.reserve(tlines.size() - 1);
  for (std::size_t i = 1; i < tlines.size(); ++i) {
    const auto cells = detail::split_csv_line(tlines[i]);
    if (cells.size() != 4)
      throw ParseError(triangle_csv + ":" + std::to_string(i + 1) + ": expected 4 columns");
    const long id = detail::parse_long(cells[0], triangle_csv);
    if (id != static_cast<long>(i - 1))
      throw ParseError(triangle_csv + ": triangle ids must be contiguous from 0, got " +
                       std::to_string(id) + " at row " + std::to_string(i));
    triangles.push_back({static_cast<int>(detail::parse_long(cells[1], triangle_csv)),
                         static_cast<int>(detail::parse_long(cells[2], triangle_csv)),
                         static_cast<int>(detail::parse_long(cells[3], triangle_csv))});
  }
  return TriangulationMesh(std::move(vertices), std::move(triangles));
}

void save_mesh(const TriangulationMesh& mesh, const std::string& vertex_csv,
               const std::string& triangle_csv) {
  std::ofstream vout(vertex_csv, std::ios::binary);
  if (!vout) throw ParseError("cannot open '" + vertex_csv + "' for writing");
  vout << "id,z1,z2\n";
  for (int i = 0; i < mesh.n_vertices(); ++i) {
    const Point2& p = mesh.vertex(i);
    vout << i << ',' << detail::format_double(p.z1) << ','
         << detail::format_double(p.z2) << '\n';
  }
  std::ofstream tout(triangle_csv, std::ios::binary);
  if (!tout) throw ParseError("cannot open '" + triangle_csv + "' for writing");
  tout << "id,v1,v2,v3\n";
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangle(t);
    tout << t << ',' << tri[0] << ',' << tri[1] << ',' << tri[2] << '\n';
  }
}

}  // namespace imgscc

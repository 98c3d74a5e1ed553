#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "imgscc/errors.hpp"

namespace imgscc {

struct Point2 {
  double z1 = 0.0;
  double z2 = 0.0;
};

struct BaryCoord {
  double b1 = 0.0;
  double b2 = 0.0;
  double b3 = 0.0;
};

struct MeshStats {
  int n_vertices = 0;
  int n_triangles = 0;
  double size = 0.0;         // longest edge over all triangles
  double shape_ratio = 0.0;  // max over triangles of longest edge / inradius
  double domain_area = 0.0;
};

// Interior edge record: global endpoints with v1 < v2, plus the two incident
// triangles ordered tri_a < tri_b.
struct InteriorEdge {
  int v1 = 0;
  int v2 = 0;
  int tri_a = 0;
  int tri_b = 0;
};

// Barycentric containment tolerance shared by locate() and consumers that
// must agree with it (pixel masks, loaders).
inline constexpr double kInsideTol = -1e-10;

// Conforming triangulation of a polygonal domain.  Construction validates
// the mesh: in-range vertex references, no degenerate triangles, each edge
// shared by at most two triangles, no duplicate triangles, every vertex
// referenced.  Triangles are normalized to counterclockwise orientation.
class TriangulationMesh {
 public:
  TriangulationMesh(std::vector<Point2> vertices,
                    std::vector<std::array<int, 3>> triangles);

  int n_vertices() const { return static_cast<int>(vertices_.size()); }
  int n_triangles() const { return static_cast<int>(triangles_.size()); }
  const Point2& vertex(int i) const { return vertices_[i]; }
  const std::array<int, 3>& triangle(int t) const { return triangles_[t]; }
  const std::vector<Point2>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }

  double triangle_area(int t) const { return areas_[t]; }
  double domain_area() const { return domain_area_; }

  // Barycentric coordinates of p with respect to triangle t; coordinates sum
  // to one for any p (the triangle is non-degenerate by construction).
  BaryCoord barycentric(int t, const Point2& p) const;

  // Index of the lowest-numbered triangle containing p (all barycentric
  // coordinates >= kInsideTol), or nullopt when p lies outside the domain.
  std::optional<int> locate(const Point2& p) const;

  // Gradients of the three barycentric coordinate functions on triangle t;
  // entry l is (d b_l / d z1, d b_l / d z2), constant over the triangle.
  std::array<Point2, 3> bary_gradients(int t) const;

  const std::vector<InteriorEdge>& interior_edges() const { return interior_edges_; }
  int n_boundary_edges() const { return n_boundary_edges_; }

  MeshStats stats() const;

 private:
  std::vector<Point2> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<double> areas_;          // positive areas, CCW order
  std::vector<std::array<double, 4>> bbox_;  // per-triangle {min1,max1,min2,max2}
  std::vector<InteriorEdge> interior_edges_;
  int n_boundary_edges_ = 0;
  double domain_area_ = 0.0;
};

// CSV mesh exchange.  Vertices: header "id,z1,z2"; triangles: header
// "id,v1,v2,v3"; ids are zero-based and contiguous; UTF-8 with LF endings.
TriangulationMesh load_mesh(const std::string& vertex_csv,
                            const std::string& triangle_csv);
void save_mesh(const TriangulationMesh& mesh, const std::string& vertex_csv,
               const std::string& triangle_csv);

}  // namespace imgscc

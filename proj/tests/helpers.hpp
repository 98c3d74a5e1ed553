#pragma once

// Shared fixtures and independent numerical oracles for the test suites.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "imgscc/basis.hpp"
#include "imgscc/estimator.hpp"
#include "imgscc/geometry.hpp"

namespace testutil {

inline std::string data_dir() { return IMGSCC_DATA_DIR; }

inline std::string mesh_path(const std::string& name, const std::string& kind) {
  return data_dir() + "/meshes/" + name + "." + kind + ".csv";
}

inline imgscc::TriangulationMesh load_fixture(const std::string& name) {
  return imgscc::load_mesh(mesh_path(name, "v"), mesh_path(name, "t"));
}

// Unit square split along the main diagonal.
inline imgscc::TriangulationMesh square2() {
  return imgscc::TriangulationMesh(
      {{0, 0}, {1, 0}, {1, 1}, {0, 1}},
      {{{0, 1, 2}}, {{0, 2, 3}}});
}

// Unit square fanned around a center vertex: four triangles.
inline imgscc::TriangulationMesh square4() {
  return imgscc::TriangulationMesh(
      {{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}},
      {{{0, 1, 4}}, {{1, 2, 4}}, {{2, 3, 4}}, {{3, 0, 4}}});
}

// Irregular five-triangle mesh (no symmetry; exercises generic geometry).
inline imgscc::TriangulationMesh irregular5() {
  return imgscc::TriangulationMesh(
      {{0.0, 0.0}, {1.0, 0.1}, {0.9, 1.0}, {-0.1, 0.9}, {0.45, 0.4}, {1.3, 0.6}},
      {{{0, 1, 4}}, {{1, 2, 4}}, {{2, 3, 4}}, {{3, 0, 4}}, {{1, 5, 2}}});
}

// Uniform s x s square grid mesh on [0,1]^2, each cell split into two.
inline imgscc::TriangulationMesh square_grid(int s) {
  std::vector<imgscc::Point2> verts;
  for (int j = 0; j <= s; ++j)
    for (int i = 0; i <= s; ++i)
      verts.push_back({static_cast<double>(i) / s, static_cast<double>(j) / s});
  std::vector<std::array<int, 3>> tris;
  for (int j = 0; j < s; ++j)
    for (int i = 0; i < s; ++i) {
      const int a = j * (s + 1) + i;
      const int b = a + 1;
      const int c = a + s + 1;
      const int d = c + 1;
      tris.push_back({a, b, d});
      tris.push_back({a, d, c});
    }
  return imgscc::TriangulationMesh(std::move(verts), std::move(tris));
}

// Random point inside triangle t of a mesh, uniform in barycentric terms.
inline imgscc::Point2 random_point_in(const imgscc::TriangulationMesh& mesh, int t,
                                      std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double b1 = u(gen), b2 = u(gen);
  if (b1 + b2 > 1.0) {
    b1 = 1.0 - b1;
    b2 = 1.0 - b2;
  }
  const auto& tri = mesh.triangle(t);
  const auto& a = mesh.vertex(tri[0]);
  const auto& b = mesh.vertex(tri[1]);
  const auto& c = mesh.vertex(tri[2]);
  return {b1 * a.z1 + b2 * b.z1 + (1 - b1 - b2) * c.z1,
          b1 * a.z2 + b2 * b.z2 + (1 - b1 - b2) * c.z2};
}

inline imgscc::Point2 random_domain_point(const imgscc::TriangulationMesh& mesh,
                                          std::mt19937_64& gen) {
  // Area-weighted triangle choice keeps the sample uniform over the domain.
  std::uniform_real_distribution<double> u(0.0, mesh.domain_area());
  double target = u(gen), acc = 0.0;
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    acc += mesh.triangle_area(t);
    if (target <= acc) return random_point_in(mesh, t, gen);
  }
  return random_point_in(mesh, mesh.n_triangles() - 1, gen);
}

// Gauss-Legendre nodes/weights on [0,1] by Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& nodes,
                           std::vector<double>& weights) {
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    const double dp = n * (x * p1 - p0) / (x * x - 1.0);
    nodes[i] = 0.5 * (x + 1.0);
    weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
}

// Numerical integral of f over one triangle via a Duffy-transformed tensor
// Gauss rule; independent of the library's closed-form integrals.
inline double integrate_on_triangle(const imgscc::TriangulationMesh& mesh, int t,
                                    const std::function<double(imgscc::Point2)>& f,
                                    int order = 20) {
  std::vector<double> x, w;
  gauss_legendre(order, x, w);
  const auto& tri = mesh.triangle(t);
  const auto& a = mesh.vertex(tri[0]);
  const auto& b = mesh.vertex(tri[1]);
  const auto& c = mesh.vertex(tri[2]);
  const double jac = 2.0 * mesh.triangle_area(t);
  double sum = 0.0;
  for (int i = 0; i < order; ++i)
    for (int j = 0; j < order; ++j) {
      const double u = x[i], v = x[j];
      const double b2 = u, b3 = v * (1.0 - u);  // Duffy collapse
      const double b1 = 1.0 - b2 - b3;
      const imgscc::Point2 p{b1 * a.z1 + b2 * b.z1 + b3 * c.z1,
                             b1 * a.z2 + b2 * b.z2 + b3 * c.z2};
      sum += w[i] * w[j] * (1.0 - u) * f(p);
    }
  return sum * jac;
}

inline double integrate_on_domain(const imgscc::TriangulationMesh& mesh,
                                  const std::function<double(imgscc::Point2)>& f,
                                  int order = 20) {
  double sum = 0.0;
  for (int t = 0; t < mesh.n_triangles(); ++t)
    sum += integrate_on_triangle(mesh, t, f, order);
  return sum;
}

// Piecewise interpolant of f: per-triangle solve at the domain points.
// Exact (up to roundoff) when f is a polynomial of degree <= system degree.
inline Eigen::VectorXd interpolate_function(
    const imgscc::SplineBasisSystem& system,
    const std::function<double(imgscc::Point2)>& f) {
  const int L = imgscc::SplineBasisSystem::local_dim(system.degree());
  Eigen::VectorXd gamma(system.basis_count());
  for (int t = 0; t < system.mesh().n_triangles(); ++t) {
    const auto pts = system.domain_points(t);
    Eigen::MatrixXd vand(L, L);
    Eigen::VectorXd rhs(L);
    for (int p = 0; p < L; ++p) {
      vand.row(p) = system.local_basis_at(t, pts[p]).transpose();
      rhs[p] = f(pts[p]);
    }
    gamma.segment(t * L, L) = vand.fullPivLu().solve(rhs);
  }
  return gamma;
}

// Pixel-center grid over [0,1]^2 restricted to the mesh domain.
inline std::vector<imgscc::Point2> domain_grid(const imgscc::TriangulationMesh& mesh,
                                               int m1, int m2) {
  std::vector<imgscc::Point2> pts;
  for (int j = 0; j < m2; ++j)
    for (int i = 0; i < m1; ++i) {
      const imgscc::Point2 p{(i + 0.5) / m1, (j + 0.5) / m2};
      if (mesh.locate(p)) pts.push_back(p);
    }
  return pts;
}

}  // namespace testutil

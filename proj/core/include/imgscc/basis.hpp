#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <span>
#include <string>
#include <vector>

#include "imgscc/geometry.hpp"

namespace imgscc {

// Result of evaluating the piecewise Bernstein basis at a point set.
// Row i holds the nonzero basis values for point i (at most one triangle's
// worth); points outside the domain get an all-zero row and triangle_of -1.
struct BasisEvalMatrix {
  Eigen::SparseMatrix<double, Eigen::RowMajor> values;
  std::vector<int> triangle_of;
  int n_inside = 0;
  bool all_inside() const { return n_inside == static_cast<int>(triangle_of.size()); }
};

// Piecewise Bernstein polynomial space of one degree over a triangulation,
// with cross-edge smoothness imposed through linear constraints.
//
// Layout: triangle t owns columns [t*L, (t+1)*L) where L = (d+1)(d+2)/2.
// Within a triangle, coefficients follow the multi-index order (i,j,k) with
// i+j+k = d, i descending then j descending; index l corresponds to vertex
// triangle(t)[l] through exponent position l.
//
// Construction assembles, for the requested smoothness r:
//  - constraint matrix H: a coefficient vector c yields a C^r function on the
//    domain iff H c = 0 (agreement of values and directional derivatives up
//    to order r across every interior edge);
//  - penalty matrix P: c' P c equals the thin-plate energy
//    sum_T int_T (s_11 t_11 + 2 s_12 t_12 + s_22 t_22) of the two pieces,
//    computed in closed form (exact for polynomials);
//  - null-space basis Q2 with orthonormal columns spanning {c : H c = 0},
//    obtained from a singular value decomposition of H with rank threshold
//    1e-10 times the largest singular value.
class SplineBasisSystem {
 public:
  SplineBasisSystem(const TriangulationMesh& mesh, int degree, int smoothness);

  const TriangulationMesh& mesh() const { return *mesh_; }
  int degree() const { return degree_; }
  int smoothness() const { return smoothness_; }
  int basis_count() const { return basis_count_; }
  int reduced_dim() const { return static_cast<int>(null_space_.cols()); }
  int constraint_rank() const { return constraint_rank_; }

  static int local_dim(int degree) { return (degree + 1) * (degree + 2) / 2; }

  const Eigen::SparseMatrix<double>& constraint_matrix() const { return constraints_; }
  const Eigen::SparseMatrix<double>& penalty_matrix() const { return penalty_; }
  const Eigen::MatrixXd& null_space() const { return null_space_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Values (or mixed partial derivatives of order a1 in z1 and a2 in z2) of
  // all basis functions at the given points.  a1 + a2 must not exceed the
  // degree; locate() decides the owning triangle of each point.
  BasisEvalMatrix eval(std::span<const Point2> points) const;
  BasisEvalMatrix eval_deriv(std::span<const Point2> points, int a1, int a2) const;

  // The L domain points (i v0 + j v1 + k v2)/d of triangle t, in local order.
  std::vector<Point2> domain_points(int t) const;

  // Local basis values/derivatives of triangle t's polynomial piece at p;
  // p need not lie inside t (barycentric extrapolation).
  Eigen::VectorXd local_basis_at(int t, const Point2& p, int a1 = 0, int a2 = 0) const;

  // Value of the piecewise polynomial with coefficients gamma, restricted to
  // triangle t's piece, at p.
  double eval_piece(int t, const Point2& p, const Eigen::VectorXd& gamma,
                    int a1 = 0, int a2 = 0) const;

 private:
  void assemble_constraints();
  void assemble_penalty();
  void compute_null_space();

  const TriangulationMesh* mesh_;
  int degree_;
  int smoothness_;
  int basis_count_;
  int constraint_rank_ = 0;
  Eigen::SparseMatrix<double> constraints_;
  Eigen::SparseMatrix<double> penalty_;
  Eigen::MatrixXd null_space_;
  std::vector<std::string> warnings_;
};

}  // namespace imgscc

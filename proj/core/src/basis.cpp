#include "imgscc/basis.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <utility>

namespace imgscc {

namespace {

// Multi-indices (i,j,k) with i+j+k = d, ordered i descending then j
// descending; this order defines the local coefficient layout.
std::vector<std::array<int, 3>> multi_indices(int d) {
  std::vector<std::array<int, 3>> out;
  out.reserve((d + 1) * (d + 2) / 2);
  for (int i = d; i >= 0; --i)
    for (int j = d - i; j >= 0; --j) out.push_back({i, j, d - i - j});
  return out;
}

int multi_index_pos(int d, int i, int j) {
  return (d - i) * (d - i + 1) / 2 + (d - i - j);
}

// Pascal triangle; exact in double for every n used here (n <= 26).
const double* binom_row(int n) {
  static std::vector<std::vector<double>> table = [] {
    std::vector<std::vector<double>> t(40);
    for (int n = 0; n < 40; ++n) {
      t[n].resize(n + 1);
      t[n][0] = t[n][n] = 1.0;
      for (int k = 1; k < n; ++k) t[n][k] = t[n - 1][k - 1] + t[n - 1][k];
    }
    return t;
  }();
  return table[n].data();
}

double multinomial(int d, int i, int j) {
  return binom_row(d)[i] * binom_row(d - i)[j];
}

// Values of all degree-d Bernstein polynomials at barycentric coordinates b.
Eigen::VectorXd bernstein_values(int d, const BaryCoord& b) {
  const int L = (d + 1) * (d + 2) / 2;
  std::vector<double> p1(d + 1, 1.0), p2(d + 1, 1.0), p3(d + 1, 1.0);
  for (int m = 1; m <= d; ++m) {
    p1[m] = p1[m - 1] * b.b1;
    p2[m] = p2[m - 1] * b.b2;
    p3[m] = p3[m - 1] * b.b3;
  }
  Eigen::VectorXd out(L);
  int pos = 0;
  for (int i = d; i >= 0; --i)
    for (int j = d - i; j >= 0; --j, ++pos)
      out[pos] = multinomial(d, i, j) * p1[i] * p2[j] * p3[d - i - j];
  return out;
}

// Coefficient operator of one directional derivative: maps degree-d
// coefficients to degree-(d-1) coefficients, where (a1,a2,a3) are the
// directional derivatives of the barycentric coordinate functions.
Eigen::MatrixXd deriv_step(int d, double a1, double a2, double a3) {
  const int rows = d * (d + 1) / 2;
  const int cols = (d + 1) * (d + 2) / 2;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows, cols);
  int pos = 0;
  for (int i = d - 1; i >= 0; --i)
    for (int j = d - 1 - i; j >= 0; --j, ++pos) {
      m(pos, multi_index_pos(d, i + 1, j)) += d * a1;
      m(pos, multi_index_pos(d, i, j + 1)) += d * a2;
      m(pos, multi_index_pos(d, i, j)) += d * a3;  // k+1 slot shares (i,j)
    }
  return m;
}

}  // namespace

SplineBasisSystem::SplineBasisSystem(const TriangulationMesh& mesh, int degree,
                                     int smoothness)
    : mesh_(&mesh), degree_(degree), smoothness_(smoothness) {
  if (degree < 1 || degree > 12)
    throw BadConfig("degree must be in [1,12], got " + std::to_string(degree));
  if (smoothness < 0 || smoothness >= degree)
    throw BadConfig("smoothness must satisfy 0 <= r < d, got r=" +
                    std::to_string(smoothness) + ", d=" + std::to_string(degree));
  basis_count_ = mesh.n_triangles() * local_dim(degree);
  if (degree < 3 * smoothness + 2)
    warnings_.push_back("degree " + std::to_string(degree) +
                        " is below 3r+2 = " + std::to_string(3 * smoothness + 2) +
                        "; the constrained space may lose approximation power");
  assemble_constraints();
  assemble_penalty();
  compute_null_space();
}

void SplineBasisSystem::assemble_constraints() {
  const int d = degree_;
  const int L = local_dim(d);
  std::vector<Eigen::Triplet<double>> trips;
  long n_rows = 0;

  auto slot_of = [&](int t, int g) {
    const auto& tri = mesh_->triangle(t);
    for (int l = 0; l < 3; ++l)
      if (tri[l] == g) return l;
    return -1;
  };

  for (const auto& edge : mesh_->interior_edges()) {
    const int ta = edge.tri_a, tb = edge.tri_b;
    const int la1 = slot_of(ta, edge.v1), la2 = slot_of(ta, edge.v2);
    const int la3 = 3 - la1 - la2;
    const int lb1 = slot_of(tb, edge.v1), lb2 = slot_of(tb, edge.v2);
    const int lb3 = 3 - lb1 - lb2;
    const int w_vertex = mesh_->triangle(tb)[lb3];
    const BaryCoord wb = mesh_->barycentric(ta, mesh_->vertex(w_vertex));
    // Barycentric coordinates of the opposite vertex of tb, matched to the
    // (edge.v1, edge.v2, opposite) slots of ta.
    const double bvals[3] = {wb.b1, wb.b2, wb.b3};
    const double bq1 = bvals[la1], bq2 = bvals[la2], bv = bvals[la3];

    for (int m = 0; m <= smoothness_; ++m) {
      for (int i = d - m; i >= 0; --i) {
        const int j = d - m - i;
        // Target coefficient on tb: exponent i at edge.v1, j at edge.v2,
        // m at the opposite vertex.
        int exp_b[3] = {0, 0, 0};
        exp_b[lb1] = i;
        exp_b[lb2] = j;
        exp_b[lb3] = m;
        const int col_b = tb * L + multi_index_pos(d, exp_b[0], exp_b[1]);
        trips.emplace_back(n_rows, col_b, 1.0);
        // Source combination on ta, weighted by degree-m Bernstein values of
        // the opposite vertex of tb in ta's coordinates.
        for (int alpha = m; alpha >= 0; --alpha)
          for (int beta = m - alpha; beta >= 0; --beta) {
            const int gamma = m - alpha - beta;
            const double w = multinomial(m, alpha, beta) * std::pow(bq1, alpha) *
                             std::pow(bq2, beta) * std::pow(bv, gamma);
            int exp_a[3] = {0, 0, 0};
            exp_a[la1] = i + alpha;
            exp_a[la2] = j + beta;
            exp_a[la3] = gamma;
            const int col_a = ta * L + multi_index_pos(d, exp_a[0], exp_a[1]);
            trips.emplace_back(n_rows, col_a, -w);
          }
        ++n_rows;
      }
    }
  }
  constraints_.resize(n_rows, basis_count_);
  constraints_.setFromTriplets(trips.begin(), trips.end());
}

void SplineBasisSystem::assemble_penalty() {
  const int d = degree_;
  const int L = local_dim(d);
  penalty_.resize(basis_count_, basis_count_);
  if (d < 2) return;  // second derivatives vanish

  const int dp = d - 2;
  const int Lp = local_dim(dp);
  const auto mis = multi_indices(dp);
  // Exact mass matrix of the degree-(d-2) Bernstein basis on a unit-area
  // triangle; scaled by 2*area per triangle below.
  Eigen::MatrixXd mass(Lp, Lp);
  const double denom = binom_row(2 * dp)[dp] * (2 * dp + 1) * (2 * dp + 2);
  for (int p = 0; p < Lp; ++p)
    for (int q = 0; q < Lp; ++q) {
      const auto& a = mis[p];
      const auto& b = mis[q];
      mass(p, q) = binom_row(a[0] + b[0])[a[0]] * binom_row(a[1] + b[1])[a[1]] *
                   binom_row(a[2] + b[2])[a[2]] / denom;
    }

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(mesh_->n_triangles()) * L * L);
  for (int t = 0; t < mesh_->n_triangles(); ++t) {
    const auto grads = mesh_->bary_gradients(t);
    const Eigen::MatrixXd d1_z1 =
        deriv_step(d, grads[0].z1, grads[1].z1, grads[2].z1);
    const Eigen::MatrixXd d1_z2 =
        deriv_step(d, grads[0].z2, grads[1].z2, grads[2].z2);
    const Eigen::MatrixXd d2_z1 =
        deriv_step(d - 1, grads[0].z1, grads[1].z1, grads[2].z1);
    const Eigen::MatrixXd d2_z2 =
        deriv_step(d - 1, grads[0].z2, grads[1].z2, grads[2].z2);
    const Eigen::MatrixXd m11 = d2_z1 * d1_z1;
    const Eigen::MatrixXd m12 = d2_z2 * d1_z1;
    const Eigen::MatrixXd m22 = d2_z2 * d1_z2;
    const Eigen::MatrixXd g = (2.0 * mesh_->triangle_area(t)) * mass;
    const Eigen::MatrixXd block = m11.transpose() * g * m11 +
                                  2.0 * (m12.transpose() * g * m12) +
                                  m22.transpose() * g * m22;
    for (int p = 0; p < L; ++p)
      for (int q = 0; q < L; ++q)
        if (block(p, q) != 0.0) trips.emplace_back(t * L + p, t * L + q, block(p, q));
  }
  penalty_.setFromTriplets(trips.begin(), trips.end());
}

void SplineBasisSystem::compute_null_space() {
  const int K = basis_count_;
  if (constraints_.rows() == 0) {
    constraint_rank_ = 0;
    null_space_ = Eigen::MatrixXd::Identity(K, K);
    return;
  }
  Eigen::MatrixXd dense = Eigen::MatrixXd(constraints_);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(dense, Eigen::ComputeThinU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > 1e-10 * smax) ++rank;
  constraint_rank_ = rank;
  null_space_ = svd.matrixV().rightCols(K - rank);
}

BasisEvalMatrix SplineBasisSystem::eval(std::span<const Point2> points) const {
  const int L = local_dim(degree_);
  BasisEvalMatrix out;
  out.triangle_of.assign(points.size(), -1);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(points.size() * L);
  for (std::size_t r = 0; r < points.size(); ++r) {
    const auto t = mesh_->locate(points[r]);
    if (!t) continue;
    out.triangle_of[r] = *t;
    ++out.n_inside;
    const Eigen::VectorXd vals =
        bernstein_values(degree_, mesh_->barycentric(*t, points[r]));
    for (int l = 0; l < L; ++l)
      trips.emplace_back(static_cast<int>(r), *t * L + l, vals[l]);
  }
  out.values.resize(static_cast<Eigen::Index>(points.size()), basis_count_);
  out.values.setFromTriplets(trips.begin(), trips.end());
  return out;
}

BasisEvalMatrix SplineBasisSystem::eval_deriv(std::span<const Point2> points,
                                              int a1, int a2) const {
  if (a1 < 0 || a2 < 0) throw BadConfig("derivative orders must be nonnegative");
  if (a1 + a2 > degree_)
    throw OrderTooHigh("derivative order " + std::to_string(a1 + a2) +
                       " exceeds degree " + std::to_string(degree_));
  if (a1 + a2 == 0) return eval(points);

  const int L = local_dim(degree_);
  BasisEvalMatrix out;
  out.triangle_of.assign(points.size(), -1);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(points.size() * L);
  std::unordered_map<int, Eigen::MatrixXd> ops;
  for (std::size_t r = 0; r < points.size(); ++r) {
    const auto t = mesh_->locate(points[r]);
    if (!t) continue;
    out.triangle_of[r] = *t;
    ++out.n_inside;
    auto it = ops.find(*t);
    if (it == ops.end()) {
      const auto grads = mesh_->bary_gradients(*t);
      Eigen::MatrixXd m = Eigen::MatrixXd::Identity(L, L);
      int cur = degree_;
      for (int s = 0; s < a1; ++s, --cur)
        m = deriv_step(cur, grads[0].z1, grads[1].z1, grads[2].z1) * m;
      for (int s = 0; s < a2; ++s, --cur)
        m = deriv_step(cur, grads[0].z2, grads[1].z2, grads[2].z2) * m;
      it = ops.emplace(*t, std::move(m)).first;
    }
    const Eigen::VectorXd low = bernstein_values(
        degree_ - a1 - a2, mesh_->barycentric(*t, points[r]));
    const Eigen::RowVectorXd row = low.transpose() * it->second;
    for (int l = 0; l < L; ++l)
      trips.emplace_back(static_cast<int>(r), *t * L + l, row[l]);
  }
  out.values.resize(static_cast<Eigen::Index>(points.size()), basis_count_);
  out.values.setFromTriplets(trips.begin(), trips.end());
  return out;
}

std::vector<Point2> SplineBasisSystem::domain_points(int t) const {
  const auto& tri = mesh_->triangle(t);
  const Point2& a = mesh_->vertex(tri[0]);
  const Point2& b = mesh_->vertex(tri[1]);
  const Point2& c = mesh_->vertex(tri[2]);
  std::vector<Point2> out;
  out.reserve(local_dim(degree_));
  for (const auto& mi : multi_indices(degree_)) {
    const double i = mi[0], j = mi[1], k = mi[2];
    out.push_back({(i * a.z1 + j * b.z1 + k * c.z1) / degree_,
                   (i * a.z2 + j * b.z2 + k * c.z2) / degree_});
  }
  return out;
}

Eigen::VectorXd SplineBasisSystem::local_basis_at(int t, const Point2& p, int a1,
                                                  int a2) const {
  if (a1 + a2 > degree_)
    throw OrderTooHigh("derivative order " + std::to_string(a1 + a2) +
                       " exceeds degree " + std::to_string(degree_));
  const int L = local_dim(degree_);
  const BaryCoord bc = mesh_->barycentric(t, p);
  if (a1 + a2 == 0) return bernstein_values(degree_, bc);
  const auto grads = mesh_->bary_gradients(t);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(L, L);
  int cur = degree_;
  for (int s = 0; s < a1; ++s, --cur)
    m = deriv_step(cur, grads[0].z1, grads[1].z1, grads[2].z1) * m;
  for (int s = 0; s < a2; ++s, --cur)
    m = deriv_step(cur, grads[0].z2, grads[1].z2, grads[2].z2) * m;
  return (bernstein_values(degree_ - a1 - a2, bc).transpose() * m).transpose();
}

double SplineBasisSystem::eval_piece(int t, const Point2& p,
                                     const Eigen::VectorXd& gamma, int a1,
                                     int a2) const {
  const int L = local_dim(degree_);
  return local_basis_at(t, p, a1, a2).dot(gamma.segment(t * L, L));
}

}  // namespace imgscc

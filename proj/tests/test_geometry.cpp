#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "imgscc/geometry.hpp"

using namespace imgscc;

TEST_CASE("barycentric matches a dense linear-system oracle") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 200; ++rep) {
    const Point2 a{u(gen), u(gen)}, b{u(gen), u(gen)}, c{u(gen), u(gen)};
    const double area = 0.5 * ((b.z1 - a.z1) * (c.z2 - a.z2) - (c.z1 - a.z1) * (b.z2 - a.z2));
    if (std::abs(area) < 1e-3) continue;
    TriangulationMesh mesh({a, b, c}, {{{0, 1, 2}}});
    const Point2 p{u(gen), u(gen)};
    // Oracle: solve the 3x3 system [x;y;1] = V * [b1;b2;b3] directly.
    Eigen::Matrix3d V;
    V << a.z1, b.z1, c.z1, a.z2, b.z2, c.z2, 1, 1, 1;
    const Eigen::Vector3d rhs(p.z1, p.z2, 1.0);
    const Eigen::Vector3d expect = V.fullPivLu().solve(rhs);
    // The constructor may reorder to CCW; map oracle through stored order.
    const auto& tri = mesh.triangle(0);
    const Point2 verts[3] = {a, b, c};
    Eigen::Matrix3d Vs;
    for (int l = 0; l < 3; ++l) {
      (void)verts;
      const Point2& q = mesh.vertex(tri[l]);
      Vs(0, l) = q.z1;
      Vs(1, l) = q.z2;
      Vs(2, l) = 1.0;
    }
    const Eigen::Vector3d expect_s = Vs.fullPivLu().solve(rhs);
    const BaryCoord bc = mesh.barycentric(0, p);
    CHECK(bc.b1 == doctest::Approx(expect_s[0]).epsilon(1e-9));
    CHECK(bc.b2 == doctest::Approx(expect_s[1]).epsilon(1e-9));
    CHECK(bc.b3 == doctest::Approx(expect_s[2]).epsilon(1e-9));
    CHECK(bc.b1 + bc.b2 + bc.b3 == doctest::Approx(1.0).epsilon(1e-12));
    (void)expect;
  }
}

TEST_CASE("barycentric is affine invariant") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Point2 a{0.1, 0.2}, b{0.9, 0.15}, c{0.4, 0.8};
  TriangulationMesh mesh({a, b, c}, {{{0, 1, 2}}});
  // Affine map: rotation + anisotropic scale + shift.
  auto map = [](const Point2& p) {
    return Point2{1.7 * p.z1 - 0.4 * p.z2 + 3.0, 0.6 * p.z1 + 2.1 * p.z2 - 1.0};
  };
  TriangulationMesh mapped({map(a), map(b), map(c)}, {{{0, 1, 2}}});
  for (int rep = 0; rep < 50; ++rep) {
    const Point2 p{u(gen), u(gen)};
    const BaryCoord x = mesh.barycentric(0, p);
    const BaryCoord y = mapped.barycentric(0, map(p));
    CHECK(x.b1 == doctest::Approx(y.b1).epsilon(1e-10));
    CHECK(x.b2 == doctest::Approx(y.b2).epsilon(1e-10));
    CHECK(x.b3 == doctest::Approx(y.b3).epsilon(1e-10));
  }
}

TEST_CASE("vertices have unit barycentric coordinates") {
  auto mesh = testutil::irregular5();
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    for (int l = 0; l < 3; ++l) {
      const BaryCoord bc = mesh.barycentric(t, mesh.vertex(mesh.triangle(t)[l]));
      const double expected[3] = {l == 0 ? 1.0 : 0.0, l == 1 ? 1.0 : 0.0,
                                  l == 2 ? 1.0 : 0.0};
      CHECK(bc.b1 == doctest::Approx(expected[0]).epsilon(1e-12));
      CHECK(bc.b2 == doctest::Approx(expected[1]).epsilon(1e-12));
      CHECK(bc.b3 == doctest::Approx(expected[2]).epsilon(1e-12));
    }
  }
}

TEST_CASE("locate finds containing triangles and rejects outside points") {
  auto mesh = testutil::square4();
  std::mt19937_64 gen(3);
  for (int t = 0; t < mesh.n_triangles(); ++t)
    for (int rep = 0; rep < 25; ++rep) {
      const Point2 p = testutil::random_point_in(mesh, t, gen);
      const auto found = mesh.locate(p);
      REQUIRE(found.has_value());
      const BaryCoord bc = mesh.barycentric(*found, p);
      CHECK(bc.b1 >= kInsideTol);
      CHECK(bc.b2 >= kInsideTol);
      CHECK(bc.b3 >= kInsideTol);
    }
  CHECK_FALSE(mesh.locate({1.5, 0.5}).has_value());
  CHECK_FALSE(mesh.locate({-0.01, 0.5}).has_value());
  CHECK_FALSE(mesh.locate({0.5, 1.2}).has_value());
}

TEST_CASE("locate returns the lowest triangle index on shared edges") {
  auto mesh = testutil::square4();
  // Center vertex belongs to all four triangles; points on the diagonal
  // edges belong to two.  The contract picks the smallest index.
  CHECK(mesh.locate({0.5, 0.5}).value() == 0);
  CHECK(mesh.locate({0.25, 0.25}).value() == 0);  // edge of triangles 0 and 3
  CHECK(mesh.locate({0.75, 0.25}).value() == 0);  // edge of triangles 0 and 1
  CHECK(mesh.locate({0.75, 0.75}).value() == 1);  // edge of triangles 1 and 2
  CHECK(mesh.locate({0.25, 0.75}).value() == 2);  // edge of triangles 2 and 3
}

TEST_CASE("degenerate triangles are rejected") {
  CHECK_THROWS_AS(TriangulationMesh({{0, 0}, {1, 0}, {2, 0}}, {{{0, 1, 2}}}),
                  DegenerateTriangle);
  CHECK_THROWS_AS(
      TriangulationMesh({{0, 0}, {1, 0}, {0.5, 1e-14}}, {{{0, 1, 2}}}),
      DegenerateTriangle);
}

TEST_CASE("invalid meshes are rejected with InvalidMesh") {
  // Out-of-range vertex reference.
  CHECK_THROWS_AS(TriangulationMesh({{0, 0}, {1, 0}, {0, 1}}, {{{0, 1, 3}}}),
                  InvalidMesh);
  // Repeated vertex within one triangle.
  CHECK_THROWS_AS(TriangulationMesh({{0, 0}, {1, 0}, {0, 1}}, {{{0, 1, 1}}}),
                  InvalidMesh);
  // Unreferenced vertex.
  CHECK_THROWS_AS(
      TriangulationMesh({{0, 0}, {1, 0}, {0, 1}, {2, 2}}, {{{0, 1, 2}}}),
      InvalidMesh);
  // Duplicate triangle (same vertex set).
  CHECK_THROWS_AS(
      TriangulationMesh({{0, 0}, {1, 0}, {0, 1}}, {{{0, 1, 2}}, {{1, 2, 0}}}),
      InvalidMesh);
  // An edge shared by three triangles.
  CHECK_THROWS_AS(TriangulationMesh({{0, 0}, {1, 0}, {0, 1}, {1, 1}, {0.5, -1}},
                                    {{{0, 1, 2}}, {{0, 1, 3}}, {{0, 1, 4}}}),
                  InvalidMesh);
}

TEST_CASE("clockwise input triangles are normalized to positive area") {
  TriangulationMesh mesh({{0, 0}, {1, 0}, {0, 1}}, {{{0, 2, 1}}});
  CHECK(mesh.triangle_area(0) == doctest::Approx(0.5));
  CHECK(mesh.domain_area() == doctest::Approx(0.5));
}

TEST_CASE("mesh stats: unit equilateral triangle") {
  const double h = std::sqrt(3.0) / 2.0;
  TriangulationMesh mesh({{0, 0}, {1, 0}, {0.5, h}}, {{{0, 1, 2}}});
  const MeshStats s = mesh.stats();
  CHECK(s.n_triangles == 1);
  CHECK(s.n_vertices == 3);
  CHECK(s.size == doctest::Approx(1.0));
  // inradius of the unit equilateral triangle is 1/(2 sqrt(3)).
  CHECK(s.shape_ratio == doctest::Approx(2.0 * std::sqrt(3.0)));
  CHECK(s.domain_area == doctest::Approx(std::sqrt(3.0) / 4.0));
}

TEST_CASE("interior edge extraction and boundary count") {
  auto mesh = testutil::square4();
  CHECK(mesh.interior_edges().size() == 4);
  CHECK(mesh.n_boundary_edges() == 4);
  for (const auto& e : mesh.interior_edges()) {
    CHECK(e.v1 < e.v2);
    CHECK(e.tri_a < e.tri_b);
  }
  auto grid = testutil::square_grid(3);
  // 18 triangles, 16 vertices: Euler gives 12 boundary edges.
  CHECK(grid.n_triangles() == 18);
  CHECK(grid.n_vertices() == 16);
  CHECK(grid.n_boundary_edges() == 12);
  CHECK(grid.interior_edges().size() == (3 * 18 - 12) / 2);
}

TEST_CASE("mesh CSV round trip is byte-identical in canonical form") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "imgscc_geometry_test";
  fs::create_directories(dir);
  auto mesh = testutil::irregular5();
  const std::string v1 = (dir / "m.v.csv").string();
  const std::string t1 = (dir / "m.t.csv").string();
  save_mesh(mesh, v1, t1);
  auto loaded = load_mesh(v1, t1);
  CHECK(loaded.n_vertices() == mesh.n_vertices());
  CHECK(loaded.n_triangles() == mesh.n_triangles());
  const std::string v2 = (dir / "m2.v.csv").string();
  const std::string t2 = (dir / "m2.t.csv").string();
  save_mesh(loaded, v2, t2);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  CHECK(slurp(v1) == slurp(v2));
  CHECK(slurp(t1) == slurp(t2));
  CHECK(slurp(v1).find("id,z1,z2\n") == 0);
  fs::remove_all(dir);
}

TEST_CASE("mesh CSV loader rejects malformed input") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "imgscc_geometry_bad";
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    out << body;
    return (dir / name).string();
  };
  const std::string tri = write("t.csv", "id,v1,v2,v3\n0,0,1,2\n");
  CHECK_THROWS_AS(load_mesh(write("bad_header.csv", "x,z1,z2\n"), tri), ParseError);
  CHECK_THROWS_AS(
      load_mesh(write("bad_ids.csv", "id,z1,z2\n5,0,0\n6,1,0\n7,0,1\n"), tri),
      ParseError);
  CHECK_THROWS_AS(
      load_mesh(write("bad_num.csv", "id,z1,z2\n0,zero,0\n1,1,0\n2,0,1\n"), tri),
      ParseError);
  CHECK_THROWS_AS(load_mesh((dir / "missing.csv").string(), tri), ParseError);
  fs::remove_all(dir);
}

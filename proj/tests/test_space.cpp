#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "nsdwr/space.hpp"

using namespace nsdwr;

namespace {

DomainSpec zero_inflow_spec() {
  DomainSpec spec;
  spec.inflow_peak = 0.0;
  return spec;
}

}  // namespace

TEST_CASE("dof counts on small meshes") {
  {
    Mesh m = build_rectangle_mesh(1, 1, 1.0, 1.0);
    CHECK(build_system(m, 2).n_dofs == 2 * 9 + 4);    // 22
    CHECK(build_system(m, 4).n_dofs == 2 * 25 + 9);   // 59
  }
  {
    Mesh m = build_rectangle_mesh(2, 1, 2.0, 1.0);
    CHECK(build_system(m, 2).n_dofs == 2 * 15 + 6);   // shared edge merged
  }
  CHECK_THROWS(build_system(build_rectangle_mesh(1, 1, 1, 1), 3));
}

TEST_CASE("inflow profile") {
  DomainSpec spec;
  CHECK(interpolate_inflow(spec, 0.0).x == Catch::Approx(0.0).margin(1e-15));
  CHECK(interpolate_inflow(spec, 0.0).y == Catch::Approx(0.0).margin(1e-15));
  CHECK(interpolate_inflow(spec, 0.205).x == Catch::Approx(0.3).margin(1e-15));
  CHECK(interpolate_inflow(spec, 0.41).x == Catch::Approx(0.0).margin(1e-15));

  // Mean of the profile over the channel height is 2/3 of the peak.
  const int n = 2000;
  double mean = 0.0;
  for (int i = 0; i < n; ++i)
    mean += interpolate_inflow(spec, (i + 0.5) * spec.channel_height / n).x;
  mean /= n;
  CHECK(mean == Catch::Approx(0.2).margin(1e-7));
}

TEST_CASE("Dirichlet rows carry the interpolated inflow") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s = build_system(m, 2);

  MixedVector u = constrained_zero(s);
  // The velocity trace on the inflow boundary reproduces the profile
  // (quadratic, hence exact for Q2).
  for (double y : {0.05, 0.11, 0.2, 0.33, 0.405}) {
    const auto f = eval_at_point(s, u, {0.0, y});
    const Vec2 uin = spec.inflow_velocity(y);
    CHECK(f.velocity.x == Catch::Approx(uin.x).margin(1e-12));
    CHECK(std::abs(f.velocity.y) < 1e-13);
  }
  // No-slip on the cylinder.
  const Vec2 on_cyl = spec.cylinder_center + Vec2{0.05, 0.0};
  const auto f = eval_at_point(s, u, on_cyl);
  CHECK(std::abs(f.velocity.x) < 1e-13);
  CHECK(std::abs(f.velocity.y) < 1e-13);
}

TEST_CASE("hanging constraint weights") {
  Mesh m = build_rectangle_mesh(2, 1, 2.0, 1.0, zero_inflow_spec());
  Mesh r = refine(m, {0});  // left cell refined; hanging nodes on the shared edge
  REQUIRE(hanging_vertices(r).size() == 1);

  SECTION("pressure (Q1): midpoint averages the edge endpoints") {
    FeSystem s = build_system(r, 2);
    int rows_checked = 0;
    for (const auto& [dof, line] : s.constraints.rows) {
      if (s.dof_component[dof] != kPressure) continue;
      REQUIRE(line.masters.size() == 2);
      CHECK(line.masters[0].second == Catch::Approx(0.5).margin(1e-14));
      CHECK(line.masters[1].second == Catch::Approx(0.5).margin(1e-14));
      CHECK(line.inhomogeneity == 0.0);
      ++rows_checked;
    }
    CHECK(rows_checked == 1);
  }

  SECTION("velocity (Q2): quarter-point weights are (0.375, 0.75, -0.125)") {
    // Interior hanging edges keep all three coarse masters (no Dirichlet
    // folding); fine edge-interior nodes sit at coarse parameters 1/4, 3/4.
    Mesh grid = build_rectangle_mesh(3, 3, 3.0, 3.0, zero_inflow_spec());
    Mesh rr = refine(grid, {4});
    FeSystem s = build_system(rr, 2);
    int quarter_rows = 0;
    for (const auto& [dof, line] : s.constraints.rows) {
      if (s.dof_component[dof] == kPressure) continue;
      if (line.masters.size() != 3) continue;
      std::vector<double> w;
      for (const auto& [md, wt] : line.masters) w.push_back(wt);
      std::sort(w.begin(), w.end());
      if (std::abs(w[0] + 0.125) < 1e-14) {
        CHECK(w[1] == Catch::Approx(0.375).margin(1e-14));
        CHECK(w[2] == Catch::Approx(0.75).margin(1e-14));
        ++quarter_rows;
      }
    }
    // 4 hanging edges x 2 fine edge nodes x 2 velocity components.
    CHECK(quarter_rows == 16);
  }

  SECTION("hanging rows reproduce constants") {
    // On an interior hanging edge no master is a Dirichlet dof, so the raw
    // interpolation weights survive chain resolution and sum to one. (Rows
    // whose masters touch the boundary fold the boundary value into the
    // inhomogeneity instead.)
    Mesh grid = build_rectangle_mesh(3, 3, 3.0, 3.0, zero_inflow_spec());
    Mesh rr = refine(grid, {4});  // center cell; its edges are interior
    for (int degree : {2, 4}) {
      FeSystem s = build_system(rr, degree);
      int hanging_rows = 0;
      for (const auto& [dof, line] : s.constraints.rows) {
        if (line.masters.empty()) continue;  // Dirichlet
        double sum = 0.0;
        for (const auto& [md, wt] : line.masters) sum += wt;
        CHECK(sum == Catch::Approx(1.0).margin(1e-13));
        CHECK(line.inhomogeneity == 0.0);
        ++hanging_rows;
      }
      // 4 hanging edges x (vertex + (k-1) nodes per half edge) x 2 velocity
      // components, plus the pressure rows.
      CHECK(hanging_rows > 0);
    }
  }
}

TEST_CASE("constrained interpolants are continuous across hanging edges") {
  Mesh m = build_rectangle_mesh(2, 2, 2.0, 1.0, zero_inflow_spec());
  Mesh r = refine(m, {0, 3});
  check_mesh_invariants(r);
  REQUIRE_FALSE(hanging_vertices(r).empty());

  for (int degree : {2, 4}) {
    FeSystem s = build_system(r, degree);
    auto u = interpolate(
        s,
        [](const Vec2& x) {
          return Vec2{std::sin(x.x) * x.y, std::cos(x.y) + x.x * x.x};
        },
        [](const Vec2& x) { return x.x * x.y + 1.0; });
    distribute(s, &u);

    // Evaluate on both sides of each hanging interface.
    for (const auto& [mid, coarse_edge] : hanging_vertices(r)) {
      const Vec2 a = r.vertices[edge_key_lo(coarse_edge)];
      const Vec2 b = r.vertices[edge_key_hi(coarse_edge)];
      // Coarse-side cell and one fine-side cell share points on the edge.
      for (double t : {0.17, 0.5, 0.83}) {
        const Vec2 x = a + t * (b - a);
        std::vector<FieldSample> sides;
        for (int c : s.active_cells) {
          const CellMapping mp{r.cell_vertices(c)};
          Vec2 xi;
          try {
            xi = mp.invert(x, 1e-13);
          } catch (...) {
            continue;
          }
          if (xi.x > -1e-9 && xi.x < 1 + 1e-9 && xi.y > -1e-9 &&
              xi.y < 1 + 1e-9)
            sides.push_back(eval_on_cell(s, u, c, xi));
        }
        REQUIRE(sides.size() >= 2);
        for (std::size_t i = 1; i < sides.size(); ++i) {
          CHECK(std::abs(sides[i].velocity.x - sides[0].velocity.x) < 1e-12);
          CHECK(std::abs(sides[i].velocity.y - sides[0].velocity.y) < 1e-12);
          CHECK(std::abs(sides[i].pressure - sides[0].pressure) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("distribute is idempotent") {
  DomainSpec spec;
  Mesh m0 = build_benchmark_mesh(spec, 0);
  Mesh m = refine(m0, {m0.active_cell_ids()[3]});
  FeSystem s = build_system(m, 2);

  std::mt19937 rng(11);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  MixedVector u(s);
  for (double& v : u.values) v = dist(rng);
  distribute(s, &u);
  MixedVector once = u;
  distribute(s, &u);
  for (int i = 0; i < s.n_dofs; ++i) CHECK(u.values[i] == once.values[i]);
}

TEST_CASE("p-embedding is exact") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s2 = build_system(m, 2);
  FeSystem s4 = build_system(m, 4);

  auto u = interpolate(
      s2, [](const Vec2& x) { return Vec2{x.x * x.y, x.x - 0.3 * x.y}; },
      [](const Vec2& x) { return 2.0 * x.x + x.y; });
  distribute(s2, &u);
  MixedVector w = embed(s2, u, s4);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> dx(0.0, spec.channel_length);
  std::uniform_real_distribution<double> dy(0.0, spec.channel_height);
  int checked = 0;
  while (checked < 100) {
    const Vec2 x{dx(rng), dy(rng)};
    if ((x - spec.cylinder_center).norm() < spec.cylinder_radius + 0.01)
      continue;
    auto loc = locate_point(s2, x);
    if (!loc) continue;
    const auto f2 = eval_on_cell(s2, u, loc->first, loc->second);
    const auto f4 = eval_on_cell(s4, w, loc->first, loc->second);
    CHECK(std::abs(f2.velocity.x - f4.velocity.x) < 1e-12);
    CHECK(std::abs(f2.velocity.y - f4.velocity.y) < 1e-12);
    CHECK(std::abs(f2.pressure - f4.pressure) < 1e-12);
    ++checked;
  }
}

TEST_CASE("h-embedding is exact without curved boundaries") {
  Mesh m = build_rectangle_mesh(3, 2, 1.5, 1.0, zero_inflow_spec());
  Mesh r = uniform_refine(m);
  FeSystem coarse = build_system(m, 2);
  FeSystem fine = build_system(r, 2);

  auto u = interpolate(
      coarse, [](const Vec2& x) { return Vec2{x.x * x.x, x.y * (1 - x.x)}; },
      [](const Vec2& x) { return x.x - x.y; });
  distribute(coarse, &u);
  MixedVector w = embed(coarse, u, fine);

  std::mt19937 rng(5);
  std::uniform_real_distribution<double> dx(0.0, 1.5), dy(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec2 x{dx(rng), dy(rng)};
    const auto fc = eval_at_point(coarse, u, x);
    const auto ff = eval_at_point(fine, w, x);
    CHECK(std::abs(fc.velocity.x - ff.velocity.x) < 1e-12);
    CHECK(std::abs(fc.velocity.y - ff.velocity.y) < 1e-12);
    CHECK(std::abs(fc.pressure - ff.pressure) < 1e-12);
  }
}

TEST_CASE("h-embedding mismatches near the cylinder") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  Mesh r = uniform_refine(m);
  FeSystem coarse = build_system(m, 2);
  FeSystem fine = build_system(r, 2);

  auto u = interpolate(
      coarse,
      [&](const Vec2& x) {
        const double d = (x - spec.cylinder_center).norm();
        return Vec2{d * d, std::sin(3 * x.x) * x.y};
      },
      [](const Vec2& x) { return x.x * x.x + x.y; });
  distribute(coarse, &u);
  MixedVector w = embed(coarse, u, fine);

  // Probe points in the band just outside the circle where the projected
  // geometry differs from the coarse one.
  double max_mismatch = 0.0;
  for (int i = 0; i < 64; ++i) {
    const double angle = 2 * std::acos(-1.0) * i / 64;
    const Vec2 x = spec.cylinder_center +
                   (spec.cylinder_radius + 0.004) *
                       Vec2{std::cos(angle), std::sin(angle)};
    auto lc = locate_point(coarse, x);
    auto lf = locate_point(fine, x);
    if (!lc || !lf) continue;
    const auto fc = eval_on_cell(coarse, u, lc->first, lc->second);
    const auto ff = eval_on_cell(fine, w, lf->first, lf->second);
    max_mismatch = std::max(max_mismatch,
                            std::abs(fc.velocity.x - ff.velocity.x));
  }
  CHECK(max_mismatch > 1e-7);
}

TEST_CASE("embedding rejects incompatible systems") {
  Mesh m = build_rectangle_mesh(2, 1, 2.0, 1.0, zero_inflow_spec());
  Mesh other = build_rectangle_mesh(2, 1, 2.0, 1.0, zero_inflow_spec());
  FeSystem s2 = build_system(m, 2);
  FeSystem s2_other = build_system(other, 2);
  MixedVector u(s2);
  CHECK_THROWS(embed(s2, u, s2_other));  // unrelated mesh
  CHECK_THROWS(embed(s2, MixedVector(s2_other), s2));  // wrong vector tag
}

TEST_CASE("distribute after embedding preserves constrained rows") {
  DomainSpec spec;
  Mesh m0 = build_benchmark_mesh(spec, 0);
  Mesh m = refine(m0, {m0.active_cell_ids()[10]});
  FeSystem s2 = build_system(m, 2);
  FeSystem s4 = build_system(m, 4);

  MixedVector u = constrained_zero(s2);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int i = 0; i < s2.n_dofs; ++i)
    if (!s2.constraints.is_constrained(i)) u.values[i] = dist(rng);
  distribute(s2, &u);

  MixedVector w = embed(s2, u, s4);
  MixedVector w2 = w;
  distribute(s4, &w2);
  double max_diff = 0.0;
  for (int i = 0; i < s4.n_dofs; ++i)
    max_diff = std::max(max_diff, std::abs(w.values[i] - w2.values[i]));
  CHECK(max_diff < 1e-12);

  // Same through the h-embedding.
  Mesh r = uniform_refine(m);
  FeSystem fine = build_system(r, 2);
  MixedVector wf = embed(s2, u, fine);
  MixedVector wf2 = wf;
  distribute(fine, &wf2);
  max_diff = 0.0;
  for (int i = 0; i < fine.n_dofs; ++i)
    max_diff = std::max(max_diff, std::abs(wf.values[i] - wf2.values[i]));
  CHECK(max_diff < 1e-12);
}

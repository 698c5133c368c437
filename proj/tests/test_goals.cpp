#include <catch2/catch_amalgamated.hpp>
#include <random>
#include <sstream>

#include "nsdwr/goals.hpp"

using namespace nsdwr;

namespace {

double polygon_hole_area(const Mesh& m) {
  // Shoelace area of the polygonal cylinder hole, ordered by angle.
  std::set<int> vs;
  for (int c : m.active_cell_ids())
    for (EdgeKey e : m.cell_edges(c)) {
      auto it = m.boundary_tags.find(e);
      if (it != m.boundary_tags.end() && it->second == BoundaryTag::Cylinder) {
        vs.insert(edge_key_lo(e));
        vs.insert(edge_key_hi(e));
      }
    }
  const Vec2 c0 = m.domain.cylinder_center;
  std::vector<Vec2> pts;
  for (int v : vs) pts.push_back(m.vertices[v]);
  std::sort(pts.begin(), pts.end(), [&](const Vec2& a, const Vec2& b) {
    return std::atan2(a.y - c0.y, a.x - c0.x) <
           std::atan2(b.y - c0.y, b.x - c0.x);
  });
  double s = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    s += (pts[i] - c0).cross(pts[(i + 1) % pts.size()] - c0);
  return 0.5 * s;
}

}  // namespace

TEST_CASE("pressure difference point functional") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s = build_system(m, 2);

  auto constant = interpolate(
      s, [](const Vec2&) { return Vec2{0, 0}; },
      [](const Vec2&) { return 3.25; });
  CHECK(eval_pressure_diff(s, constant) == Catch::Approx(0.0).margin(1e-13));

  // The functional reads the physical pressure, the negative of the field
  // variable: an interpolated p = x gives -(0.15 - 0.25) = +0.1.
  auto linear_x = interpolate(
      s, [](const Vec2&) { return Vec2{0, 0}; },
      [](const Vec2& x) { return x.x; });
  CHECK(eval_pressure_diff(s, linear_x) ==
        Catch::Approx(0.1).margin(1e-12));

  auto linear_y = interpolate(
      s, [](const Vec2&) { return Vec2{0, 0}; },
      [](const Vec2& x) { return x.y; });
  CHECK(eval_pressure_diff(s, linear_y) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("drag and lift on analytic fields") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 1);
  FeSystem s = build_system(m, 2);

  SECTION("constant pressure integrates to zero over the closed polygon") {
    auto u = interpolate(
        s, [](const Vec2&) { return Vec2{0, 0}; },
        [](const Vec2&) { return 1.0; });
    const auto [drag, lift] = eval_drag_lift(s, u);
    CHECK(std::abs(drag) < 1e-11);
    CHECK(std::abs(lift) < 1e-11);
  }

  SECTION("p = x picks up the enclosed polygon area") {
    auto u = interpolate(
        s, [](const Vec2&) { return Vec2{0, 0}; },
        [](const Vec2& x) { return x.x; });
    const auto [drag, lift] = eval_drag_lift(s, u);
    // Closed-curve identity with the ball-outward normal and the physical
    // pressure -p: drag = +500 * area(hole); p = y analogously for lift.
    const double area = polygon_hole_area(*s.mesh);
    CHECK(drag == Catch::Approx(500.0 * area).margin(1e-10));
    CHECK(std::abs(lift) < 1e-10);

    auto v = interpolate(
        s, [](const Vec2&) { return Vec2{0, 0}; },
        [](const Vec2& x) { return x.y; });
    const auto [drag2, lift2] = eval_drag_lift(s, v);
    CHECK(std::abs(drag2) < 1e-10);
    CHECK(lift2 == Catch::Approx(500.0 * area).margin(1e-10));
  }

  SECTION("rigid rotation has no viscous traction") {
    const Vec2 c = spec.cylinder_center;
    auto u = interpolate(
        s, [&](const Vec2& x) { return Vec2{-(x.y - c.y), x.x - c.x}; },
        [](const Vec2&) { return 0.0; });
    const auto [drag, lift] = eval_drag_lift(s, u);
    CHECK(std::abs(drag) < 1e-11);
    CHECK(std::abs(lift) < 1e-11);
  }

  SECTION("pressure shifts do not change drag or lift") {
    auto u = interpolate(
        s, [](const Vec2& x) { return Vec2{x.y * x.y, x.x}; },
        [](const Vec2& x) { return x.x * x.y; });
    auto u_shifted = u;
    FeSystem& sys = s;
    for (int i = 0; i < sys.n_dofs; ++i)
      if (sys.dof_component[i] == kPressure) u_shifted.values[i] += 17.5;
    const auto [d1, l1] = eval_drag_lift(s, u);
    const auto [d2, l2] = eval_drag_lift(s, u_shifted);
    CHECK(d1 == Catch::Approx(d2).margin(1e-11));
    CHECK(l1 == Catch::Approx(l2).margin(1e-11));
  }
}

TEST_CASE("goal derivatives represent the functionals") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s = build_system(m, 2);

  SECTION("pressure-difference rhs touches only pressure dofs") {
    const auto rhs = goal_rhs_raw(make_goal(GoalKind::PressureDiff), s);
    int nonzero = 0;
    for (int i = 0; i < s.n_dofs; ++i) {
      if (rhs[i] != 0.0) {
        CHECK(s.dof_component[i] == kPressure);
        ++nonzero;
      }
    }
    CHECK(nonzero > 0);
  }

  SECTION("linearity: J(u) equals rhs . u for random fields") {
    std::mt19937 rng(71);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (GoalKind kind :
         {GoalKind::PressureDiff, GoalKind::Drag, GoalKind::Lift}) {
      const FunctionalDef def = make_goal(kind);
      const auto rhs = goal_rhs_raw(def, s);
      for (int trial = 0; trial < 5; ++trial) {
        MixedVector u(s);
        for (double& v : u.values) v = dist(rng);
        double dot = 0;
        for (int i = 0; i < s.n_dofs; ++i) dot += rhs[i] * u.values[i];
        const GoalTriple t = eval_goal_triple(s, u);
        const double direct = goal_scalar(def, t);
        CHECK(dot == Catch::Approx(direct).epsilon(1e-11).margin(1e-12));
      }
    }
  }

  SECTION("combined rhs is the weighted sum of the parts") {
    FunctionalDef def = make_goal(GoalKind::Combined);
    def.signs = {1, 1, 1};
    def.weights = {1.0, 0.5, 0.25};
    def.base_values = {1.0, 2.0, 4.0};
    const auto rhs = goal_rhs_raw(def, s);
    const auto r1 = goal_rhs_raw(make_goal(GoalKind::PressureDiff), s);
    const auto r2 = goal_rhs_raw(make_goal(GoalKind::Drag), s);
    const auto r3 = goal_rhs_raw(make_goal(GoalKind::Lift), s);
    for (int i = 0; i < s.n_dofs; ++i)
      CHECK(rhs[i] == Catch::Approx(r1[i] + 0.5 * r2[i] + 0.25 * r3[i])
                          .margin(1e-12));
  }
}

TEST_CASE("combined weight freezing") {
  SECTION("identical solutions give zero signs and zero error") {
    GoalTriple base{0.11, 5.5, 0.01};
    const FunctionalDef def = fix_combined_weights(base, base);
    CHECK(def.signs == std::array<int, 3>{0, 0, 0});
    CHECK(combined_error_value(def, base, base) == 0.0);
  }

  SECTION("sign extraction") {
    GoalTriple base{0.11, 5.5, 0.01};
    GoalTriple enriched{0.11 + 1e-3, 5.5 - 1e-5, 0.01 + 1e-6};
    const FunctionalDef def = fix_combined_weights(base, enriched);
    CHECK(def.signs == std::array<int, 3>{1, -1, 1});
    CHECK(def.weights[0] == Catch::Approx(1.0 / 0.11));
    CHECK(def.weights[1] == Catch::Approx(-1.0 / 5.5));
    CHECK(def.weights[2] == Catch::Approx(1.0 / 0.01));
  }

  SECTION("frozen value matches the sum of relative differences") {
    GoalTriple base{0.2, -4.0, 0.05};
    GoalTriple enriched{0.25, -4.5, 0.04};
    const FunctionalDef def = fix_combined_weights(base, enriched);
    const double expect = std::abs(0.05) / 0.2 + std::abs(-0.5) / 4.0 +
                          std::abs(-0.01) / 0.05;
    CHECK(combined_error_value(def, enriched, base) ==
          Catch::Approx(expect).margin(1e-14));
    // The frozen linearization agrees with the absolute-value form at the
    // freezing point.
    CHECK(combined_linear_value(def, enriched) -
              combined_linear_value(def, base) ==
          Catch::Approx(expect).margin(1e-14));
    // And evaluating the error measure at the enriched solution gives zero.
    CHECK(combined_error_value(def, enriched, enriched) == 0.0);
  }

  SECTION("zero base value excludes the component with a warning") {
    std::ostringstream log;
    GoalTriple base{0.0, 5.5, 0.01};
    GoalTriple enriched{1e-3, 5.6, 0.011};
    const FunctionalDef def = fix_combined_weights(base, enriched, &log);
    CHECK(def.weights[0] == 0.0);
    CHECK(log.str().find("excluded") != std::string::npos);
  }
}

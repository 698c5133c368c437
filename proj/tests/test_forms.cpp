#include <catch2/catch_amalgamated.hpp>
#include <random>
#include <sstream>

#include "nsdwr/forms.hpp"

using namespace nsdwr;

namespace {

DomainSpec zero_inflow_spec() {
  DomainSpec spec;
  spec.inflow_peak = 0.0;
  return spec;
}

double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Random field satisfying homogeneous constraints.
MixedVector random_homogeneous(const FeSystem& s, unsigned seed,
                               double scale = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  MixedVector v(s);
  for (int i = 0; i < s.n_dofs; ++i)
    if (!s.constraints.is_constrained(i)) v.values[i] = dist(rng);
  distribute_homogeneous(s, &v);
  return v;
}

}  // namespace

TEST_CASE("residual vanishes for the zero state with zero boundary data") {
  Mesh m = build_rectangle_mesh(3, 2, 1.5, 1.0, zero_inflow_spec());
  FeSystem s = build_system(m, 2);
  FormContext ctx = make_context(s);
  MixedVector u = constrained_zero(s);
  const auto r = assemble_residual(ctx, u, AssemblyMode::Condensed);
  CHECK(norm2(r) < 1e-14);
  const auto raw = assemble_residual(ctx, u, AssemblyMode::Raw);
  CHECK(norm2(raw) < 1e-14);
}

TEST_CASE("shear flow has no convection contribution") {
  Mesh m = build_rectangle_mesh(3, 2, 1.5, 1.0, zero_inflow_spec());
  FeSystem s = build_system(m, 2);
  FormContext ns_ctx = make_context(s, /*stokes_mode=*/false);
  FormContext st_ctx = make_context(s, /*stokes_mode=*/true);

  auto u = interpolate(
      s, [](const Vec2& x) { return Vec2{x.y, 0.0}; },
      [](const Vec2&) { return 0.0; });
  const auto r_ns = assemble_residual(ns_ctx, u, AssemblyMode::Raw);
  const auto r_st = assemble_residual(st_ctx, u, AssemblyMode::Raw);
  double max_diff = 0;
  for (std::size_t i = 0; i < r_ns.size(); ++i)
    max_diff = std::max(max_diff, std::abs(r_ns[i] - r_st[i]));
  CHECK(max_diff < 1e-14);
}

TEST_CASE("divergence-free linear field leaves pressure-test rows empty") {
  Mesh m = build_rectangle_mesh(1, 1, 1.0, 1.0, zero_inflow_spec());
  FeSystem s = build_system(m, 2);
  FormContext ctx = make_context(s);
  auto u = interpolate(
      s, [](const Vec2& x) { return Vec2{x.x, -x.y}; },
      [](const Vec2&) { return 0.0; });
  const auto r = assemble_residual(ctx, u, AssemblyMode::Raw);
  for (int i = 0; i < s.n_dofs; ++i)
    if (s.dof_component[i] == kPressure) CHECK(std::abs(r[i]) < 1e-13);
}

TEST_CASE("Jacobian matches finite differences with O(eps) error") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s = build_system(m, 2);
  FormContext ctx = make_context(s);

  MixedVector u = constrained_zero(s);
  // Perturb into a generic state.
  const MixedVector bump = random_homogeneous(s, 23, 0.1);
  for (int i = 0; i < s.n_dofs; ++i) u.values[i] += bump.values[i];

  const MixedVector delta = random_homogeneous(s, 29);
  const auto jd = apply_jacobian_raw(ctx, u, delta);
  const auto r0 = assemble_residual(ctx, u, AssemblyMode::Raw);

  double prev_err = -1.0;
  for (double eps : {1e-4, 1e-5, 1e-6}) {
    MixedVector up = u;
    for (int i = 0; i < s.n_dofs; ++i) up.values[i] += eps * delta.values[i];
    const auto r1 = assemble_residual(ctx, up, AssemblyMode::Raw);
    std::vector<double> diff(r0.size());
    for (std::size_t i = 0; i < r0.size(); ++i)
      diff[i] = (r1[i] - r0[i]) / eps - jd[i];
    const double err = norm2(diff);
    // O(eps): each decade of eps drops the error by roughly a decade.
    if (prev_err > 0) {
      CHECK(err < 0.2 * prev_err);
    }
    CHECK(err < 10.0 * eps * norm2(jd) / 1e-4 * 1e-4 + 1e-8);
    prev_err = err;
  }
}

TEST_CASE("exact quadratic Taylor identity") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s = build_system(m, 2);
  FormContext ctx = make_context(s);

  MixedVector u = constrained_zero(s);
  const MixedVector delta = random_homogeneous(s, 31);
  MixedVector u_plus = u;
  for (int i = 0; i < s.n_dofs; ++i) u_plus.values[i] += delta.values[i];

  const auto r_base = assemble_residual(ctx, u, AssemblyMode::Raw);
  const auto r_plus = assemble_residual(ctx, u_plus, AssemblyMode::Raw);
  const auto jd = apply_jacobian_raw(ctx, u, delta);
  const auto sdd = second_derivative_raw(ctx, delta, delta);

  double max_err = 0, scale = 0;
  for (std::size_t i = 0; i < r_base.size(); ++i) {
    const double lhs = r_plus[i];
    const double rhs = r_base[i] + jd[i] + 0.5 * sdd[i];
    max_err = std::max(max_err, std::abs(lhs - rhs));
    scale = std::max(scale, std::abs(lhs));
  }
  CHECK(max_err < 1e-12 * std::max(1.0, scale));
}

TEST_CASE("second derivative is symmetric and vanishes for zero input") {
  Mesh m = build_rectangle_mesh(2, 2, 1.0, 1.0, zero_inflow_spec());
  FeSystem s = build_system(m, 2);
  FormContext ctx = make_context(s);

  const MixedVector e1 = random_homogeneous(s, 37);
  const MixedVector e2 = random_homogeneous(s, 41);
  const MixedVector zero(s);

  const auto z = second_derivative_raw(ctx, zero, zero);
  CHECK(norm2(z) == 0.0);

  const auto a = second_derivative_raw(ctx, e1, e2);
  const auto b = second_derivative_raw(ctx, e2, e1);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i] == Catch::Approx(b[i]).margin(1e-14));
}

TEST_CASE("third differences of the form vanish (A is quadratic)") {
  Mesh m = build_rectangle_mesh(2, 2, 1.0, 1.0, zero_inflow_spec());
  FeSystem s = build_system(m, 2);
  FormContext ctx = make_context(s);

  MixedVector u = random_homogeneous(s, 43, 0.5);
  const MixedVector d = random_homogeneous(s, 47, 0.5);
  const double h = 0.37;

  std::array<std::vector<double>, 4> r;
  for (int k = 0; k < 4; ++k) {
    MixedVector uk = u;
    for (int i = 0; i < s.n_dofs; ++i) uk.values[i] += k * h * d.values[i];
    r[k] = assemble_residual(ctx, uk, AssemblyMode::Raw);
  }
  double max_third = 0, scale = 0;
  for (std::size_t i = 0; i < r[0].size(); ++i) {
    const double third = r[3][i] - 3 * r[2][i] + 3 * r[1][i] - r[0][i];
    max_third = std::max(max_third, std::abs(third));
    scale = std::max(scale, std::abs(r[0][i]));
  }
  CHECK(max_third < 1e-10 * std::max(1.0, scale));
}

TEST_CASE("Jacobian at zero state is the Stokes operator") {
  Mesh m = build_rectangle_mesh(2, 1, 2.0, 1.0, zero_inflow_spec());
  FeSystem s = build_system(m, 2);
  FormContext ns_ctx = make_context(s, false);
  FormContext st_ctx = make_context(s, true);

  SparseMatrix a = assemble_pattern(s);
  SparseMatrix b = assemble_pattern(s);
  MixedVector zero = constrained_zero(s);
  assemble_jacobian(ns_ctx, zero, &a);
  assemble_jacobian(st_ctx, zero, &b);
  for (std::size_t k = 0; k < a.values.size(); ++k)
    CHECK(a.values[k] == Catch::Approx(b.values[k]).margin(1e-15));
}

TEST_CASE("Stokes velocity block is symmetric") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s = build_system(m, 2);
  FormContext ctx = make_context(s, true);
  SparseMatrix a = assemble_pattern(s);
  assemble_jacobian(ctx, constrained_zero(s), &a);

  const auto& p = *a.pattern;
  double max_asym = 0;
  for (int i = 0; i < p.n; ++i) {
    if (s.dof_component[i] == kPressure) continue;
    for (int k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) {
      const int j = p.cols[k];
      if (s.dof_component[j] == kPressure) continue;
      const int kt = p.find(j, i);
      REQUIRE(kt >= 0);
      max_asym = std::max(max_asym, std::abs(a.values[k] - a.values[kt]));
    }
  }
  CHECK(max_asym < 1e-13);
}

TEST_CASE("Newton on the benchmark") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s = build_system(m, 2);

  SECTION("Stokes mode converges in one step") {
    FormContext ctx = make_context(s, true);
    MixedVector u = constrained_zero(s);
    NewtonControls controls;
    controls.abs_tol = 1e-11;
    const auto report = newton_solve(ctx, &u, controls);
    CHECK(report.converged);
    // Iteration 0 is the initial residual; one linear step solves it.
    REQUIRE(report.iterations.size() >= 2);
    CHECK(report.iterations[1].residual_norm <= 1e-11);
    CHECK(report.iterations[1].damping == 1.0);
  }

  SECTION("full problem: quadratic tail from the Stokes initial guess") {
    FormContext ctx = make_context(s, false);
    MixedVector u = stokes_solution(s);
    std::ostringstream log;
    NewtonControls controls;
    controls.abs_tol = 1e-12;
    controls.log = &log;
    const auto report = newton_solve(ctx, &u, controls);
    CHECK(report.converged);
    REQUIRE(report.iterations.size() >= 3);

    // Quadratic contraction over the final iterations: r_{k+1} <= C r_k^2
    // with an observable constant.
    const auto& its = report.iterations;
    for (std::size_t k = its.size() - 2; k + 1 < its.size(); ++k) {
      const double rk = its[k].residual_norm;
      const double rk1 = its[k + 1].residual_norm;
      if (rk1 < 1e-14) continue;  // round-off floor
      CHECK(rk1 <= 1e4 * rk * rk);
    }

    // Converged state: restart converges immediately without damping.
    const auto again = newton_solve(ctx, &u, controls);
    CHECK(again.converged);
    CHECK(again.iterations.size() <= 2);

    // Machine-parsable log lines.
    CHECK(log.str().find("newton iter=0 residual=") != std::string::npos);
    CHECK(log.str().find("damping=") != std::string::npos);
  }

  SECTION("residual-weighted stopping hook") {
    FormContext ctx = make_context(s, false);
    MixedVector u = stokes_solution(s);
    NewtonControls tight;
    tight.abs_tol = 1e-12;
    newton_solve(ctx, &u, tight);

    // Re-solve from the Stokes guess with a weight vector: the weighted
    // residual criterion stops earlier than the absolute tolerance.
    const MixedVector z = random_homogeneous(s, 53);
    MixedVector u2 = stokes_solution(s);
    NewtonControls balanced;
    balanced.abs_tol = 1e-14;
    balanced.max_iter = 40;
    balanced.balance_weights = &z;
    balanced.balance_fraction = 1e-2;
    balanced.eta_reference = 1.0;  // generous target
    const auto report = newton_solve(ctx, &u2, balanced);
    CHECK(report.converged);
    CHECK(std::abs(report.iterations.back().weighted_residual) <= 1e-2);
  }
}

TEST_CASE("Galerkin orthogonality of the converged solution") {
  DomainSpec spec;
  Mesh m = build_benchmark_mesh(spec, 0);
  FeSystem s = build_system(m, 2);
  FormContext ctx = make_context(s, false);
  MixedVector u = stokes_solution(s);
  NewtonControls controls;
  controls.abs_tol = 1e-12;
  newton_solve(ctx, &u, controls);

  const auto r = assemble_residual(ctx, u, AssemblyMode::Condensed);
  // Any constrained-space test vector sees a residual below the tolerance.
  std::mt19937 rng(59);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    MixedVector v(s);
    for (int i = 0; i < s.n_dofs; ++i)
      if (!s.constraints.is_constrained(i)) v.values[i] = dist(rng);
    double dot = 0, vn = 0;
    for (int i = 0; i < s.n_dofs; ++i) {
      dot += r[i] * v.values[i];
      vn += v.values[i] * v.values[i];
    }
    CHECK(std::abs(dot) <= 1e-12 * std::sqrt(vn) + 1e-13);
  }
}

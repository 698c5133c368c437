#pragma once

// The stationary Navier-Stokes weak form
//   A(u)(v) = (nu (grad u + grad u^T), grad v_u) + ((u.grad) u, v_u)
//           + (p, div v_u) - (div u, v_p),
// its first and second directional derivatives, and a damped Newton solver.
// The convection term can be switched off (Stokes mode), which makes the
// problem linear.

#include <iomanip>
#include <ostream>

#include "nsdwr/linalg.hpp"

namespace nsdwr {

// ---------------------------------------------------------------------------
// Cached reference shape data at the volume quadrature points.

struct FormContext {
  const FeSystem* sys = nullptr;
  double viscosity = 1e-3;
  bool convection = true;
  int max_dofs_cap = DirectSolver::kDefaultMaxDofs;

  QuadratureRule rule;
  // Reference tables, indexed q * n_shapes + i.
  std::vector<double> vel_values, pre_values;
  std::vector<Vec2> vel_ref_grads;

  int nv() const { return sys->vel_basis.size(); }
  int np() const { return sys->pre_basis.size(); }
  int nq() const { return static_cast<int>(rule.points.size()); }
};

/// quad_points < 0 picks the default rule (velocity degree + 1 per
/// direction). Within one estimator run both systems should share one rule
/// order so base- and enriched-space evaluations of the same function agree.
inline FormContext make_context(const FeSystem& s, bool stokes_mode = false,
                                int quad_points = -1,
                                int max_dofs_cap = DirectSolver::kDefaultMaxDofs) {
  FormContext ctx;
  ctx.sys = &s;
  ctx.viscosity = s.mesh->domain.viscosity;
  ctx.convection = !stokes_mode;
  ctx.max_dofs_cap = max_dofs_cap;
  ctx.rule = gauss_rule(quad_points > 0 ? quad_points : s.vel_degree + 1);

  const int nq = ctx.nq(), nv = ctx.nv(), np = ctx.np();
  ctx.vel_values.resize(nq * nv);
  ctx.vel_ref_grads.resize(nq * nv);
  ctx.pre_values.resize(nq * np);
  for (int q = 0; q < nq; ++q) {
    for (int i = 0; i < nv; ++i) {
      const auto sh = s.vel_basis.eval(i, ctx.rule.points[q]);
      ctx.vel_values[q * nv + i] = sh.value;
      ctx.vel_ref_grads[q * nv + i] = sh.gradient;
    }
    for (int i = 0; i < np; ++i)
      ctx.pre_values[q * np + i] = s.pre_basis.eval(i, ctx.rule.points[q]).value;
  }
  return ctx;
}

namespace detail {

/// Per-cell geometry and field data at the quadrature points.
struct CellEval {
  const FormContext* ctx;
  int ordinal = -1;
  std::vector<double> jxw;       // weight * det
  std::vector<Vec2> grads;       // physical velocity-shape gradients, q*nv+i
  std::vector<Vec2> points;      // physical quadrature points

  explicit CellEval(const FormContext& c) : ctx(&c) {
    jxw.resize(c.nq());
    grads.resize(c.nq() * c.nv());
    points.resize(c.nq());
  }

  void reinit(int ord) {
    ordinal = ord;
    const FeSystem& s = *ctx->sys;
    const CellMapping mapping = s.mapping(s.active_cells[ord]);
    const int nq = ctx->nq(), nv = ctx->nv();
    for (int q = 0; q < nq; ++q) {
      const auto mp = mapping.at(ctx->rule.points[q]);
      jxw[q] = ctx->rule.weights[q] * mp.det;
      points[q] = mp.x;
      for (int i = 0; i < nv; ++i)
        grads[q * nv + i] = mp.jac_inv_t * ctx->vel_ref_grads[q * nv + i];
    }
  }

  const std::vector<int>& dofs() const { return ctx->sys->cell_dofs[ordinal]; }
};

struct FieldQP {
  Vec2 u;
  Mat2 gu;  // gu.a{ij} = d u_i / d x_j
  double p = 0.0;
};

inline FieldQP eval_field(const CellEval& ce, const MixedVector& v, int q) {
  const FormContext& ctx = *ce.ctx;
  const int nv = ctx.nv(), np = ctx.np();
  const auto& dofs = ce.dofs();
  FieldQP f;
  for (int i = 0; i < nv; ++i) {
    const double N = ctx.vel_values[q * nv + i];
    const Vec2 g = ce.grads[q * nv + i];
    const double ux = v.values[dofs[i]];
    const double uy = v.values[dofs[nv + i]];
    f.u.x += ux * N;
    f.u.y += uy * N;
    f.gu.a00 += ux * g.x;
    f.gu.a01 += ux * g.y;
    f.gu.a10 += uy * g.x;
    f.gu.a11 += uy * g.y;
  }
  for (int i = 0; i < np; ++i)
    f.p += v.values[dofs[2 * nv + i]] * ctx.pre_values[q * np + i];
  return f;
}

/// Local residual r_loc[a] = A(u)(phi_a) restricted to one cell.
inline void local_residual(const CellEval& ce, const MixedVector& u,
                           std::vector<double>* r_loc) {
  const FormContext& ctx = *ce.ctx;
  const int nv = ctx.nv(), np = ctx.np();
  r_loc->assign(2 * nv + np, 0.0);
  for (int q = 0; q < ctx.nq(); ++q) {
    const FieldQP f = eval_field(ce, u, q);
    const double w = ce.jxw[q];
    const double div_u = f.gu.a00 + f.gu.a11;
    // Symmetrized gradient times viscosity.
    const double s00 = 2 * f.gu.a00, s01 = f.gu.a01 + f.gu.a10,
                 s11 = 2 * f.gu.a11;
    Vec2 conv{0, 0};
    if (ctx.convection) {
      conv = {f.u.x * f.gu.a00 + f.u.y * f.gu.a01,
              f.u.x * f.gu.a10 + f.u.y * f.gu.a11};
    }
    for (int i = 0; i < nv; ++i) {
      const double N = ctx.vel_values[q * nv + i];
      const Vec2 g = ce.grads[q * nv + i];
      (*r_loc)[i] += w * (ctx.viscosity * (s00 * g.x + s01 * g.y) +
                          conv.x * N + f.p * g.x);
      (*r_loc)[nv + i] += w * (ctx.viscosity * (s01 * g.x + s11 * g.y) +
                               conv.y * N + f.p * g.y);
    }
    for (int i = 0; i < np; ++i)
      (*r_loc)[2 * nv + i] += w * (-div_u * ctx.pre_values[q * np + i]);
  }
}

/// Local A'(u)(d, phi_a): the Jacobian applied to a direction field.
inline void local_jacobian_apply(const CellEval& ce, const MixedVector& u,
                                 const MixedVector& d,
                                 std::vector<double>* t_loc) {
  const FormContext& ctx = *ce.ctx;
  const int nv = ctx.nv(), np = ctx.np();
  t_loc->assign(2 * nv + np, 0.0);
  for (int q = 0; q < ctx.nq(); ++q) {
    const FieldQP fu = eval_field(ce, u, q);
    const FieldQP fd = eval_field(ce, d, q);
    const double w = ce.jxw[q];
    const double div_d = fd.gu.a00 + fd.gu.a11;
    const double s00 = 2 * fd.gu.a00, s01 = fd.gu.a01 + fd.gu.a10,
                 s11 = 2 * fd.gu.a11;
    Vec2 conv{0, 0};
    if (ctx.convection) {
      conv = {fd.u.x * fu.gu.a00 + fd.u.y * fu.gu.a01 + fu.u.x * fd.gu.a00 +
                  fu.u.y * fd.gu.a01,
              fd.u.x * fu.gu.a10 + fd.u.y * fu.gu.a11 + fu.u.x * fd.gu.a10 +
                  fu.u.y * fd.gu.a11};
    }
    for (int i = 0; i < nv; ++i) {
      const double N = ctx.vel_values[q * nv + i];
      const Vec2 g = ce.grads[q * nv + i];
      (*t_loc)[i] += w * (ctx.viscosity * (s00 * g.x + s01 * g.y) +
                          conv.x * N + fd.p * g.x);
      (*t_loc)[nv + i] += w * (ctx.viscosity * (s01 * g.x + s11 * g.y) +
                               conv.y * N + fd.p * g.y);
    }
    for (int i = 0; i < np; ++i)
      (*t_loc)[2 * nv + i] += w * (-div_d * ctx.pre_values[q * np + i]);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Global assembly

enum class AssemblyMode { Condensed, Raw };

/// out_a = A(u)(phi_a). Condensed: test space is the constrained space,
/// constrained entries are zero. Raw: plain per-dof integrals, used for
/// weak-form evaluations against arbitrary conforming fields.
inline std::vector<double> assemble_residual(const FormContext& ctx,
                                             const MixedVector& u,
                                             AssemblyMode mode) {
  const FeSystem& s = *ctx.sys;
  check_system(s, u, "assemble_residual");
  std::vector<double> out(s.n_dofs, 0.0);
  detail::CellEval ce(ctx);
  std::vector<double> r_loc;
  for (std::size_t ord = 0; ord < s.active_cells.size(); ++ord) {
    ce.reinit(static_cast<int>(ord));
    detail::local_residual(ce, u, &r_loc);
    const auto& dofs = ce.dofs();
    for (std::size_t a = 0; a < dofs.size(); ++a) {
      if (mode == AssemblyMode::Raw)
        out[dofs[a]] += r_loc[a];
      else
        for_each_target(s, dofs[a],
                        [&](int t, double w) { out[t] += w * r_loc[a]; });
    }
  }
  return out;
}

/// A'(u)(d, phi_a) for a full direction field d (raw rows).
inline std::vector<double> apply_jacobian_raw(const FormContext& ctx,
                                              const MixedVector& u,
                                              const MixedVector& d) {
  const FeSystem& s = *ctx.sys;
  check_system(s, u, "apply_jacobian_raw");
  check_system(s, d, "apply_jacobian_raw");
  std::vector<double> out(s.n_dofs, 0.0);
  detail::CellEval ce(ctx);
  std::vector<double> t_loc;
  for (std::size_t ord = 0; ord < s.active_cells.size(); ++ord) {
    ce.reinit(static_cast<int>(ord));
    detail::local_jacobian_apply(ce, u, d, &t_loc);
    const auto& dofs = ce.dofs();
    for (std::size_t a = 0; a < dofs.size(); ++a) out[dofs[a]] += t_loc[a];
  }
  return out;
}

/// A''(e1, e2, phi_a) (raw rows). Independent of any linearization point;
/// identically zero in Stokes mode.
inline std::vector<double> second_derivative_raw(const FormContext& ctx,
                                                 const MixedVector& e1,
                                                 const MixedVector& e2) {
  const FeSystem& s = *ctx.sys;
  check_system(s, e1, "second_derivative_raw");
  check_system(s, e2, "second_derivative_raw");
  std::vector<double> out(s.n_dofs, 0.0);
  if (!ctx.convection) return out;
  detail::CellEval ce(ctx);
  const int nv = ctx.nv();
  for (std::size_t ord = 0; ord < s.active_cells.size(); ++ord) {
    ce.reinit(static_cast<int>(ord));
    const auto& dofs = ce.dofs();
    for (int q = 0; q < ctx.nq(); ++q) {
      const auto f1 = detail::eval_field(ce, e1, q);
      const auto f2 = detail::eval_field(ce, e2, q);
      const double w = ce.jxw[q];
      const Vec2 conv{f1.u.x * f2.gu.a00 + f1.u.y * f2.gu.a01 +
                          f2.u.x * f1.gu.a00 + f2.u.y * f1.gu.a01,
                      f1.u.x * f2.gu.a10 + f1.u.y * f2.gu.a11 +
                          f2.u.x * f1.gu.a10 + f2.u.y * f1.gu.a11};
      for (int i = 0; i < nv; ++i) {
        const double N = ctx.vel_values[q * nv + i];
        out[dofs[i]] += w * conv.x * N;
        out[dofs[nv + i]] += w * conv.y * N;
      }
    }
  }
  return out;
}

/// Condensed Jacobian; constrained rows/columns carry only a unit diagonal.
/// With transpose=true the transposed operator is assembled instead (used to
/// cross-check the transposed-solve path).
inline void assemble_jacobian(const FormContext& ctx, const MixedVector& u,
                              SparseMatrix* out, bool transpose = false) {
  const FeSystem& s = *ctx.sys;
  check_system(s, u, "assemble_jacobian");
  out->zero();
  detail::CellEval ce(ctx);

  const int nv = ctx.nv(), np = ctx.np();
  const int nd = 2 * nv + np;
  std::vector<double> loc(nd * nd);

  for (std::size_t ord = 0; ord < s.active_cells.size(); ++ord) {
    ce.reinit(static_cast<int>(ord));
    std::fill(loc.begin(), loc.end(), 0.0);

    for (int q = 0; q < ctx.nq(); ++q) {
      const auto f = detail::eval_field(ce, u, q);
      const double w = ce.jxw[q];
      const double nu = ctx.viscosity;
      for (int i = 0; i < nv; ++i) {
        const double Ni = ctx.vel_values[q * nv + i];
        const Vec2 gi = ce.grads[q * nv + i];
        for (int j = 0; j < nv; ++j) {
          const double Nj = ctx.vel_values[q * nv + j];
          const Vec2 gj = ce.grads[q * nv + j];
          const double gij = gi.dot(gj);
          double ugj = 0.0, NiNj = 0.0;
          if (ctx.convection) {
            ugj = f.u.x * gj.x + f.u.y * gj.y;
            NiNj = Ni * Nj;
          }
          // test component c, trial component d
          // viscous: nu (delta_cd gi.gj + gi[d] gj[c])
          // convection: Ni Nj du_c/dx_d + delta_cd Ni (u . gj)
          const double xx =
              w * (nu * (gij + gi.x * gj.x) + NiNj * f.gu.a00 + Ni * ugj);
          const double xy = w * (nu * (gi.y * gj.x) + NiNj * f.gu.a01);
          const double yx = w * (nu * (gi.x * gj.y) + NiNj * f.gu.a10);
          const double yy =
              w * (nu * (gij + gi.y * gj.y) + NiNj * f.gu.a11 + Ni * ugj);
          loc[i * nd + j] += xx;
          loc[i * nd + (nv + j)] += xy;
          loc[(nv + i) * nd + j] += yx;
          loc[(nv + i) * nd + (nv + j)] += yy;
        }
        for (int j = 0; j < np; ++j) {
          const double Mj = ctx.pre_values[q * np + j];
          loc[i * nd + (2 * nv + j)] += w * Mj * gi.x;
          loc[(nv + i) * nd + (2 * nv + j)] += w * Mj * gi.y;
        }
      }
      for (int i = 0; i < np; ++i) {
        const double Mi = ctx.pre_values[q * np + i];
        for (int j = 0; j < nv; ++j) {
          const Vec2 gj = ce.grads[q * nv + j];
          loc[(2 * nv + i) * nd + j] += w * (-Mi * gj.x);
          loc[(2 * nv + i) * nd + (nv + j)] += w * (-Mi * gj.y);
        }
      }
    }

    const auto& dofs = ce.dofs();
    for (int a = 0; a < nd; ++a)
      for (int b = 0; b < nd; ++b) {
        const double v = loc[a * nd + b];
        if (v == 0.0) continue;
        for_each_target(s, dofs[a], [&](int ta, double wa) {
          for_each_target(s, dofs[b], [&](int tb, double wb) {
            if (transpose)
              out->add(tb, ta, wa * wb * v);
            else
              out->add(ta, tb, wa * wb * v);
          });
        });
      }
  }

  for (const auto& [dof, line] : s.constraints.rows) {
    (void)line;
    const int k = out->pattern->find(dof, dof);
    out->values[k] = 1.0;
  }
}

// ---------------------------------------------------------------------------
// Newton

struct NewtonControls {
  double abs_tol = 1e-12;
  int max_iter = 30;
  int max_damping_halvings = 6;
  std::ostream* log = nullptr;

  /// Optional residual-weighted stop: with a goal-adjoint weight vector z,
  /// iteration stops once |rho(u)(z)| <= balance_fraction * |eta_reference|
  /// (abs_tol still acts as a hard floor target when no weights are given).
  const MixedVector* balance_weights = nullptr;
  double balance_fraction = 1e-2;
  double eta_reference = 0.0;
};

struct NewtonIteration {
  int iter = 0;
  double residual_norm = 0.0;
  double damping = 1.0;
  double weighted_residual = 0.0;  // rho(u)(z) when weights are supplied
};

struct NewtonReport {
  std::vector<NewtonIteration> iterations;
  bool converged = false;
  LinearSolveReport last_solve;
};

namespace detail {

inline double norm2(const std::vector<double>& v) {
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = v[i] * v[i];
  return std::sqrt(pairwise_sum(std::move(sq)));
}

inline double weighted_residual(const std::vector<double>& r_cond,
                                const MixedVector& z) {
  std::vector<double> terms(r_cond.size());
  for (std::size_t i = 0; i < r_cond.size(); ++i)
    terms[i] = -r_cond[i] * z.values[i];
  return pairwise_sum(std::move(terms));
}

}  // namespace detail

/// Damped Newton on the condensed residual; the state u is updated in place
/// and keeps satisfying its constraints. Throws on linear-solver failure,
/// non-finite residuals, or when max_iter is exhausted.
inline NewtonReport newton_solve(const FormContext& ctx, MixedVector* u,
                                 const NewtonControls& controls = {}) {
  const FeSystem& s = *ctx.sys;
  check_system(s, *u, "newton_solve");
  distribute(s, u);

  NewtonReport report;
  SparseMatrix jac = assemble_pattern(s);
  DirectSolver solver(ctx.max_dofs_cap);

  auto residual = assemble_residual(ctx, *u, AssemblyMode::Condensed);
  double res_norm = detail::norm2(residual);
  require(std::isfinite(res_norm), "newton_solve: non-finite residual");

  auto log_line = [&](int it, double rn, double damping, double rho_z) {
    if (!controls.log) return;
    (*controls.log) << "newton iter=" << it << " residual="
                    << std::setprecision(17) << rn << " damping=" << damping
                    << "\n";
    (void)rho_z;
  };

  auto balanced = [&](double rho_z) {
    return controls.balance_weights != nullptr &&
           std::abs(rho_z) <=
               controls.balance_fraction * std::abs(controls.eta_reference);
  };

  double rho_z = controls.balance_weights
                     ? detail::weighted_residual(residual,
                                                 *controls.balance_weights)
                     : 0.0;
  report.iterations.push_back({0, res_norm, 1.0, rho_z});
  log_line(0, res_norm, 1.0, rho_z);

  for (int it = 1; it <= controls.max_iter; ++it) {
    if (res_norm <= controls.abs_tol || balanced(rho_z)) {
      report.converged = true;
      return report;
    }

    assemble_jacobian(ctx, *u, &jac);
    solver.factorize(jac);
    std::vector<double> rhs(residual.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = -residual[i];
    auto delta = solver.solve(rhs, &report.last_solve);

    MixedVector step(s);
    step.values = std::move(delta);
    distribute_homogeneous(s, &step);

    // Backtracking on the residual norm; accept the first decrease.
    double damping = 1.0;
    MixedVector trial(s);
    std::vector<double> trial_res;
    double trial_norm = std::numeric_limits<double>::infinity();
    for (int h = 0; h <= controls.max_damping_halvings; ++h) {
      trial = *u;
      for (int i = 0; i < s.n_dofs; ++i)
        trial.values[i] += damping * step.values[i];
      trial_res = assemble_residual(ctx, trial, AssemblyMode::Condensed);
      trial_norm = detail::norm2(trial_res);
      if (std::isfinite(trial_norm) && trial_norm < res_norm) break;
      if (h < controls.max_damping_halvings) damping *= 0.5;
    }
    require(std::isfinite(trial_norm), "newton_solve: non-finite residual");

    *u = std::move(trial);
    residual = std::move(trial_res);
    res_norm = trial_norm;
    rho_z = controls.balance_weights
                ? detail::weighted_residual(residual, *controls.balance_weights)
                : 0.0;
    report.iterations.push_back({it, res_norm, damping, rho_z});
    log_line(it, res_norm, damping, rho_z);
  }

  if (res_norm <= controls.abs_tol || balanced(rho_z)) {
    report.converged = true;
    return report;
  }
  fail("newton_solve: max_iter exhausted at residual " +
       std::to_string(res_norm));
}

/// Linear Stokes solve used as the Newton initial guess for the full
/// problem (and as the solver in Stokes mode).
inline MixedVector stokes_solution(const FeSystem& s,
                                   int quad_points = -1,
                                   int max_dofs_cap = DirectSolver::kDefaultMaxDofs,
                                   std::ostream* log = nullptr) {
  FormContext ctx = make_context(s, /*stokes_mode=*/true, quad_points,
                                 max_dofs_cap);
  MixedVector u = constrained_zero(s);
  NewtonControls controls;
  controls.abs_tol = 1e-12;
  controls.max_iter = 3;  // linear: one step plus round-off polish
  controls.log = log;
  newton_solve(ctx, &u, controls);
  return u;
}

}  // namespace nsdwr

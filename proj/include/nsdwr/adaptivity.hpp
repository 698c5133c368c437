#pragma once

// The adaptive loop: solve base and enriched problems, fix the multigoal
// weights, solve both adjoints, evaluate the estimator with its localization,
// mark by the bulk criterion, refine, repeat.

#include <chrono>
#include <functional>

#include "nsdwr/dwr.hpp"

namespace nsdwr {

struct AdaptiveConfig {
  char enrichment = 'p';  // 'p': same mesh, doubled degrees; 'h': h/2 mesh
  GoalKind goal = GoalKind::Combined;
  double theta = 0.3;       // bulk marking fraction
  int max_dofs = 100000;    // base-system size bound (run while <=)
  int max_steps = 100;
  int pre_refinements = 0;
  bool stokes_mode = false;
  DomainSpec domain;

  double newton_tol = 1e-12;
  int newton_max_iter = 30;
  double balance_fraction = 1e-2;  // weighted-stop knob (see NewtonControls)

  /// One quadrature family for every system in a run keeps base- and
  /// enriched-space evaluations of identical functions bit-consistent.
  int rule_order = 5;
  int linalg_cap = DirectSolver::kDefaultMaxDofs;

  /// Reference goal values for effectivity and saturation reporting.
  std::optional<GoalTriple> reference;

  std::ostream* log = nullptr;
};

struct PhaseSeconds {
  double solve_base = 0, solve_enriched = 0, adjoints = 0, estimate = 0,
         refine = 0;
};

struct LoopRecord {
  int step = 0;
  int dofs_base = 0;
  int dofs_enriched = 0;
  GoalTriple base;      // J_i(u_h), base system
  GoalTriple enriched;  // J_i(u+), enriched system
  double j_combined = 0;  // J_E(u_h) (combined) or |dJ|/|J(u_h)| (single)
  EstimatorBreakdown breakdown;
  double err_ref = std::numeric_limits<double>::quiet_NaN();
  double err_ref_enriched = std::numeric_limits<double>::quiet_NaN();
  double sat_dp = std::numeric_limits<double>::quiet_NaN();
  double sat_drag = std::numeric_limits<double>::quiet_NaN();
  double sat_lift = std::numeric_limits<double>::quiet_NaN();
  PhaseSeconds seconds;
};

struct RunResult {
  std::vector<LoopRecord> records;
  bool aborted = false;
  std::string error;
};

/// Bulk (Doerfler) marking on |indicator|: sort descending with ascending
/// cell-id tie break, take the smallest prefix holding at least theta of the
/// total mass. theta = 1 marks every cell.
inline std::set<int> mark_cells(const std::map<int, double>& indicators,
                                double theta) {
  require(theta >= 0.0 && theta <= 1.0, "mark_cells: theta in [0,1]");
  std::set<int> marked;
  if (indicators.empty()) return marked;
  if (theta == 1.0) {
    for (const auto& [c, v] : indicators) marked.insert(c);
    return marked;
  }
  if (theta == 0.0) return marked;

  std::vector<std::pair<int, double>> order(indicators.begin(),
                                            indicators.end());
  for (auto& [c, v] : order) {
    require(std::isfinite(v), "mark_cells: non-finite indicator");
    v = std::abs(v);
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<double> mass;
  mass.reserve(order.size());
  for (const auto& [c, v] : order) mass.push_back(v);
  const double total = pairwise_sum(std::move(mass));

  double acc = 0.0;
  for (const auto& [c, v] : order) {
    if (acc >= theta * total) break;
    marked.insert(c);
    acc += v;
  }
  return marked;
}

namespace detail {

inline double seconds_since(
    const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace detail

/// Per-step observer (mesh, base system, base state, record); used by the
/// reporting layer to emit VTK files.
using StepObserver = std::function<void(
    const Mesh&, const FeSystem&, const MixedVector&, const LoopRecord&)>;

/// Runs the adaptive loop. Solver failures abort the run but preserve the
/// records of completed steps.
inline RunResult run_adaptive(const AdaptiveConfig& cfg,
                              const StepObserver& observer = {}) {
  RunResult result;
  auto log = [&](const std::string& line) {
    if (cfg.log) (*cfg.log) << line << "\n";
  };
  log(std::string("run: enrichment=") + cfg.enrichment +
      " goal=" + to_string(cfg.goal) +
      (cfg.stokes_mode ? " stokes" : " navier-stokes"));
  log("run: drag/lift normal convention: cylinder-outward "
      "(positive-drag pin); functional pressure sign: physical (-p)");

  try {
    Mesh mesh = build_benchmark_mesh(cfg.domain, cfg.pre_refinements);

    for (int step = 0; step < cfg.max_steps; ++step) {
      LoopRecord rec;
      rec.step = step;

      FeSystem base_sys = build_system(mesh, 2);
      if (base_sys.n_dofs > cfg.max_dofs) {
        log("run: stopping, base dofs " + std::to_string(base_sys.n_dofs) +
            " exceed max_dofs " + std::to_string(cfg.max_dofs));
        break;
      }
      FormContext base_ctx =
          make_context(base_sys, cfg.stokes_mode, cfg.rule_order,
                       cfg.linalg_cap);

      NewtonControls newton;
      newton.abs_tol = cfg.newton_tol;
      newton.max_iter = cfg.newton_max_iter;
      newton.log = cfg.log;

      auto t0 = std::chrono::steady_clock::now();
      MixedVector u_h = cfg.stokes_mode
                            ? constrained_zero(base_sys)
                            : stokes_solution(base_sys, cfg.rule_order,
                                              cfg.linalg_cap);
      newton_solve(base_ctx, &u_h, newton);
      rec.seconds.solve_base = detail::seconds_since(t0);

      // Enriched mesh/system.
      t0 = std::chrono::steady_clock::now();
      Mesh enr_mesh_storage;
      const Mesh* enr_mesh = &mesh;
      int enr_degree = 4;
      if (cfg.enrichment == 'h') {
        enr_mesh_storage = uniform_refine(mesh);
        enr_mesh = &enr_mesh_storage;
        enr_degree = 2;
      }
      FeSystem enr_sys = build_system(*enr_mesh, enr_degree);
      FormContext enr_ctx = make_context(enr_sys, cfg.stokes_mode,
                                         cfg.rule_order, cfg.linalg_cap);
      MixedVector u_plus = embed(base_sys, u_h, enr_sys);
      distribute(enr_sys, &u_plus);
      newton_solve(enr_ctx, &u_plus, newton);
      rec.seconds.solve_enriched = detail::seconds_since(t0);

      rec.dofs_base = base_sys.n_dofs;
      rec.dofs_enriched = enr_sys.n_dofs;

      // Goal definition; combined weights frozen before adjoint assembly.
      FunctionalDef goal;
      const GoalTriple base_triple =
          eval_goal_triple(base_sys, u_h, {}, cfg.rule_order);
      const GoalTriple enr_triple =
          eval_goal_triple(enr_sys, u_plus, {}, cfg.rule_order);
      if (cfg.goal == GoalKind::Combined)
        goal = fix_combined_weights(base_triple, enr_triple, cfg.log);
      else
        goal = make_goal(cfg.goal);

      t0 = std::chrono::steady_clock::now();
      const MixedVector z_h =
          solve_adjoint(base_ctx, u_h, goal, cfg.rule_order).z;
      const MixedVector z_plus =
          solve_adjoint(enr_ctx, u_plus, goal, cfg.rule_order).z;
      rec.seconds.adjoints = detail::seconds_since(t0);

      t0 = std::chrono::steady_clock::now();
      EstimatorInputs in;
      in.base_ctx = &base_ctx;
      in.u_h = &u_h;
      in.z_h = &z_h;
      in.enr_ctx = &enr_ctx;
      in.u_plus = &u_plus;
      in.z_plus = &z_plus;
      in.goal = &goal;
      in.enrichment = cfg.enrichment;
      in.face_points = cfg.rule_order;
      rec.breakdown = compute_breakdown(in);
      rec.seconds.estimate = detail::seconds_since(t0);

      rec.base = rec.breakdown.base_triple;
      rec.enriched = rec.breakdown.enriched_triple;
      if (cfg.goal == GoalKind::Combined) {
        rec.j_combined = combined_error_value(goal, rec.breakdown.enriched_triple,
                                              rec.breakdown.embedded_triple);
      } else {
        const double jb = goal_scalar(goal, rec.base);
        const double jp = goal_scalar(goal, rec.enriched);
        rec.j_combined = jb != 0.0 ? std::abs(jp - jb) / std::abs(jb)
                                   : std::abs(jp - jb);
      }

      if (cfg.reference) {
        const GoalTriple ref = *cfg.reference;
        if (cfg.goal == GoalKind::Combined) {
          const double j_ref_err =
              combined_error_value(goal, rec.breakdown.enriched_triple, ref);
          const double j_base_err = combined_error_value(
              goal, rec.breakdown.enriched_triple, rec.breakdown.embedded_triple);
          rec.err_ref = std::abs(j_ref_err - j_base_err);
          rec.err_ref_enriched = j_ref_err;
          log("run: step " + std::to_string(step) + " combined saturation " +
              (j_ref_err < rec.err_ref ? "holds" : "violated"));
        } else {
          const double jr = goal_scalar(goal, ref);
          rec.err_ref = std::abs(goal_scalar(goal, rec.base) - jr);
          rec.err_ref_enriched = std::abs(goal_scalar(goal, rec.enriched) - jr);
        }
        rec.breakdown.effectivity =
            effectivity(rec.breakdown.eta_plus, rec.err_ref);
        rec.sat_dp = saturation_holds(rec.base.dp, rec.enriched.dp, ref.dp);
        rec.sat_drag =
            saturation_holds(rec.base.drag, rec.enriched.drag, ref.drag);
        rec.sat_lift =
            saturation_holds(rec.base.lift, rec.enriched.lift, ref.lift);
      }

      if (observer) observer(mesh, base_sys, u_h, rec);
      result.records.push_back(rec);

      log("run: step " + std::to_string(step) + " dofs " +
          std::to_string(rec.dofs_base) + "/" +
          std::to_string(rec.dofs_enriched) + " eta+ " +
          std::to_string(rec.breakdown.eta_plus));

      // Mark and refine for the next step.
      t0 = std::chrono::steady_clock::now();
      const auto marked = mark_cells(rec.breakdown.cell_indicators, cfg.theta);
      if (marked.empty()) {
        log("run: no cells marked (theta=" + std::to_string(cfg.theta) +
            "), stopping after one step");
        break;
      }
      mesh = refine(mesh, marked);
      result.records.back().seconds.refine = detail::seconds_since(t0);
    }
  } catch (const std::exception& e) {
    result.aborted = true;
    result.error = e.what();
    log(std::string("run: aborted: ") + e.what());
  }
  return result;
}

/// Uniform-refinement comparison baseline: the same pipeline with theta = 1.
inline RunResult run_uniform(AdaptiveConfig cfg,
                             const StepObserver& observer = {}) {
  cfg.theta = 1.0;
  return run_adaptive(cfg, observer);
}

/// Reference goal values: a dedicated high-resolution run on the uniformly
/// refined mesh, evaluated in the enriched (doubled-degree) space.
inline GoalTriple compute_reference(const DomainSpec& domain, int uniform_level,
                                    bool stokes_mode = false,
                                    int rule_order = 5,
                                    int linalg_cap = 1200000,
                                    std::ostream* log = nullptr) {
  Mesh mesh = build_benchmark_mesh(domain, uniform_level);
  FeSystem base_sys = build_system(mesh, 2);
  NewtonControls newton;
  newton.abs_tol = 1e-12;
  newton.log = log;

  MixedVector u = stokes_mode
                      ? constrained_zero(base_sys)
                      : stokes_solution(base_sys, rule_order, linalg_cap);
  FormContext base_ctx =
      make_context(base_sys, stokes_mode, rule_order, linalg_cap);
  newton_solve(base_ctx, &u, newton);

  FeSystem enr_sys = build_system(mesh, 4);
  FormContext enr_ctx = make_context(enr_sys, stokes_mode, rule_order,
                                     linalg_cap);
  MixedVector u_plus = embed(base_sys, u, enr_sys);
  distribute(enr_sys, &u_plus);
  newton_solve(enr_ctx, &u_plus, newton);
  return eval_goal_triple(enr_sys, u_plus, {}, rule_order);
}

}  // namespace nsdwr

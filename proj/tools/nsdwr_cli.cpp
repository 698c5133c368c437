// Command-line driver for the goal-oriented adaptive channel-with-cylinder
// solver: runs one adaptive (or uniform) refinement loop and writes
// records.csv plus optional VTK snapshots, or combines three finished runs
// into figure data files.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nsdwr/reporting.hpp"

namespace fs = std::filesystem;
using namespace nsdwr;

namespace {

constexpr int kExitBadConfig = 2;
constexpr int kExitSolverFailure = 3;
constexpr int kExitIoFailure = 4;

GoalKind parse_goal(const std::string& s) {
  if (s == "dp") return GoalKind::PressureDiff;
  if (s == "drag") return GoalKind::Drag;
  if (s == "lift") return GoalKind::Lift;
  if (s == "combined") return GoalKind::Combined;
  throw CLI::ValidationError("--goal", "expected dp|drag|lift|combined");
}

std::vector<LoopRecord> records_from_csv(const fs::path& dir) {
  const CsvTable t = read_records_csv(dir / "records.csv");
  std::vector<LoopRecord> out;
  for (const auto& row : t.rows) {
    LoopRecord r;
    auto get = [&](const char* name) { return row[t.column(name)]; };
    r.step = static_cast<int>(get("step"));
    r.dofs_base = static_cast<int>(get("dofs_primal"));
    r.dofs_enriched = static_cast<int>(get("dofs_enriched"));
    r.base = {get("dp"), get("drag"), get("lift")};
    r.enriched = {get("dp_enriched"), get("drag_enriched"),
                  get("lift_enriched")};
    r.j_combined = get("J_E");
    r.breakdown.eta_plus = get("eta_plus");
    r.breakdown.part_primal = get("part_primal");
    r.breakdown.part_adjoint = get("part_adjoint");
    r.breakdown.iter_part = get("iter_part");
    r.breakdown.eta_remainder = get("eta_R");
    r.breakdown.eta_gap = get("eta_E");
    r.breakdown.effectivity = get("I_eff");
    r.err_ref = get("err_ref");
    r.err_ref_enriched = get("err_ref_enriched");
    r.sat_dp = get("sat_dp");
    r.sat_drag = get("sat_drag");
    r.sat_lift = get("sat_lift");
    out.push_back(r);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Goal-oriented adaptive solver for the stationary channel-with-cylinder "
      "flow benchmark with hierarchical error estimation"};
  app.set_config("--config", "", "Key-value configuration file");

  std::string enrichment = "p";
  std::string goal = "combined";
  double theta = 0.3;
  int max_dofs = 100000;
  int max_steps = 100;
  int pre_refinements = 0;
  bool stokes = false;
  bool uniform = false;
  std::string out_dir = "out";
  bool emit_vtk = false;
  bool emit_figs = false;
  std::string reference_cache;
  int reference_level = 3;
  int linalg_cap = DirectSolver::kDefaultMaxDofs;
  double newton_tol = 1e-12;
  std::string figures_p, figures_h, figures_uniform;

  app.add_option("--enrichment", enrichment, "Enriched space: p or h")
      ->check(CLI::IsMember({"p", "h"}));
  app.add_option("--goal", goal, "Quantity of interest: dp|drag|lift|combined")
      ->check(CLI::IsMember({"dp", "drag", "lift", "combined"}));
  app.add_option("--theta", theta, "Bulk marking fraction in [0,1]")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--max-dofs", max_dofs, "Stop when base dofs exceed this");
  app.add_option("--max-steps", max_steps, "Maximum adaptive steps");
  app.add_option("--pre-refinements", pre_refinements,
                 "Uniform refinements of the initial mesh");
  app.add_flag("--stokes", stokes, "Disable convection (linear Stokes mode)");
  app.add_flag("--uniform", uniform, "Uniform refinement baseline (theta=1)");
  app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--emit-vtk", emit_vtk, "Write one VTK snapshot per step");
  app.add_flag("--emit-figures", emit_figs,
               "Combine three runs into figure data files");
  app.add_option("--reference-cache", reference_cache,
                 "JSON cache for reference goal values (computed on demand)");
  app.add_option("--reference-level", reference_level,
                 "Uniform level of the reference computation");
  app.add_option("--linalg-cap", linalg_cap,
                 "Refuse linear systems larger than this");
  app.add_option("--newton-tol", newton_tol, "Newton residual tolerance");
  app.add_option("--figures-p", figures_p, "Finished p-run directory");
  app.add_option("--figures-h", figures_h, "Finished h-run directory");
  app.add_option("--figures-uniform", figures_uniform,
                 "Finished uniform-run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitBadConfig;
  }

  try {
    fs::create_directories(out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: cannot create output directory: " << e.what() << "\n";
    return kExitIoFailure;
  }

  try {
    if (emit_figs) {
      if (figures_p.empty() || figures_h.empty() || figures_uniform.empty()) {
        std::cerr << "error: --emit-figures needs --figures-p, --figures-h "
                     "and --figures-uniform\n";
        return kExitBadConfig;
      }
      if (reference_cache.empty()) {
        std::cerr << "error: --emit-figures needs --reference-cache\n";
        return kExitBadConfig;
      }
      DomainSpec domain;
      const GoalTriple ref = ensure_reference(reference_cache, domain,
                                              reference_level, stokes);
      emit_figures(records_from_csv(figures_p), records_from_csv(figures_h),
                   records_from_csv(figures_uniform), ref, out_dir);
      std::cout << "figure data written to " << out_dir << "\n";
      return 0;
    }

    AdaptiveConfig cfg;
    cfg.enrichment = enrichment[0];
    cfg.goal = parse_goal(goal);
    cfg.theta = uniform ? 1.0 : theta;
    cfg.max_dofs = max_dofs;
    cfg.max_steps = max_steps;
    cfg.pre_refinements = pre_refinements;
    cfg.stokes_mode = stokes;
    cfg.newton_tol = newton_tol;
    cfg.linalg_cap = linalg_cap;

    std::ofstream run_log(fs::path(out_dir) / "run.log");
    cfg.log = &run_log;

    if (!reference_cache.empty()) {
      cfg.reference = ensure_reference(reference_cache, cfg.domain,
                                       reference_level, stokes, cfg.rule_order,
                                       std::max(linalg_cap, 1200000), &run_log);
    }
    write_run_config(cfg, fs::path(out_dir) / "run_config.txt");

    StepObserver observer;
    if (emit_vtk) {
      observer = [&](const Mesh& mesh, const FeSystem& sys,
                     const MixedVector& u, const LoopRecord& rec) {
        char name[32];
        std::snprintf(name, sizeof(name), "step_%03d.vtk", rec.step);
        write_vtk(mesh, sys, {{"u", &u}},
                  {{"indicator", rec.breakdown.cell_indicators}},
                  fs::path(out_dir) / name);
      };
    }

    const RunResult result = run_adaptive(cfg, observer);
    write_records_csv(result.records, fs::path(out_dir) / "records.csv");
    std::cout << "wrote " << result.records.size() << " records to " << out_dir
              << "/records.csv\n";
    if (result.aborted) {
      std::cerr << "error: run aborted: " << result.error << "\n";
      return kExitSolverFailure;
    }
    return 0;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    if (what.find("cannot open") != std::string::npos ||
        what.find("write failed") != std::string::npos)
      return kExitIoFailure;
    return kExitSolverFailure;
  }
}

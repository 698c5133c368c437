#pragma once

// Flat-file reporting: one CSV row per adaptive step (17 significant digits,
// so parsing reproduces the doubles exactly), legacy-ASCII VTK dumps for
// visual inspection, whitespace-separated figure data files, and a JSON
// cache for the reference goal values.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nsdwr/adaptivity.hpp"

namespace nsdwr {

// ---------------------------------------------------------------------------
// CSV

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "step",          "dofs_primal",   "dofs_enriched", "dp",
      "drag",          "lift",          "J_E",           "dp_enriched",
      "drag_enriched", "lift_enriched", "eta_plus",      "part_primal",
      "part_adjoint",  "iter_part",     "eta_R",         "eta_E",
      "I_eff",         "err_ref",       "err_ref_enriched", "sat_dp",
      "sat_drag",      "sat_lift"};
  return cols;
}

inline std::vector<double> csv_row_values(const LoopRecord& r) {
  return {static_cast<double>(r.step),
          static_cast<double>(r.dofs_base),
          static_cast<double>(r.dofs_enriched),
          r.base.dp,
          r.base.drag,
          r.base.lift,
          r.j_combined,
          r.enriched.dp,
          r.enriched.drag,
          r.enriched.lift,
          r.breakdown.eta_plus,
          r.breakdown.part_primal,
          r.breakdown.part_adjoint,
          r.breakdown.iter_part,
          r.breakdown.eta_remainder,
          r.breakdown.eta_gap,
          r.breakdown.effectivity,
          r.err_ref,
          r.err_ref_enriched,
          r.sat_dp,
          r.sat_drag,
          r.sat_lift};
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string records_to_csv(const std::vector<LoopRecord>& records) {
  std::ostringstream out;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i)
    out << cols[i] << (i + 1 < cols.size() ? "," : "\n");
  for (const auto& r : records) {
    const auto vals = csv_row_values(r);
    for (std::size_t i = 0; i < vals.size(); ++i)
      out << format_double(vals[i]) << (i + 1 < vals.size() ? "," : "\n");
  }
  return out.str();
}

inline void write_records_csv(const std::vector<LoopRecord>& records,
                              const std::filesystem::path& path) {
  std::ofstream f(path);
  require(f.good(), "write_records_csv: cannot open " + path.string());
  f << records_to_csv(records);
  require(f.good(), "write_records_csv: write failed for " + path.string());
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    fail("CsvTable: no column named " + name);
  }

  std::vector<double> column_values(const std::string& name) const {
    const int c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

inline CsvTable read_records_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), "read_records_csv: cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      table.header = cells;
      first = false;
      continue;
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(std::strtod(c.c_str(), nullptr));
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// VTK (legacy ASCII unstructured grid)

/// Fields are sampled at mesh vertices (both spaces carry vertex nodes).
inline void write_vtk(
    const Mesh& mesh, const FeSystem& sys,
    const std::vector<std::pair<std::string, const MixedVector*>>& fields,
    const std::map<std::string, std::map<int, double>>& cell_data,
    const std::filesystem::path& path) {
  std::ofstream f(path);
  require(f.good(), "write_vtk: cannot open " + path.string());
  f << "# vtk DataFile Version 3.0\n"
    << "channel flow snapshot\nASCII\nDATASET UNSTRUCTURED_GRID\n";

  const auto active = mesh.active_cell_ids();
  f << "POINTS " << mesh.vertices.size() << " double\n";
  for (const auto& v : mesh.vertices)
    f << format_double(v.x) << " " << format_double(v.y) << " 0\n";

  f << "CELLS " << active.size() << " " << 5 * active.size() << "\n";
  for (int c : active) {
    const auto& q = mesh.cells[c].v;
    f << "4 " << q[0] << " " << q[1] << " " << q[2] << " " << q[3] << "\n";
  }
  f << "CELL_TYPES " << active.size() << "\n";
  for (std::size_t i = 0; i < active.size(); ++i) f << "9\n";

  if (!fields.empty()) {
    // Vertex dof lookup via cell corners.
    const int kv = sys.vel_degree, kp = sys.pre_degree;
    const std::array<int, 4> vel_corner = {
        0, kv, kv * (kv + 1) + kv, kv * (kv + 1)};
    const std::array<int, 4> pre_corner = {
        0, kp, kp * (kp + 1) + kp, kp * (kp + 1)};
    const int nv = sys.vel_basis.size();

    f << "POINT_DATA " << mesh.vertices.size() << "\n";
    for (const auto& [name, vec] : fields) {
      std::vector<Vec2> vel(mesh.vertices.size());
      std::vector<double> pre(mesh.vertices.size(), 0.0);
      for (std::size_t ord = 0; ord < sys.active_cells.size(); ++ord) {
        const auto& q = mesh.cells[sys.active_cells[ord]].v;
        const auto& dofs = sys.cell_dofs[ord];
        for (int k = 0; k < 4; ++k) {
          vel[q[k]] = {vec->values[dofs[vel_corner[k]]],
                       vec->values[dofs[nv + vel_corner[k]]]};
          pre[q[k]] = vec->values[dofs[2 * nv + pre_corner[k]]];
        }
      }
      f << "VECTORS " << name << "_velocity double\n";
      for (const auto& v : vel)
        f << format_double(v.x) << " " << format_double(v.y) << " 0\n";
      f << "SCALARS " << name << "_pressure double 1\nLOOKUP_TABLE default\n";
      for (double p : pre) f << format_double(p) << "\n";
    }
  }

  if (!cell_data.empty()) {
    f << "CELL_DATA " << active.size() << "\n";
    for (const auto& [name, values] : cell_data) {
      f << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
      for (int c : active) {
        auto it = values.find(c);
        f << format_double(it == values.end() ? 0.0 : it->second) << "\n";
      }
    }
    f << "SCALARS level int 1\nLOOKUP_TABLE default\n";
    for (int c : active) f << mesh.cells[c].level << "\n";
  }
  require(f.good(), "write_vtk: write failed for " + path.string());
}

inline void write_mesh_vtk(const Mesh& mesh,
                           const std::filesystem::path& path) {
  FeSystem dummy;
  write_vtk(mesh, dummy, {}, {}, path);
}

// ---------------------------------------------------------------------------
// Reference cache

inline std::string reference_config_hash(const DomainSpec& d, int level,
                                         bool stokes, int rule_order) {
  std::ostringstream key;
  key << format_double(d.channel_length) << "|"
      << format_double(d.channel_height) << "|"
      << format_double(d.cylinder_center.x) << "|"
      << format_double(d.cylinder_center.y) << "|"
      << format_double(d.cylinder_radius) << "|"
      << format_double(d.viscosity) << "|" << format_double(d.inflow_peak)
      << "|level=" << level << "|stokes=" << stokes << "|rule=" << rule_order;
  // FNV-1a
  std::uint64_t h = 1469598103934665603ull;
  for (char c : key.str()) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

/// Load the cached reference values if the config hash matches; otherwise run
/// the high-resolution uniform reference computation and store it.
inline GoalTriple ensure_reference(const std::filesystem::path& cache_path,
                                   const DomainSpec& domain, int level,
                                   bool stokes, int rule_order = 5,
                                   int linalg_cap = 1200000,
                                   std::ostream* log = nullptr) {
  const std::string hash =
      reference_config_hash(domain, level, stokes, rule_order);
  if (std::filesystem::exists(cache_path)) {
    std::ifstream f(cache_path);
    nlohmann::json j;
    f >> j;
    if (j.value("hash", "") == hash) {
      if (log) (*log) << "reference: cache hit " << cache_path << "\n";
      return {j["dp"].get<double>(), j["drag"].get<double>(),
              j["lift"].get<double>()};
    }
    if (log) (*log) << "reference: cache stale, recomputing\n";
  }
  const GoalTriple ref =
      compute_reference(domain, level, stokes, rule_order, linalg_cap, log);
  nlohmann::json j;
  j["hash"] = hash;
  j["level"] = level;
  j["stokes"] = stokes;
  j["dp"] = ref.dp;
  j["drag"] = ref.drag;
  j["lift"] = ref.lift;
  if (!cache_path.parent_path().empty())
    std::filesystem::create_directories(cache_path.parent_path());
  std::ofstream f(cache_path);
  require(f.good(), "ensure_reference: cannot write " + cache_path.string());
  f << j.dump(2) << "\n";
  return ref;
}

// ---------------------------------------------------------------------------
// Figure data

namespace detail {

inline void write_series(std::ofstream& f, const std::string& name,
                         const std::vector<double>& x,
                         const std::vector<double>& y) {
  f << "# series " << name << "\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(y[i])) continue;
    f << format_double(x[i]) << " " << format_double(y[i]) << "\n";
  }
  f << "\n\n";  // gnuplot index separator
}

inline std::vector<double> dofs_of(const std::vector<LoopRecord>& rs) {
  std::vector<double> out;
  for (const auto& r : rs) out.push_back(r.dofs_base);
  return out;
}

}  // namespace detail

/// Data files behind the paper-style plots: effectivity indices, saturation
/// errors, per-goal error curves against the uniform baseline, and the
/// remainder/gap comparison with the machine-epsilon-times-DOFs line.
inline void emit_figures(const std::vector<LoopRecord>& p_run,
                         const std::vector<LoopRecord>& h_run,
                         const std::vector<LoopRecord>& uniform_run,
                         const GoalTriple& reference,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    require(f.good(), "emit_figures: cannot open " + (dir / name).string());
    return f;
  };

  {
    auto f = open("figure2_effectivity.dat");
    auto pick = [](const std::vector<LoopRecord>& rs) {
      std::vector<double> out;
      for (const auto& r : rs) out.push_back(r.breakdown.effectivity);
      return out;
    };
    detail::write_series(f, "I_eff_p", detail::dofs_of(p_run), pick(p_run));
    detail::write_series(f, "I_eff_h", detail::dofs_of(h_run), pick(h_run));
    const double lo = p_run.empty() ? 1e3 : p_run.front().dofs_base;
    const double hi = p_run.empty() ? 1e6 : p_run.back().dofs_base;
    detail::write_series(f, "one", {lo, hi}, {1.0, 1.0});
  }

  {
    auto f = open("figure3_saturation.dat");
    auto base_err = [](const std::vector<LoopRecord>& rs) {
      std::vector<double> out;
      for (const auto& r : rs) out.push_back(r.err_ref);
      return out;
    };
    auto enr_err = [](const std::vector<LoopRecord>& rs) {
      std::vector<double> out;
      for (const auto& r : rs) out.push_back(r.err_ref_enriched);
      return out;
    };
    detail::write_series(f, "J_E_p_base", detail::dofs_of(p_run),
                         base_err(p_run));
    detail::write_series(f, "J_E_h_base", detail::dofs_of(h_run),
                         base_err(h_run));
    detail::write_series(f, "J_E_p_enriched", detail::dofs_of(p_run),
                         enr_err(p_run));
    detail::write_series(f, "J_E_h_enriched", detail::dofs_of(h_run),
                         enr_err(h_run));
  }

  const auto goal_errors = [&](const std::vector<LoopRecord>& rs, int comp) {
    std::vector<double> out;
    for (const auto& r : rs) {
      const double ref = reference.component(comp);
      out.push_back(std::abs(r.base.component(comp) - ref) / std::abs(ref));
    }
    return out;
  };
  const std::array<std::pair<std::string, int>, 3> goal_figures = {{
      {"figure4_lift.dat", 2},
      {"figure5_drag.dat", 1},
      {"figure6_dp.dat", 0},
  }};
  for (const auto& [name, comp] : goal_figures) {
    auto f = open(name);
    detail::write_series(f, "adaptive_p", detail::dofs_of(p_run),
                         goal_errors(p_run, comp));
    detail::write_series(f, "adaptive_h", detail::dofs_of(h_run),
                         goal_errors(h_run, comp));
    detail::write_series(f, "uniform", detail::dofs_of(uniform_run),
                         goal_errors(uniform_run, comp));
  }

  {
    auto f = open("figure7_remainder_gap.dat");
    auto rem = [](const std::vector<LoopRecord>& rs) {
      std::vector<double> out;
      for (const auto& r : rs)
        out.push_back(std::abs(r.breakdown.eta_remainder));
      return out;
    };
    auto gap = [](const std::vector<LoopRecord>& rs) {
      std::vector<double> out;
      for (const auto& r : rs) out.push_back(r.breakdown.eta_gap);
      return out;
    };
    detail::write_series(f, "remainder_p", detail::dofs_of(p_run), rem(p_run));
    detail::write_series(f, "gap_p", detail::dofs_of(p_run), gap(p_run));
    detail::write_series(f, "remainder_h", detail::dofs_of(h_run), rem(h_run));
    detail::write_series(f, "gap_h", detail::dofs_of(h_run), gap(h_run));
    // eps(double) * DOFs guide line over the union of DOF ranges.
    double lo = 1e300, hi = 0;
    for (const auto* rs : {&p_run, &h_run})
      for (const auto& r : *rs) {
        lo = std::min(lo, double(r.dofs_base));
        hi = std::max(hi, double(r.dofs_base));
      }
    const double eps = std::pow(2.0, -52);
    detail::write_series(f, "eps_times_dofs", {lo, hi}, {eps * lo, eps * hi});
  }
}

// ---------------------------------------------------------------------------
// Config provenance

inline void write_run_config(const AdaptiveConfig& cfg,
                             const std::filesystem::path& path) {
  std::ofstream f(path);
  require(f.good(), "write_run_config: cannot open " + path.string());
  f << "enrichment=" << cfg.enrichment << "\n"
    << "goal=" << to_string(cfg.goal) << "\n"
    << "theta=" << format_double(cfg.theta) << "\n"
    << "max_dofs=" << cfg.max_dofs << "\n"
    << "max_steps=" << cfg.max_steps << "\n"
    << "pre_refinements=" << cfg.pre_refinements << "\n"
    << "stokes=" << (cfg.stokes_mode ? 1 : 0) << "\n"
    << "newton_tol=" << format_double(cfg.newton_tol) << "\n"
    << "newton_max_iter=" << cfg.newton_max_iter << "\n"
    << "balance_fraction=" << format_double(cfg.balance_fraction) << "\n"
    << "rule_order=" << cfg.rule_order << "\n"
    << "linalg_cap=" << cfg.linalg_cap << "\n"
    << "channel_length=" << format_double(cfg.domain.channel_length) << "\n"
    << "channel_height=" << format_double(cfg.domain.channel_height) << "\n"
    << "cylinder_center_x=" << format_double(cfg.domain.cylinder_center.x)
    << "\n"
    << "cylinder_center_y=" << format_double(cfg.domain.cylinder_center.y)
    << "\n"
    << "cylinder_radius=" << format_double(cfg.domain.cylinder_radius) << "\n"
    << "viscosity=" << format_double(cfg.domain.viscosity) << "\n"
    << "inflow_peak=" << format_double(cfg.domain.inflow_peak) << "\n";
  if (cfg.reference) {
    f << "reference_dp=" << format_double(cfg.reference->dp) << "\n"
      << "reference_drag=" << format_double(cfg.reference->drag) << "\n"
      << "reference_lift=" << format_double(cfg.reference->lift) << "\n";
  }
}

}  // namespace nsdwr

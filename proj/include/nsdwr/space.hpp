#pragma once

// Global mixed finite element spaces on the hierarchical quad mesh:
// continuous [Q_k]^2 velocity x Q_{k/2} pressure, deterministic global
// numbering, Dirichlet and hanging-node constraints, and embeddings into the
// p- and h-enriched spaces.

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "nsdwr/elements.hpp"
#include "nsdwr/mesh.hpp"

namespace nsdwr {

// ---------------------------------------------------------------------------
// Constraints

struct ConstraintLine {
  std::vector<std::pair<int, double>> masters;  // (dof, weight)
  double inhomogeneity = 0.0;
};

/// One row per constrained dof. After close(), masters are themselves
/// unconstrained (chains resolved by substitution).
struct ConstraintSet {
  std::map<int, ConstraintLine> rows;

  bool is_constrained(int dof) const { return rows.count(dof) != 0; }

  const ConstraintLine* line(int dof) const {
    auto it = rows.find(dof);
    return it == rows.end() ? nullptr : &it->second;
  }

  void close() {
    for (int pass = 0; pass < 32; ++pass) {
      bool changed = false;
      for (auto& [dof, line] : rows) {
        std::vector<std::pair<int, double>> expanded;
        for (const auto& [m, w] : line.masters) {
          auto it = rows.find(m);
          if (it == rows.end()) {
            expanded.emplace_back(m, w);
            continue;
          }
          changed = true;
          line.inhomogeneity += w * it->second.inhomogeneity;
          for (const auto& [mm, ww] : it->second.masters)
            expanded.emplace_back(mm, w * ww);
        }
        // Merge duplicates, drop numerically empty entries.
        std::sort(expanded.begin(), expanded.end());
        std::vector<std::pair<int, double>> merged;
        for (const auto& [m, w] : expanded) {
          if (!merged.empty() && merged.back().first == m)
            merged.back().second += w;
          else
            merged.emplace_back(m, w);
        }
        std::erase_if(merged, [](const auto& p) {
          return std::abs(p.second) < 1e-14;
        });
        line.masters = std::move(merged);
      }
      if (!changed) return;
    }
    fail("ConstraintSet::close: constraint chains did not resolve");
  }
};

// ---------------------------------------------------------------------------
// FeSystem

/// Scalar field index: 0 = velocity x, 1 = velocity y, 2 = pressure.
enum : int { kVelX = 0, kVelY = 1, kPressure = 2 };

struct FeSystem {
  const Mesh* mesh = nullptr;
  int vel_degree = 2;
  int pre_degree = 1;

  LagrangeBasis vel_basis{2};
  LagrangeBasis pre_basis{1};

  std::vector<int> active_cells;            // ascending cell ids
  std::map<int, int> cell_ordinal;          // cell id -> index in active_cells
  std::vector<std::vector<int>> cell_dofs;  // per active cell: [ux | uy | p]
  int n_dofs = 0;
  std::vector<std::uint8_t> dof_component;  // kVelX/kVelY/kPressure per dof

  ConstraintSet constraints;
  std::uint64_t token = 0;  // identity tag for vectors

  int dofs_per_cell() const {
    return 2 * vel_basis.size() + pre_basis.size();
  }
  int local_pressure_offset() const { return 2 * vel_basis.size(); }

  CellMapping mapping(int cell_id) const {
    return CellMapping{mesh->cell_vertices(cell_id)};
  }
};

/// Coefficient vector for one (u, p) field on a given FeSystem.
struct MixedVector {
  std::vector<double> values;
  std::uint64_t system_token = 0;

  explicit MixedVector(const FeSystem& s)
      : values(s.n_dofs, 0.0), system_token(s.token) {}
  MixedVector() = default;
};

inline void check_system(const FeSystem& s, const MixedVector& v,
                         const char* where) {
  require(v.system_token == s.token &&
              v.values.size() == static_cast<std::size_t>(s.n_dofs),
          std::string(where) + ": vector does not belong to this system");
}

// ---------------------------------------------------------------------------
// Numbering

namespace detail {

/// Identity of the geometric entity a scalar node attaches to, used to merge
/// shared nodes between cells. (kind, a, b): vertex / edge node / interior.
struct NodeEntity {
  int kind;  // 0 = vertex, 1 = edge, 2 = interior
  std::int64_t a;
  std::int64_t b;

  bool operator<(const NodeEntity& o) const {
    if (kind != o.kind) return kind < o.kind;
    if (a != o.a) return a < o.a;
    return b < o.b;
  }
};

/// Entity of local node (ix,iy) of a degree-k scalar field on cell `c`.
inline NodeEntity node_entity(const Mesh& mesh, int c, int k, int ix, int iy) {
  const auto& q = mesh.cells[c].v;
  const bool x0 = ix == 0, x1 = ix == k, y0 = iy == 0, y1 = iy == k;
  if ((x0 || x1) && (y0 || y1)) {
    const int corner = x1 ? (y1 ? q[2] : q[1]) : (y1 ? q[3] : q[0]);
    return {0, corner, 0};
  }
  auto edge_entity = [&](int va, int vb, int along) -> NodeEntity {
    // `along` counts nodes from va to vb; canonical direction is lo -> hi id.
    const int t = (va < vb) ? along : k - along;
    return {1, static_cast<std::int64_t>(edge_key(va, vb)), t};
  };
  if (y0) return edge_entity(q[0], q[1], ix);
  if (x1) return edge_entity(q[1], q[2], iy);
  if (y1) return edge_entity(q[3], q[2], ix);
  if (x0) return edge_entity(q[0], q[3], iy);
  return {2, (static_cast<std::int64_t>(c) << 8) | (iy * (k + 1) + ix), 0};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dirichlet + hanging constraints

namespace detail {

/// Collect the scalar dofs of field `field` that sit on edge (a,b) of an
/// active cell, ordered canonically from min(a,b) to max(a,b):
/// [vertex(lo), interior nodes t=1..k-1, vertex(hi)].
inline std::vector<int> edge_dofs_canonical(
    const FeSystem& s, const std::map<detail::NodeEntity, int>& entity_dofs,
    int field, int a, int b) {
  const int k = (field == kPressure) ? s.pre_degree : s.vel_degree;
  const int lo = std::min(a, b), hi = std::max(a, b);
  std::vector<int> dofs(k + 1, -1);
  auto get = [&](const detail::NodeEntity& e) {
    auto it = entity_dofs.find(e);
    require(it != entity_dofs.end(), "edge_dofs_canonical: missing entity");
    return it->second;
  };
  dofs[0] = get({0, lo, 0});
  dofs[k] = get({0, hi, 0});
  for (int t = 1; t < k; ++t)
    dofs[t] = get({1, static_cast<std::int64_t>(edge_key(a, b)), t});
  return dofs;
}

}  // namespace detail

/// Builds the mixed system on the mesh: deterministic first-touch numbering
/// in (cell, component, local node) order, inflow/no-slip Dirichlet rows and
/// hanging-node interpolation rows, chains resolved.
inline FeSystem build_system(const Mesh& mesh, int vel_degree) {
  require(vel_degree == 2 || vel_degree == 4,
          "build_system: velocity degree must be 2 or 4");
  static std::atomic<std::uint64_t> token_counter{1};

  FeSystem s;
  s.mesh = &mesh;
  s.vel_degree = vel_degree;
  s.pre_degree = vel_degree / 2;
  s.vel_basis = LagrangeBasis(vel_degree);
  s.pre_basis = LagrangeBasis(s.pre_degree);
  s.token = token_counter.fetch_add(1);

  s.active_cells = mesh.active_cell_ids();
  for (int i = 0; i < static_cast<int>(s.active_cells.size()); ++i)
    s.cell_ordinal[s.active_cells[i]] = i;

  // Per-component entity maps: shared nodes get one global dof.
  std::array<std::map<detail::NodeEntity, int>, 3> entity_dofs;
  s.cell_dofs.resize(s.active_cells.size());

  for (std::size_t ord = 0; ord < s.active_cells.size(); ++ord) {
    const int c = s.active_cells[ord];
    auto& dofs = s.cell_dofs[ord];
    dofs.reserve(s.dofs_per_cell());
    for (int comp : {kVelX, kVelY, kPressure}) {
      const int k = (comp == kPressure) ? s.pre_degree : s.vel_degree;
      for (int iy = 0; iy <= k; ++iy)
        for (int ix = 0; ix <= k; ++ix) {
          const auto entity = detail::node_entity(mesh, c, k, ix, iy);
          auto [it, inserted] = entity_dofs[comp].emplace(entity, s.n_dofs);
          if (inserted) {
            s.dof_component.push_back(static_cast<std::uint8_t>(comp));
            ++s.n_dofs;
          }
          dofs.push_back(it->second);
        }
    }
  }

  // Dirichlet rows: velocity on inflow / no-slip / cylinder edges. No-slip
  // zeros take precedence at shared corners (consistent: the profile
  // vanishes at the walls anyway).
  auto set_dirichlet = [&](int dof, double value) {
    s.constraints.rows[dof] = ConstraintLine{{}, value};
  };
  for (int pass : {0, 1}) {  // pass 0: inflow, pass 1: zero-velocity edges
    for (std::size_t ord = 0; ord < s.active_cells.size(); ++ord) {
      const int c = s.active_cells[ord];
      const auto& q = mesh.cells[c].v;
      for (int e = 0; e < 4; ++e) {
        const int a = q[e], b = q[(e + 1) % 4];
        auto tag_it = mesh.boundary_tags.find(edge_key(a, b));
        if (tag_it == mesh.boundary_tags.end()) continue;
        const BoundaryTag tag = tag_it->second;
        if (!is_dirichlet(tag)) continue;
        const bool inflow = tag == BoundaryTag::Inflow;
        if ((pass == 0) != inflow) continue;

        for (int comp : {kVelX, kVelY}) {
          const auto dofs = detail::edge_dofs_canonical(
              s, entity_dofs[comp], comp, a, b);
          const int k = s.vel_degree;
          const Vec2 plo = mesh.vertices[std::min(a, b)];
          const Vec2 phi = mesh.vertices[std::max(a, b)];
          for (int t = 0; t <= k; ++t) {
            double g = 0.0;
            if (inflow) {
              const double y = plo.y + (phi.y - plo.y) * t / k;
              const Vec2 uin = mesh.domain.inflow_velocity(y);
              g = (comp == kVelX) ? uin.x : uin.y;
            }
            set_dirichlet(dofs[t], g);
          }
        }
      }
    }
  }

  // Hanging-node rows: fine-side dofs on a once-split edge of an active cell
  // interpolate the coarse edge trace.
  for (std::size_t ord = 0; ord < s.active_cells.size(); ++ord) {
    const int c = s.active_cells[ord];
    const auto& q = mesh.cells[c].v;
    for (int e = 0; e < 4; ++e) {
      const int a = q[e], b = q[(e + 1) % 4];
      auto mid_it = mesh.edge_midpoint.find(edge_key(a, b));
      if (mid_it == mesh.edge_midpoint.end()) continue;
      const int m = mid_it->second;

      const int lo = std::min(a, b), hi = std::max(a, b);
      for (int comp : {kVelX, kVelY, kPressure}) {
        const int k = (comp == kPressure) ? s.pre_degree : s.vel_degree;
        const auto coarse =
            detail::edge_dofs_canonical(s, entity_dofs[comp], comp, a, b);
        auto constrain_at = [&](int fine_dof, double t_coarse) {
          if (s.constraints.is_constrained(fine_dof)) return;
          ConstraintLine line;
          const auto w = lagrange_1d_weights(k, t_coarse);
          for (int j = 0; j <= k; ++j)
            if (std::abs(w[j]) > 1e-14) line.masters.emplace_back(coarse[j], w[j]);
          s.constraints.rows.emplace(fine_dof, std::move(line));
        };

        // The midpoint vertex sits at coarse parameter 1/2.
        auto mid_entity = detail::NodeEntity{0, m, 0};
        auto mit = entity_dofs[comp].find(mid_entity);
        require(mit != entity_dofs[comp].end(),
                "build_system: hanging midpoint has no dof");
        constrain_at(mit->second, 0.5);

        // Interior nodes of the two half edges. Entity index t counts from
        // min(end,m); convert to the parameter measured from `end`, then to
        // the full-edge parameter in lo -> hi direction.
        for (int end : {lo, hi}) {
          for (int t = 1; t < k; ++t) {
            auto it = entity_dofs[comp].find(
                {1, static_cast<std::int64_t>(edge_key(end, m)), t});
            if (it == entity_dofs[comp].end()) continue;  // k == 1
            const double from_end =
                (end < m) ? double(t) / k : 1.0 - double(t) / k;
            const double t_coarse =
                (end == lo) ? 0.5 * from_end : 1.0 - 0.5 * from_end;
            constrain_at(it->second, t_coarse);
          }
        }
      }
    }
  }

  s.constraints.close();
  return s;
}

// ---------------------------------------------------------------------------
// Vector operations

/// Overwrite constrained entries with their constraint expression
/// (inhomogeneity + weighted masters).
inline void distribute(const FeSystem& s, MixedVector* v) {
  check_system(s, *v, "distribute");
  for (const auto& [dof, line] : s.constraints.rows) {
    double val = line.inhomogeneity;
    for (const auto& [m, w] : line.masters) val += w * v->values[m];
    v->values[dof] = val;
  }
}

/// Same but with zero inhomogeneities (for Newton increments and adjoints).
inline void distribute_homogeneous(const FeSystem& s, MixedVector* v) {
  check_system(s, *v, "distribute_homogeneous");
  for (const auto& [dof, line] : s.constraints.rows) {
    double val = 0.0;
    for (const auto& [m, w] : line.masters) val += w * v->values[m];
    v->values[dof] = val;
  }
}

/// Parabolic inflow value at height y.
inline Vec2 interpolate_inflow(const DomainSpec& spec, double y) {
  return spec.inflow_velocity(y);
}

/// Nodal interpolation of analytic fields (velocity and pressure).
inline MixedVector interpolate(
    const FeSystem& s, const std::function<Vec2(const Vec2&)>& velocity,
    const std::function<double(const Vec2&)>& pressure) {
  MixedVector v(s);
  const int nv = s.vel_basis.size();
  const int np = s.pre_basis.size();
  for (std::size_t ord = 0; ord < s.active_cells.size(); ++ord) {
    const auto mapping = s.mapping(s.active_cells[ord]);
    const auto& dofs = s.cell_dofs[ord];
    for (int i = 0; i < nv; ++i) {
      const Vec2 x = mapping.map(s.vel_basis.node(i));
      const Vec2 u = velocity(x);
      v.values[dofs[i]] = u.x;
      v.values[dofs[nv + i]] = u.y;
    }
    for (int i = 0; i < np; ++i) {
      const Vec2 x = mapping.map(s.pre_basis.node(i));
      v.values[dofs[2 * nv + i]] = pressure(x);
    }
  }
  return v;
}

/// Start vector: zero interior, Dirichlet values applied.
inline MixedVector constrained_zero(const FeSystem& s) {
  MixedVector v(s);
  distribute(s, &v);
  return v;
}

// ---------------------------------------------------------------------------
// Field evaluation

struct FieldSample {
  Vec2 velocity;
  Mat2 velocity_gradient;  // (d u_i / d x_j) at (i row, j column)
  double pressure;
};

/// Evaluate the mixed field at reference point xi of active cell `cell_id`.
inline FieldSample eval_on_cell(const FeSystem& s, const MixedVector& v,
                                int cell_id, const Vec2& xi) {
  check_system(s, v, "eval_on_cell");
  const auto it = s.cell_ordinal.find(cell_id);
  require(it != s.cell_ordinal.end(), "eval_on_cell: not an active cell");
  const auto& dofs = s.cell_dofs[it->second];
  const auto mp = s.mapping(cell_id).at(xi);

  FieldSample out{};
  const int nv = s.vel_basis.size();
  for (int i = 0; i < nv; ++i) {
    const auto sh = s.vel_basis.eval(i, xi);
    const Vec2 g = mp.jac_inv_t * sh.gradient;
    const double ux = v.values[dofs[i]];
    const double uy = v.values[dofs[nv + i]];
    out.velocity.x += ux * sh.value;
    out.velocity.y += uy * sh.value;
    out.velocity_gradient.a00 += ux * g.x;
    out.velocity_gradient.a01 += ux * g.y;
    out.velocity_gradient.a10 += uy * g.x;
    out.velocity_gradient.a11 += uy * g.y;
  }
  const int np = s.pre_basis.size();
  for (int i = 0; i < np; ++i)
    out.pressure += v.values[dofs[2 * nv + i]] * s.pre_basis.eval(i, xi).value;
  return out;
}

/// Locate the active cell containing physical point x (first match in cell-id
/// order; points on shared edges resolve deterministically).
inline std::optional<std::pair<int, Vec2>> locate_point(const FeSystem& s,
                                                        const Vec2& x) {
  const double tol = 1e-10;
  for (int c : s.active_cells) {
    const CellMapping mapping{s.mesh->cell_vertices(c)};
    // Cheap bounding-box reject.
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Vec2& p : mapping.v) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    const double pad = 1e-9 + 1e-9 * (xmax - xmin);
    if (x.x < xmin - pad || x.x > xmax + pad || x.y < ymin - pad ||
        x.y > ymax + pad)
      continue;
    Vec2 xi;
    try {
      xi = mapping.invert(x);
    } catch (const std::exception&) {
      continue;
    }
    if (xi.x >= -tol && xi.x <= 1 + tol && xi.y >= -tol && xi.y <= 1 + tol)
      return std::make_pair(c, xi);
  }
  return std::nullopt;
}

/// Point evaluation anywhere in the mesh; throws if x is outside.
inline FieldSample eval_at_point(const FeSystem& s, const MixedVector& v,
                                 const Vec2& x) {
  auto loc = locate_point(s, x);
  require(loc.has_value(), "eval_at_point: point outside mesh");
  return eval_on_cell(s, v, loc->first, loc->second);
}

// ---------------------------------------------------------------------------
// Embeddings

namespace detail {

inline Vec2 quadrant_compose(int child_index, const Vec2& xi) {
  static const std::array<Vec2, 4> offsets = {
      Vec2{0, 0}, Vec2{1, 0}, Vec2{1, 1}, Vec2{0, 1}};
  return {0.5 * (offsets[child_index].x + xi.x),
          0.5 * (offsets[child_index].y + xi.y)};
}

/// Evaluate one scalar field of `v` at reference point xi of active source
/// cell with ordinal `ord`.
inline double eval_scalar(const FeSystem& s, const MixedVector& v, int ord,
                          int comp, const Vec2& xi) {
  const auto& dofs = s.cell_dofs[ord];
  const LagrangeBasis& basis =
      (comp == kPressure) ? s.pre_basis : s.vel_basis;
  const int offset = (comp == kPressure) ? 2 * s.vel_basis.size()
                     : (comp == kVelY)   ? s.vel_basis.size()
                                         : 0;
  double out = 0.0;
  for (int i = 0; i < basis.size(); ++i)
    out += v.values[dofs[offset + i]] * basis.eval(i, xi).value;
  return out;
}

}  // namespace detail

/// Re-express `v` on the p-enriched (same mesh, doubled degrees) or
/// h-enriched (uniformly refined mesh, same degrees) system. The p-embedding
/// is exact; the h-embedding transfers nodal values through the parent
/// reference cell and is exact wherever the child geometry is nested.
inline MixedVector embed(const FeSystem& source, const MixedVector& v,
                         const FeSystem& target) {
  check_system(source, v, "embed");
  const bool p_case = target.mesh == source.mesh &&
                      target.vel_degree == 2 * source.vel_degree;
  const bool h_case = target.mesh != source.mesh &&
                      target.mesh->parent_stamp == source.mesh->stamp &&
                      target.mesh->is_uniform_child &&
                      target.vel_degree == source.vel_degree;
  require(p_case || h_case,
          "embed: target must be the p- or h-enrichment of the source");

  MixedVector out(target);
  for (std::size_t tord = 0; tord < target.active_cells.size(); ++tord) {
    const int tcell = target.active_cells[tord];
    int sord;
    int child = -1;
    if (p_case) {
      sord = source.cell_ordinal.at(tcell);
    } else {
      const int parent = target.mesh->cells[tcell].parent;
      sord = source.cell_ordinal.at(parent);
      child = target.mesh->child_index(tcell);
    }
    const auto& tdofs = target.cell_dofs[tord];
    for (int comp : {kVelX, kVelY, kPressure}) {
      const LagrangeBasis& basis =
          (comp == kPressure) ? target.pre_basis : target.vel_basis;
      const int offset = (comp == kPressure) ? 2 * target.vel_basis.size()
                         : (comp == kVelY)   ? target.vel_basis.size()
                                             : 0;
      for (int i = 0; i < basis.size(); ++i) {
        Vec2 xi = basis.node(i);
        if (child >= 0) xi = detail::quadrant_compose(child, xi);
        out.values[tdofs[offset + i]] =
            detail::eval_scalar(source, v, sord, comp, xi);
      }
    }
  }
  return out;
}

}  // namespace nsdwr

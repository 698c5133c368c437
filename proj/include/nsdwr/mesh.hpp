#pragma once

// Hierarchical quadrilateral mesh for the channel-with-cylinder benchmark:
// quadrisection refinement with 1-irregular hanging nodes, and radial
// re-projection of new cylinder-boundary vertices onto the circle.

#include <algorithm>
#include <atomic>
#include <map>
#include <set>
#include <vector>

#include "nsdwr/core.hpp"
#include "nsdwr/domain.hpp"

namespace nsdwr {

struct Cell {
  std::array<int, 4> v{};  // vertex ids, counter-clockwise
  int level = 0;
  int parent = -1;
  std::array<int, 4> children{-1, -1, -1, -1};

  bool is_active() const { return children[0] < 0; }
};

namespace detail {
inline std::uint64_t next_mesh_stamp() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}
}  // namespace detail

struct Mesh {
  DomainSpec domain;
  bool has_cylinder = false;

  std::vector<Vec2> vertices;
  std::vector<Cell> cells;  // append-only; cell id == index, stable forever

  /// Midpoint registry: edge -> the vertex that splits it (if any). Shared
  /// across the hierarchy; this is what makes neighboring refinements agree.
  std::map<EdgeKey, int> edge_midpoint;
  /// Inverse of the registry: vertex -> edge it was created on.
  std::map<int, EdgeKey> vertex_creator_edge;
  /// Boundary classification, keyed by (active or historical) boundary edges.
  std::map<EdgeKey, BoundaryTag> boundary_tags;

  // Provenance, used to validate embeddings between meshes.
  std::uint64_t stamp = 0;
  std::uint64_t parent_stamp = 0;
  bool is_uniform_child = false;

  std::vector<int> active_cell_ids() const {
    std::vector<int> ids;
    for (int c = 0; c < static_cast<int>(cells.size()); ++c)
      if (cells[c].is_active()) ids.push_back(c);
    return ids;
  }

  std::array<EdgeKey, 4> cell_edges(int c) const {
    const auto& q = cells[c].v;
    return {edge_key(q[0], q[1]), edge_key(q[1], q[2]), edge_key(q[2], q[3]),
            edge_key(q[3], q[0])};
  }

  std::array<Vec2, 4> cell_vertices(int c) const {
    const auto& q = cells[c].v;
    return {vertices[q[0]], vertices[q[1]], vertices[q[2]], vertices[q[3]]};
  }

  /// Area of the bilinear cell (shoelace of its corners).
  double cell_area(int c) const {
    const auto p = cell_vertices(c);
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += p[i].cross(p[(i + 1) % 4]);
    return 0.5 * s;
  }

  double total_area() const {
    std::vector<double> areas;
    for (int c : active_cell_ids()) areas.push_back(cell_area(c));
    return pairwise_sum(std::move(areas));
  }

  /// Child ordinal (0..3) of an inactive parent's child cell.
  int child_index(int child) const {
    const int p = cells[child].parent;
    require(p >= 0, "mesh: cell has no parent");
    for (int k = 0; k < 4; ++k)
      if (cells[p].children[k] == child) return k;
    fail("mesh: broken parent/child link");
  }
};

// ---------------------------------------------------------------------------
// Refinement

namespace detail {

/// Map from full edges of active cells to the (at most 2) active cells
/// holding them.
inline std::map<EdgeKey, std::vector<int>> active_edge_cells(const Mesh& m) {
  std::map<EdgeKey, std::vector<int>> out;
  for (int c : m.active_cell_ids())
    for (EdgeKey e : m.cell_edges(c)) out[e].push_back(c);
  return out;
}

/// If edge (a,b) is one half of a coarser edge, return that parent edge.
inline bool half_of_parent_edge(const Mesh& m, int a, int b, EdgeKey* parent) {
  for (int mid : {a, b}) {
    auto it = m.vertex_creator_edge.find(mid);
    if (it == m.vertex_creator_edge.end()) continue;
    const int other = (mid == a) ? b : a;
    const EdgeKey pe = it->second;
    if (edge_key_lo(pe) == other || edge_key_hi(pe) == other) {
      *parent = pe;
      return true;
    }
  }
  return false;
}

inline int get_or_create_midpoint(Mesh& m, EdgeKey e) {
  auto it = m.edge_midpoint.find(e);
  if (it != m.edge_midpoint.end()) return it->second;

  const Vec2 pa = m.vertices[edge_key_lo(e)];
  const Vec2 pb = m.vertices[edge_key_hi(e)];
  Vec2 mid = 0.5 * (pa + pb);

  auto tag = m.boundary_tags.find(e);
  if (tag != m.boundary_tags.end() && tag->second == BoundaryTag::Cylinder) {
    // New cylinder-boundary vertices are projected radially onto the circle.
    const Vec2 c = m.domain.cylinder_center;
    mid = c + m.domain.cylinder_radius * (mid - c).normalized();
  }

  const int id = static_cast<int>(m.vertices.size());
  m.vertices.push_back(mid);
  m.edge_midpoint.emplace(e, id);
  m.vertex_creator_edge.emplace(id, e);
  if (tag != m.boundary_tags.end()) {
    m.boundary_tags.emplace(edge_key(edge_key_lo(e), id), tag->second);
    m.boundary_tags.emplace(edge_key(id, edge_key_hi(e)), tag->second);
  }
  return id;
}

inline void split_cell(Mesh& m, int c) {
  const auto q = m.cells[c].v;
  const int m01 = get_or_create_midpoint(m, edge_key(q[0], q[1]));
  const int m12 = get_or_create_midpoint(m, edge_key(q[1], q[2]));
  const int m23 = get_or_create_midpoint(m, edge_key(q[2], q[3]));
  const int m30 = get_or_create_midpoint(m, edge_key(q[3], q[0]));

  const Vec2 center = 0.25 * (m.vertices[q[0]] + m.vertices[q[1]] +
                              m.vertices[q[2]] + m.vertices[q[3]]);
  const int mc = static_cast<int>(m.vertices.size());
  m.vertices.push_back(center);

  const int level = m.cells[c].level + 1;
  const std::array<std::array<int, 4>, 4> kids = {{
      {q[0], m01, mc, m30},
      {m01, q[1], m12, mc},
      {mc, m12, q[2], m23},
      {m30, mc, m23, q[3]},
  }};
  for (int k = 0; k < 4; ++k) {
    const int id = static_cast<int>(m.cells.size());
    Cell child;
    child.v = kids[k];
    child.level = level;
    child.parent = c;
    m.cells.push_back(child);
    m.cells[c].children[k] = id;
  }
}

}  // namespace detail

/// Quadrisect the marked active cells plus whatever neighbors are needed to
/// keep the mesh 1-irregular. Surviving cell ids are unchanged.
inline Mesh refine(const Mesh& mesh, const std::set<int>& marked) {
  for (int c : marked) {
    require(c >= 0 && c < static_cast<int>(mesh.cells.size()) &&
                mesh.cells[c].is_active(),
            "refine: marked set must contain active cells");
  }

  Mesh out = mesh;
  out.stamp = detail::next_mesh_stamp();
  out.parent_stamp = mesh.stamp;
  out.is_uniform_child = false;

  // Closure: refining a cell requires every edge-coarser neighbor to be
  // refined as well; iterate until the set is stable.
  std::set<int> work(marked.begin(), marked.end());
  const auto by_edge = detail::active_edge_cells(out);
  bool grew = true;
  while (grew) {
    grew = false;
    std::vector<int> snapshot(work.begin(), work.end());
    for (int c : snapshot) {
      const auto& q = out.cells[c].v;
      for (int s = 0; s < 4; ++s) {
        EdgeKey parent_edge;
        if (!detail::half_of_parent_edge(out, q[s], q[(s + 1) % 4],
                                         &parent_edge))
          continue;
        auto it = by_edge.find(parent_edge);
        if (it == by_edge.end()) continue;
        for (int n : it->second) {
          if (out.cells[n].level < out.cells[c].level && !work.count(n)) {
            work.insert(n);
            grew = true;
          }
        }
      }
    }
  }

  // Refine coarse-to-fine so midpoints created by coarser splits are reused.
  std::vector<int> order(work.begin(), work.end());
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (out.cells[a].level != out.cells[b].level)
      return out.cells[a].level < out.cells[b].level;
    return a < b;
  });
  for (int c : order) detail::split_cell(out, c);

  const unsigned uniform =
      (work.size() == mesh.active_cell_ids().size()) ? 1u : 0u;
  out.is_uniform_child = uniform != 0;
  return out;
}

inline Mesh uniform_refine(const Mesh& mesh) {
  const auto ids = mesh.active_cell_ids();
  return refine(mesh, std::set<int>(ids.begin(), ids.end()));
}

// ---------------------------------------------------------------------------
// Benchmark mesh construction

namespace detail {

inline std::vector<double> grid_breaks(double total, double h0) {
  std::vector<double> xs{0.0};
  int j = 1;
  while (j * h0 <= total - 0.55 * h0 + 1e-12) {
    xs.push_back(j * h0);
    ++j;
  }
  xs.push_back(total);
  return xs;
}

inline int find_break(const std::vector<double>& xs, double value) {
  for (int i = 0; i < static_cast<int>(xs.size()); ++i)
    if (std::abs(xs[i] - value) < 1e-12) return i;
  fail("mesh: cylinder block is not aligned with the background grid");
}

}  // namespace detail

/// Channel grid with a ring of cells grafted around the cylinder. The ring
/// replaces the 2x2 block of grid cells centered on the cylinder; its inner
/// vertices lie exactly on the circle.
inline Mesh build_benchmark_mesh(const DomainSpec& spec, int pre_refinements) {
  spec.validate();
  require(pre_refinements >= 0, "build_benchmark_mesh: pre_refinements >= 0");

  const double step = 2.0 * spec.cylinder_radius;  // background grid size
  const std::vector<double> xs = detail::grid_breaks(spec.channel_length, step);
  const std::vector<double> ys = detail::grid_breaks(spec.channel_height, step);

  const Vec2 c = spec.cylinder_center;
  const int ix0 = detail::find_break(xs, c.x - step);
  const int ix1 = detail::find_break(xs, c.x + step);
  const int iy0 = detail::find_break(ys, c.y - step);
  const int iy1 = detail::find_break(ys, c.y + step);
  require(ix1 == ix0 + 2 && iy1 == iy0 + 2,
          "build_benchmark_mesh: block must span exactly 2x2 grid cells");

  Mesh m;
  m.domain = spec;
  m.has_cylinder = true;
  m.stamp = detail::next_mesh_stamp();

  // Grid vertices, skipping the one that would sit at the cylinder center.
  const int nx = static_cast<int>(xs.size());
  const int ny = static_cast<int>(ys.size());
  std::vector<int> vid(nx * ny, -1);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      if (i == ix0 + 1 && j == iy0 + 1) continue;
      vid[j * nx + i] = static_cast<int>(m.vertices.size());
      m.vertices.emplace_back(xs[i], ys[j]);
    }
  const auto grid = [&](int i, int j) {
    const int id = vid[j * nx + i];
    require(id >= 0, "build_benchmark_mesh: internal grid lookup");
    return id;
  };

  // Ring vertices on the circle, matching the 8 block-boundary directions.
  const std::array<std::pair<int, int>, 8> ring_grid = {{
      {ix0, iy0}, {ix0 + 1, iy0}, {ix1, iy0}, {ix1, iy0 + 1},
      {ix1, iy1}, {ix0 + 1, iy1}, {ix0, iy1}, {ix0, iy0 + 1},
  }};
  std::array<int, 8> outer{}, inner{};
  for (int k = 0; k < 8; ++k) {
    outer[k] = grid(ring_grid[k].first, ring_grid[k].second);
    const Vec2 dir = (m.vertices[outer[k]] - c).normalized();
    inner[k] = static_cast<int>(m.vertices.size());
    m.vertices.push_back(c + spec.cylinder_radius * dir);
  }

  // Channel cells (block interior removed), then the ring.
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      if (i >= ix0 && i < ix1 && j >= iy0 && j < iy1) continue;
      Cell cell;
      cell.v = {grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1)};
      m.cells.push_back(cell);
    }
  for (int k = 0; k < 8; ++k) {
    Cell cell;
    cell.v = {outer[k], outer[(k + 1) % 8], inner[(k + 1) % 8], inner[k]};
    m.cells.push_back(cell);
  }

  // Classify boundary edges (edges held by exactly one cell).
  for (const auto& [e, cells_on_edge] : detail::active_edge_cells(m)) {
    if (cells_on_edge.size() != 1) continue;
    const Vec2 a = m.vertices[edge_key_lo(e)];
    const Vec2 b = m.vertices[edge_key_hi(e)];
    BoundaryTag tag;
    if (std::abs(a.x) < 1e-12 && std::abs(b.x) < 1e-12)
      tag = BoundaryTag::Inflow;
    else if (std::abs(a.x - spec.channel_length) < 1e-12 &&
             std::abs(b.x - spec.channel_length) < 1e-12)
      tag = BoundaryTag::Outflow;
    else if ((std::abs(a.y) < 1e-12 && std::abs(b.y) < 1e-12) ||
             (std::abs(a.y - spec.channel_height) < 1e-12 &&
              std::abs(b.y - spec.channel_height) < 1e-12))
      tag = BoundaryTag::NoSlip;
    else {
      const double ra = (a - c).norm();
      const double rb = (b - c).norm();
      require(std::abs(ra - spec.cylinder_radius) < 1e-12 &&
                  std::abs(rb - spec.cylinder_radius) < 1e-12,
              "build_benchmark_mesh: unclassifiable boundary edge");
      tag = BoundaryTag::Cylinder;
    }
    m.boundary_tags.emplace(e, tag);
  }

  for (int k = 0; k < pre_refinements; ++k) m = uniform_refine(m);
  return m;
}

/// Structured rectangle mesh (no cylinder); inflow at x=0, outflow at x=w,
/// no-slip walls top and bottom. Used mostly by tests and small studies.
inline Mesh build_rectangle_mesh(int nx, int ny, double width, double height,
                                 DomainSpec spec = {}) {
  require(nx >= 1 && ny >= 1, "build_rectangle_mesh: nx, ny >= 1");
  spec.channel_length = width;
  spec.channel_height = height;

  Mesh m;
  m.domain = spec;
  m.has_cylinder = false;
  m.stamp = detail::next_mesh_stamp();

  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      m.vertices.emplace_back(width * i / nx, height * j / ny);
  const auto grid = [&](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      Cell cell;
      cell.v = {grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1)};
      m.cells.push_back(cell);
    }

  for (int j = 0; j < ny; ++j) {
    m.boundary_tags.emplace(edge_key(grid(0, j), grid(0, j + 1)),
                            BoundaryTag::Inflow);
    m.boundary_tags.emplace(edge_key(grid(nx, j), grid(nx, j + 1)),
                            BoundaryTag::Outflow);
  }
  for (int i = 0; i < nx; ++i) {
    m.boundary_tags.emplace(edge_key(grid(i, 0), grid(i + 1, 0)),
                            BoundaryTag::NoSlip);
    m.boundary_tags.emplace(edge_key(grid(i, ny), grid(i + 1, ny)),
                            BoundaryTag::NoSlip);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Queries and consistency checks

/// Hanging vertices: registered midpoints of edges still held by an active
/// cell (the coarse side). Returns midpoint vertex -> coarse edge.
inline std::map<int, EdgeKey> hanging_vertices(const Mesh& m) {
  std::map<int, EdgeKey> out;
  for (int c : m.active_cell_ids())
    for (EdgeKey e : m.cell_edges(c)) {
      auto it = m.edge_midpoint.find(e);
      if (it != m.edge_midpoint.end()) out.emplace(it->second, e);
    }
  return out;
}

inline BoundaryTag boundary_tag_of(const Mesh& m, EdgeKey e, bool* found) {
  auto it = m.boundary_tags.find(e);
  *found = it != m.boundary_tags.end();
  return *found ? it->second : BoundaryTag::NoSlip;
}

/// Verifies the structural mesh invariants; throws with a description on the
/// first violation. Used by tests and after refinement in debug runs.
inline void check_mesh_invariants(const Mesh& m) {
  const auto active = m.active_cell_ids();

  for (int c : active) {
    const auto p = m.cell_vertices(c);
    // det of the bilinear map at the four corners.
    const std::array<double, 4> dets = {
        (p[1] - p[0]).cross(p[3] - p[0]), (p[1] - p[0]).cross(p[2] - p[1]),
        (p[2] - p[3]).cross(p[2] - p[1]), (p[2] - p[3]).cross(p[3] - p[0])};
    for (double d : dets)
      require(d > 0.0, "mesh invariant: non-positive corner Jacobian");
  }

  // 1-irregularity: an active cell may not see a registered midpoint chain
  // deeper than one level, and edge-neighbors differ by at most one level.
  auto by_edge = detail::active_edge_cells(m);
  for (const auto& [e, cs] : by_edge)
    require(cs.size() <= 2, "mesh invariant: edge shared by > 2 active cells");
  for (int c : active) {
    const auto& q = m.cells[c].v;
    for (int s = 0; s < 4; ++s) {
      const int a = q[s], b = q[(s + 1) % 4];
      auto mid = m.edge_midpoint.find(edge_key(a, b));
      if (mid != m.edge_midpoint.end() &&
          !m.boundary_tags.count(edge_key(a, b))) {
        // Interior hanging edge: both halves must be held by active cells
        // exactly one level deeper (a missing half means depth >= 2).
        for (int half : {a, b}) {
          auto it = by_edge.find(edge_key(half, mid->second));
          require(it != by_edge.end() && !it->second.empty(),
                  "mesh invariant: hanging edge split deeper than one level");
          for (int n : it->second)
            require(m.cells[n].level == m.cells[c].level + 1,
                    "mesh invariant: hanging level difference != 1");
        }
      }
      EdgeKey parent_edge;
      if (detail::half_of_parent_edge(m, a, b, &parent_edge)) {
        auto it = by_edge.find(parent_edge);
        if (it != by_edge.end())
          for (int n : it->second)
            require(m.cells[c].level - m.cells[n].level <= 1,
                    "mesh invariant: neighbor more than one level coarser");
      }
    }
  }

  if (m.has_cylinder) {
    const Vec2 c = m.domain.cylinder_center;
    for (int cell : active)
      for (EdgeKey e : m.cell_edges(cell)) {
        auto it = m.boundary_tags.find(e);
        if (it == m.boundary_tags.end() ||
            it->second != BoundaryTag::Cylinder)
          continue;
        for (int v : {edge_key_lo(e), edge_key_hi(e)})
          require(std::abs((m.vertices[v] - c).norm() -
                           m.domain.cylinder_radius) < 1e-12,
                  "mesh invariant: cylinder vertex off the circle");
      }
  }
}

}  // namespace nsdwr

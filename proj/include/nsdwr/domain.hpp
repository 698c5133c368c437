#pragma once

// Benchmark configuration: channel-with-cylinder geometry, physical
// constants, and boundary classification.

#include "nsdwr/core.hpp"

namespace nsdwr {

/// Geometry and flow data of the laminar channel-with-cylinder benchmark.
/// All values immutable after construction.
struct DomainSpec {
  double channel_length = 2.2;
  double channel_height = 0.41;
  Vec2 cylinder_center{0.2, 0.2};
  double cylinder_radius = 0.05;
  double viscosity = 1e-3;
  double inflow_peak = 0.3;

  /// Parabolic inflow profile (peak * 4 y (H - y) / H^2, 0).
  Vec2 inflow_velocity(double y) const {
    const double H = channel_height;
    return {inflow_peak * 4.0 * y * (H - y) / (H * H), 0.0};
  }

  void validate() const {
    require(channel_length > 0 && channel_height > 0 && cylinder_radius > 0,
            "domain: sizes must be positive");
    require(cylinder_center.x - cylinder_radius > 0.0 &&
                cylinder_center.x + cylinder_radius < channel_length &&
                cylinder_center.y - cylinder_radius > 0.0 &&
                cylinder_center.y + cylinder_radius < channel_height,
            "domain: cylinder must lie strictly inside the channel");
  }
};

enum class BoundaryTag : std::uint8_t { Inflow, Outflow, NoSlip, Cylinder };

inline const char* to_string(BoundaryTag t) {
  switch (t) {
    case BoundaryTag::Inflow: return "inflow";
    case BoundaryTag::Outflow: return "outflow";
    case BoundaryTag::NoSlip: return "noslip";
    case BoundaryTag::Cylinder: return "cylinder";
  }
  return "?";
}

/// Velocity Dirichlet data applies on all tags except the outflow, which is
/// the natural (do-nothing) boundary.
inline bool is_dirichlet(BoundaryTag t) { return t != BoundaryTag::Outflow; }

}  // namespace nsdwr

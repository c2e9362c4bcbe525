#include "kdqn/sim_state.hpp"

#include <algorithm>
#include <cmath>

namespace kdqn::sim {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Forward angle from a to b in [0, 2pi).
double forward_angle(double from, double to) {
  double d = std::fmod(to - from, kTwoPi);
  if (d < 0) d += kTwoPi;
  return d;
}

}  // namespace

collision::OrientedBox box_of(const VehicleState& s) {
  return {s.position, s.heading, s.length, s.width};
}

double ring_angle(Vec2 p) {
  double a = std::atan2(p.y, p.x);
  if (a < 0) a += kTwoPi;
  return a;
}

void rail_pose(const RoundaboutLayout& layout, const Vehicle& v, Vec2& pos, double& heading) {
  const LaneCoord& c = v.state.lane_coord;
  if (c.lane.is_ring()) {
    const double r_center = layout.ring_radius(c.lane.kind);
    const double r = r_center + v.lat_offset;
    const double a = c.s / r_center;
    pos = {r * std::cos(a), r * std::sin(a)};
    heading = world::wrap_angle(a + M_PI / 2.0);
    return;
  }
  // Legs allow extrapolation beyond the nominal span: exited vehicles keep
  // integrating straight on.
  const double r_attach = layout.ring_radius(LaneKind::Outer);
  if (c.lane.kind == LaneKind::EntryLeg) {
    const double a = layout.entry_angle(c.lane.port);
    const double r = r_attach + (layout.entry_leg_length - c.s);
    pos = {r * std::cos(a), r * std::sin(a)};
    // The last ten meters curve the heading from radial-inward to the ring
    // tangent so the footprint never sweeps across the lanes at the line.
    const double blend =
        std::clamp((c.s - (layout.entry_leg_length - 10.0)) / 10.0, 0.0, 1.0);
    const double inward = world::wrap_angle(a + M_PI);
    const double tangent = world::wrap_angle(a + M_PI / 2.0);
    heading = world::wrap_angle(inward + blend * world::angle_diff(tangent, inward));
  } else {
    const double a = layout.exit_angle(c.lane.port);
    const double r = r_attach + c.s;
    pos = {r * std::cos(a), r * std::sin(a)};
    heading = world::wrap_angle(a);
  }
}

void advance_rail(const RoundaboutLayout& layout, Vehicle& v, double accel, double dt) {
  LaneCoord& c = v.state.lane_coord;
  const double travel = v.state.speed * dt;

  if (c.lane.kind == LaneKind::EntryLeg) {
    c.s += travel;
    if (c.s >= layout.entry_leg_length) {
      const double overshoot = c.s - layout.entry_leg_length;
      const int port = c.lane.port;
      const LaneId ring = v.target_lane.is_ring() ? v.target_lane : world::outer_lane();
      const double r = layout.ring_radius(ring.kind);
      const double r_attach = layout.ring_radius(LaneKind::Outer);
      c.lane = ring;
      c.s = std::fmod(layout.entry_angle(port) * r + overshoot, layout.ring_circumference(ring.kind));
      v.lat_offset = r_attach - r;  // legs attach at the outer centerline
      v.target_lane = ring;
      v.entered = true;
    }
  } else if (c.lane.is_ring()) {
    const double r = layout.ring_radius(c.lane.kind);
    const double circ = layout.ring_circumference(c.lane.kind);
    const double prev_angle = c.s / r;
    c.s += travel;
    const double new_angle = c.s / r;
    // Exit from the outer lane once settled and the outlet angle is crossed.
    if (v.target_exit_port >= 0 && c.lane.kind == LaneKind::Outer &&
        std::abs(v.lat_offset) < 1.0) {
      const double exit_a = layout.exit_angle(v.target_exit_port);
      const double to_exit = forward_angle(prev_angle, exit_a);
      if (to_exit <= new_angle - prev_angle + 1e-12) {
        const double leg_s = (new_angle - prev_angle - to_exit) * r;
        c.lane = world::exit_leg(v.target_exit_port);
        c.s = std::max(0.0, leg_s);
        v.target_lane = c.lane;
        v.lat_offset = 0.0;
        v.exited = true;
      }
    }
    if (c.lane.is_ring() && c.s >= circ) c.s = std::fmod(c.s, circ);
  } else {
    c.s += travel;  // exit leg, unbounded
  }

  // Lateral lane-change blend toward the tracked centerline.
  if (v.lat_offset != 0.0) {
    const double step = kLaneChangeBlendRate * dt;
    if (std::abs(v.lat_offset) <= step)
      v.lat_offset = 0.0;
    else
      v.lat_offset -= std::copysign(step, v.lat_offset);
  }

  v.state.speed = std::max(0.0, v.state.speed + accel * dt);
  rail_pose(layout, v, v.state.position, v.state.heading);
}

Vec2 lookahead_point(const RoundaboutLayout& layout, const Vehicle& v, double dist) {
  const LaneCoord& c = v.state.lane_coord;
  if (c.lane.kind == LaneKind::EntryLeg) {
    const double ahead = c.s + dist;
    if (ahead <= layout.entry_leg_length)
      return world::to_cartesian(layout, {c.lane, ahead});
    const double overshoot = ahead - layout.entry_leg_length;
    const LaneId ring = v.target_lane.is_ring() ? v.target_lane : world::outer_lane();
    const double r = layout.ring_radius(ring.kind);
    const double a = layout.entry_angle(c.lane.port) + overshoot / r;
    return {r * std::cos(a), r * std::sin(a)};
  }
  if (c.lane.kind == LaneKind::ExitLeg) {
    const double a = layout.exit_angle(c.lane.port);
    const double r = layout.ring_radius(LaneKind::Outer) + c.s + dist;
    return {r * std::cos(a), r * std::sin(a)};
  }
  const LaneId ring = v.target_lane.is_ring() ? v.target_lane : c.lane;
  const double r = layout.ring_radius(ring.kind);
  const double a = c.s / layout.ring_radius(c.lane.kind) + dist / r;
  return {r * std::cos(a), r * std::sin(a)};
}

double arc_distance_ahead(const RoundaboutLayout& layout, const Vehicle& from, const Vehicle& to) {
  auto angle_of = [&](const Vehicle& v) {
    const LaneCoord& c = v.state.lane_coord;
    if (c.lane.is_ring()) return c.s / layout.ring_radius(c.lane.kind);
    return c.lane.kind == LaneKind::EntryLeg ? layout.entry_angle(c.lane.port)
                                             : layout.exit_angle(c.lane.port);
  };
  const double r = from.state.lane_coord.lane.is_ring()
                       ? layout.ring_radius(from.state.lane_coord.lane.kind)
                       : layout.ring_radius(LaneKind::Outer);
  return forward_angle(angle_of(from), angle_of(to)) * r;
}

double lateral_offset(const RoundaboutLayout& layout, const Vehicle& v) {
  return world::distance(v.state.position, world::to_cartesian(layout, v.state.lane_coord));
}

std::optional<int> nearest_ahead_in_lane(const WorldState& w, const Vehicle& v, LaneId lane,
                                         double max_arc) {
  std::optional<int> best;
  double best_d = max_arc;
  for (size_t i = 0; i < w.vehicles.size(); ++i) {
    const Vehicle& o = w.vehicles[i];
    if (o.id == v.id || o.exited) continue;
    double d;
    if (lane.is_ring()) {
      if (!(o.state.lane_coord.lane == lane)) continue;
      d = arc_distance_ahead(w.layout, v, o);
      if (d <= 1e-9) continue;  // self-position or behind by wrap
    } else {
      if (!(o.state.lane_coord.lane == lane) || !(v.state.lane_coord.lane == lane)) continue;
      d = o.state.lane_coord.s - v.state.lane_coord.s;
      if (d <= 0.0) continue;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::optional<int> nearest_ahead_any_lane(const WorldState& w, const Vehicle& v, double max_arc) {
  auto a = nearest_ahead_in_lane(w, v, world::inner_lane(), max_arc);
  auto b = nearest_ahead_in_lane(w, v, world::outer_lane(), max_arc);
  if (!a) return b;
  if (!b) return a;
  return arc_distance_ahead(w.layout, v, w.vehicles[*a]) <=
                 arc_distance_ahead(w.layout, v, w.vehicles[*b])
             ? a
             : b;
}

int node_of(const WorldState& w, const Vehicle& v) {
  const LaneCoord& c = v.state.lane_coord;
  if (c.lane.kind == LaneKind::EntryLeg) return w.graph.entry_node(c.lane.port);
  if (c.lane.kind == LaneKind::ExitLeg) return w.graph.exit_node(c.lane.port);
  const double a = c.s / w.layout.ring_radius(c.lane.kind);
  int best_port = 0;
  double best = 1e9;
  for (int p = 0; p < w.layout.num_ports; ++p) {
    const double d = std::abs(world::angle_diff(a, w.layout.port_angles[p]));
    if (d < best) {
      best = d;
      best_port = p;
    }
  }
  return w.graph.ring_node(best_port, c.lane.kind);
}

}  // namespace kdqn::sim

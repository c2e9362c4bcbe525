#pragma once

#include <optional>
#include <vector>

#include "kdqn/collision.hpp"
#include "kdqn/dynamics.hpp"
#include "kdqn/world.hpp"

namespace kdqn::sim {

using dynamics::IdmParams;
using dynamics::Role;
using dynamics::VehicleState;
using world::LaneCoord;
using world::LaneId;
using world::LaneKind;
using world::RoadGraph;
using world::RoundaboutLayout;
using world::Vec2;

constexpr double kLaneChangeBlendRate = 3.3;  // m/s lateral, matches the tracked sweep rate

struct Vehicle {
  int id = -1;
  VehicleState state;
  LaneId target_lane;        // lane currently tracked; equals lane_coord.lane for settled rails
  double lat_offset = 0.0;   // radial offset from the target lane centerline (rail vehicles)
  int target_exit_port = -1;
  bool entered = false;      // merged onto the ring
  bool exited = false;       // left the carriageway; out of the AV's view
  bool holding_at_entry = false;  // entry rule engaged this substep
  bool committed_entry = false;   // cleared the entry decision point
  IdmParams idm;
};

struct WorldState {
  RoundaboutLayout layout;
  RoadGraph graph;
  std::vector<Vehicle> vehicles;
  int ev_index = -1;
  double time = 0.0;
  long substep = 0;
  int next_id = 0;

  Vehicle& ev() { return vehicles[ev_index]; }
  const Vehicle& ev() const { return vehicles[ev_index]; }
  bool has_ev() const { return ev_index >= 0; }
};

collision::OrientedBox box_of(const VehicleState& s);

// Ring angle of a position (in [0, 2pi)).
double ring_angle(Vec2 p);

// Advance a rail-bound vehicle along its lane path: legs feed the ring, the
// ring feeds the vehicle's exit leg, lateral lane-change offsets decay at the
// blend rate. Exit-leg travel may extend past the leg end (straight on).
void advance_rail(const RoundaboutLayout& layout, Vehicle& v, double accel, double dt);

// Pose of a rail vehicle, lateral offset included.
void rail_pose(const RoundaboutLayout& layout, const Vehicle& v, Vec2& pos, double& heading);

// Lookahead point `dist` meters ahead along a vehicle's path (entry leg ->
// target ring lane -> onward around the ring). Used by the pure-pursuit
// tracker and by trajectory prediction.
Vec2 lookahead_point(const RoundaboutLayout& layout, const Vehicle& v, double dist);

// Arc distance (meters, >= 0) from `from` to `to` measured forward along
// `from`'s travel direction on the ring; vehicles on legs are projected to
// their attachment angle.
double arc_distance_ahead(const RoundaboutLayout& layout, const Vehicle& from, const Vehicle& to);

// Distance from a vehicle's position to its lane_coord centerline point.
double lateral_offset(const RoundaboutLayout& layout, const Vehicle& v);

// Nearest vehicle ahead of `v` in the given ring lane (target-lane match),
// or nullopt. Optionally restricted to a max arc distance.
std::optional<int> nearest_ahead_in_lane(const WorldState& w, const Vehicle& v, LaneId lane,
                                         double max_arc = 1e9);
// Nearest vehicle ahead of `v` in either ring lane.
std::optional<int> nearest_ahead_any_lane(const WorldState& w, const Vehicle& v,
                                          double max_arc = 1e9);

// Graph node a vehicle currently maps to (nearest port on its lane for ring
// vehicles, the leg node for leg vehicles).
int node_of(const WorldState& w, const Vehicle& v);

// Bumper-to-bumper gap given an arc (or straight-line) center distance.
inline double bumper_gap(double center_dist, const VehicleState& a, const VehicleState& b) {
  return center_dist - 0.5 * a.length - 0.5 * b.length;
}

}  // namespace kdqn::sim

#pragma once

#include "kdqn/world.hpp"

namespace kdqn::dynamics {

using world::LaneCoord;
using world::Vec2;

enum class Role : uint8_t { EV = 0, HDV = 1 };

struct VehicleState {
  Vec2 position;
  double speed = 0.0;    // m/s, never negative
  double heading = 0.0;  // radians in [-pi, pi)
  LaneCoord lane_coord;
  double length = 5.0;
  double width = 2.0;
  Role role = Role::HDV;
};

struct ControlLimits {
  double a_min = -5.0;
  double a_max = 3.0;
  double steer_min = -0.6;
  double steer_max = 0.6;
};

struct ControlInput {
  double accel = 0.0;  // u, m/s^2
  double steer = 0.0;  // delta, radians
};

struct IdmParams {
  double a_max = 3.0;  // maximum acceleration
  double v_e = 25.0;   // expected speed
  double h_e = 4.0;    // expected space (jam gap)
  double T_e = 1.5;    // expected time gap
  double c = 3.0;      // comfortable deceleration
  bool ego_speed_variant = false;  // use ego speed instead of leader speed in the quartic term
};

constexpr double kWheelbase = 2.5;
constexpr double kEmergencyBrake = -5.0;

// Planar bicycle update: p += v*(cos h, sin h)*dt, v += u*dt (floored at 0),
// h += (v/L)*tan(delta)*dt, renormalized.
VehicleState step_kinematics(const VehicleState& state, const ControlInput& input, double dt,
                             double wheelbase = kWheelbase);

// Desired gap h* = h_e + v*T_e - v*dv/(2*sqrt(a_max*c)), floored at h_e.
double desired_gap(double v_ego, double dv, const IdmParams& params);

// IDM car-following acceleration. `gap` is the real bumper gap h; non-positive
// gaps return the emergency-brake sentinel.
double idm_acceleration(const VehicleState& ego, const VehicleState& leader, double gap,
                        const IdmParams& params);

// Pure-pursuit steering toward a lookahead point, clamped to limits.
double pure_pursuit_steer(const VehicleState& state, Vec2 lookahead_point,
                          const ControlLimits& limits = {}, double wheelbase = kWheelbase);

// Pursuit distance: 5 m for plain lane keeping, stretched with speed while a
// lateral offset remains so lane changes sweep at roughly 4v/l ~ 3.3 m/s
// instead of whipping across.
inline double lane_lookahead(double speed, double lat_offset = 0.0) {
  const double stretch = std::max(0.0, 1.2 * speed - 5.0);
  return 5.0 + stretch * std::min(1.0, std::abs(lat_offset));
}

}  // namespace kdqn::dynamics

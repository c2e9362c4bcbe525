#include "kdqn/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace kdqn::dynamics {

VehicleState step_kinematics(const VehicleState& state, const ControlInput& input, double dt,
                             double wheelbase) {
  VehicleState next = state;
  next.position.x += state.speed * std::cos(state.heading) * dt;
  next.position.y += state.speed * std::sin(state.heading) * dt;
  next.speed = std::max(0.0, state.speed + input.accel * dt);
  next.heading =
      world::wrap_angle(state.heading + state.speed / wheelbase * std::tan(input.steer) * dt);
  return next;
}

double desired_gap(double v_ego, double dv, const IdmParams& params) {
  const double h =
      params.h_e + v_ego * params.T_e - v_ego * dv / (2.0 * std::sqrt(params.a_max * params.c));
  return std::max(h, params.h_e);
}

double idm_acceleration(const VehicleState& ego, const VehicleState& leader, double gap,
                        const IdmParams& params) {
  if (gap <= 0.0) return kEmergencyBrake;
  const double dv = ego.speed - leader.speed;
  const double h_star = desired_gap(ego.speed, dv, params);
  // The quartic term uses the leader's speed; the canonical ego-speed form
  // sits behind ego_speed_variant.
  const double v_ratio = (params.ego_speed_variant ? ego.speed : leader.speed) / params.v_e;
  const double a =
      params.a_max * (1.0 - std::pow(v_ratio, 4.0) - (h_star / gap) * (h_star / gap));
  return std::clamp(a, kEmergencyBrake, params.a_max);
}

double pure_pursuit_steer(const VehicleState& state, Vec2 lookahead_point,
                          const ControlLimits& limits, double wheelbase) {
  const Vec2 d = lookahead_point - state.position;
  const double dist = world::norm(d);
  if (dist < 1e-9) return 0.0;
  const double alpha = world::angle_diff(std::atan2(d.y, d.x), state.heading);
  const double curvature = 2.0 * std::sin(alpha) / dist;
  return std::clamp(std::atan(wheelbase * curvature), limits.steer_min, limits.steer_max);
}

}  // namespace kdqn::dynamics

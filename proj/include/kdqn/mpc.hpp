#pragma once

#include <vector>

#include "kdqn/sim_state.hpp"

namespace kdqn::mpc {

using sim::Vehicle;
using sim::WorldState;
using world::Vec2;

struct MpcConfig {
  int N_p = 10;          // prediction horizon steps
  int N_c = 5;           // control horizon steps
  double lambda = 0.1;   // acceleration penalty weight
  double D_safe = 10.0;
  double v_min = 0.0;
  double v_max = 25.0;
  double a_min = -5.0;
  double a_max = 3.0;
  double steer_min = -0.6;
  double steer_max = 0.6;
  int iterations = 40;
  double grad_step = 1e-3;
  double tolerance = 1e-3;
  double dt = 0.3;             // rollout sampling time
  bool literal_gap_term = false;  // penalize |d - D_safe| on both sides
  double guard_margin = 2.5;   // braking-distance buffer beyond D_safe
  double guard_decel_frac = 0.7;  // fraction of |a_min| the guard plans with
};

struct ControlPlan {
  std::vector<double> u;      // accel sequence, length N_c (effective, bounded)
  std::vector<double> steer;  // steering sequence from the lane tracker
  double cost = 0.0;          // achieved J_c
  bool feasible = true;
  int iterations = 0;
};

struct PidGains {
  double kp = 1.2;
  double ki = 0.1;
  double kd = 0.05;
};

struct PidState {
  double integral = 0.0;
  double prev_error = 0.0;
  bool has_prev = false;
};

// Predicted NV positions sampled at the rollout cadence (constant-speed lane
// followers), plus lane tags for the same-lane gap scoping.
struct NvPrediction {
  std::vector<Vec2> positions;  // length N_p
  world::LaneId lane;
  double speed = 0.0;
};

std::vector<NvPrediction> predict_nvs(const WorldState& w, const MpcConfig& cfg);

// J_c = sum (v - v*)^2 + sum_k sum_i hinge(||p_nv - p_ev|| - D_safe)^2
//       + lambda * sum u^2, evaluated along a fresh rollout of the plan.
double plan_cost(const ControlPlan& plan, const WorldState& w,
                 const std::vector<NvPrediction>& nvs, double v_target, const MpcConfig& cfg);

// Projected-gradient shooting from a zero-control warm start. Never throws;
// infeasibility (a rollout state stuck inside the hard distance band) is a
// flag for the PID fallback.
ControlPlan solve(const WorldState& w, double v_target, const MpcConfig& cfg);

double pid_fallback(double v, double v_target, const PidGains& gains, PidState& state, double dt,
                    const MpcConfig& cfg);

struct TrackResult {
  dynamics::ControlInput input;
  bool used_pid = false;
  double cost = 0.0;
  bool feasible = true;
};

// Control for the next sim substep: steering from the pure-pursuit lane
// tracker, acceleration from solve() or the PID fallback.
TrackResult track(const WorldState& w, double v_target, const MpcConfig& cfg, PidState& pid,
                  double dt_sim);

}  // namespace kdqn::mpc

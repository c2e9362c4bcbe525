#include "kdqn/mpc.hpp"

#include <algorithm>
#include <cmath>

namespace kdqn::mpc {

namespace {

struct RolloutResult {
  double cost = 0.0;
  bool feasible = true;
  std::vector<double> u_eff;
  std::vector<double> steer;
};

bool same_lane(const world::LaneId& nv_lane, const world::LaneId& ev_lane) {
  return nv_lane == ev_lane;
}

// Forward-half-plane test relative to the EV's heading.
bool frontal(const Vec2& ev_pos, double ev_heading, const Vec2& nv_pos) {
  const Vec2 d = nv_pos - ev_pos;
  return d.x * std::cos(ev_heading) + d.y * std::sin(ev_heading) > 0.0;
}

RolloutResult rollout(const WorldState& w, const std::vector<double>& u_cmd,
                      const std::vector<NvPrediction>& nvs, double v_target,
                      const MpcConfig& cfg, bool record) {
  RolloutResult res;
  if (record) {
    res.u_eff.assign(cfg.N_c, 0.0);
    res.steer.assign(cfg.N_c, 0.0);
  }
  Vehicle ev = w.ev();
  const world::LaneId ev_lane = ev.target_lane;

  for (int k = 0; k < cfg.N_p; ++k) {
    const double v = ev.state.speed;
    const double verr = v - v_target;
    res.cost += verr * verr;

    for (const NvPrediction& nv : nvs) {
      const Vec2 p = nv.positions[std::min<size_t>(k, nv.positions.size() - 1)];
      const double d = world::distance(p, ev.state.position);
      if (cfg.literal_gap_term) {
        const double e = d - cfg.D_safe;
        res.cost += e * e;
      } else if (same_lane(nv.lane, ev_lane) && frontal(ev.state.position, ev.state.heading, p) &&
                 d < cfg.D_safe) {
        const double e = d - cfg.D_safe;
        res.cost += e * e;
        // Infeasible only when the hard constraint is already violated at the
        // initial state: the problem itself is ill-posed there and the PID
        // fallback takes over. A future dip just means the plan brakes.
        if (k == 0) res.feasible = false;
      }
    }

    double u = k < cfg.N_c ? u_cmd[k] : u_cmd[cfg.N_c - 1];
    if (k < cfg.N_c) res.cost += cfg.lambda * u * u;

    // Constraint projection: box, speed bounds, then the braking-distance
    // guard against same-lane frontal vehicles.
    u = std::clamp(u, cfg.a_min, cfg.a_max);
    u = std::clamp(u, (cfg.v_min - v) / cfg.dt, (cfg.v_max - v) / cfg.dt);
    for (const NvPrediction& nv : nvs) {
      const Vec2 p = nv.positions[std::min<size_t>(k, nv.positions.size() - 1)];
      if (!same_lane(nv.lane, ev_lane) || !frontal(ev.state.position, ev.state.heading, p))
        continue;
      const double d = world::distance(p, ev.state.position);
      const double slack = d - cfg.D_safe - cfg.guard_margin;
      // Derated braking keeps control authority in reserve for the
      // discretization error of riding the curve.
      const double b_guard = cfg.guard_decel_frac * -cfg.a_min;
      const double v_allowed =
          nv.speed + (slack > 0.0 ? std::sqrt(2.0 * b_guard * slack) : 0.0);
      u = std::min(u, (v_allowed - v) / cfg.dt);
    }
    u = std::clamp(u, cfg.a_min, cfg.a_max);

    // Steering from the geometric lane tracker. Vehicles still on a leg keep
    // projecting onto it; lookahead_point continues onto the target ring lane.
    const world::LaneId proj_lane =
        ev.entered && ev.target_lane.is_ring() ? ev.target_lane : ev.state.lane_coord.lane;
    ev.state.lane_coord = world::project_to_lane(w.layout, proj_lane, ev.state.position);
    const Vec2 look = sim::lookahead_point(
        w.layout, ev,
        dynamics::lane_lookahead(ev.state.speed, sim::lateral_offset(w.layout, ev)));
    dynamics::ControlLimits lims;
    lims.steer_min = cfg.steer_min;
    lims.steer_max = cfg.steer_max;
    const double steer = dynamics::pure_pursuit_steer(ev.state, look, lims);

    if (record && k < cfg.N_c) {
      res.u_eff[k] = u;
      res.steer[k] = steer;
    }
    ev.state = dynamics::step_kinematics(ev.state, {u, steer}, cfg.dt);
  }
  return res;
}

}  // namespace

std::vector<NvPrediction> predict_nvs(const WorldState& w, const MpcConfig& cfg) {
  std::vector<NvPrediction> out;
  const Vehicle& ev = w.ev();
  for (const Vehicle& v : w.vehicles) {
    if (v.id == ev.id || v.exited) continue;
    if (world::distance(v.state.position, ev.state.position) > 60.0) continue;
    NvPrediction p;
    p.lane = v.state.lane_coord.lane;
    p.speed = v.state.speed;
    p.positions.reserve(cfg.N_p);
    Vehicle copy = v;
    p.positions.push_back(copy.state.position);
    for (int k = 1; k < cfg.N_p; ++k) {
      sim::advance_rail(w.layout, copy, 0.0, cfg.dt);
      p.positions.push_back(copy.state.position);
    }
    out.push_back(std::move(p));
  }
  return out;
}

double plan_cost(const ControlPlan& plan, const WorldState& w,
                 const std::vector<NvPrediction>& nvs, double v_target, const MpcConfig& cfg) {
  return rollout(w, plan.u, nvs, v_target, cfg, false).cost;
}

ControlPlan solve(const WorldState& w, double v_target, const MpcConfig& cfg) {
  const std::vector<NvPrediction> nvs = predict_nvs(w, cfg);
  std::vector<double> u(cfg.N_c, 0.0);  // zero-control warm start
  double J = rollout(w, u, nvs, v_target, cfg, false).cost;

  double step = 1.0;
  int iterations_used = 0;
  std::vector<double> grad(cfg.N_c, 0.0);
  std::vector<double> cand(cfg.N_c, 0.0);
  for (int it = 0; it < cfg.iterations; ++it) {
    ++iterations_used;
    for (int i = 0; i < cfg.N_c; ++i) {
      cand = u;
      cand[i] += cfg.grad_step;
      const double Jp = rollout(w, cand, nvs, v_target, cfg, false).cost;
      grad[i] = (Jp - J) / cfg.grad_step;
    }
    double eta = step;
    bool improved = false;
    for (int trial = 0; trial < 8; ++trial) {
      for (int i = 0; i < cfg.N_c; ++i)
        cand[i] = std::clamp(u[i] - eta * grad[i], cfg.a_min, cfg.a_max);
      const double Jc = rollout(w, cand, nvs, v_target, cfg, false).cost;
      if (Jc < J - 1e-12) {
        const double gain = J - Jc;
        u = cand;
        J = Jc;
        improved = true;
        step = std::min(eta * 1.5, 4.0);
        if (gain < cfg.tolerance) it = cfg.iterations;  // converged
        break;
      }
      eta *= 0.5;
    }
    if (!improved) {
      step *= 0.5;
      if (step < 1e-6) break;
    }
  }

  const RolloutResult final = rollout(w, u, nvs, v_target, cfg, true);
  ControlPlan plan;
  plan.u = final.u_eff;
  plan.steer = final.steer;
  plan.cost = J;
  plan.feasible = final.feasible;
  plan.iterations = iterations_used;
  return plan;
}

double pid_fallback(double v, double v_target, const PidGains& gains, PidState& state, double dt,
                    const MpcConfig& cfg) {
  const double e = v_target - v;
  state.integral = std::clamp(state.integral + e * dt, -3.0, 3.0);
  const double de = state.has_prev ? (e - state.prev_error) / dt : 0.0;
  state.prev_error = e;
  state.has_prev = true;
  const double u = gains.kp * e + gains.ki * state.integral + gains.kd * de;
  return std::clamp(u, cfg.a_min, cfg.a_max);
}

TrackResult track(const WorldState& w, double v_target, const MpcConfig& cfg, PidState& pid,
                  double dt_sim) {
  const Vehicle& ev = w.ev();
  TrackResult res;

  const Vec2 look = sim::lookahead_point(
        w.layout, ev,
        dynamics::lane_lookahead(ev.state.speed, sim::lateral_offset(w.layout, ev)));
  dynamics::ControlLimits lims;
  lims.steer_min = cfg.steer_min;
  lims.steer_max = cfg.steer_max;
  res.input.steer = dynamics::pure_pursuit_steer(ev.state, look, lims);

  const ControlPlan plan = solve(w, v_target, cfg);
  res.cost = plan.cost;
  res.feasible = plan.feasible;
  if (plan.feasible) {
    res.input.accel = plan.u.front();
  } else {
    res.input.accel = pid_fallback(ev.state.speed, v_target, PidGains{}, pid, dt_sim, cfg);
    res.used_pid = true;
  }
  res.input.accel = std::clamp(res.input.accel, cfg.a_min, cfg.a_max);
  return res;
}

}  // namespace kdqn::mpc

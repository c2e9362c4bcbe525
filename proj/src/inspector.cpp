#include "kdqn/inspector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace kdqn::inspector {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

world::LaneId action_target_lane(const WorldState& w, Action a) {
  const Vehicle& ev = w.ev();
  world::LaneId lane = ev.target_lane;
  if (!lane.is_ring()) return lane;
  if (a == Action::TurnRight && lane.kind == world::LaneKind::Inner) return world::outer_lane();
  if (a == Action::TurnLeft && lane.kind == world::LaneKind::Outer) return world::inner_lane();
  return lane;
}

double action_v_target(const WorldState& w, Action a, const InspectorConfig& cfg) {
  const double v = w.ev().state.speed;
  switch (a) {
    case Action::Faster: return std::min(v + cfg.speed_delta, cfg.v_max);
    case Action::Slower: return std::max(v - cfg.speed_delta, 0.0);
    default: return v;
  }
}

// Rail stand-in for the EV: projected onto the lane the action tracks, with
// the current lateral offset carried over so predictions start from the real
// pose.
Vehicle virtual_ev(const WorldState& w, world::LaneId lane) {
  Vehicle v = w.ev();
  v.target_exit_port = -1;  // predictions do not leave the ring
  if (v.state.lane_coord.lane.kind == world::LaneKind::EntryLeg) {
    v.target_lane = lane.is_ring() ? lane : v.target_lane;
    return v;
  }
  const world::LaneCoord proj = world::project_to_lane(w.layout, lane, v.state.position);
  const double r_center = w.layout.ring_radius(lane.kind);
  v.lat_offset = world::norm(v.state.position) - r_center;
  v.state.lane_coord = proj;
  v.target_lane = lane;
  return v;
}

}  // namespace

bool action_feasible(const WorldState& w, Action a) {
  const Vehicle& ev = w.ev();
  if (a == Action::TurnLeft || a == Action::TurnRight) {
    if (!ev.entered || !ev.target_lane.is_ring()) return false;
    if (a == Action::TurnLeft && ev.target_lane.kind == world::LaneKind::Inner) return false;
    if (a == Action::TurnRight && ev.target_lane.kind == world::LaneKind::Outer) return false;
  }
  return true;
}

std::vector<Action> feasible_actions(const WorldState& w) {
  std::vector<Action> out;
  for (Action a : kAllActions)
    if (action_feasible(w, a)) out.push_back(a);
  return out;
}

std::vector<PredictedTrajectory> predict_trajectories(const WorldState& w,
                                                      const InspectorConfig& cfg) {
  if (cfg.T_n < 1) throw std::invalid_argument("T_n must be >= 1");
  std::vector<PredictedTrajectory> out;
  for (const Vehicle& v : w.vehicles) {
    if (v.id == w.ev().id || v.exited) continue;
    PredictedTrajectory traj;
    traj.vehicle_id = v.id;
    traj.points.reserve(cfg.T_n);
    Vehicle copy = v;
    for (int k = 0; k < cfg.T_n; ++k) {
      sim::advance_rail(w.layout, copy, 0.0, cfg.dt);
      traj.points.push_back({copy.state.position, copy.state.heading});
    }
    out.push_back(std::move(traj));
  }
  return out;
}

PredictedTrajectory predict_ev(const WorldState& w, Action a, const InspectorConfig& cfg) {
  const world::LaneId lane = action_target_lane(w, a);
  Vehicle ev = virtual_ev(w, lane);
  const double v_target = action_v_target(w, a, cfg);
  const double a_max = 3.0, a_min = -5.0;

  PredictedTrajectory traj;
  traj.vehicle_id = w.ev().id;
  traj.points.reserve(cfg.T_n);
  for (int k = 0; k < cfg.T_n; ++k) {
    double accel = 0.0;
    const double dv = v_target - ev.state.speed;
    if (dv > 1e-9)
      accel = std::min(a_max, dv / cfg.dt);
    else if (dv < -1e-9)
      accel = std::max(a_min, dv / cfg.dt);
    sim::advance_rail(w.layout, ev, accel, cfg.dt);
    traj.points.push_back({ev.state.position, ev.state.heading});
  }
  return traj;
}

bool overlap(const PredictedTrajectory& a, const PredictedTrajectory& b, double len_a,
             double wid_a, double len_b, double wid_b) {
  if (a.points.size() != b.points.size())
    throw std::invalid_argument("trajectory length mismatch");
  for (size_t k = 0; k < a.points.size(); ++k) {
    const collision::OrientedBox ba{a.points[k].position, a.points[k].heading, len_a, wid_a};
    const collision::OrientedBox bb{b.points[k].position, b.points[k].heading, len_b, wid_b};
    if (collision::boxes_overlap(ba, bb)) return true;
  }
  return false;
}

double safety_margin(const WorldState& w, Action a, const InspectorConfig& cfg) {
  const Vehicle& ev = w.ev();
  const PredictedTrajectory ev_traj = predict_ev(w, a, cfg);
  double margin = kInf;
  for (const Vehicle& nv : w.vehicles) {
    if (nv.id == ev.id || nv.exited) continue;
    if (world::distance(nv.state.position, ev.state.position) > cfg.sensing_range) continue;
    Vehicle copy = nv;
    for (int k = 0; k < cfg.T_n; ++k) {
      sim::advance_rail(w.layout, copy, 0.0, cfg.dt);
      const double a_ev = std::atan2(ev_traj.points[k].position.y, ev_traj.points[k].position.x);
      const double a_nv = std::atan2(copy.state.position.y, copy.state.position.x);
      margin = std::min(margin, std::abs(world::angle_diff(a_ev, a_nv)));
    }
  }
  return margin;
}

PriorityList priority_list(const WorldState& w, const InspectorConfig& cfg,
                           world::LaneKind preferred_lane) {
  const Vehicle& ev = w.ev();
  PriorityList list;
  for (Action a : feasible_actions(w)) {
    // Safety term.
    const double margin = safety_margin(w, a, cfg);
    const double margin_norm = std::min(margin, M_PI) / M_PI;
    // Progress: predicted path length over the horizon.
    const PredictedTrajectory traj = predict_ev(w, a, cfg);
    double gain = 0.0;
    Vec2 prev = ev.state.position;
    for (const TrajPoint& p : traj.points) {
      gain += world::distance(p.position, prev);
      prev = p.position;
    }
    const double progress_norm = gain / (cfg.v_max * cfg.T_n * cfg.dt);
    // Lane preference.
    const world::LaneId lane = action_target_lane(w, a);
    const double lane_bonus = (lane.is_ring() && lane.kind == preferred_lane) ? 1.0 : 0.0;
    // Comfort: commanded speed change.
    const double dv_cmd = std::abs(action_v_target(w, a, cfg) - ev.state.speed);
    const double comfort = -dv_cmd / 2.0;

    const double score = cfg.coeffs.safety * margin_norm + cfg.coeffs.progress * progress_norm +
                         cfg.coeffs.lane_pref * lane_bonus + cfg.coeffs.comfort * comfort;
    list.entries.push_back({a, score});
  }
  std::stable_sort(list.entries.begin(), list.entries.end(),
                   [](const ScoredAction& x, const ScoredAction& y) { return x.score > y.score; });
  return list;
}

void promote(PriorityList& list, Action a) {
  auto it = std::find_if(list.entries.begin(), list.entries.end(),
                         [&](const ScoredAction& s) { return s.action == a; });
  if (it == list.entries.end()) return;
  std::rotate(list.entries.begin(), it, it + 1);
}

double overlap_gate(const InspectorConfig& cfg, double v_ev, double v_nv) {
  return cfg.D_safe + (v_ev + v_nv) * cfg.T_n * cfg.dt;
}

ExecuteResult execute(const PriorityList& list, const WorldState& w, const InspectorConfig& cfg) {
  if (list.entries.empty()) throw std::invalid_argument("empty priority list");
  const Vehicle& ev = w.ev();
  ExecuteResult result;

  // Same-lane means the lane the EV currently occupies/tracks, regardless of
  // the candidate action's target lane.
  const world::LaneId ev_lane =
      ev.target_lane.is_ring() ? ev.target_lane : ev.state.lane_coord.lane;
  for (const ScoredAction& cand : list.entries) {
    // Lane changes additionally need a workable closing time to the target
    // lane's neighbors; constant-speed overlap alone misses hard-braking
    // leaders.
    if (cand.action == Action::TurnLeft || cand.action == Action::TurnRight) {
      const world::LaneId target = action_target_lane(w, cand.action);
      bool ttc_reject = false;
      if (auto lead = sim::nearest_ahead_in_lane(w, ev, target, 80.0)) {
        const Vehicle& fv = w.vehicles[*lead];
        const double gap = sim::bumper_gap(sim::arc_distance_ahead(w.layout, ev, fv), ev.state,
                                           fv.state);
        const double closing = ev.state.speed - fv.state.speed;
        if (gap <= 0.0 || (closing > 0.0 && gap / closing < 3.5)) ttc_reject = true;
      }
      for (const Vehicle& nv : w.vehicles) {  // rear approach in the target lane
        if (nv.id == ev.id || nv.exited || !(nv.state.lane_coord.lane == target)) continue;
        const double gap = sim::bumper_gap(sim::arc_distance_ahead(w.layout, nv, ev), nv.state,
                                           ev.state);
        if (gap > 40.0 || gap <= 0.0) continue;
        const double closing = nv.state.speed - ev.state.speed;
        if (closing > 0.0 && gap / closing < 2.0) ttc_reject = true;
      }
      if (ttc_reject) {
        result.rejections.push_back({cand.action, -1, "target_lane_ttc"});
        continue;
      }
    }
    const PredictedTrajectory ev_traj = predict_ev(w, cand.action, cfg);
    bool rejected = false;
    for (const Vehicle& nv : w.vehicles) {
      if (nv.id == ev.id || nv.exited) continue;
      if (world::distance(nv.state.position, ev.state.position) >
          overlap_gate(cfg, ev.state.speed, nv.state.speed))
        continue;
      PredictedTrajectory nv_traj;
      nv_traj.vehicle_id = nv.id;
      Vehicle copy = nv;
      for (int k = 0; k < cfg.T_n; ++k) {
        sim::advance_rail(w.layout, copy, 0.0, cfg.dt);
        nv_traj.points.push_back({copy.state.position, copy.state.heading});
      }
      // Candidate checks run with slightly inflated footprints: the
      // constant-speed NV model carries a little error the margin absorbs.
      const double m = cfg.overlap_margin;
      if (!overlap(ev_traj, nv_traj, ev.state.length + m, ev.state.width + m,
                   nv.state.length + m, nv.state.width + m))
        continue;
      const bool same_lane = nv.state.lane_coord.lane == ev_lane ||
                             nv.state.lane_coord.lane == ev.state.lane_coord.lane;
      bool in_front;
      if (nv.state.lane_coord.lane == ev.state.lane_coord.lane &&
          !ev.state.lane_coord.lane.is_ring()) {
        in_front = nv.state.lane_coord.s > ev.state.lane_coord.s;  // shared leg
      } else {
        in_front = sim::arc_distance_ahead(w.layout, ev, nv) <
                   sim::arc_distance_ahead(w.layout, nv, ev);
      }
      if (same_lane && in_front) {
        result.action = cand.action;
        result.mode = Mode::IdmFollow;
        result.rejections.push_back({cand.action, nv.id, "same_lane_front"});
        return result;
      }
      result.rejections.push_back({cand.action, nv.id, "adjacent"});
      rejected = true;
      break;
    }
    if (!rejected) {
      result.action = cand.action;
      result.mode = Mode::Direct;
      return result;
    }
  }
  // Exhausted without a safe candidate.
  result.action = list.entries.front().action;
  result.mode = Mode::IdmFollow;
  return result;
}

}  // namespace kdqn::inspector

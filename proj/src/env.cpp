#include "kdqn/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace kdqn::env {

using json = nlohmann::ordered_json;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double forward_angle(double from, double to) {
  double d = std::fmod(to - from, kTwoPi);
  if (d < 0) d += kTwoPi;
  return d;
}

double jitter(CounterRng& rng, double range) { return range * (2.0 * rng.uniform() - 1.0); }

// Deceleration needed to stop about one meter short of a hold point. The
// leader-speed IDM form barely brakes for stationary targets, so holds are
// floored by this requirement once it becomes substantial. Aims two meters
// short of contact.
double approach_stop_accel(double v, double bumper_gap) {
  const double a_req = v * v / (2.0 * std::max(bumper_gap - 2.0, 0.3));
  return a_req > 1.0 ? -a_req : std::numeric_limits<double>::infinity();
}

// Same idea against a moving leader: shed the closing speed before the gap
// shrinks to a three-meter buffer.
double relative_stop_accel(double v_ego, double v_lead, double bumper_gap) {
  const double closing = v_ego - v_lead;
  if (closing <= 0.0) return std::numeric_limits<double>::infinity();
  const double a_req = closing * closing / (2.0 * std::max(bumper_gap - 3.0, 0.3));
  return a_req > 1.0 ? -a_req : std::numeric_limits<double>::infinity();
}

std::string lane_str(const world::LaneId& l) {
  switch (l.kind) {
    case world::LaneKind::Inner: return "inner";
    case world::LaneKind::Outer: return "outer";
    case world::LaneKind::EntryLeg: return "entry" + std::to_string(l.port);
    case world::LaneKind::ExitLeg: return "exit" + std::to_string(l.port);
  }
  return "?";
}

}  // namespace

Scenario Scenario::normal(uint64_t seed) {
  Scenario s;
  s.mode = Mode::Normal;
  s.n_initial_hdvs = 6;
  s.hdv_arrival_rate = 0.1;
  s.seed = seed;
  return s;
}

Scenario Scenario::hard(uint64_t seed) {
  Scenario s;
  s.mode = Mode::Hard;
  s.n_initial_hdvs = 10;
  s.hdv_arrival_rate = 0.2;
  s.seed = seed;
  return s;
}

Observation observe(const WorldState& w, int K, double sensing_range, double v_max) {
  Observation obs(5 + 6 * K, 0.0);
  const Vehicle& ev = w.ev();
  const double extent = w.layout.world_extent();
  auto clamp1 = [](double x) { return std::clamp(x, -1.0, 1.0); };

  obs[0] = clamp1(ev.state.position.x / extent);
  obs[1] = clamp1(ev.state.position.y / extent);
  obs[2] = clamp1(ev.state.speed / v_max);
  obs[3] = std::cos(ev.state.heading);
  obs[4] = std::sin(ev.state.heading);

  struct Near {
    double dist;
    int id;
    const Vehicle* v;
  };
  std::vector<Near> near;
  for (const Vehicle& v : w.vehicles) {
    if (v.id == ev.id || v.exited) continue;
    const double d = world::distance(v.state.position, ev.state.position);
    if (d <= sensing_range) near.push_back({d, v.id, &v});
  }
  std::sort(near.begin(), near.end(), [](const Near& a, const Near& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.id < b.id;
  });

  const double ch = std::cos(-ev.state.heading);
  const double sh = std::sin(-ev.state.heading);
  for (int k = 0; k < K && k < static_cast<int>(near.size()); ++k) {
    const Vehicle& nv = *near[k].v;
    const world::Vec2 d = nv.state.position - ev.state.position;
    const double dx = d.x * ch - d.y * sh;  // rotate into the ego frame
    const double dy = d.x * sh + d.y * ch;
    const double dh = nv.state.heading - ev.state.heading;
    const int base = 5 + 6 * k;
    obs[base + 0] = 1.0;
    obs[base + 1] = clamp1(dx / sensing_range);
    obs[base + 2] = clamp1(dy / sensing_range);
    obs[base + 3] = clamp1((nv.state.speed - ev.state.speed) / v_max);
    obs[base + 4] = std::cos(dh);
    obs[base + 5] = std::sin(dh);
  }
  return obs;
}

std::vector<std::pair<int, int>> detect_collisions(const WorldState& w) {
  std::vector<std::pair<int, int>> pairs;
  for (size_t i = 0; i < w.vehicles.size(); ++i) {
    if (w.vehicles[i].exited) continue;
    for (size_t j = i + 1; j < w.vehicles.size(); ++j) {
      if (w.vehicles[j].exited) continue;
      if (collision::boxes_overlap(sim::box_of(w.vehicles[i].state),
                                   sim::box_of(w.vehicles[j].state)))
        pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
  }
  return pairs;
}

bool entry_zone_occupied(const WorldState& w, int port) {
  const double entry_a = w.layout.entry_angle(port);
  const double r_center = w.layout.ring_radius(world::LaneKind::Outer);
  for (const Vehicle& v : w.vehicles) {
    if (v.exited) continue;
    // A vehicle still far out on the same entry leg does not block it.
    if (v.state.lane_coord.lane.kind == world::LaneKind::EntryLeg &&
        v.state.lane_coord.lane.port == port)
      continue;
    const double r = world::norm(v.state.position);
    if (std::abs(r - r_center) > 2.5) continue;
    const double a = sim::ring_angle(v.state.position);
    const double d = world::angle_diff(a, entry_a);
    if (d >= -0.35 && d <= 0.10) return true;
  }
  return false;
}

// Arrival-time gate for the EV's merge: true while any circulating vehicle
// would reach the entry within the clearance window.
bool entry_gate_blocked(const WorldState& w, int port, double window_s) {
  const double entry_a = w.layout.entry_angle(port);
  for (const Vehicle& v : w.vehicles) {
    if (v.exited || !v.state.lane_coord.lane.is_ring()) continue;
    const double r = w.layout.ring_radius(v.state.lane_coord.lane.kind);
    const double a = v.state.lane_coord.s / r;
    double behind = std::fmod(entry_a - a, 2.0 * M_PI);
    if (behind < 0) behind += 2.0 * M_PI;
    const double arc = behind * r;
    const double ahead = (2.0 * M_PI) * r - arc;
    // Slow traffic parked in the landing zone blocks just like an arrival.
    if (ahead < 12.0 && v.state.speed < 8.0) return true;
    if (arc > 75.0) continue;
    if (arc < 2.0 || arc / std::max(v.state.speed, 0.1) < window_s) return true;
  }
  return false;
}

std::vector<double> apply_hdv_rules(WorldState& w) {
  std::vector<double> accels(w.vehicles.size(), 0.0);
  const double L = w.layout.entry_leg_length;

  for (size_t i = 0; i < w.vehicles.size(); ++i) {
    Vehicle& v = w.vehicles[i];
    if (static_cast<int>(i) == w.ev_index) continue;
    v.holding_at_entry = false;
    const dynamics::IdmParams& idm = v.idm;
    const auto& c = v.state.lane_coord;

    auto idm_vs = [&](const Vehicle& leader, double center_gap) {
      const double bumper = sim::bumper_gap(center_gap, v.state, leader.state);
      return std::min(dynamics::idm_acceleration(v.state, leader.state, bumper, idm),
                      relative_stop_accel(v.state.speed, leader.state.speed, bumper));
    };
    auto free_road = [&]() {
      const double ratio = v.state.speed / idm.v_e;
      return std::clamp(idm.a_max * (1.0 - std::pow(ratio, 4.0)), -idm.c, idm.a_max);
    };

    double a = free_road();

    if (c.lane.kind == world::LaneKind::EntryLeg) {
      if (auto lead = sim::nearest_ahead_in_lane(w, v, c.lane, 100.0)) {
        const Vehicle& fv = w.vehicles[*lead];
        a = std::min(a, idm_vs(fv, fv.state.lane_coord.s - c.s));
      }
      // Merge speed cap over the junction approach.
      if (L - c.s < 26.0) a = std::min(a, (8.0 - v.state.speed) / 0.1);
      // Yield until committed at the decision point: the hold target keeps
      // the bumper well clear of the ring's swept corridor.
      if (!v.committed_entry) {
        const bool blocked =
            entry_zone_occupied(w, c.lane.port) || entry_gate_blocked(w, c.lane.port, 2.5);
        if (c.s >= L - 16.0 && !blocked) {
          v.committed_entry = true;
        } else if (blocked) {
          Vehicle stop = v;
          stop.state.speed = 0.0;
          const double center_gap = (L - 3.0) - c.s;
          a = std::min(a, idm_vs(stop, center_gap));
          a = std::min(a, approach_stop_accel(v.state.speed,
                                              sim::bumper_gap(center_gap, v.state, stop.state)));
          v.holding_at_entry = true;
        }
      }
      a = std::clamp(a, -5.0, idm.a_max);
    } else if (c.lane.is_ring()) {
      if (c.lane.kind == world::LaneKind::Inner) {
        // Match the nearest vehicle ahead, even across lanes.
        if (auto ahead = sim::nearest_ahead_any_lane(w, v, 100.0)) {
          const Vehicle& fv = w.vehicles[*ahead];
          if (fv.state.lane_coord.lane.kind == world::LaneKind::Inner) {
            a = std::min(a, idm_vs(fv, sim::arc_distance_ahead(w.layout, v, fv)));
          } else {
            a = std::min(a, std::clamp(0.8 * (fv.state.speed - v.state.speed), -idm.c, idm.a_max));
          }
        }
        if (auto lead = sim::nearest_ahead_in_lane(w, v, c.lane, 100.0)) {
          const Vehicle& fv = w.vehicles[*lead];
          a = std::min(a, idm_vs(fv, sim::arc_distance_ahead(w.layout, v, fv)));
        }
      } else {
        if (auto lead = sim::nearest_ahead_in_lane(w, v, c.lane, 100.0)) {
          const Vehicle& fv = w.vehicles[*lead];
          a = std::min(a, idm_vs(fv, sim::arc_distance_ahead(w.layout, v, fv)));
        }
      }
    }
    // Exit legs: free road (vehicle is leaving).
    accels[i] = a;
  }
  return accels;
}

double compute_reward(const RewardWeights& w, const RewardFacts& f, double v_max, double d_safe) {
  if (f.collided) return w.w1;
  double r = 0.0;
  r += w.w2 * std::clamp(f.v_end / v_max, 0.0, 1.0);
  if (f.lane_changed) r += w.w3;
  r += w.w4 * (f.min_gap >= d_safe ? 1.0 : std::max(0.0, f.min_gap) / d_safe);
  if (f.arrived) r += w.w5;
  if (f.slow_window_tripped) r -= w.slow_penalty;
  return r;
}

RoundaboutEnv::RoundaboutEnv(Config config) : config_(std::move(config)) {
  reset(config_.scenario.seed);
}

void RoundaboutEnv::spawn_initial(uint64_t episode_seed) {
  CounterRng rng(episode_seed, 0x5350);
  const Scenario& sc = config_.scenario;
  const auto& layout = world_.layout;

  // EV on a sampled entry leg with a target outlet two or three ports on.
  Vehicle ev;
  ev.id = world_.next_id++;
  ev.state.role = dynamics::Role::EV;
  const int port = static_cast<int>(rng.uniform_int(4));
  ev.state.lane_coord = {world::entry_leg(port), 0.0};
  ev.target_lane = world::outer_lane();
  ev.target_exit_port = (port + 2 + static_cast<int>(rng.uniform_int(2))) % 4;
  ev.state.speed = std::max(3.0, 8.0 + jitter(rng, sc.spawn_speed_jitter));
  ev.idm = sc.idm;
  sim::rail_pose(layout, ev, ev.state.position, ev.state.heading);
  world_.vehicles.push_back(ev);
  world_.ev_index = 0;

  // HDVs at jittered ring anchors: evenly spaced angles, alternating lanes.
  const int n = sc.n_initial_hdvs;
  for (int i = 0; i < n; ++i) {
    const world::LaneId lane = (i % 2 == 0) ? world::outer_lane() : world::inner_lane();
    const double r = layout.ring_radius(lane.kind);
    const double anchor = kTwoPi * i / n;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      Vehicle h;
      h.id = world_.next_id;
      h.state.role = dynamics::Role::HDV;
      const double angle =
          std::fmod(anchor + jitter(rng, sc.spawn_pos_jitter) / r + kTwoPi, kTwoPi);
      h.state.lane_coord = {lane, angle * r};
      h.target_lane = lane;
      h.state.speed = std::max(0.0, 10.0 + jitter(rng, sc.spawn_speed_jitter));
      h.entered = true;
      h.idm = sc.idm;
      const int sector = static_cast<int>(angle / (kTwoPi / 4.0));
      h.target_exit_port = (sector + 1 + static_cast<int>(rng.uniform_int(3))) % 4;
      sim::rail_pose(layout, h, h.state.position, h.state.heading);
      bool clear = true;
      for (const Vehicle& o : world_.vehicles)
        if (world::distance(o.state.position, h.state.position) < 12.0) clear = false;
      if (clear) {
        world_.vehicles.push_back(h);
        ++world_.next_id;
        placed = true;
      }
    }
    if (!placed) throw std::runtime_error("spawn overlap: no free slot after 100 attempts");
  }
}

Observation RoundaboutEnv::reset(uint64_t episode_seed) {
  episode_seed_ = episode_seed;
  world_ = WorldState{};
  world_.layout = world::build_layout(config_.scenario.layout);
  world_.graph = world::build_graph(world_.layout);
  world_.vehicles.reserve(96);
  arrivals_rng_ = CounterRng(episode_seed, 0x41525256);
  done_ = false;
  steps_ = 0;
  slow_window_ = 0.0;
  slow_fired_ = false;
  collision_ = false;
  arrived_ = false;
  pid_ = mpc::PidState{};
  trace_.clear();

  spawn_initial(episode_seed);

  // Route plan: initial lane plus the graph path to the target outlet.
  Vehicle& ev = world_.ev();
  ev.target_lane = planner::initial_lane(world_, config_.planner);
  const int start = world_.graph.entry_node(ev.state.lane_coord.lane.port);
  const int goal = world_.graph.exit_node(ev.target_exit_port);
  planned_path_ = planner::shortest_path(world_, start, goal, config_.planner);
  preferred_lane_ = ev.target_lane.kind;

  return observe(world_, config_.scenario.K, config_.scenario.sensing_range,
                 config_.scenario.v_max);
}

void RoundaboutEnv::process_arrivals() {
  const Scenario& sc = config_.scenario;
  const double p = sc.hdv_arrival_rate * sc.dt_sim;
  for (int port = 0; port < 4; ++port) {
    const double draw = arrivals_rng_.uniform();  // one draw per port per substep
    if (draw >= p) continue;
    int active = 0;
    for (const Vehicle& v : world_.vehicles)
      if (!v.exited) ++active;
    if (active >= sc.max_vehicles) continue;
    bool clear = true;
    const world::LaneCoord spawn_at{world::entry_leg(port), 0.0};
    const world::Vec2 pos = world::to_cartesian(world_.layout, spawn_at);
    for (const Vehicle& v : world_.vehicles)
      if (world::distance(v.state.position, pos) < 12.0) clear = false;
    if (!clear) continue;

    CounterRng rng(CounterRng::hash3(episode_seed_, static_cast<uint64_t>(port),
                                     static_cast<uint64_t>(world_.substep)),
                   0x4e56);
    Vehicle h;
    h.id = world_.next_id++;
    h.state.role = dynamics::Role::HDV;
    h.state.lane_coord = spawn_at;
    h.target_lane = world::outer_lane();
    h.state.speed = std::max(2.0, 7.0 + jitter(rng, sc.spawn_speed_jitter));
    h.idm = sc.idm;
    h.target_exit_port = (port + 1 + static_cast<int>(rng.uniform_int(3))) % 4;
    sim::rail_pose(world_.layout, h, h.state.position, h.state.heading);
    world_.vehicles.push_back(h);
  }
}

void RoundaboutEnv::hdv_lane_changes() {
  // Inner-lane HDVs merge outward ahead of their outlet when a gap allows.
  const auto& layout = world_.layout;
  for (Vehicle& v : world_.vehicles) {
    if (v.id == world_.ev().id || v.exited || v.target_exit_port < 0) continue;
    const auto& c = v.state.lane_coord;
    if (!(c.lane.kind == world::LaneKind::Inner) || v.lat_offset != 0.0) continue;
    const double angle = c.s / layout.ring_radius(c.lane.kind);
    const double to_exit = forward_angle(angle, layout.exit_angle(v.target_exit_port));
    if (to_exit > 1.9 || to_exit < 0.3) continue;  // merge window before the outlet

    // Gap check in the outer lane.
    bool clear = true;
    const double r_out = layout.ring_radius(world::LaneKind::Outer);
    for (const Vehicle& o : world_.vehicles) {
      if (o.id == v.id || o.exited) continue;
      if (!(o.state.lane_coord.lane.kind == world::LaneKind::Outer)) continue;
      const double oa = o.state.lane_coord.s / r_out;
      const double gap_fwd = forward_angle(angle, oa) * r_out;
      const double gap_back = forward_angle(oa, angle) * r_out;
      if (std::min(gap_fwd, gap_back) < 12.0) clear = false;
    }
    // The EV also occupies space.
    {
      const Vehicle& ev = world_.ev();
      if (ev.entered && std::abs(world::norm(ev.state.position) - r_out) < 3.0) {
        const double oa = sim::ring_angle(ev.state.position);
        const double gap_fwd = forward_angle(angle, oa) * r_out;
        const double gap_back = forward_angle(oa, angle) * r_out;
        // Cutting in ahead of the EV needs extra room for its reaction.
        if (gap_fwd < 12.0 || gap_back < 20.0) clear = false;
      }
    }
    if (!clear) continue;

    const double r_in = layout.ring_radius(world::LaneKind::Inner);
    v.state.lane_coord = {world::outer_lane(), angle * r_out};
    v.target_lane = world::outer_lane();
    v.lat_offset = r_in - r_out;  // starts on the inner centerline
  }
}

double RoundaboutEnv::idm_follow_accel() const {
  const Vehicle& ev = world_.ev();
  const auto& c = ev.state.lane_coord;
  const dynamics::IdmParams& idm = ev.idm;

  // Nearest preceding vehicle in the tracked lane; while straddling lanes
  // mid-merge the other ring lane's leader binds too.
  const world::LaneId lane = c.lane.is_ring() ? ev.target_lane : c.lane;
  std::vector<world::LaneId> lanes{lane};
  if (lane.is_ring() && sim::lateral_offset(world_.layout, ev) > 0.5) {
    lanes.push_back(lane.kind == world::LaneKind::Inner ? world::outer_lane()
                                                        : world::inner_lane());
  }
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (const world::LaneId& l : lanes) {
    if (auto lead = sim::nearest_ahead_in_lane(world_, ev, l, 100.0)) {
      const Vehicle& fv = world_.vehicles[*lead];
      const double gap = c.lane.is_ring()
                             ? sim::arc_distance_ahead(world_.layout, ev, fv)
                             : fv.state.lane_coord.s - c.s;
      const double bumper = sim::bumper_gap(gap, ev.state, fv.state);
      best = std::min({best, dynamics::idm_acceleration(ev.state, fv.state, bumper, idm),
                       relative_stop_accel(ev.state.speed, fv.state.speed, bumper)});
      found = true;
    }
  }
  if (found) return best;
  if (c.lane.kind == world::LaneKind::EntryLeg) {
    // Hold at the entry line until the inspector clears a merge.
    Vehicle stop = ev;
    stop.state.speed = 0.0;
    const double center_gap = (world_.layout.entry_leg_length + 1.0) - c.s;
    const double bumper = sim::bumper_gap(center_gap, ev.state, stop.state);
    return std::min(dynamics::idm_acceleration(ev.state, stop.state, bumper, idm),
                    approach_stop_accel(ev.state.speed, bumper));
  }
  if (auto ahead = sim::nearest_ahead_any_lane(world_, ev, 60.0)) {
    // Conflict vehicle projected onto the EV's lane.
    const Vehicle& fv = world_.vehicles[*ahead];
    const double gap = sim::arc_distance_ahead(world_.layout, ev, fv);
    const double bumper = sim::bumper_gap(gap, ev.state, fv.state);
    return std::min(dynamics::idm_acceleration(ev.state, fv.state, bumper, idm),
                    relative_stop_accel(ev.state.speed, fv.state.speed, bumper));
  }
  const double ratio = ev.state.speed / idm.v_e;
  return std::clamp(idm.a_max * (1.0 - std::pow(ratio, 4.0)), -idm.c, idm.a_max);
}

void RoundaboutEnv::update_ev_bookkeeping(double prev_angle, bool was_entered) {
  Vehicle& ev = world_.ev();
  const auto& layout = world_.layout;
  const double r_attach = layout.ring_radius(world::LaneKind::Outer);

  if (!ev.entered) {
    const double r = world::norm(ev.state.position);
    if (r <= r_attach + 0.3) {
      ev.entered = true;
      ev.state.lane_coord = world::project_to_lane(layout, ev.target_lane, ev.state.position);
    } else {
      ev.state.lane_coord =
          world::project_to_lane(layout, ev.state.lane_coord.lane, ev.state.position);
      return;
    }
  } else {
    ev.state.lane_coord = world::project_to_lane(layout, ev.target_lane, ev.state.position);
  }

  // Arrival: crossing the target outlet from the outer lane.
  if (!was_entered) return;
  const double angle = sim::ring_angle(ev.state.position);
  const double exit_a = layout.exit_angle(ev.target_exit_port);
  const double step_span = forward_angle(prev_angle, angle);
  if (step_span > M_PI) return;  // wrap guard
  const double to_exit = forward_angle(prev_angle, exit_a);
  const bool on_outer =
      ev.target_lane.kind == world::LaneKind::Outer &&
      std::abs(world::norm(ev.state.position) - r_attach) < 1.9;
  if (on_outer && to_exit <= step_span) arrived_ = true;
}

StepResult RoundaboutEnv::step(Action requested) {
  if (done_) throw std::logic_error("step after episode end");
  const Scenario& sc = config_.scenario;
  // Arrivals push into the vehicle vector; never hold this reference across
  // a substep.
  Vehicle& ev = world_.ev();

  // Planner refresh.
  if (!ev.entered) {
    ev.target_lane = planner::initial_lane(world_, config_.planner);
    preferred_lane_ = ev.target_lane.kind;
  } else {
    preferred_lane_ = planner::lane_choice(world_, config_.planner.D_safe);
  }

  // Inspector decision (or raw pass-through).
  inspector::ExecuteResult decision;
  inspector::PriorityList plist;
  if (config_.ablation == Ablation::NoInspector) {
    decision.action = requested;
    decision.mode = inspector::Mode::Direct;
  } else {
    plist = inspector::priority_list(world_, config_.inspector, preferred_lane_);
    if (inspector::action_feasible(world_, requested)) inspector::promote(plist, requested);
    decision = inspector::execute(plist, world_, config_.inspector);
    if (config_.debug_checks && decision.mode == inspector::Mode::Direct) {
      // Post-hoc soundness: the chosen action must be overlap-free.
      const auto ev_traj = inspector::predict_ev(world_, decision.action, config_.inspector);
      for (const Vehicle& nv : world_.vehicles) {
        if (nv.id == ev.id || nv.exited) continue;
        if (world::distance(nv.state.position, ev.state.position) >
            inspector::overlap_gate(config_.inspector, ev.state.speed, nv.state.speed))
          continue;
        inspector::PredictedTrajectory nv_traj;
        Vehicle copy = nv;
        for (int k = 0; k < config_.inspector.T_n; ++k) {
          sim::advance_rail(world_.layout, copy, 0.0, config_.inspector.dt);
          nv_traj.points.push_back({copy.state.position, copy.state.heading});
        }
        if (inspector::overlap(ev_traj, nv_traj, ev.state.length, ev.state.width,
                               nv.state.length, nv.state.width))
          throw std::logic_error("inspector soundness violation: Direct action overlaps");
      }
    }
  }

  // Apply the executed action's targets (IdmFollow suspends them).
  const Action executed = decision.action;
  double v_target = ev.state.speed;
  bool lane_changed = false;
  if (decision.mode == inspector::Mode::Direct) {
    if (executed == Action::Faster)
      v_target = std::min(ev.state.speed + 2.0, sc.v_max);
    else if (executed == Action::Slower)
      v_target = std::max(ev.state.speed - 2.0, 0.0);
    else if ((executed == Action::TurnLeft || executed == Action::TurnRight) &&
             inspector::action_feasible(world_, executed) && ev.entered) {
      const world::LaneId next = executed == Action::TurnLeft ? world::inner_lane()
                                                              : world::outer_lane();
      if (!(next == ev.target_lane)) {
        ev.target_lane = next;
        lane_changed = true;
      }
    }
  }

  // One policy period of substeps.
  const int nsub = std::max(1, static_cast<int>(std::lround(sc.policy_period / sc.dt_sim)));
  bool slow_tripped = false;
  int entry_rule_violations = 0;
  for (int sub = 0; sub < nsub && !collision_ && !arrived_; ++sub) {
    Vehicle& ev_sub = world_.ev();  // fresh: arrivals may have reallocated
    const bool was_entered = ev_sub.entered;
    const double prev_angle =
        ev_sub.entered ? sim::ring_angle(ev_sub.state.position) : 0.0;

    // Merge speed cap: the leg-to-ring junction cannot be taken fast.
    double v_target_eff = v_target;
    double merge_cap = std::numeric_limits<double>::infinity();
    if (!ev_sub.entered && ev_sub.state.lane_coord.lane.kind == world::LaneKind::EntryLeg &&
        world_.layout.entry_leg_length - ev_sub.state.lane_coord.s < 26.0) {
      merge_cap = 8.0;
      v_target_eff = std::min(v_target_eff, merge_cap);
    }

    // EV control.
    dynamics::ControlInput input;
    bool used_pid = false;
    if (decision.mode == inspector::Mode::IdmFollow) {
      input.accel = idm_follow_accel();
      if (std::isfinite(merge_cap))
        input.accel = std::min(input.accel, (merge_cap - ev_sub.state.speed) / sc.dt_sim);
      input.accel = std::clamp(input.accel, config_.mpc.a_min, config_.mpc.a_max);
      input.steer = dynamics::pure_pursuit_steer(
          ev_sub.state, sim::lookahead_point(world_.layout, ev_sub,
                               dynamics::lane_lookahead(ev_sub.state.speed,
                                                        sim::lateral_offset(world_.layout, ev_sub))));
    } else if (config_.ablation == Ablation::NoMpc) {
      input.accel = std::clamp((v_target_eff - ev_sub.state.speed) / sc.dt_sim, config_.mpc.a_min,
                               config_.mpc.a_max);
      input.steer = dynamics::pure_pursuit_steer(
          ev_sub.state, sim::lookahead_point(world_.layout, ev_sub,
                               dynamics::lane_lookahead(ev_sub.state.speed,
                                                        sim::lateral_offset(world_.layout, ev_sub))));
    } else {
      const mpc::TrackResult tr = mpc::track(world_, v_target_eff, config_.mpc, pid_, sc.dt_sim);
      input = tr.input;
      used_pid = tr.used_pid;
    }
    (void)used_pid;
    // Yield at the entry until a clear window commits the merge.
    if (!ev_sub.entered && ev_sub.state.lane_coord.lane.kind == world::LaneKind::EntryLeg &&
        !ev_sub.committed_entry) {
      const double L_leg = world_.layout.entry_leg_length;
      const double s_leg = ev_sub.state.lane_coord.s;
      const bool blocked =
          entry_gate_blocked(world_, ev_sub.state.lane_coord.lane.port, 4.0);
      if (s_leg >= L_leg - 16.0 && !blocked) {
        ev_sub.committed_entry = true;
      } else if (blocked) {
        Vehicle stop = ev_sub;
        stop.state.speed = 0.0;
        const double center_gap = (L_leg - 3.0) - s_leg;
        const double bumper = sim::bumper_gap(center_gap, ev_sub.state, stop.state);
        input.accel =
            std::min({input.accel,
                      dynamics::idm_acceleration(ev_sub.state, stop.state, bumper, ev_sub.idm),
                      approach_stop_accel(ev_sub.state.speed, bumper)});
        input.accel = std::clamp(input.accel, config_.mpc.a_min, config_.mpc.a_max);
      }
    }
    // A committed merge must not stall inside the swept corridor: keep a
    // crossing EV moving whenever its target lane ahead is open.
    {
      const double L_leg = world_.layout.entry_leg_length;
      const bool on_junction = !ev_sub.entered &&
                               ev_sub.state.lane_coord.lane.kind == world::LaneKind::EntryLeg &&
                               ev_sub.committed_entry &&
                               ev_sub.state.lane_coord.s > L_leg - 16.0;
      const bool mid_cross =
          ev_sub.entered && sim::lateral_offset(world_.layout, ev_sub) > 1.5;
      if (on_junction || mid_cross) {
        const world::LaneId tlane =
            ev_sub.target_lane.is_ring() ? ev_sub.target_lane : world::outer_lane();
        double open_gap = 1e9;
        if (auto lead = sim::nearest_ahead_in_lane(world_, ev_sub, tlane, 100.0)) {
          const Vehicle& fv = world_.vehicles[*lead];
          open_gap = sim::bumper_gap(sim::arc_distance_ahead(world_.layout, ev_sub, fv),
                                     ev_sub.state, fv.state);
        }
        if (open_gap > 12.0) {
          input.accel = std::max(input.accel, (6.0 - ev_sub.state.speed) / sc.dt_sim);
          input.accel = std::clamp(input.accel, config_.mpc.a_min, config_.mpc.a_max);
        }
      }
    }
    ev_sub.state = dynamics::step_kinematics(ev_sub.state, input, sc.dt_sim);
    update_ev_bookkeeping(prev_angle, was_entered);

    // HDVs.
    const std::vector<double> accels = apply_hdv_rules(world_);
    for (size_t i = 0; i < world_.vehicles.size(); ++i) {
      if (static_cast<int>(i) == world_.ev_index) continue;
      Vehicle& v = world_.vehicles[i];
      const auto& c = v.state.lane_coord;
      if (v.holding_at_entry && c.lane.kind == world::LaneKind::EntryLeg) {
        // Structural entry rule: a held vehicle stops short of the swept
        // corridor no matter how late the block arrived.
        const double line = world_.layout.entry_leg_length;
        const double max_s = line - 7.5;
        Vehicle pre = v;
        sim::advance_rail(world_.layout, pre, accels[i], sc.dt_sim);
        if (pre.state.lane_coord.lane.kind != world::LaneKind::EntryLeg ||
            pre.state.lane_coord.s > max_s) {
          v.state.lane_coord.s = std::min(v.state.lane_coord.s, max_s);
          v.state.speed = 0.0;
          sim::rail_pose(world_.layout, v, v.state.position, v.state.heading);
        } else {
          v = pre;
        }
      } else {
        sim::advance_rail(world_.layout, v, accels[i], sc.dt_sim);
      }
    }
    hdv_lane_changes();
    process_arrivals();
    world_.substep += 1;
    world_.time += sc.dt_sim;

    if (config_.debug_checks) {
      // A held vehicle's front bumper must stay behind the line; vehicles
      // that committed while the zone was clear are exempt.
      for (const Vehicle& v : world_.vehicles) {
        if (!v.holding_at_entry || v.state.lane_coord.lane.kind != world::LaneKind::EntryLeg)
          continue;
        if (v.state.lane_coord.s + 0.5 * v.state.length > world_.layout.entry_leg_length)
          ++entry_rule_violations;
      }
    }

    // Collisions.
    for (const auto& [i, j] : detect_collisions(world_)) {
      if (i == world_.ev_index || j == world_.ev_index) {
        collision_ = true;
        break;
      }
    }

    // Slow-following window.
    if (decision.mode == inspector::Mode::IdmFollow &&
        world_.ev().state.speed < world_.ev().idm.v_e) {
      slow_window_ += sc.dt_sim;
      if (slow_window_ > 3.0 && !slow_fired_) {
        slow_fired_ = true;
        slow_tripped = true;
      }
    } else {
      slow_window_ = 0.0;
      slow_fired_ = false;
    }
  }
  if (entry_rule_violations > 0)
    throw std::logic_error("entry rule violation: HDV crossed an occupied entrance");

  ++steps_;
  const bool truncated = !collision_ && !arrived_ && steps_ >= sc.max_steps;
  done_ = collision_ || arrived_ || truncated;

  const Vehicle& ev_end = world_.ev();
  RewardFacts facts;
  facts.collided = collision_;
  facts.v_end = ev_end.state.speed;
  facts.lane_changed = lane_changed;
  facts.arrived = arrived_;
  facts.slow_window_tripped = slow_tripped;
  for (const Vehicle& v : world_.vehicles) {
    if (v.id == ev_end.id || v.exited) continue;
    const double d = world::distance(v.state.position, ev_end.state.position);
    if (d <= sc.sensing_range) facts.min_gap = std::min(facts.min_gap, d);
  }
  const double reward =
      compute_reward(sc.rewards, facts, sc.v_max, config_.planner.D_safe);

  StepResult res;
  res.reward = reward;
  res.done = done_;
  res.info.requested = requested;
  res.info.executed = executed;
  res.info.mode = decision.mode;
  res.info.collision = collision_;
  res.info.arrived = arrived_;
  res.info.truncated = truncated;
  res.info.lane_changed = lane_changed;
  res.info.slow_penalty_applied = slow_tripped;
  res.info.min_gap = facts.min_gap;
  res.info.rejections = static_cast<int>(decision.rejections.size());
  res.obs = observe(world_, sc.K, sc.sensing_range, sc.v_max);

  if (config_.record_trace) {
    json row;
    row["step"] = steps_;
    row["t"] = world_.time;
    row["requested"] = std::string(action_name(requested));
    row["executed"] = std::string(action_name(executed));
    row["mode"] = decision.mode == inspector::Mode::Direct ? "direct" : "idm_follow";
    row["reward"] = reward;
    row["done"] = done_;
    row["collision"] = collision_;
    row["arrived"] = arrived_;
    json vehicles = json::array();
    for (const Vehicle& v : world_.vehicles) {
      json vr;
      vr["id"] = v.id;
      vr["role"] = v.state.role == dynamics::Role::EV ? "ev" : "hdv";
      vr["x"] = v.state.position.x;
      vr["y"] = v.state.position.y;
      vr["v"] = v.state.speed;
      vr["h"] = v.state.heading;
      vr["lane"] = lane_str(v.state.lane_coord.lane);
      vr["s"] = v.state.lane_coord.s;
      vr["exited"] = v.exited;
      vehicles.push_back(vr);
    }
    row["vehicles"] = vehicles;
    json pl;
    pl["preferred_lane"] = preferred_lane_ == world::LaneKind::Inner ? "inner" : "outer";
    if (steps_ == 1) pl["path"] = planned_path_;
    row["planner"] = pl;
    json insp;
    json cands = json::array();
    for (const auto& s : plist.entries) {
      json c;
      c["action"] = std::string(action_name(s.action));
      c["score"] = s.score;
      cands.push_back(c);
    }
    insp["candidates"] = cands;
    json rejs = json::array();
    for (const auto& r : decision.rejections) {
      json c;
      c["action"] = std::string(action_name(r.action));
      c["nv"] = r.nv_id;
      c["cause"] = r.cause;
      rejs.push_back(c);
    }
    insp["rejections"] = rejs;
    row["inspector"] = insp;
    trace_.push_back(row.dump());
  }
  return res;
}

void RoundaboutEnv::write_trace(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open trace file: " + path);
  for (const std::string& line : trace_) f << line << "\n";
}

std::string RoundaboutEnv::world_fingerprint() const {
  std::ostringstream os;
  os.precision(17);
  for (const Vehicle& v : world_.vehicles) {
    os << v.id << ',' << v.state.position.x << ',' << v.state.position.y << ','
       << v.state.speed << ',' << v.state.heading << ',' << lane_str(v.state.lane_coord.lane)
       << ',' << v.state.lane_coord.s << ',' << v.lat_offset << ',' << v.entered << ','
       << v.exited << ',' << v.target_exit_port << ';';
  }
  return os.str();
}

}  // namespace kdqn::env

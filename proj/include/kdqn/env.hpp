#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kdqn/action.hpp"
#include "kdqn/inspector.hpp"
#include "kdqn/mpc.hpp"
#include "kdqn/planner.hpp"
#include "kdqn/rng.hpp"
#include "kdqn/sim_state.hpp"

namespace kdqn::env {

using sim::Vehicle;
using sim::WorldState;

enum class Mode { Normal, Hard };
enum class Ablation { Full, NoInspector, NoMpc, MlpBaseline };

struct RewardWeights {
  double w1 = -10.0;  // collision
  double w2 = 0.4;    // speed
  double w3 = -0.1;   // lane change
  double w4 = 0.1;    // headway
  double w5 = 1.0;    // arrival
  double slow_penalty = 0.5;  // subtracted once per >3 s slow-following window
};

struct Scenario {
  Mode mode = Mode::Normal;
  int n_initial_hdvs = 6;
  double spawn_pos_jitter = 5.0;    // meters of arc
  double spawn_speed_jitter = 2.0;  // m/s
  uint64_t seed = 0;
  int max_steps = 120;
  double dt_sim = 0.1;
  double policy_period = 1.0;
  double sensing_range = 60.0;
  int K = 5;
  double v_max = 25.0;
  double hdv_arrival_rate = 0.1;  // per entrance per second
  int max_vehicles = 16;
  world::LayoutConfig layout;
  dynamics::IdmParams idm;
  RewardWeights rewards;

  static Scenario normal(uint64_t seed);
  static Scenario hard(uint64_t seed);
};

using Observation = std::vector<double>;

// Fixed length 5 + 6K; ego (x, y, v, cos h, sin h) then per neighbor
// (presence, dx, dy, dv, cos dh, sin dh) in the ego frame, all in [-1, 1].
Observation observe(const WorldState& w, int K, double sensing_range, double v_max);

// Oriented-rectangle overlap pairs among non-exited vehicles (i < j by index).
std::vector<std::pair<int, int>> detect_collisions(const WorldState& w);

// Per-vehicle acceleration commands from the HDV priority rules (EV slot is
// zero). Sets each vehicle's holding_at_entry flag as a side effect.
std::vector<double> apply_hdv_rules(WorldState& w);

bool entry_zone_occupied(const WorldState& w, int port);

struct RewardFacts {
  bool collided = false;
  double v_end = 0.0;
  bool lane_changed = false;
  double min_gap = 1e9;  // center distance to nearest in-range NV
  bool arrived = false;
  bool slow_window_tripped = false;
};

// Weighted reward; a collision short-circuits to w1 alone.
double compute_reward(const RewardWeights& w, const RewardFacts& f, double v_max, double d_safe);

struct StepInfo {
  Action requested = Action::Idle;
  Action executed = Action::Idle;
  inspector::Mode mode = inspector::Mode::Direct;
  bool collision = false;
  bool arrived = false;
  bool truncated = false;
  bool lane_changed = false;
  bool slow_penalty_applied = false;
  bool used_pid = false;
  double min_gap = 1e9;
  int rejections = 0;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class RoundaboutEnv {
public:
  struct Config {
    Scenario scenario;
    planner::PlannerWeights planner;
    inspector::InspectorConfig inspector;
    mpc::MpcConfig mpc;
    Ablation ablation = Ablation::Full;
    bool record_trace = true;
    bool debug_checks = true;  // post-hoc inspector soundness assert + entry rule check
  };

  explicit RoundaboutEnv(Config config);

  Observation reset() { return reset(config_.scenario.seed); }
  Observation reset(uint64_t episode_seed);
  StepResult step(Action a);

  const WorldState& world() const { return world_; }
  WorldState& mutable_world() { return world_; }
  const Config& config() const { return config_; }
  bool done() const { return done_; }
  int steps() const { return steps_; }
  int observation_size() const { return 5 + 6 * config_.scenario.K; }

  const std::vector<std::string>& trace_lines() const { return trace_; }
  void write_trace(const std::string& path) const;

  // Serialized full world state; bitwise-stable for determinism checks.
  std::string world_fingerprint() const;

private:
  void spawn_initial(uint64_t episode_seed);
  void process_arrivals();
  void hdv_lane_changes();
  double idm_follow_accel() const;
  void update_ev_bookkeeping(double prev_angle, bool was_entered);

  Config config_;
  WorldState world_;
  CounterRng arrivals_rng_;
  uint64_t episode_seed_ = 0;
  bool done_ = false;
  int steps_ = 0;
  double slow_window_ = 0.0;
  bool slow_fired_ = false;
  bool collision_ = false;
  bool arrived_ = false;
  mpc::PidState pid_;
  std::vector<int> planned_path_;
  world::LaneKind preferred_lane_ = world::LaneKind::Outer;
  std::vector<std::string> trace_;
};

}  // namespace kdqn::env

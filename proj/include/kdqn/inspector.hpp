#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kdqn/action.hpp"
#include "kdqn/sim_state.hpp"

namespace kdqn::inspector {

using sim::Vehicle;
using sim::WorldState;
using world::Vec2;

struct TrajPoint {
  Vec2 position;
  double heading = 0.0;
};

struct PredictedTrajectory {
  int vehicle_id = -1;
  std::vector<TrajPoint> points;  // k = 1..T_n, time-aligned across vehicles
};

struct PriorityCoeffs {
  double safety = 1.0;     // alpha1
  double progress = 0.5;   // alpha2
  double lane_pref = 0.2;  // alpha3
  double comfort = 0.02;   // alpha4
};

struct ScoredAction {
  Action action;
  double score = 0.0;
};

struct PriorityList {
  std::vector<ScoredAction> entries;  // non-increasing score, ties by action index
};

struct InspectorConfig {
  int T_n = 30;          // prediction substeps
  double dt = 0.1;       // prediction step, seconds
  double D_safe = 10.0;  // overlap-check gate
  double sensing_range = 60.0;
  PriorityCoeffs coeffs;
  double v_max = 25.0;
  double speed_delta = 2.0;      // Faster/Slower target offset
  double overlap_margin = 0.4;   // footprint inflation for candidate checks
};

enum class Mode { Direct, IdmFollow };

struct Rejection {
  Action action;
  int nv_id = -1;
  std::string cause;  // "same_lane_front" | "adjacent"
};

struct ExecuteResult {
  Action action = Action::Idle;
  Mode mode = Mode::Direct;
  std::vector<Rejection> rejections;
};

// Feasible actions: lane changes off the road edge and any turn while still
// on a leg are excluded.
bool action_feasible(const WorldState& w, Action a);
std::vector<Action> feasible_actions(const WorldState& w);

// Constant-speed lane-follow predictions for every non-exited vehicle except
// the EV.
std::vector<PredictedTrajectory> predict_trajectories(const WorldState& w,
                                                      const InspectorConfig& cfg);

// EV prediction under one candidate action's control mapping.
PredictedTrajectory predict_ev(const WorldState& w, Action a, const InspectorConfig& cfg);

// True iff any time-aligned pose pair overlaps (oriented-rectangle test).
bool overlap(const PredictedTrajectory& a, const PredictedTrajectory& b, double len_a,
             double wid_a, double len_b, double wid_b);

// Minimum absolute angular separation about the roundabout center between the
// EV's predicted poses under `a` and any in-range NV's predicted poses;
// +infinity with no NVs in range.
double safety_margin(const WorldState& w, Action a, const InspectorConfig& cfg);

PriorityList priority_list(const WorldState& w, const InspectorConfig& cfg,
                           world::LaneKind preferred_lane);

// Gate for the overlap checks: the safety distance widened by the farthest
// approach the prediction horizon can close. NVs beyond it cannot overlap
// within T_n steps.
double overlap_gate(const InspectorConfig& cfg, double v_ev, double v_nv);

// Move `a` to the front of the list when present (the policy's request is
// inspected first; replacements follow priority order).
void promote(PriorityList& list, Action a);

// Walk the list: same-lane-front overlap -> IdmFollow; other overlaps reject
// the candidate; first clean candidate executes; exhaustion -> IdmFollow.
ExecuteResult execute(const PriorityList& list, const WorldState& w, const InspectorConfig& cfg);

}  // namespace kdqn::inspector

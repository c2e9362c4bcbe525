#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "kdqn/sim_state.hpp"

namespace kdqn::planner {

using sim::Vehicle;
using sim::WorldState;
using world::GraphEdge;
using world::LaneId;
using world::LaneKind;

constexpr double kInfiniteTtc = std::numeric_limits<double>::infinity();

struct TtcResult {
  double value = kInfiniteTtc;  // seconds; +inf when the gap is not closing
  bool finite() const { return std::isfinite(value); }
};

struct PlannerWeights {
  double w1_ttc = 0.7;
  double w2_tdt = 0.3;
  double w1_dist = 1.0;
  double w2_dens = 50.0;
  double D_safe = 10.0;
};

// gap / (v_ev - v_nv); infinite when not closing (v_ev <= v_nv).
TtcResult ttc(double gap, double v_ev, double v_nv);
// Gap taken along the EV's path (forward arc distance, bumper to bumper).
TtcResult ttc(const WorldState& w, const Vehicle& ev, const Vehicle& nv);

// Initial-lane selection at an entrance: empty ring -> Inner; one or two
// ring HDVs -> per-lane entry TTC, higher wins, Inner on ties; more than two
// -> weighted inverse-TTC + normalized total-driving-time score, lower wins,
// Inner on ties.
LaneId initial_lane(const WorldState& w, const PlannerWeights& weights);

// Vehicles-per-meter on a graph edge; a vehicle exactly on a node boundary
// counts on the downstream edge only.
double edge_density(const WorldState& w, const GraphEdge& e);

// Uniform-cost search over the road graph minimizing
// sum_e w1_dist * D(e) + w2_dens * density(e); deterministic lexicographic
// tie-break on the node-id sequence. Throws when the goal is unreachable.
std::vector<int> shortest_path(const WorldState& w, int start, int goal,
                               const PlannerWeights& weights);

// Signed same-lane-minus-other-lane count of NVs mapped to a port.
int lane_density(const WorldState& w, int port, LaneKind lane, int exclude_id);

// Sum of D_safe / D(EV, NV) over NVs closer than D_safe; +inf at zero distance.
double lane_change_cost(const Vehicle& ev, const std::vector<const Vehicle*>& nvs, double d_safe);

// argmin over ring lanes of density + per-lane change cost at the EV's
// current node; ties keep the EV's current lane.
LaneKind lane_choice(const WorldState& w, double d_safe);

}  // namespace kdqn::planner

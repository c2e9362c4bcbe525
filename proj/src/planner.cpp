#include "kdqn/planner.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace kdqn::planner {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double forward_angle(double from, double to) {
  double d = std::fmod(to - from, kTwoPi);
  if (d < 0) d += kTwoPi;
  return d;
}

double vehicle_angle(const WorldState& w, const Vehicle& v) {
  const auto& c = v.state.lane_coord;
  if (c.lane.is_ring()) return std::fmod(c.s / w.layout.ring_radius(c.lane.kind), kTwoPi);
  return c.lane.kind == world::LaneKind::EntryLeg ? w.layout.entry_angle(c.lane.port)
                                                  : w.layout.exit_angle(c.lane.port);
}

std::vector<const Vehicle*> ring_hdvs(const WorldState& w, LaneKind lane) {
  std::vector<const Vehicle*> out;
  for (const Vehicle& v : w.vehicles) {
    if (v.id == w.ev().id || v.exited) continue;
    if (v.state.lane_coord.lane.is_ring() && v.state.lane_coord.lane.kind == lane)
      out.push_back(&v);
  }
  return out;
}

// Entry TTC of one ring lane as seen from the EV's merge point: following TTC
// for HDVs ahead of the merge anchor, approach time for HDVs behind it.
double lane_entry_ttc(const WorldState& w, LaneKind lane, const PlannerWeights&) {
  const Vehicle& ev = w.ev();
  const int port = ev.state.lane_coord.lane.kind == world::LaneKind::EntryLeg
                       ? ev.state.lane_coord.lane.port
                       : 0;
  const double merge_angle = w.layout.entry_angle(port);
  const double r = w.layout.ring_radius(lane);
  double best = kInfiniteTtc;
  for (const Vehicle* h : ring_hdvs(w, lane)) {
    const double ahead = forward_angle(merge_angle, vehicle_angle(w, *h)) * r;
    const double behind = forward_angle(vehicle_angle(w, *h), merge_angle) * r;
    double t;
    if (ahead <= behind) {
      t = ttc(sim::bumper_gap(ahead, ev.state, h->state), ev.state.speed, h->state.speed).value;
    } else {
      t = sim::bumper_gap(behind, ev.state, h->state) / std::max(h->state.speed, 0.1);
      t = std::max(t, 0.0);
    }
    best = std::min(best, t);
  }
  return best;
}

}  // namespace

TtcResult ttc(double gap, double v_ev, double v_nv) {
  if (v_ev <= v_nv) return {kInfiniteTtc};
  if (gap <= 0.0) return {kInfiniteTtc};  // not ahead along the path
  return {gap / (v_ev - v_nv)};
}

TtcResult ttc(const WorldState& w, const Vehicle& ev, const Vehicle& nv) {
  const double arc = sim::arc_distance_ahead(w.layout, ev, nv);
  return ttc(sim::bumper_gap(arc, ev.state, nv.state), ev.state.speed, nv.state.speed);
}

LaneId initial_lane(const WorldState& w, const PlannerWeights& weights) {
  const auto inner = ring_hdvs(w, LaneKind::Inner);
  const auto outer = ring_hdvs(w, LaneKind::Outer);
  const size_t n = inner.size() + outer.size();
  if (n == 0) return world::inner_lane();

  if (n <= 2) {
    const double ti = lane_entry_ttc(w, LaneKind::Inner, weights);
    const double to = lane_entry_ttc(w, LaneKind::Outer, weights);
    return ti >= to ? world::inner_lane() : world::outer_lane();
  }

  // Multiple HDVs: weighted inverse-TTC plus normalized total driving time,
  // the lower score wins.
  const Vehicle& ev = w.ev();
  const int port = ev.state.lane_coord.lane.kind == world::LaneKind::EntryLeg
                       ? ev.state.lane_coord.lane.port
                       : 0;
  const int outlet = ev.target_exit_port >= 0 ? ev.target_exit_port : (port + 2) % 4;
  auto tdt_of = [&](const std::vector<const Vehicle*>& hdvs, LaneKind lane) {
    const double exit_a = w.layout.exit_angle(outlet);
    const double r = w.layout.ring_radius(lane);
    double sum = 0.0;
    for (const Vehicle* h : hdvs)
      sum += forward_angle(vehicle_angle(w, *h), exit_a) * r / std::max(h->state.speed, 0.5);
    return sum;
  };
  const double tdt_i = tdt_of(inner, LaneKind::Inner);
  const double tdt_o = tdt_of(outer, LaneKind::Outer);
  const double tdt_max = std::max(tdt_i, tdt_o);
  auto score = [&](LaneKind lane, double tdt) {
    const double t = lane_entry_ttc(w, lane, weights);
    const double inv_ttc = std::isfinite(t) ? 1.0 / std::max(t, 1e-6) : 0.0;
    const double tdt_norm = tdt_max > 0.0 ? tdt / tdt_max : 0.0;
    return weights.w1_ttc * inv_ttc + weights.w2_tdt * tdt_norm;
  };
  const double si = score(LaneKind::Inner, tdt_i);
  const double so = score(LaneKind::Outer, tdt_o);
  return si <= so ? world::inner_lane() : world::outer_lane();
}

double edge_density(const WorldState& w, const GraphEdge& e) {
  if (e.length <= 0.0) throw std::invalid_argument("edge length must be positive");
  int count = 0;
  for (const Vehicle& v : w.vehicles) {
    if (v.exited && v.state.lane_coord.lane.kind != world::LaneKind::ExitLeg) continue;
    const auto& c = v.state.lane_coord;
    switch (e.kind) {
      case world::EdgeKind::Arc: {
        if (!c.lane.is_ring() || !(c.lane == e.lane)) break;
        const double a = vehicle_angle(w, v);
        const auto& from = w.graph.nodes[e.from];
        const auto& to = w.graph.nodes[e.to];
        const double span = forward_angle(from.angle, to.angle);
        const double off = forward_angle(from.angle, a);
        if (off >= 0.0 && off < span) ++count;  // boundary goes downstream
        break;
      }
      case world::EdgeKind::Entry:
        if (c.lane.kind == world::LaneKind::EntryLeg && c.lane.port == e.lane.port) ++count;
        break;
      case world::EdgeKind::Exit:
        if (c.lane.kind == world::LaneKind::ExitLeg && c.lane.port == e.lane.port &&
            c.s <= w.layout.entry_leg_length)
          ++count;
        break;
      case world::EdgeKind::LaneChange:
        break;  // zero-occupancy connector
    }
  }
  return count / e.length;
}

std::vector<int> shortest_path(const WorldState& w, int start, int goal,
                               const PlannerWeights& weights) {
  const auto& g = w.graph;
  if (start < 0 || goal < 0 || start >= static_cast<int>(g.nodes.size()) ||
      goal >= static_cast<int>(g.nodes.size()))
    throw std::invalid_argument("start/goal not in graph");

  const size_t n = g.nodes.size();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::vector<int>> best_path(n);
  const auto adj = g.adjacency();

  auto lex_less = [](const std::vector<int>& a, const std::vector<int>& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  };

  using Entry = std::pair<double, std::vector<int>>;
  auto cmp = [&](const Entry& a, const Entry& b) {
    if (a.first != b.first) return a.first > b.first;
    return lex_less(b.second, a.second);
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> open(cmp);
  dist[start] = 0.0;
  best_path[start] = {start};
  open.push({0.0, {start}});

  constexpr double kEps = 1e-12;
  while (!open.empty()) {
    auto [cost, path] = open.top();
    open.pop();
    const int node = path.back();
    if (cost > dist[node] + kEps) continue;
    if (cost >= dist[node] - kEps && !path.empty() && best_path[node] != path &&
        lex_less(best_path[node], path))
      continue;
    for (int ei : adj[node]) {
      const GraphEdge& e = g.edges[ei];
      const double c = weights.w1_dist * e.length + weights.w2_dens * edge_density(w, e);
      const double nc = cost + c;
      std::vector<int> npath = path;
      npath.push_back(e.to);
      if (nc < dist[e.to] - kEps ||
          (nc <= dist[e.to] + kEps && lex_less(npath, best_path[e.to]))) {
        dist[e.to] = std::min(dist[e.to], nc);
        best_path[e.to] = npath;
        open.push({nc, std::move(npath)});
      }
    }
  }
  if (!std::isfinite(dist[goal])) throw std::runtime_error("goal unreachable");
  return best_path[goal];
}

int lane_density(const WorldState& w, int port, LaneKind lane, int exclude_id) {
  int score = 0;
  for (const Vehicle& v : w.vehicles) {
    if (v.id == exclude_id || v.exited) continue;
    if (!v.state.lane_coord.lane.is_ring()) continue;
    const int node = sim::node_of(w, v);
    const auto& gn = w.graph.nodes[node];
    if (gn.kind != world::GraphNode::Kind::Ring || gn.port != port) continue;
    score += v.state.lane_coord.lane.kind == lane ? 1 : -1;
  }
  return score;
}

double lane_change_cost(const Vehicle& ev, const std::vector<const Vehicle*>& nvs, double d_safe) {
  if (d_safe <= 0.0) throw std::invalid_argument("D_safe must be positive");
  double cost = 0.0;
  for (const Vehicle* nv : nvs) {
    const double d = world::distance(ev.state.position, nv->state.position);
    if (d >= d_safe) continue;
    if (d <= 0.0) return std::numeric_limits<double>::infinity();
    cost += d_safe / d;
  }
  return cost;
}

LaneKind lane_choice(const WorldState& w, double d_safe) {
  const Vehicle& ev = w.ev();
  const int node = sim::node_of(w, ev);
  const auto& gn = w.graph.nodes[node];
  const int port = gn.port >= 0 ? gn.port : 0;
  const LaneKind current = ev.target_lane.is_ring() ? ev.target_lane.kind : LaneKind::Outer;

  auto lane_score = [&](LaneKind lane) {
    std::vector<const Vehicle*> in_lane;
    for (const Vehicle& v : w.vehicles) {
      if (v.id == ev.id || v.exited) continue;
      if (v.state.lane_coord.lane.is_ring() && v.state.lane_coord.lane.kind == lane)
        in_lane.push_back(&v);
    }
    return static_cast<double>(lane_density(w, port, lane, ev.id)) +
           lane_change_cost(ev, in_lane, d_safe);
  };
  const double si = lane_score(LaneKind::Inner);
  const double so = lane_score(LaneKind::Outer);
  if (si == so) return current;
  return si < so ? LaneKind::Inner : LaneKind::Outer;
}

}  // namespace kdqn::planner

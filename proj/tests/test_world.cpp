#include <cmath>
#include <set>

#include "doctest.h"
#include "kdqn/rng.hpp"
#include "kdqn/world.hpp"

using namespace kdqn;
using namespace kdqn::world;

namespace {
RoundaboutLayout default_layout() { return build_layout(LayoutConfig{}); }
}

TEST_CASE("build_layout: default geometry constants") {
  const RoundaboutLayout l = default_layout();
  CHECK(l.inner_radius == 40.0);
  CHECK(l.outer_radius == 48.0);
  CHECK(l.lane_width == 4.0);
  CHECK(l.num_ports == 4);
  REQUIRE(l.port_angles.size() == 4);
  for (int p = 1; p < 4; ++p) CHECK(l.port_angles[p] > l.port_angles[p - 1]);
  CHECK(l.ring_radius(LaneKind::Inner) == doctest::Approx(42.0));
  CHECK(l.ring_radius(LaneKind::Outer) == doctest::Approx(46.0));
}

TEST_CASE("build_layout: rejects bad dimensions") {
  LayoutConfig c;
  c.inner_radius = 40;
  c.outer_radius = 40;
  CHECK_THROWS_AS(build_layout(c), LayoutError);
  c.outer_radius = 39;
  CHECK_THROWS_AS(build_layout(c), LayoutError);
  c = LayoutConfig{};
  c.inner_radius = -1;
  CHECK_THROWS_AS(build_layout(c), LayoutError);
  c = LayoutConfig{};
  c.lane_width = 0;
  CHECK_THROWS_AS(build_layout(c), LayoutError);
  // Annulus wider than two lanes.
  c = LayoutConfig{};
  c.outer_radius = 60;
  CHECK_THROWS_AS(build_layout(c), LayoutError);
}

TEST_CASE("build_layout: miniature layout for fast tests") {
  LayoutConfig c;
  c.inner_radius = 10;
  c.outer_radius = 14;
  c.lane_width = 4;
  const RoundaboutLayout l = build_layout(c);
  CHECK(l.ring_radius(LaneKind::Inner) == doctest::Approx(12.0));
}

TEST_CASE("build_graph: node and edge counts by construction rule") {
  // Exhaustive walk oracle: count nodes and edges per kind and check each
  // edge against the construction rules.
  const RoundaboutLayout l = default_layout();
  const RoadGraph g = build_graph(l);

  CHECK(g.nodes.size() == 16);  // 8 ring + 4 entry-leg + 4 exit-leg
  int ring = 0, entry = 0, exit_n = 0;
  for (const auto& n : g.nodes) {
    if (n.kind == GraphNode::Kind::Ring) ++ring;
    if (n.kind == GraphNode::Kind::EntryLeg) ++entry;
    if (n.kind == GraphNode::Kind::ExitLeg) ++exit_n;
  }
  CHECK(ring == 8);
  CHECK(entry == 4);
  CHECK(exit_n == 4);

  int arc_inner = 0, arc_outer = 0, lane_change = 0, e_entry = 0, e_exit = 0;
  for (const auto& e : g.edges) {
    switch (e.kind) {
      case EdgeKind::Arc:
        (e.lane.kind == LaneKind::Inner ? arc_inner : arc_outer)++;
        break;
      case EdgeKind::LaneChange: ++lane_change; break;
      case EdgeKind::Entry: ++e_entry; break;
      case EdgeKind::Exit: ++e_exit; break;
    }
  }
  // One directed arc per quarter ring per lane keeps the per-lane arc sum at
  // one circumference; lane changes run both directions at every port.
  CHECK(arc_inner == 4);
  CHECK(arc_outer == 4);
  CHECK(lane_change == 8);
  CHECK(e_entry == 4);
  CHECK(e_exit == 4);
  CHECK(g.edges.size() == 24);
}

TEST_CASE("build_graph: arc edge lengths are geometric arc lengths") {
  const RoundaboutLayout l = default_layout();
  const RoadGraph g = build_graph(l);
  const double quarter_inner = 2.0 * M_PI * 42.0 / 4.0;  // ~65.97 m
  for (const auto& e : g.edges) {
    if (e.kind != EdgeKind::Arc) continue;
    const double r = l.ring_radius(e.lane.kind);
    CHECK(e.length == doctest::Approx(2.0 * M_PI * r / 4.0).epsilon(1e-12));
  }
  CHECK(quarter_inner == doctest::Approx(65.97344572538566));
}

TEST_CASE("build_graph: per-lane arc lengths sum to the circumference") {
  const RoundaboutLayout l = default_layout();
  const RoadGraph g = build_graph(l);
  double inner_sum = 0, outer_sum = 0;
  for (const auto& e : g.edges) {
    if (e.kind != EdgeKind::Arc) continue;
    (e.lane.kind == LaneKind::Inner ? inner_sum : outer_sum) += e.length;
  }
  CHECK(std::abs(inner_sum - l.ring_circumference(LaneKind::Inner)) < 1e-6);
  CHECK(std::abs(outer_sum - l.ring_circumference(LaneKind::Outer)) < 1e-6);
}

TEST_CASE("build_graph: every entry reaches every exit (16 pairs)") {
  const RoundaboutLayout l = default_layout();
  const RoadGraph g = build_graph(l);
  const auto adj = g.adjacency();
  for (int pe = 0; pe < 4; ++pe) {
    // BFS from the entry node.
    std::set<int> seen{g.entry_node(pe)};
    std::vector<int> frontier{g.entry_node(pe)};
    while (!frontier.empty()) {
      std::vector<int> next;
      for (int n : frontier)
        for (int ei : adj[n])
          if (seen.insert(g.edges[ei].to).second) next.push_back(g.edges[ei].to);
      frontier = std::move(next);
    }
    for (int px = 0; px < 4; ++px) CHECK(seen.count(g.exit_node(px)) == 1);
  }
}

TEST_CASE("to_cartesian: reference points") {
  const RoundaboutLayout l = default_layout();
  const Vec2 a = to_cartesian(l, {inner_lane(), 0.0});
  CHECK(a.x == doctest::Approx(42.0));
  CHECK(a.y == doctest::Approx(0.0));
  const Vec2 b = to_cartesian(l, {outer_lane(), 0.0});
  CHECK(b.x == doctest::Approx(46.0));
  const Vec2 c = to_cartesian(l, {inner_lane(), l.ring_circumference(LaneKind::Inner) / 4.0});
  CHECK(c.x == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(c.y == doctest::Approx(42.0));
}

TEST_CASE("to_cartesian: rejects out-of-range s") {
  const RoundaboutLayout l = default_layout();
  CHECK_THROWS_AS(to_cartesian(l, {inner_lane(), -1.0}), LayoutError);
  CHECK_THROWS_AS(to_cartesian(l, {entry_leg(0), l.entry_leg_length + 1.0}), LayoutError);
}

TEST_CASE("round trip: to_cartesian then from_cartesian on centerlines") {
  const RoundaboutLayout l = default_layout();
  CounterRng rng(42);
  std::vector<LaneId> lanes = {inner_lane(), outer_lane()};
  for (int p = 0; p < 4; ++p) {
    lanes.push_back(entry_leg(p));
    lanes.push_back(exit_leg(p));
  }
  for (int trial = 0; trial < 500; ++trial) {
    const LaneId lane = lanes[rng.uniform_int(lanes.size())];
    const double len = lane_length(l, lane);
    const LaneCoord c{lane, rng.uniform() * (lane.is_ring() ? len : len * 0.999)};
    const Vec2 p = to_cartesian(l, c);
    const LaneCoord back = from_cartesian(l, p);
    const Vec2 p2 = to_cartesian(l, back);
    CHECK(distance(p, p2) < 1e-9);
    CHECK(back.lane == lane);
  }
}

TEST_CASE("heading is the travel-direction tangent") {
  const RoundaboutLayout l = default_layout();
  // Counterclockwise at angle 0 means heading +y.
  CHECK(heading_at(l, {inner_lane(), 0.0}) == doctest::Approx(M_PI / 2.0));
  // Entry legs point inward, exit legs outward.
  const double a0 = l.entry_angle(0);
  CHECK(heading_at(l, {entry_leg(0), 0.0}) == doctest::Approx(wrap_angle(a0 + M_PI)));
  CHECK(heading_at(l, {exit_leg(0), 0.0}) == doctest::Approx(l.exit_angle(0)));
}

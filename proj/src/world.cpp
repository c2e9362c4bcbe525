#include "kdqn/world.hpp"

#include <algorithm>
#include <cmath>

namespace kdqn::world {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

double wrap_angle(double a) {
  a = std::fmod(a + M_PI, kTwoPi);
  if (a < 0) a += kTwoPi;
  return a - M_PI;
}

double angle_diff(double b, double a) { return wrap_angle(b - a); }

double RoundaboutLayout::ring_circumference(LaneKind k) const {
  return kTwoPi * ring_radius(k);
}

RoundaboutLayout build_layout(const LayoutConfig& config) {
  if (config.inner_radius <= 0.0 || config.outer_radius <= 0.0 || config.lane_width <= 0.0)
    throw LayoutError("layout dimensions must be positive");
  if (config.inner_radius >= config.outer_radius)
    throw LayoutError("degenerate annulus: inner_radius must be < outer_radius");
  const double annulus = config.outer_radius - config.inner_radius;
  if (annulus < config.lane_width || annulus > 2.0 * config.lane_width)
    throw LayoutError("annulus width must lie in [lane_width, 2*lane_width]");
  if (config.num_ports != 4) throw LayoutError("exactly 4 ports are supported");
  if (config.entry_leg_length <= 0.0) throw LayoutError("entry_leg_length must be positive");

  RoundaboutLayout layout;
  layout.inner_radius = config.inner_radius;
  layout.outer_radius = config.outer_radius;
  layout.lane_width = config.lane_width;
  layout.num_ports = config.num_ports;
  layout.entry_leg_length = config.entry_leg_length;
  layout.port_angles.resize(config.num_ports);
  for (int p = 0; p < config.num_ports; ++p)
    layout.port_angles[p] = kTwoPi * p / config.num_ports;
  return layout;
}

int RoadGraph::ring_node(int port, LaneKind lane) const {
  for (const auto& n : nodes)
    if (n.kind == GraphNode::Kind::Ring && n.port == port && n.lane.kind == lane) return n.id;
  return -1;
}

int RoadGraph::entry_node(int port) const {
  for (const auto& n : nodes)
    if (n.kind == GraphNode::Kind::EntryLeg && n.port == port) return n.id;
  return -1;
}

int RoadGraph::exit_node(int port) const {
  for (const auto& n : nodes)
    if (n.kind == GraphNode::Kind::ExitLeg && n.port == port) return n.id;
  return -1;
}

std::vector<std::vector<int>> RoadGraph::adjacency() const {
  std::vector<std::vector<int>> adj(nodes.size());
  for (size_t e = 0; e < edges.size(); ++e) adj[edges[e].from].push_back(static_cast<int>(e));
  return adj;
}

RoadGraph build_graph(const RoundaboutLayout& layout) {
  RoadGraph g;
  const int P = layout.num_ports;

  // Ring nodes: one per port per lane, at the port center angle.
  for (int p = 0; p < P; ++p) {
    for (LaneKind lane : {LaneKind::Inner, LaneKind::Outer}) {
      GraphNode n;
      n.id = static_cast<int>(g.nodes.size());
      n.kind = GraphNode::Kind::Ring;
      n.port = p;
      n.lane = {lane, -1};
      n.angle = layout.port_angles[p];
      g.nodes.push_back(n);
    }
  }
  // Leg nodes at the outer end of each entry/exit leg.
  for (int p = 0; p < P; ++p) {
    GraphNode n;
    n.id = static_cast<int>(g.nodes.size());
    n.kind = GraphNode::Kind::EntryLeg;
    n.port = p;
    n.lane = entry_leg(p);
    n.angle = layout.entry_angle(p);
    g.nodes.push_back(n);
  }
  for (int p = 0; p < P; ++p) {
    GraphNode n;
    n.id = static_cast<int>(g.nodes.size());
    n.kind = GraphNode::Kind::ExitLeg;
    n.port = p;
    n.lane = exit_leg(p);
    n.angle = layout.exit_angle(p);
    g.nodes.push_back(n);
  }

  // Arc edges between consecutive ring nodes, travel direction (counterclockwise).
  for (LaneKind lane : {LaneKind::Inner, LaneKind::Outer}) {
    const double r = layout.ring_radius(lane);
    for (int p = 0; p < P; ++p) {
      int q = (p + 1) % P;
      double span = layout.port_angles[q] - layout.port_angles[p];
      if (span <= 0.0) span += kTwoPi;
      GraphEdge e;
      e.from = g.ring_node(p, lane);
      e.to = g.ring_node(q, lane);
      e.kind = EdgeKind::Arc;
      e.length = r * span;
      e.lane = {lane, -1};
      g.edges.push_back(e);
    }
  }
  // Lane changes between radially adjacent ring nodes, both directions.
  for (int p = 0; p < P; ++p) {
    int ni = g.ring_node(p, LaneKind::Inner);
    int no = g.ring_node(p, LaneKind::Outer);
    g.edges.push_back({ni, no, EdgeKind::LaneChange, layout.lane_width, outer_lane()});
    g.edges.push_back({no, ni, EdgeKind::LaneChange, layout.lane_width, inner_lane()});
  }
  // Entry legs feed the outer lane; exits leave from the outer lane.
  for (int p = 0; p < P; ++p) {
    g.edges.push_back({g.entry_node(p), g.ring_node(p, LaneKind::Outer), EdgeKind::Entry,
                       layout.entry_leg_length, entry_leg(p)});
    g.edges.push_back({g.ring_node(p, LaneKind::Outer), g.exit_node(p), EdgeKind::Exit,
                       layout.entry_leg_length, exit_leg(p)});
  }
  return g;
}

double lane_length(const RoundaboutLayout& layout, LaneId lane) {
  if (lane.is_ring()) return layout.ring_circumference(lane.kind);
  return layout.entry_leg_length;
}

Vec2 to_cartesian(const RoundaboutLayout& layout, const LaneCoord& c) {
  const double eps = 1e-9;
  if (c.lane.is_ring()) {
    const double r = layout.ring_radius(c.lane.kind);
    const double circ = layout.ring_circumference(c.lane.kind);
    if (c.s < -eps || c.s >= circ + eps) throw LayoutError("ring coordinate out of range");
    const double a = c.s / r;
    return {r * std::cos(a), r * std::sin(a)};
  }
  const double L = layout.entry_leg_length;
  if (c.s < -eps || c.s > L + eps) throw LayoutError("leg coordinate out of range");
  // Legs attach to the outer lane centerline. Entry legs run inward
  // (s grows toward the ring); exit legs run outward.
  const double r_attach = layout.ring_radius(LaneKind::Outer);
  if (c.lane.kind == LaneKind::EntryLeg) {
    const double a = layout.entry_angle(c.lane.port);
    const double r = r_attach + (L - c.s);
    return {r * std::cos(a), r * std::sin(a)};
  }
  const double a = layout.exit_angle(c.lane.port);
  const double r = r_attach + c.s;
  return {r * std::cos(a), r * std::sin(a)};
}

double heading_at(const RoundaboutLayout& layout, const LaneCoord& c) {
  if (c.lane.is_ring()) {
    const double a = c.s / layout.ring_radius(c.lane.kind);
    return wrap_angle(a + M_PI / 2.0);  // counterclockwise tangent
  }
  if (c.lane.kind == LaneKind::EntryLeg)
    return wrap_angle(layout.entry_angle(c.lane.port) + M_PI);  // inward
  return wrap_angle(layout.exit_angle(c.lane.port));            // outward
}

LaneCoord project_to_lane(const RoundaboutLayout& layout, LaneId lane, Vec2 p) {
  if (lane.is_ring()) {
    const double r = layout.ring_radius(lane.kind);
    double a = std::atan2(p.y, p.x);
    if (a < 0) a += kTwoPi;
    return {lane, a * r};
  }
  const double L = layout.entry_leg_length;
  const double r_attach = layout.ring_radius(LaneKind::Outer);
  const double a = lane.kind == LaneKind::EntryLeg ? layout.entry_angle(lane.port)
                                                   : layout.exit_angle(lane.port);
  const Vec2 dir{std::cos(a), std::sin(a)};
  const double radial = dot(p, dir);  // distance from center along the leg axis
  double s = lane.kind == LaneKind::EntryLeg ? (r_attach + L) - radial : radial - r_attach;
  s = std::clamp(s, 0.0, L);
  return {lane, s};
}

LaneCoord from_cartesian(const RoundaboutLayout& layout, Vec2 p) {
  LaneCoord best;
  double best_d = 1e300;
  std::vector<LaneId> lanes = {inner_lane(), outer_lane()};
  for (int port = 0; port < layout.num_ports; ++port) {
    lanes.push_back(entry_leg(port));
    lanes.push_back(exit_leg(port));
  }
  for (LaneId lane : lanes) {
    LaneCoord c = project_to_lane(layout, lane, p);
    double d = distance(to_cartesian(layout, c), p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace kdqn::world

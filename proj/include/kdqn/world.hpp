#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdqn::world {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

// Normalize an angle to [-pi, pi).
double wrap_angle(double a);
// Difference b - a wrapped to [-pi, pi).
double angle_diff(double b, double a);

enum class LaneKind : uint8_t { Inner = 0, Outer = 1, EntryLeg = 2, ExitLeg = 3 };

struct LaneId {
  LaneKind kind = LaneKind::Inner;
  int port = -1;  // only meaningful for legs

  bool operator==(const LaneId&) const = default;
  bool is_ring() const { return kind == LaneKind::Inner || kind == LaneKind::Outer; }
};

inline LaneId inner_lane() { return {LaneKind::Inner, -1}; }
inline LaneId outer_lane() { return {LaneKind::Outer, -1}; }
inline LaneId entry_leg(int port) { return {LaneKind::EntryLeg, port}; }
inline LaneId exit_leg(int port) { return {LaneKind::ExitLeg, port}; }

// Arc-length position along a lane centerline, monotone in travel direction.
struct LaneCoord {
  LaneId lane;
  double s = 0.0;
};

struct LayoutConfig {
  double inner_radius = 40.0;
  double outer_radius = 48.0;
  double lane_width = 4.0;
  int num_ports = 4;
  double entry_leg_length = 30.0;
};

// Two-lane annular roundabout with four ports. Travel is counterclockwise;
// the right half of each port is the entrance, the left half the outlet,
// so entry legs sit at port_angle + port_half_angle and exit legs at
// port_angle - port_half_angle.
struct RoundaboutLayout {
  double inner_radius = 40.0;
  double outer_radius = 48.0;
  double lane_width = 4.0;
  int num_ports = 4;
  std::vector<double> port_angles;
  double entry_leg_length = 30.0;
  double port_half_angle = 0.12;  // radians between a port center and its half-port legs

  double ring_radius(LaneKind k) const {
    return k == LaneKind::Inner ? inner_radius + 0.5 * lane_width
                                : inner_radius + 1.5 * lane_width;
  }
  double ring_circumference(LaneKind k) const;
  double entry_angle(int port) const { return port_angles[port] + port_half_angle; }
  double exit_angle(int port) const { return port_angles[port] - port_half_angle; }
  // Outermost radius of any drivable surface (legs included).
  double world_extent() const { return outer_radius + entry_leg_length; }
};

enum class EdgeKind : uint8_t { Arc = 0, Entry = 1, Exit = 2, LaneChange = 3 };

struct GraphNode {
  int id = -1;
  enum class Kind : uint8_t { Ring, EntryLeg, ExitLeg } kind = Kind::Ring;
  int port = -1;
  LaneId lane;      // ring lane for Ring nodes, leg lane for leg nodes
  double angle = 0.0;
};

struct GraphEdge {
  int from = -1;
  int to = -1;
  EdgeKind kind = EdgeKind::Arc;
  double length = 0.0;  // D(e), meters
  LaneId lane;          // lane the edge runs along (Arc/Entry/Exit); target lane for LaneChange
};

struct RoadGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  int ring_node(int port, LaneKind lane) const;
  int entry_node(int port) const;
  int exit_node(int port) const;
  std::vector<std::vector<int>> adjacency() const;  // node -> outgoing edge indices
};

class LayoutError : public std::runtime_error {
public:
  explicit LayoutError(const std::string& what) : std::runtime_error(what) {}
};

RoundaboutLayout build_layout(const LayoutConfig& config);
RoadGraph build_graph(const RoundaboutLayout& layout);

// Centerline point for a lane coordinate. Throws on out-of-range s.
Vec2 to_cartesian(const RoundaboutLayout& layout, const LaneCoord& c);
// Travel-direction heading of the centerline at c.
double heading_at(const RoundaboutLayout& layout, const LaneCoord& c);
// Nearest lane coordinate on the given lane's centerline.
LaneCoord project_to_lane(const RoundaboutLayout& layout, LaneId lane, Vec2 p);
// Nearest lane coordinate over all lanes (used by round-trip checks).
LaneCoord from_cartesian(const RoundaboutLayout& layout, Vec2 p);

double lane_length(const RoundaboutLayout& layout, LaneId lane);

}  // namespace kdqn::world

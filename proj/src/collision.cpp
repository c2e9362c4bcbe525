#include "kdqn/collision.hpp"

#include <cmath>

namespace kdqn::collision {

namespace {

// Half-length of the projection of box b onto unit axis u.
double projected_radius(const OrientedBox& b, Vec2 u) {
  const Vec2 ax{std::cos(b.heading), std::sin(b.heading)};
  const Vec2 ay{-ax.y, ax.x};
  return 0.5 * b.length * std::abs(world::dot(ax, u)) + 0.5 * b.width * std::abs(world::dot(ay, u));
}

}  // namespace

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  // Cheap reject: circumscribed circles.
  const double reach = 0.5 * std::hypot(a.length, a.width) + 0.5 * std::hypot(b.length, b.width);
  const Vec2 d = b.center - a.center;
  if (d.x * d.x + d.y * d.y > reach * reach) return false;

  const Vec2 axes[4] = {
      {std::cos(a.heading), std::sin(a.heading)},
      {-std::sin(a.heading), std::cos(a.heading)},
      {std::cos(b.heading), std::sin(b.heading)},
      {-std::sin(b.heading), std::cos(b.heading)},
  };
  for (const Vec2& u : axes) {
    const double sep = std::abs(world::dot(d, u));
    if (sep > projected_radius(a, u) + projected_radius(b, u)) return false;
  }
  return true;
}

bool point_in_box(Vec2 p, const OrientedBox& b) {
  const Vec2 ax{std::cos(b.heading), std::sin(b.heading)};
  const Vec2 ay{-ax.y, ax.x};
  const Vec2 d = p - b.center;
  return std::abs(world::dot(d, ax)) <= 0.5 * b.length && std::abs(world::dot(d, ay)) <= 0.5 * b.width;
}

}  // namespace kdqn::collision

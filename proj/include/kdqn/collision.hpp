#pragma once

#include "kdqn/world.hpp"

namespace kdqn::collision {

using world::Vec2;

struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 5.0;
  double width = 2.0;
};

// Separating-axis overlap test for two oriented rectangles. Touching counts
// as overlap.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

bool point_in_box(Vec2 p, const OrientedBox& b);

}  // namespace kdqn::collision

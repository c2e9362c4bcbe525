#pragma once

#include <array>
#include <string_view>

namespace kdqn {

// The five high-level actions the policy chooses between.
enum class Action : int { Faster = 0, Slower = 1, Idle = 2, TurnRight = 3, TurnLeft = 4 };

constexpr int kNumActions = 5;
constexpr std::array<Action, kNumActions> kAllActions = {
    Action::Faster, Action::Slower, Action::Idle, Action::TurnRight, Action::TurnLeft};

constexpr std::string_view action_name(Action a) {
  switch (a) {
    case Action::Faster: return "Faster";
    case Action::Slower: return "Slower";
    case Action::Idle: return "Idle";
    case Action::TurnRight: return "TurnRight";
    case Action::TurnLeft: return "TurnLeft";
  }
  return "?";
}

}  // namespace kdqn

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "kdqn/kan.hpp"
#include "kdqn/rng.hpp"

namespace kdqn::agent {

struct Transition {
  std::vector<double> s;
  int a = 0;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;
};

// Fixed-capacity ring buffer with FIFO eviction and uniform sampling.
class ReplayBuffer {
public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {}

  void push(Transition t);
  size_t size() const { return storage_.size(); }
  size_t capacity() const { return capacity_; }
  size_t inserted() const { return inserted_; }
  const Transition& at(size_t i) const { return storage_[i]; }
  bool contains_inserted(size_t insertion_index) const {
    return insertion_index + capacity_ >= inserted_ && insertion_index < inserted_;
  }

  std::vector<const Transition*> sample(size_t n, CounterRng& rng) const;

private:
  size_t capacity_;
  std::vector<Transition> storage_;
  size_t head_ = 0;
  size_t inserted_ = 0;
};

struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  long decay_steps = 12000;

  double at(long step) const {
    if (step >= decay_steps) return end;
    return start + (end - start) * static_cast<double>(step) / static_cast<double>(decay_steps);
  }
};

struct TrainConfig {
  double gamma = 0.99;
  double lr = 5e-4;
  int batch_size = 64;
  long target_sync_every = 500;  // gradient steps
  EpsilonSchedule epsilon;
  size_t capacity = 50000;
  long warmup_transitions = 1000;
  long total_episodes = 2000;
  bool adaptive_moments = false;  // optional Adam-style variant; plain SGD by default
};

struct UpdateReport {
  double loss = 0.0;
  double grad_norm = 0.0;
  bool diverged = false;
};

// y = r + gamma * max_a' Q(s', a'; theta'); r alone on terminal transitions.
double td_target(const Transition& t, const kan::QNetwork& target_net, double gamma);

// Mean squared TD error over the batch plus the network regularization term.
double loss(const std::vector<const Transition*>& batch, const kan::QNetwork& net,
            const kan::QNetwork& target_net, double gamma);

int argmax_action(const std::vector<double>& q);

// DQN around a QNetwork: behavior policy, gradient step, target sync.
class DqnAgent {
public:
  DqnAgent(kan::QNetwork net, TrainConfig config);

  const kan::QNetwork& net() const { return net_; }
  kan::QNetwork& net() { return net_; }
  const kan::QNetwork& target_net() const { return target_; }
  const TrainConfig& config() const { return config_; }

  int select_action(const std::vector<double>& obs, double epsilon, CounterRng& rng) const;

  // One gradient step on the batch (theta <- theta - lr * dL/dtheta).
  UpdateReport update(const std::vector<const Transition*>& batch);

  void sync_target() { target_ = net_; }

  long gradient_steps() const { return gradient_steps_; }

private:
  kan::QNetwork net_;
  kan::QNetwork target_;
  TrainConfig config_;
  long gradient_steps_ = 0;
  std::vector<double> grad_;
  std::vector<double> m1_, m2_;  // adaptive-moment state (optional variant)
  mutable kan::Workspace ws_;
};

}  // namespace kdqn::agent

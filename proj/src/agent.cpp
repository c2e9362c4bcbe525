#include "kdqn/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kdqn::agent {

void ReplayBuffer::push(Transition t) {
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(t));
  } else {
    storage_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
  ++inserted_;
}

std::vector<const Transition*> ReplayBuffer::sample(size_t n, CounterRng& rng) const {
  std::vector<const Transition*> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(&storage_[rng.uniform_int(storage_.size())]);
  return out;
}

double td_target(const Transition& t, const kan::QNetwork& target_net, double gamma) {
  if (t.done) return t.r;
  const std::vector<double> q = target_net.forward(t.s_next);
  return t.r + gamma * *std::max_element(q.begin(), q.end());
}

double loss(const std::vector<const Transition*>& batch, const kan::QNetwork& net,
            const kan::QNetwork& target_net, double gamma) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double acc = 0.0;
  for (const Transition* t : batch) {
    const double y = td_target(*t, target_net, gamma);
    const std::vector<double> q = net.forward(t->s);
    const double err = y - q[t->a];
    acc += err * err;
  }
  return acc / static_cast<double>(batch.size()) + net.regularization();
}

int argmax_action(const std::vector<double>& q) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(q.size()); ++i)
    if (q[i] > q[best]) best = i;  // ties keep the lowest index
  return best;
}

DqnAgent::DqnAgent(kan::QNetwork net, TrainConfig config)
    : net_(std::move(net)), target_(net_), config_(config) {
  grad_.assign(net_.num_params(), 0.0);
}

int DqnAgent::select_action(const std::vector<double>& obs, double epsilon,
                            CounterRng& rng) const {
  if (rng.uniform() < epsilon)
    return static_cast<int>(rng.uniform_int(net_.output_width()));
  return argmax_action(net_.forward(obs));
}

UpdateReport DqnAgent::update(const std::vector<const Transition*>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::fill(grad_.begin(), grad_.end(), 0.0);

  double mse = 0.0;
  std::vector<double> upstream(net_.output_width(), 0.0);
  for (const Transition* t : batch) {
    const double y = td_target(*t, target_, config_.gamma);
    const std::vector<double> q = net_.forward(t->s, ws_);
    const double err = q[t->a] - y;
    mse += err * err;
    std::fill(upstream.begin(), upstream.end(), 0.0);
    upstream[t->a] = 2.0 * err * inv_n;
    net_.backward(upstream, ws_, grad_);
  }
  mse *= inv_n;
  net_.regularization_grad(grad_);
  const double total_loss = mse + net_.regularization();

  double norm_sq = 0.0;
  for (double g : grad_) norm_sq += g * g;
  UpdateReport report{total_loss, std::sqrt(norm_sq), false};
  if (!std::isfinite(total_loss) || !std::isfinite(report.grad_norm)) {
    report.diverged = true;
    return report;  // abort the step
  }

  std::vector<double>& p = net_.params();
  if (config_.adaptive_moments) {
    if (m1_.size() != p.size()) {
      m1_.assign(p.size(), 0.0);
      m2_.assign(p.size(), 0.0);
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double t = static_cast<double>(gradient_steps_ + 1);
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (size_t i = 0; i < p.size(); ++i) {
      m1_[i] = b1 * m1_[i] + (1 - b1) * grad_[i];
      m2_[i] = b2 * m2_[i] + (1 - b2) * grad_[i] * grad_[i];
      p[i] -= config_.lr * (m1_[i] / c1) / (std::sqrt(m2_[i] / c2) + eps);
    }
  } else {
    for (size_t i = 0; i < p.size(); ++i) p[i] -= config_.lr * grad_[i];
  }
  net_.clamp_coefficients();
  ++gradient_steps_;
  return report;
}

}  // namespace kdqn::agent

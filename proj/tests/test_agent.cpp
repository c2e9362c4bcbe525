#include <cmath>
#include <map>

#include "doctest.h"
#include "kdqn/agent.hpp"

using namespace kdqn;
using namespace kdqn::agent;

namespace {

kan::QNetwork small_net(uint64_t seed, int in = 4, int out = 5) {
  kan::KanConfig c;
  c.widths = {in, 6};
  c.out_dim = out;
  c.lambda1 = 1e-5;
  c.lambda2 = 1e-6;
  return kan::QNetwork(kan::KanNetwork(c, seed));
}

Transition make_transition(CounterRng& rng, int in, int actions) {
  Transition t;
  t.s.resize(in);
  t.s_next.resize(in);
  for (double& v : t.s) v = rng.uniform(-1, 1);
  for (double& v : t.s_next) v = rng.uniform(-1, 1);
  t.a = static_cast<int>(rng.uniform_int(actions));
  t.r = rng.uniform(-1, 1);
  t.done = rng.uniform() < 0.2;
  return t;
}

}  // namespace

TEST_CASE("td_target: terminal, bootstrap, myopic") {
  kan::QNetwork net = small_net(1);
  Transition t;
  t.s.assign(4, 0.0);
  t.s_next.assign(4, 0.1);
  t.r = -10.0;
  t.done = true;
  CHECK(td_target(t, net, 0.9) == doctest::Approx(-10.0));

  t.done = false;
  t.r = 1.0;
  const auto q = net.forward(t.s_next);
  const double maxq = *std::max_element(q.begin(), q.end());
  CHECK(td_target(t, net, 0.9) == doctest::Approx(1.0 + 0.9 * maxq));
  CHECK(td_target(t, net, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("td_target: the worked 2.8 example") {
  // Build a net that outputs a constant max Q of 2 by zeroing parameters and
  // setting a bias of 2 on one head.
  kan::QNetwork net = small_net(2);
  std::fill(net.params().begin(), net.params().end(), 0.0);
  net.params()[net.kan().b_offset() + 3] = 2.0;
  Transition t;
  t.s.assign(4, 0.0);
  t.s_next.assign(4, 0.0);
  t.r = 1.0;
  CHECK(td_target(t, net, 0.9) == doctest::Approx(2.8));
}

TEST_CASE("loss: perfect fit, squared error, mean") {
  kan::QNetwork net = small_net(3);
  std::fill(net.params().begin(), net.params().end(), 0.0);
  kan::QNetwork target = net;

  Transition t;
  t.s.assign(4, 0.0);
  t.s_next.assign(4, 0.0);
  t.a = 0;
  t.r = 0.0;
  t.done = true;
  // Q == 0 everywhere, y = 0, lambda terms vanish on the zero net.
  CHECK(loss({&t}, net, target, 0.9) == doctest::Approx(0.0));

  // Single element, Q = 1, y = 3 -> loss 4.
  net.params()[net.kan().b_offset() + 0] = 1.0;
  t.r = 3.0;
  CHECK(loss({&t}, net, target, 0.9) == doctest::Approx(4.0));

  // Batch with errors 1 and 3 -> mean 5.
  Transition t2 = t;
  t2.r = 2.0;  // error 1 against Q = 1
  Transition t3 = t;
  t3.r = 4.0;  // error 3
  CHECK(loss({&t2, &t3}, net, target, 0.9) == doctest::Approx(5.0));

  CHECK_THROWS(loss({}, net, target, 0.9));
}

TEST_CASE("select_action: argmax, ties, exploration distribution") {
  kan::QNetwork net = small_net(4);
  std::fill(net.params().begin(), net.params().end(), 0.0);
  const size_t b = net.kan().b_offset();
  net.params()[b + 0] = 0.1;
  net.params()[b + 1] = 0.9;
  net.params()[b + 2] = 0.3;
  net.params()[b + 3] = 0.2;
  net.params()[b + 4] = 0.0;
  DqnAgent agent(net, TrainConfig{});
  CounterRng rng(99);
  const std::vector<double> obs(4, 0.0);

  CHECK(agent.select_action(obs, 0.0, rng) == 1);

  // Tie at indices 0 and 3: lowest index wins.
  agent.net().params()[b + 1] = 0.0;
  agent.net().params()[b + 2] = 0.0;
  agent.net().params()[b + 0] = 0.2;
  agent.net().params()[b + 3] = 0.2;
  CHECK(agent.select_action(obs, 0.0, rng) == 0);

  // Pure exploration: uniform within 3 sigma over 10000 draws.
  std::map<int, int> counts;
  for (int i = 0; i < 10000; ++i) counts[agent.select_action(obs, 1.0, rng)]++;
  for (int a = 0; a < 5; ++a) {
    CHECK(counts[a] > 2000 - 120);
    CHECK(counts[a] < 2000 + 120);
  }
}

TEST_CASE("sync_target: copy semantics, idempotence, no aliasing") {
  kan::QNetwork net = small_net(5);
  DqnAgent agent(net, TrainConfig{});
  CounterRng rng(1);
  std::vector<double> x(4);
  for (double& v : x) v = rng.uniform(-1, 1);

  agent.net().params()[0] += 0.5;
  agent.sync_target();
  CHECK(agent.net().forward(x)[0] == doctest::Approx(agent.target_net().forward(x)[0]));
  agent.sync_target();
  CHECK(agent.net().forward(x)[0] == doctest::Approx(agent.target_net().forward(x)[0]));

  const double before = agent.target_net().forward(x)[0];
  agent.net().params()[0] += 1.0;
  CHECK(agent.target_net().forward(x)[0] == doctest::Approx(before));
}

TEST_CASE("update: null step at lr 0, descent at small lr") {
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.gamma = 0.9;
  DqnAgent agent(small_net(6), cfg);
  CounterRng rng(7);
  std::vector<Transition> pool;
  for (int i = 0; i < 16; ++i) pool.push_back(make_transition(rng, 4, 5));
  std::vector<const Transition*> batch;
  for (const auto& t : pool) batch.push_back(&t);

  const auto before = agent.net().params();
  agent.update(batch);
  CHECK(agent.net().params() == before);

  TrainConfig cfg2;
  cfg2.lr = 1e-3;
  DqnAgent agent2(small_net(6), cfg2);
  const double l0 = loss(batch, agent2.net(), agent2.target_net(), cfg2.gamma);
  agent2.update(batch);
  const double l1 = loss(batch, agent2.net(), agent2.target_net(), cfg2.gamma);
  CHECK(l1 < l0);
}

TEST_CASE("update: analytic batch gradient matches finite differences") {
  TrainConfig cfg;
  cfg.lr = 1.0;  // parameter delta equals the negative gradient
  cfg.gamma = 0.9;
  DqnAgent agent(small_net(8), cfg);
  CounterRng rng(13);
  std::vector<Transition> pool;
  for (int i = 0; i < 8; ++i) pool.push_back(make_transition(rng, 4, 5));
  std::vector<const Transition*> batch;
  for (const auto& t : pool) batch.push_back(&t);

  const std::vector<double> theta0 = agent.net().params();
  kan::QNetwork probe = agent.net();
  const kan::QNetwork target = agent.target_net();
  agent.update(batch);
  const std::vector<double>& theta1 = agent.net().params();

  const double h = 1e-5;
  double worst = 0.0;
  for (size_t i = 0; i < theta0.size(); i += 11) {
    probe.params() = theta0;
    probe.params()[i] += h;
    const double up = loss(batch, probe, target, cfg.gamma);
    probe.params()[i] = theta0[i] - h;
    const double dn = loss(batch, probe, target, cfg.gamma);
    probe.params()[i] = theta0[i];
    const double fd = (up - dn) / (2 * h);
    const double analytic = theta0[i] - theta1[i];  // lr = 1
    const double rel =
        std::abs(fd - analytic) / std::max({1.0, std::abs(fd), std::abs(analytic)});
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("replay buffer: FIFO eviction") {
  ReplayBuffer buf(10);
  CounterRng rng(3);
  for (int i = 0; i < 14; ++i) {
    Transition t = make_transition(rng, 2, 5);
    t.r = static_cast<double>(i);
    buf.push(std::move(t));
  }
  CHECK(buf.size() == 10);
  // The first 4 inserted must be gone, the rest present.
  std::vector<bool> present(14, false);
  for (size_t i = 0; i < buf.size(); ++i) present[static_cast<int>(buf.at(i).r)] = true;
  for (int i = 0; i < 4; ++i) CHECK_FALSE(present[i]);
  for (int i = 4; i < 14; ++i) CHECK(present[i]);
}

TEST_CASE("replay buffer: sampling is uniform (chi-squared)") {
  ReplayBuffer buf(20);
  CounterRng rng(5);
  for (int i = 0; i < 20; ++i) {
    Transition t = make_transition(rng, 2, 5);
    t.r = static_cast<double>(i);
    buf.push(std::move(t));
  }
  CounterRng sample_rng(17);
  std::vector<long> counts(20, 0);
  const long N = 100000;
  for (long i = 0; i < N; i += 64) {
    const auto batch = buf.sample(64, sample_rng);
    for (const Transition* t : batch) counts[static_cast<int>(t->r)]++;
  }
  long total = 0;
  for (long c : counts) total += c;
  const double expected = static_cast<double>(total) / 20.0;
  double chi2 = 0.0;
  for (long c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 19 dof, p = 0.01 critical value.
  CHECK(chi2 < 36.191);
}

TEST_CASE("policy extraction is invariant under positive affine transforms") {
  CounterRng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(5);
    for (double& v : q) v = rng.uniform(-5, 5);
    const double a = rng.uniform(0.1, 3.0);
    const double b = rng.uniform(-10, 10);
    std::vector<double> q2(5);
    for (int i = 0; i < 5; ++i) q2[i] = a * q[i] + b;
    CHECK(argmax_action(q) == argmax_action(q2));
  }
}

TEST_CASE("update: non-finite loss aborts the step") {
  TrainConfig cfg;
  DqnAgent agent(small_net(9), cfg);
  Transition t;
  t.s.assign(4, 0.0);
  t.s_next.assign(4, 0.0);
  t.a = 0;
  t.r = std::numeric_limits<double>::infinity();
  t.done = true;
  const auto before = agent.net().params();
  const UpdateReport rep = agent.update({&t});
  CHECK(rep.diverged);
  CHECK(agent.net().params() == before);
}

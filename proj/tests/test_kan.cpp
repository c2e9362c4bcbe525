#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "kdqn/kan.hpp"
#include "kdqn/rng.hpp"

using namespace kdqn;
using namespace kdqn::kan;

namespace {

// Textbook recursive Cox-de Boor evaluation, the independent oracle.
double naive_bspline(int i, int k, double x, const std::vector<double>& t) {
  if (k == 0) return (x >= t[i] && x < t[i + 1]) ? 1.0 : 0.0;
  double a = 0.0, b = 0.0;
  if (t[i + k] > t[i]) a = (x - t[i]) / (t[i + k] - t[i]) * naive_bspline(i, k - 1, x, t);
  if (t[i + k + 1] > t[i + 1])
    b = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * naive_bspline(i + 1, k - 1, x, t);
  return a + b;
}

// Straight-loop forward oracle over the flat parameter layout.
std::vector<double> naive_forward(const KanNetwork& net, const std::vector<double>& input) {
  const KanConfig& c = net.config();
  const auto& p = net.params();
  std::vector<double> x = input;
  for (int l = 0; l + 1 < static_cast<int>(c.widths.size()); ++l) {
    std::vector<double> y(c.widths[l + 1], 0.0);
    for (int i = 0; i < c.widths[l]; ++i) {
      const double xi = x[i];
      const double xc = std::clamp(xi, c.grid.lo, c.grid.hi);
      const std::vector<double> basis = bspline_basis(xc, c.grid);
      for (int o = 0; o < c.widths[l + 1]; ++o) {
        double spline = 0.0;
        for (int t = 0; t < c.grid.basis_count(); ++t)
          spline += p[net.theta_offset(l, i, o) + t] * basis[t];
        y[o] += p[net.alpha_offset(l, i, o)] * spline +
                p[net.beta_offset(l, i, o)] * silu(xi);
      }
    }
    x = std::move(y);
  }
  std::vector<double> q(c.out_dim, 0.0);
  for (int j = 0; j < c.out_dim; ++j) q[j] = p[net.b_offset() + j];
  for (int i = 0; i < static_cast<int>(x.size()); ++i)
    for (int j = 0; j < c.out_dim; ++j) q[j] += p[net.w_offset() + i * c.out_dim + j] * x[i];
  return q;
}

// Naive double-sum regularization oracle.
double naive_regularization(const KanNetwork& net) {
  const KanConfig& c = net.config();
  const auto& p = net.params();
  const int nb = c.grid.basis_count();
  double l1 = 0.0, smooth = 0.0;
  for (int l = 0; l + 1 < static_cast<int>(c.widths.size()); ++l) {
    const int units = c.widths[l] * c.widths[l + 1];
    std::vector<std::vector<double>> thetas(units);
    for (int i = 0; i < c.widths[l]; ++i)
      for (int o = 0; o < c.widths[l + 1]; ++o) {
        std::vector<double> th(nb);
        for (int t = 0; t < nb; ++t) th[t] = p[net.theta_offset(l, i, o) + t];
        for (double v : th) l1 += std::abs(v);
        thetas[i * c.widths[l + 1] + o] = th;
      }
    for (int a = 0; a < units; ++a)
      for (int b = 0; b < units; ++b) {
        if (a == b) continue;
        for (int t = 0; t < nb; ++t) smooth += std::abs(thetas[a][t] - thetas[b][t]);
      }
  }
  return c.lambda1 * l1 + c.lambda2 * smooth;
}

}  // namespace

TEST_CASE("SplineGrid: knot vector shape") {
  SplineGrid g;
  g.G = 5;
  g.k = 3;
  const auto t = g.knots();
  CHECK(t.size() == static_cast<size_t>(g.G + 2 * g.k + 1));
  for (size_t i = 1; i < t.size(); ++i) CHECK(t[i] >= t[i - 1]);
  CHECK(t[g.k] == doctest::Approx(g.lo));
  CHECK(t[g.G + g.k] == doctest::Approx(g.hi));
}

TEST_CASE("bspline_basis: partition of unity across random grids and orders") {
  CounterRng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    SplineGrid g;
    g.k = 1 + static_cast<int>(rng.uniform_int(3));  // orders 1..3
    g.G = 1 + static_cast<int>(rng.uniform_int(8));
    g.lo = rng.uniform(-3.0, 0.0);
    g.hi = g.lo + rng.uniform(0.5, 4.0);
    for (int s = 0; s < 25; ++s) {
      const double x = rng.uniform(g.lo, g.hi);
      const auto basis = bspline_basis(x, g);
      double sum = 0.0;
      for (double b : basis) {
        CHECK(b >= -1e-15);
        sum += b;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Clamped endpoints still sum to one.
    for (double x : {g.lo, g.hi, g.lo - 1.0, g.hi + 1.0}) {
      const auto basis = bspline_basis(x, g);
      double sum = 0.0;
      for (double b : basis) sum += b;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("bspline_basis: k=1 hat functions peak at knots") {
  SplineGrid g;
  g.k = 1;
  g.G = 4;
  g.lo = 0.0;
  g.hi = 1.0;
  // Interior knots 0.25, 0.5, 0.75 and the ends.
  for (double x : {0.25, 0.5, 0.75}) {
    const auto basis = bspline_basis(x, g);
    int ones = 0, zeros = 0;
    for (double b : basis) {
      if (std::abs(b - 1.0) < 1e-12) ++ones;
      if (std::abs(b) < 1e-12) ++zeros;
    }
    CHECK(ones == 1);
    CHECK(zeros == static_cast<int>(basis.size()) - 1);
  }
}

TEST_CASE("bspline_basis matches the recursive oracle") {
  CounterRng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    SplineGrid g;
    g.k = 1 + static_cast<int>(rng.uniform_int(3));
    g.G = 2 + static_cast<int>(rng.uniform_int(7));
    const auto knots = g.knots();
    const double x = rng.uniform(g.lo, g.hi - 1e-9);
    const auto fast = bspline_basis(x, g);
    for (int i = 0; i < g.basis_count(); ++i)
      CHECK(fast[i] == doctest::Approx(naive_bspline(i, g.k, x, knots)).epsilon(1e-12));
  }
  // The spec's named case: k=3, G=5, domain midpoint.
  SplineGrid g;
  g.k = 3;
  g.G = 5;
  const double mid = 0.5 * (g.lo + g.hi);
  const auto fast = bspline_basis(mid, g);
  const auto knots = g.knots();
  for (int i = 0; i < g.basis_count(); ++i)
    CHECK(fast[i] == doctest::Approx(naive_bspline(i, g.k, mid, knots)).epsilon(1e-12));
}

TEST_CASE("eval_basis: derivatives match finite differences") {
  CounterRng rng(9);
  SplineGrid g;
  for (int trial = 0; trial < 50; ++trial) {
    const double x = rng.uniform(g.lo + 0.01, g.hi - 0.01);
    const double h = 1e-6;
    const auto lo = bspline_basis(x - h, g);
    const auto hi = bspline_basis(x + h, g);
    const BasisEval e = eval_basis(g, x);
    for (int j = 0; j <= g.k; ++j) {
      const int idx = e.span - g.k + j;
      const double fd = (hi[idx] - lo[idx]) / (2 * h);
      CHECK(e.derivs[j] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("kan_activation: examples") {
  SplineGrid g;
  KanUnit u;
  u.theta.assign(g.basis_count(), 1.0);

  u.alpha = 0.0;
  u.beta = 1.0;
  CHECK(kan_activation(0.0, u, g) == doctest::Approx(0.0));  // SiLU(0) = 0

  u.alpha = 0.7;
  u.beta = 0.0;
  // All-ones theta: spline value is the basis sum = 1.
  CHECK(kan_activation(0.33, u, g) == doctest::Approx(0.7).epsilon(1e-12));

  CounterRng rng(3);
  for (double& t : u.theta) t = rng.normal();
  u.alpha = 1.0;
  u.beta = 1.0;
  const double x = 0.3;
  const auto basis = bspline_basis(x, g);
  double spline = 0.0;
  for (int i = 0; i < g.basis_count(); ++i) spline += u.theta[i] * basis[i];
  CHECK(kan_activation(x, u, g) == doctest::Approx(spline + silu(x)).epsilon(1e-12));
}

TEST_CASE("forward: zero parameters give the bias") {
  KanConfig c;
  c.widths = {4, 6};
  c.out_dim = 3;
  KanNetwork net(c, 1);
  std::fill(net.params().begin(), net.params().end(), 0.0);
  net.params()[net.b_offset() + 0] = 1.5;
  net.params()[net.b_offset() + 2] = -0.5;
  const auto q = net.forward(std::vector<double>{0.1, -0.2, 0.3, 0.9});
  CHECK(q[0] == doctest::Approx(1.5));
  CHECK(q[1] == doctest::Approx(0.0));
  CHECK(q[2] == doctest::Approx(-0.5));
}

TEST_CASE("forward: single-unit net matches the closed form") {
  KanConfig c;
  c.widths = {1, 1};
  c.out_dim = 1;
  KanNetwork net(c, 2);
  CounterRng rng(17);
  for (double& p : net.params()) p = rng.normal();
  const double x = 0.37;

  KanUnit u;
  u.theta.resize(c.grid.basis_count());
  for (int t = 0; t < c.grid.basis_count(); ++t) u.theta[t] = net.params()[net.theta_offset(0, 0, 0) + t];
  u.alpha = net.params()[net.alpha_offset(0, 0, 0)];
  u.beta = net.params()[net.beta_offset(0, 0, 0)];
  const double W = net.params()[net.w_offset()];
  const double b = net.params()[net.b_offset()];

  const auto q = net.forward(std::vector<double>{x});
  CHECK(q[0] == doctest::Approx(W * kan_activation(x, u, c.grid) + b).epsilon(1e-12));
}

TEST_CASE("forward matches an independent straight-loop oracle") {
  KanConfig c;
  c.widths = {5, 7, 4};
  c.out_dim = 3;
  KanNetwork net(c, 3);
  CounterRng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(5);
    for (double& v : x) v = rng.uniform(-1.5, 1.5);  // exercise clamping too
    const auto fast = net.forward(x);
    const auto slow = naive_forward(net, x);
    for (int j = 0; j < 3; ++j) CHECK(fast[j] == doctest::Approx(slow[j]).epsilon(1e-10));
  }
}

TEST_CASE("forward: width mismatch throws") {
  KanConfig c;
  c.widths = {4, 4};
  KanNetwork net(c, 1);
  CHECK_THROWS(net.forward(std::vector<double>{1.0, 2.0}));
}

TEST_CASE("regularization: examples and oracle") {
  // Two units whose first coefficients are {1, -1}: L1 gives 2, the ordered
  // pairwise sum gives 4; with unit lambdas the total is 6.
  KanConfig c;
  c.widths = {2, 1};
  c.out_dim = 1;
  c.grid.G = 1;
  c.grid.k = 1;
  c.lambda1 = 1.0;
  c.lambda2 = 1.0;
  KanNetwork net(c, 4);
  std::fill(net.params().begin(), net.params().end(), 0.0);
  net.params()[net.theta_offset(0, 0, 0)] = 1.0;
  net.params()[net.theta_offset(0, 1, 0)] = -1.0;
  CHECK(net.regularization() == doctest::Approx(6.0));

  // Equal thetas kill the smoothness term.
  net.params()[net.theta_offset(0, 1, 0)] = 1.0;
  CHECK(net.regularization() == doctest::Approx(2.0));

  // Disabled regularization.
  KanConfig c0 = c;
  c0.lambda1 = 0.0;
  c0.lambda2 = 0.0;
  KanNetwork net0(c0, 4);
  CHECK(net0.regularization() == doctest::Approx(0.0));
}

TEST_CASE("regularization matches the naive double sum on random nets") {
  KanConfig c;
  c.widths = {3, 4, 2};
  c.out_dim = 2;
  c.lambda1 = 0.3;
  c.lambda2 = 0.05;
  KanNetwork net(c, 5);
  CounterRng rng(31);
  for (double& p : net.params()) p = rng.normal();
  CHECK(net.regularization() == doctest::Approx(naive_regularization(net)).epsilon(1e-10));
}

TEST_CASE("apply_sharing: mean, idempotence, singleton, empty group") {
  KanConfig c;
  c.widths = {2, 1};
  c.out_dim = 1;
  KanNetwork net(c, 6);
  const int nb = c.grid.basis_count();
  for (int t = 0; t < nb; ++t) {
    net.params()[net.theta_offset(0, 0, 0) + t] = 0.0;
    net.params()[net.theta_offset(0, 1, 0) + t] = 2.0;
  }

  SUBCASE("singleton group leaves theta unchanged") {
    net.set_share_groups({{0}});
    net.apply_sharing();
    CHECK(net.params()[net.theta_offset(0, 0, 0)] == doctest::Approx(0.0));
  }
  SUBCASE("pair group averages and is idempotent") {
    net.set_share_groups({{0, 1}});
    net.apply_sharing();
    for (int t = 0; t < nb; ++t) {
      CHECK(net.params()[net.theta_offset(0, 0, 0) + t] == doctest::Approx(1.0));
      CHECK(net.params()[net.theta_offset(0, 1, 0) + t] == doctest::Approx(1.0));
    }
    const auto snapshot = net.params();
    net.apply_sharing();
    CHECK(net.params() == snapshot);
  }
  SUBCASE("empty group throws") { CHECK_THROWS(net.set_share_groups({{}})); }
}

TEST_CASE("backward: trivial gradient identities") {
  KanConfig c;
  c.widths = {2, 3};
  c.out_dim = 2;
  KanNetwork net(c, 7);
  CounterRng rng(41);
  for (double& p : net.params()) p = 0.3 * rng.normal();

  Workspace ws;
  const std::vector<double> x{0.2, -0.4};
  net.forward(x, ws);
  std::vector<double> grad(net.num_params(), 0.0);
  const std::vector<double> upstream{1.0, 1.0};
  net.backward(upstream, ws, grad);

  // Bias gradient equals the upstream gradient.
  CHECK(grad[net.b_offset() + 0] == doctest::Approx(1.0));
  CHECK(grad[net.b_offset() + 1] == doctest::Approx(1.0));

  // Alpha gradient equals upstream-through-W times the unit's spline value.
  const auto basis = bspline_basis(x[0], c.grid);
  double spline = 0.0;
  for (int t = 0; t < c.grid.basis_count(); ++t)
    spline += net.params()[net.theta_offset(0, 0, 0) + t] * basis[t];
  double wsum = 0.0;
  for (int j = 0; j < c.out_dim; ++j) wsum += net.params()[net.w_offset() + 0 * c.out_dim + j];
  CHECK(grad[net.alpha_offset(0, 0, 0)] == doctest::Approx(wsum * spline).epsilon(1e-10));
}

TEST_CASE("backward matches central finite differences") {
  CounterRng rng(53);
  KanConfig c;
  c.widths = {4, 5, 3};
  c.out_dim = 2;
  KanNetwork net(c, 8);
  for (double& p : net.params()) p = 0.5 * rng.normal();

  const std::vector<double> x{0.3, -0.7, 0.1, 0.9};
  const std::vector<double> weight{0.8, -1.3};

  auto scalar = [&](const KanNetwork& n) {
    const auto q = n.forward(x);
    return weight[0] * q[0] + weight[1] * q[1];
  };

  Workspace ws;
  net.forward(x, ws);
  std::vector<double> grad(net.num_params(), 0.0);
  net.backward(weight, ws, grad);

  const double h = 1e-5;
  double worst = 0.0;
  for (size_t i = 0; i < net.num_params(); i += 7) {  // sampled coordinates
    KanNetwork n2 = net;
    n2.params()[i] += h;
    const double up = scalar(n2);
    n2.params()[i] -= 2 * h;
    const double dn = scalar(n2);
    const double fd = (up - dn) / (2 * h);
    const double rel = std::abs(fd - grad[i]) / std::max({1.0, std::abs(fd), std::abs(grad[i])});
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("MLP backward matches finite differences") {
  CounterRng rng(59);
  MlpNetwork net({4, 6, 5}, 3, 9);
  const std::vector<double> x{0.2, -0.5, 1.1, 0.4};
  const std::vector<double> weight{1.0, -0.5, 0.25};
  auto scalar = [&](const MlpNetwork& n) {
    const auto q = n.forward(x);
    return weight[0] * q[0] + weight[1] * q[1] + weight[2] * q[2];
  };
  Workspace ws;
  net.forward(x, ws);
  std::vector<double> grad(net.num_params(), 0.0);
  net.backward(weight, ws, grad);
  const double h = 1e-6;
  for (size_t i = 0; i < net.num_params(); i += 5) {
    MlpNetwork n2 = net;
    n2.params()[i] += h;
    const double up = scalar(n2);
    n2.params()[i] -= 2 * h;
    const double dn = scalar(n2);
    const double fd = (up - dn) / (2 * h);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("checkpoint: bit-exact round trip") {
  KanConfig c;
  c.widths = {6, 8};
  c.out_dim = 5;
  QNetwork net{KanNetwork(c, 10)};
  std::stringstream buf;
  save_checkpoint(net, buf);
  const QNetwork back = load_checkpoint(buf);
  REQUIRE(back.num_params() == net.num_params());
  CHECK(std::memcmp(back.params().data(), net.params().data(), net.num_params() * 8) == 0);

  QNetwork mlp{MlpNetwork({6, 12}, 5, 11)};
  std::stringstream buf2;
  save_checkpoint(mlp, buf2);
  const QNetwork back2 = load_checkpoint(buf2);
  REQUIRE(back2.num_params() == mlp.num_params());
  CHECK(std::memcmp(back2.params().data(), mlp.params().data(), mlp.num_params() * 8) == 0);
}

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kdqn/rng.hpp"

namespace kdqn::kan {

// Uniform extended knot vector on [lo, hi]: G intervals, order k,
// G + 2k + 1 knots, G + k basis functions.
struct SplineGrid {
  double lo = -1.0;
  double hi = 1.0;
  int G = 5;
  int k = 3;

  int basis_count() const { return G + k; }
  double step() const { return (hi - lo) / G; }
  double knot(int i) const { return lo + (i - k) * step(); }  // i in [0, G + 2k]
  std::vector<double> knots() const;
};

// Non-zero basis values at x (clamped to [lo, hi]): k+1 values for indices
// span-k .. span.
struct BasisEval {
  int span = 0;                  // in [k, G+k-1]
  double values[8];              // supports k <= 7
  double derivs[8];
  bool clamped = false;          // x fell outside [lo, hi]
};

BasisEval eval_basis(const SplineGrid& grid, double x);

// Dense basis vector (G + k entries); Cox–de Boor values, non-negative,
// summing to 1 on [lo, hi].
std::vector<double> bspline_basis(double x, const SplineGrid& grid);

double silu(double x);
double silu_deriv(double x);

// One spline+SiLU edge activation: alpha * (theta . B(x)) + beta * SiLU(x).
struct KanUnit {
  std::vector<double> theta;
  double alpha = 1.0;
  double beta = 1.0;
  int share_group = -1;
};

double kan_activation(double x, const KanUnit& unit, const SplineGrid& grid);

struct KanConfig {
  std::vector<int> widths = {35, 64, 64};  // input width then KAN layer widths
  int out_dim = 5;                         // final affine output width
  SplineGrid grid;
  double lambda1 = 1e-5;
  double lambda2 = 1e-6;
  double alpha_bound = 5.0;
  double beta_bound = 5.0;
};

class Workspace;

// Layered KAN: every edge of consecutive widths carries a KanUnit, edge
// outputs are summed per target neuron, and a final affine map (W, b)
// produces the Q vector. Parameters live in one flat vector so optimizer
// steps, checkpoints, and finite-difference probes stay simple.
class KanNetwork {
public:
  KanNetwork() = default;
  KanNetwork(KanConfig config, uint64_t seed);

  int input_width() const { return config_.widths.front(); }
  int output_width() const { return config_.out_dim; }
  const KanConfig& config() const { return config_; }

  size_t num_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Forward pass without gradient caches.
  std::vector<double> forward(std::span<const double> input) const;
  // Forward pass recording caches for backward().
  std::vector<double> forward(std::span<const double> input, Workspace& ws) const;
  // Exact reverse-mode gradients of the recorded forward pass; accumulates
  // into grad (same length as params). Returns input gradient if needed.
  void backward(std::span<const double> upstream, const Workspace& ws,
                std::vector<double>& grad) const;

  // lambda1 * sum|theta| + lambda2 * sum_{i != j} |theta_i - theta_j| with the
  // pairwise sum ranging over units of the same layer, slot by slot.
  double regularization() const;
  void regularization_grad(std::vector<double>& grad) const;

  // Group-mean parameter sharing; idempotent. Throws on an empty group.
  void set_share_groups(const std::vector<std::vector<int>>& groups);
  void apply_sharing();

  // Flat-layout helpers (also used by tests).
  int num_layers() const { return static_cast<int>(config_.widths.size()) - 1; }
  int units_in_layer(int l) const { return config_.widths[l] * config_.widths[l + 1]; }
  int unit_block() const { return config_.grid.basis_count() + 2; }
  size_t unit_offset(int layer, int in, int out) const;
  size_t theta_offset(int layer, int in, int out) const { return unit_offset(layer, in, out); }
  size_t alpha_offset(int layer, int in, int out) const;
  size_t beta_offset(int layer, int in, int out) const;
  size_t w_offset() const { return w_offset_; }
  size_t b_offset() const { return b_offset_; }
  double alpha_max() const;
  double beta_max() const;
  void clamp_coefficients();

private:
  KanConfig config_;
  std::vector<double> params_;
  std::vector<size_t> layer_offsets_;
  size_t w_offset_ = 0;
  size_t b_offset_ = 0;
  std::vector<std::vector<int>> share_groups_;  // flat unit indices

  friend class Workspace;
};

// Plain affine + SiLU network of matched parameter count (the ablation
// baseline). Same flat-parameter conventions as KanNetwork.
class MlpNetwork {
public:
  MlpNetwork() = default;
  MlpNetwork(std::vector<int> widths, int out_dim, uint64_t seed);

  int input_width() const { return widths_.front(); }
  int output_width() const { return out_dim_; }
  size_t num_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<int>& widths() const { return widths_; }

  std::vector<double> forward(std::span<const double> input) const;
  std::vector<double> forward(std::span<const double> input, Workspace& ws) const;
  void backward(std::span<const double> upstream, const Workspace& ws,
                std::vector<double>& grad) const;
  double regularization() const { return 0.0; }

private:
  std::vector<int> widths_;  // input then hidden widths
  int out_dim_ = 0;
  std::vector<double> params_;
  std::vector<size_t> layer_offsets_;
  size_t b_offsets_base_ = 0;

  friend class Workspace;
};

// Scratch caches for one recorded forward pass.
class Workspace {
public:
  std::vector<std::vector<double>> acts;        // activations per layer (input first)
  std::vector<std::vector<BasisEval>> basis;    // per KAN layer, per input neuron
  std::vector<std::vector<double>> silu_vals;   // silu(x_i) per layer input
  std::vector<std::vector<double>> silu_ders;
};

// Either network behind one value-semantic handle.
class QNetwork {
public:
  QNetwork() = default;
  explicit QNetwork(KanNetwork net) : impl_(std::move(net)) {}
  explicit QNetwork(MlpNetwork net) : impl_(std::move(net)) {}

  bool is_kan() const { return std::holds_alternative<KanNetwork>(impl_); }
  KanNetwork& kan() { return std::get<KanNetwork>(impl_); }
  const KanNetwork& kan() const { return std::get<KanNetwork>(impl_); }
  MlpNetwork& mlp() { return std::get<MlpNetwork>(impl_); }
  const MlpNetwork& mlp() const { return std::get<MlpNetwork>(impl_); }

  int input_width() const;
  int output_width() const;
  size_t num_params() const;
  std::vector<double>& params();
  const std::vector<double>& params() const;

  std::vector<double> forward(std::span<const double> input) const;
  std::vector<double> forward(std::span<const double> input, Workspace& ws) const;
  void backward(std::span<const double> upstream, const Workspace& ws,
                std::vector<double>& grad) const;
  double regularization() const;
  void regularization_grad(std::vector<double>& grad) const;
  void clamp_coefficients();

private:
  std::variant<KanNetwork, MlpNetwork> impl_;
};

// Versioned binary checkpoint; bit-exact round trip.
void save_checkpoint(const QNetwork& net, const std::string& path);
QNetwork load_checkpoint(const std::string& path);
void save_checkpoint(const QNetwork& net, std::ostream& out);
QNetwork load_checkpoint(std::istream& in);

}  // namespace kdqn::kan

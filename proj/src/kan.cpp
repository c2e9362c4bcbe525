#include "kdqn/kan.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace kdqn::kan {

std::vector<double> SplineGrid::knots() const {
  std::vector<double> t(G + 2 * k + 1);
  for (int i = 0; i < static_cast<int>(t.size()); ++i) t[i] = knot(i);
  return t;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_deriv(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

BasisEval eval_basis(const SplineGrid& grid, double x) {
  BasisEval out;
  const int k = grid.k;
  double xc = x;
  if (xc < grid.lo) {
    xc = grid.lo;
    out.clamped = true;
  } else if (xc > grid.hi) {
    xc = grid.hi;
    out.clamped = true;
  }
  const double h = grid.step();
  int interval = static_cast<int>((xc - grid.lo) / h);
  interval = std::clamp(interval, 0, grid.G - 1);
  const int span = k + interval;  // t_span <= x < t_span+1
  out.span = span;

  // Cox-de Boor triangular recursion over the non-zero window.
  double left[9], right[9];
  double N[9];
  N[0] = 1.0;
  double Nm1[9] = {0};  // order k-1 values, for derivatives
  for (int d = 1; d <= k; ++d) {
    left[d] = xc - grid.knot(span + 1 - d);
    right[d] = grid.knot(span + d) - xc;
    double saved = 0.0;
    for (int r = 0; r < d; ++r) {
      const double denom = right[r + 1] + left[d - r];
      const double tmp = N[r] / denom;
      N[r] = saved + right[r + 1] * tmp;
      saved = left[d - r] * tmp;
    }
    N[d] = saved;
    if (d == k - 1)
      for (int i = 0; i < k; ++i) Nm1[i] = N[i];
  }
  for (int i = 0; i <= k; ++i) out.values[i] = N[i];

  // B'_{i,k} = k * (B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1})),
  // with B_{i,k-1} indexed over span-k+1 .. span.
  if (k == 0) {
    out.derivs[0] = 0.0;
  } else {
    for (int j = 0; j <= k; ++j) {
      const int i = span - k + j;
      const double bl = (j >= 1) ? Nm1[j - 1] : 0.0;  // B_{i,k-1}
      const double br = (j <= k - 1) ? Nm1[j] : 0.0;  // B_{i+1,k-1}
      double d = 0.0;
      d += bl / (grid.knot(i + k) - grid.knot(i));
      d -= br / (grid.knot(i + k + 1) - grid.knot(i + 1));
      out.derivs[j] = k * d;
    }
  }
  if (out.clamped)
    for (int i = 0; i <= k; ++i) out.derivs[i] = 0.0;
  return out;
}

std::vector<double> bspline_basis(double x, const SplineGrid& grid) {
  std::vector<double> full(grid.basis_count(), 0.0);
  const BasisEval e = eval_basis(grid, x);
  for (int j = 0; j <= grid.k; ++j) {
    const int idx = e.span - grid.k + j;
    if (idx >= 0 && idx < grid.basis_count()) full[idx] = e.values[j];
  }
  return full;
}

double kan_activation(double x, const KanUnit& unit, const SplineGrid& grid) {
  const BasisEval e = eval_basis(grid, x);
  double spline = 0.0;
  for (int j = 0; j <= grid.k; ++j) spline += unit.theta[e.span - grid.k + j] * e.values[j];
  return unit.alpha * spline + unit.beta * silu(x);
}

// ---------------------------------------------------------------------------
// KanNetwork

KanNetwork::KanNetwork(KanConfig config, uint64_t seed) : config_(std::move(config)) {
  if (config_.widths.size() < 2) throw std::invalid_argument("need at least one KAN layer");
  const int B = unit_block();
  size_t total = 0;
  layer_offsets_.clear();
  for (int l = 0; l + 1 < static_cast<int>(config_.widths.size()); ++l) {
    layer_offsets_.push_back(total);
    total += static_cast<size_t>(config_.widths[l]) * config_.widths[l + 1] * B;
  }
  w_offset_ = total;
  total += static_cast<size_t>(config_.widths.back()) * config_.out_dim;
  b_offset_ = total;
  total += config_.out_dim;
  params_.assign(total, 0.0);

  CounterRng rng(seed, 0x4b414e);
  for (int l = 0; l < num_layers(); ++l) {
    const int in = config_.widths[l];
    const int out = config_.widths[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < in; ++i) {
      for (int o = 0; o < out; ++o) {
        const size_t off = unit_offset(l, i, o);
        for (int t = 0; t < config_.grid.basis_count(); ++t)
          params_[off + t] = 0.1 * rng.normal();
        params_[alpha_offset(l, i, o)] = scale;
        params_[beta_offset(l, i, o)] = scale;
      }
    }
  }
  const int last = config_.widths.back();
  const double wscale = 1.0 / std::sqrt(static_cast<double>(last));
  for (int i = 0; i < last * config_.out_dim; ++i) params_[w_offset_ + i] = wscale * rng.normal();
}

size_t KanNetwork::unit_offset(int layer, int in, int out) const {
  return layer_offsets_[layer] +
         (static_cast<size_t>(in) * config_.widths[layer + 1] + out) * unit_block();
}

size_t KanNetwork::alpha_offset(int layer, int in, int out) const {
  return unit_offset(layer, in, out) + config_.grid.basis_count();
}

size_t KanNetwork::beta_offset(int layer, int in, int out) const {
  return unit_offset(layer, in, out) + config_.grid.basis_count() + 1;
}

std::vector<double> KanNetwork::forward(std::span<const double> input) const {
  thread_local Workspace scratch;
  return forward(input, scratch);
}

std::vector<double> KanNetwork::forward(std::span<const double> input, Workspace& ws) const {
  if (static_cast<int>(input.size()) != input_width())
    throw std::invalid_argument("input width mismatch");
  const int L = num_layers();
  const int k = config_.grid.k;
  const int B = unit_block();
  const int nb = config_.grid.basis_count();

  ws.acts.resize(L + 1);
  ws.basis.resize(L);
  ws.silu_vals.resize(L);
  ws.silu_ders.resize(L);
  ws.acts[0].assign(input.begin(), input.end());

  for (int l = 0; l < L; ++l) {
    const int in = config_.widths[l];
    const int out = config_.widths[l + 1];
    ws.basis[l].resize(in);
    ws.silu_vals[l].resize(in);
    ws.silu_ders[l].resize(in);
    ws.acts[l + 1].assign(out, 0.0);
    double* y = ws.acts[l + 1].data();
    for (int i = 0; i < in; ++i) {
      const double xi = ws.acts[l][i];
      BasisEval& be = ws.basis[l][i];
      be = eval_basis(config_.grid, xi);
      const double sv = silu(xi);
      ws.silu_vals[l][i] = sv;
      ws.silu_ders[l][i] = silu_deriv(xi);
      const int base_t = be.span - k;
      const double* p = params_.data() + unit_offset(l, i, 0);
      for (int o = 0; o < out; ++o, p += B) {
        double spline = 0.0;
        for (int j = 0; j <= k; ++j) spline += p[base_t + j] * be.values[j];
        y[o] += p[nb] * spline + p[nb + 1] * sv;
      }
    }
  }

  std::vector<double> q(config_.out_dim);
  const int last = config_.widths.back();
  const double* W = params_.data() + w_offset_;
  const double* b = params_.data() + b_offset_;
  for (int j = 0; j < config_.out_dim; ++j) q[j] = b[j];
  for (int i = 0; i < last; ++i) {
    const double xi = ws.acts[L][i];
    for (int j = 0; j < config_.out_dim; ++j) q[j] += W[i * config_.out_dim + j] * xi;
  }
  return q;
}

void KanNetwork::backward(std::span<const double> upstream, const Workspace& ws,
                          std::vector<double>& grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("grad size mismatch");
  const int L = num_layers();
  const int k = config_.grid.k;
  const int B = unit_block();
  const int nb = config_.grid.basis_count();
  const int last = config_.widths.back();

  // Affine head.
  std::vector<double> gy(last, 0.0);
  const double* W = params_.data() + w_offset_;
  for (int j = 0; j < config_.out_dim; ++j) grad[b_offset_ + j] += upstream[j];
  for (int i = 0; i < last; ++i) {
    const double xi = ws.acts[L][i];
    double acc = 0.0;
    for (int j = 0; j < config_.out_dim; ++j) {
      grad[w_offset_ + i * config_.out_dim + j] += xi * upstream[j];
      acc += W[i * config_.out_dim + j] * upstream[j];
    }
    gy[i] = acc;
  }

  for (int l = L - 1; l >= 0; --l) {
    const int in = config_.widths[l];
    const int out = config_.widths[l + 1];
    std::vector<double> gx(in, 0.0);
    for (int i = 0; i < in; ++i) {
      const BasisEval& be = ws.basis[l][i];
      const double sv = ws.silu_vals[l][i];
      const double sd = ws.silu_ders[l][i];
      const int base_t = be.span - k;
      const double* p = params_.data() + unit_offset(l, i, 0);
      double* g = grad.data() + unit_offset(l, i, 0);
      double gi = 0.0;
      for (int o = 0; o < out; ++o, p += B, g += B) {
        const double go = gy[o];
        if (go == 0.0) continue;
        double spline = 0.0, dspline = 0.0;
        for (int j = 0; j <= k; ++j) {
          spline += p[base_t + j] * be.values[j];
          dspline += p[base_t + j] * be.derivs[j];
        }
        const double alpha = p[nb];
        const double beta = p[nb + 1];
        for (int j = 0; j <= k; ++j) g[base_t + j] += go * alpha * be.values[j];
        g[nb] += go * spline;
        g[nb + 1] += go * sv;
        gi += go * (alpha * dspline + beta * sd);
      }
      gx[i] = gi;
    }
    gy = std::move(gx);
  }
}

namespace {

// Value and gradient of sum_{i != j} |x_i - x_j| over one coefficient slot,
// via sorting (exact, O(U log U)). Each unordered pair counts twice.
double pairwise_abs_sum(const std::vector<std::pair<double, size_t>>& sorted,
                        std::vector<double>* grad, double scale) {
  const size_t U = sorted.size();
  double value = 0.0;
  for (size_t m = 0; m < U; ++m)
    value += (2.0 * static_cast<double>(m) - static_cast<double>(U - 1)) * sorted[m].first;
  value *= 2.0;
  if (grad) {
    size_t i = 0;
    while (i < U) {
      size_t j = i;
      while (j + 1 < U && sorted[j + 1].first == sorted[i].first) ++j;
      const double less = static_cast<double>(i);
      const double greater = static_cast<double>(U - 1 - j);
      const double g = 2.0 * (less - greater) * scale;
      for (size_t m = i; m <= j; ++m) (*grad)[sorted[m].second] += g;
      i = j + 1;
    }
  }
  return value;
}

}  // namespace

double KanNetwork::regularization() const {
  double l1 = 0.0;
  double smooth = 0.0;
  const int nb = config_.grid.basis_count();
  std::vector<std::pair<double, size_t>> slot;
  for (int l = 0; l < num_layers(); ++l) {
    const int units = units_in_layer(l);
    for (int t = 0; t < nb; ++t) {
      slot.clear();
      for (int u = 0; u < units; ++u) {
        const size_t off = layer_offsets_[l] + static_cast<size_t>(u) * unit_block() + t;
        slot.emplace_back(params_[off], off);
      }
      for (auto& [v, off] : slot) l1 += std::abs(v);
      std::sort(slot.begin(), slot.end());
      smooth += pairwise_abs_sum(slot, nullptr, 0.0);
    }
  }
  return config_.lambda1 * l1 + config_.lambda2 * smooth;
}

void KanNetwork::regularization_grad(std::vector<double>& grad) const {
  const int nb = config_.grid.basis_count();
  std::vector<std::pair<double, size_t>> slot;
  for (int l = 0; l < num_layers(); ++l) {
    const int units = units_in_layer(l);
    for (int t = 0; t < nb; ++t) {
      slot.clear();
      for (int u = 0; u < units; ++u) {
        const size_t off = layer_offsets_[l] + static_cast<size_t>(u) * unit_block() + t;
        const double v = params_[off];
        if (v > 0)
          grad[off] += config_.lambda1;
        else if (v < 0)
          grad[off] -= config_.lambda1;
        slot.emplace_back(v, off);
      }
      std::sort(slot.begin(), slot.end());
      pairwise_abs_sum(slot, &grad, config_.lambda2);
    }
  }
}

void KanNetwork::set_share_groups(const std::vector<std::vector<int>>& groups) {
  for (const auto& g : groups)
    if (g.empty()) throw std::invalid_argument("empty share group");
  share_groups_ = groups;
}

void KanNetwork::apply_sharing() {
  const int nb = config_.grid.basis_count();
  const int B = unit_block();
  // Flat unit index u maps to layer-major order.
  std::vector<size_t> unit_bases;
  for (int l = 0; l < num_layers(); ++l)
    for (int u = 0; u < units_in_layer(l); ++u)
      unit_bases.push_back(layer_offsets_[l] + static_cast<size_t>(u) * B);
  for (const auto& group : share_groups_) {
    if (group.empty()) throw std::invalid_argument("empty share group");
    for (int t = 0; t < nb; ++t) {
      double mean = 0.0;
      for (int u : group) mean += params_[unit_bases.at(u) + t];
      mean /= static_cast<double>(group.size());
      for (int u : group) params_[unit_bases.at(u) + t] = mean;
    }
  }
}

double KanNetwork::alpha_max() const {
  double m = 0.0;
  for (int l = 0; l < num_layers(); ++l)
    for (int u = 0; u < units_in_layer(l); ++u) {
      const size_t off =
          layer_offsets_[l] + static_cast<size_t>(u) * unit_block() + config_.grid.basis_count();
      m = std::max(m, std::abs(params_[off]));
    }
  return m;
}

double KanNetwork::beta_max() const {
  double m = 0.0;
  for (int l = 0; l < num_layers(); ++l)
    for (int u = 0; u < units_in_layer(l); ++u) {
      const size_t off = layer_offsets_[l] + static_cast<size_t>(u) * unit_block() +
                         config_.grid.basis_count() + 1;
      m = std::max(m, std::abs(params_[off]));
    }
  return m;
}

void KanNetwork::clamp_coefficients() {
  for (int l = 0; l < num_layers(); ++l)
    for (int u = 0; u < units_in_layer(l); ++u) {
      const size_t base = layer_offsets_[l] + static_cast<size_t>(u) * unit_block();
      double& a = params_[base + config_.grid.basis_count()];
      double& b = params_[base + config_.grid.basis_count() + 1];
      a = std::clamp(a, -config_.alpha_bound, config_.alpha_bound);
      b = std::clamp(b, -config_.beta_bound, config_.beta_bound);
    }
}

// ---------------------------------------------------------------------------
// MlpNetwork

MlpNetwork::MlpNetwork(std::vector<int> widths, int out_dim, uint64_t seed)
    : widths_(std::move(widths)), out_dim_(out_dim) {
  if (widths_.empty()) throw std::invalid_argument("empty widths");
  size_t total = 0;
  std::vector<int> full = widths_;
  full.push_back(out_dim_);
  for (size_t l = 0; l + 1 < full.size(); ++l) {
    layer_offsets_.push_back(total);
    total += static_cast<size_t>(full[l]) * full[l + 1] + full[l + 1];
  }
  params_.assign(total, 0.0);
  CounterRng rng(seed, 0x4d4c50);
  for (size_t l = 0; l + 1 < full.size(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(full[l]));
    double* W = params_.data() + layer_offsets_[l];
    for (int i = 0; i < full[l] * full[l + 1]; ++i) W[i] = scale * rng.normal();
  }
}

std::vector<double> MlpNetwork::forward(std::span<const double> input) const {
  thread_local Workspace scratch;
  return forward(input, scratch);
}

std::vector<double> MlpNetwork::forward(std::span<const double> input, Workspace& ws) const {
  if (static_cast<int>(input.size()) != widths_.front())
    throw std::invalid_argument("input width mismatch");
  std::vector<int> full = widths_;
  full.push_back(out_dim_);
  const int L = static_cast<int>(full.size()) - 1;
  ws.acts.resize(L + 1);
  ws.silu_ders.resize(L);
  ws.acts[0].assign(input.begin(), input.end());
  for (int l = 0; l < L; ++l) {
    const int in = full[l];
    const int out = full[l + 1];
    const double* W = params_.data() + layer_offsets_[l];
    const double* b = W + static_cast<size_t>(in) * out;
    ws.acts[l + 1].assign(out, 0.0);
    double* y = ws.acts[l + 1].data();
    for (int j = 0; j < out; ++j) y[j] = b[j];
    for (int i = 0; i < in; ++i) {
      const double xi = ws.acts[l][i];
      const double* row = W + static_cast<size_t>(i) * out;
      for (int j = 0; j < out; ++j) y[j] += row[j] * xi;
    }
    if (l + 1 < L) {
      ws.silu_ders[l].resize(out);
      for (int j = 0; j < out; ++j) {
        ws.silu_ders[l][j] = silu_deriv(y[j]);
        y[j] = silu(y[j]);
      }
    }
  }
  return ws.acts[L];
}

void MlpNetwork::backward(std::span<const double> upstream, const Workspace& ws,
                          std::vector<double>& grad) const {
  std::vector<int> full = widths_;
  full.push_back(out_dim_);
  const int L = static_cast<int>(full.size()) - 1;
  std::vector<double> gy(upstream.begin(), upstream.end());
  for (int l = L - 1; l >= 0; --l) {
    const int in = full[l];
    const int out = full[l + 1];
    const double* W = params_.data() + layer_offsets_[l];
    double* gW = grad.data() + layer_offsets_[l];
    double* gb = gW + static_cast<size_t>(in) * out;
    // Hidden outputs pass through SiLU; the forward pass cached the
    // preactivation derivatives in silu_ders.
    std::vector<double> gpre(out);
    if (l + 1 < L) {
      for (int j = 0; j < out; ++j) gpre[j] = gy[j] * ws.silu_ders[l][j];
    } else {
      gpre = gy;
    }
    for (int j = 0; j < out; ++j) gb[j] += gpre[j];
    std::vector<double> gx(in, 0.0);
    for (int i = 0; i < in; ++i) {
      const double xi = ws.acts[l][i];
      const double* row = W + static_cast<size_t>(i) * out;
      double acc = 0.0;
      for (int j = 0; j < out; ++j) {
        gW[static_cast<size_t>(i) * out + j] += xi * gpre[j];
        acc += row[j] * gpre[j];
      }
      gx[i] = acc;
    }
    gy = std::move(gx);
  }
}

// ---------------------------------------------------------------------------
// QNetwork dispatch

int QNetwork::input_width() const {
  return is_kan() ? kan().input_width() : mlp().input_width();
}
int QNetwork::output_width() const {
  return is_kan() ? kan().output_width() : mlp().output_width();
}
size_t QNetwork::num_params() const { return is_kan() ? kan().num_params() : mlp().num_params(); }
std::vector<double>& QNetwork::params() { return is_kan() ? kan().params() : mlp().params(); }
const std::vector<double>& QNetwork::params() const {
  return is_kan() ? kan().params() : mlp().params();
}
std::vector<double> QNetwork::forward(std::span<const double> input) const {
  return is_kan() ? kan().forward(input) : mlp().forward(input);
}
std::vector<double> QNetwork::forward(std::span<const double> input, Workspace& ws) const {
  return is_kan() ? kan().forward(input, ws) : mlp().forward(input, ws);
}
void QNetwork::backward(std::span<const double> upstream, const Workspace& ws,
                        std::vector<double>& grad) const {
  if (is_kan())
    kan().backward(upstream, ws, grad);
  else
    mlp().backward(upstream, ws, grad);
}
double QNetwork::regularization() const { return is_kan() ? kan().regularization() : 0.0; }
void QNetwork::regularization_grad(std::vector<double>& grad) const {
  if (is_kan()) kan().regularization_grad(grad);
}
void QNetwork::clamp_coefficients() {
  if (is_kan()) kan().clamp_coefficients();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr uint32_t kMagic = 0x4b44514e;  // "KDQN"
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return v;
}

void write_vec_i32(std::ostream& out, const std::vector<int>& v) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(v.size()));
  for (int x : v) write_pod<int32_t>(out, x);
}

std::vector<int> read_vec_i32(std::istream& in) {
  const uint32_t n = read_pod<uint32_t>(in);
  std::vector<int> v(n);
  for (uint32_t i = 0; i < n; ++i) v[i] = read_pod<int32_t>(in);
  return v;
}

}  // namespace

void save_checkpoint(const QNetwork& net, std::ostream& out) {
  write_pod(out, kMagic);
  write_pod(out, kVersion);
  write_pod<uint8_t>(out, net.is_kan() ? 0 : 1);
  if (net.is_kan()) {
    const KanConfig& c = net.kan().config();
    write_vec_i32(out, c.widths);
    write_pod<int32_t>(out, c.out_dim);
    write_pod<int32_t>(out, c.grid.G);
    write_pod<int32_t>(out, c.grid.k);
    write_pod(out, c.grid.lo);
    write_pod(out, c.grid.hi);
    write_pod(out, c.lambda1);
    write_pod(out, c.lambda2);
    write_pod(out, c.alpha_bound);
    write_pod(out, c.beta_bound);
  } else {
    write_vec_i32(out, net.mlp().widths());
    write_pod<int32_t>(out, net.mlp().output_width());
  }
  const auto& p = net.params();
  write_pod<uint64_t>(out, p.size());
  out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * 8));
}

QNetwork load_checkpoint(std::istream& in) {
  if (read_pod<uint32_t>(in) != kMagic) throw std::runtime_error("bad checkpoint magic");
  if (read_pod<uint32_t>(in) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  const uint8_t kind = read_pod<uint8_t>(in);
  QNetwork net;
  if (kind == 0) {
    KanConfig c;
    c.widths = read_vec_i32(in);
    c.out_dim = read_pod<int32_t>(in);
    c.grid.G = read_pod<int32_t>(in);
    c.grid.k = read_pod<int32_t>(in);
    c.grid.lo = read_pod<double>(in);
    c.grid.hi = read_pod<double>(in);
    c.lambda1 = read_pod<double>(in);
    c.lambda2 = read_pod<double>(in);
    c.alpha_bound = read_pod<double>(in);
    c.beta_bound = read_pod<double>(in);
    net = QNetwork(KanNetwork(c, 0));
  } else {
    auto widths = read_vec_i32(in);
    const int out_dim = read_pod<int32_t>(in);
    net = QNetwork(MlpNetwork(widths, out_dim, 0));
  }
  const uint64_t n = read_pod<uint64_t>(in);
  if (n != net.num_params()) throw std::runtime_error("checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(net.params().data()), static_cast<std::streamsize>(n * 8));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return net;
}

void save_checkpoint(const QNetwork& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  save_checkpoint(net, f);
}

QNetwork load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_checkpoint(f);
}

}  // namespace kdqn::kan

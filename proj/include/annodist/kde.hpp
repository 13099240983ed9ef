#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "annodist/autodiff.hpp"
#include "annodist/core.hpp"
#include "annodist/dct.hpp"
#include "annodist/errors.hpp"
#include "annodist/softhist.hpp"
#include "annodist/tensor.hpp"

namespace annodist {

// Diffusion-KDE configuration over the fixed domain [-1,1]^2. Bandwidths are
// diffusion times in unit-domain coordinates: smoothing with time t equals a
// Gaussian kernel of standard deviation sqrt(t) * 2 in data units.
struct KdeConfig {
  enum class Bandwidth { automatic, fixed };
  int grid_size = 512;
  Bandwidth mode = Bandwidth::automatic;
  double t_act = 0.0;
  double t_val = 0.0;

  static KdeConfig auto_bandwidth(int grid) {
    KdeConfig c;
    c.grid_size = grid;
    return c;
  }
  static KdeConfig fixed_bandwidth(int grid, double t_act, double t_val) {
    KdeConfig c;
    c.grid_size = grid;
    c.mode = Bandwidth::fixed;
    c.t_act = t_act;
    c.t_val = t_val;
    return c;
  }
};

struct BandwidthResult {
  double t = 0.0;
  bool silverman_fallback = false;
};

namespace detail {

// Botev-style fixed-point functional xi*gamma^[l](t) for the improved
// Sheather-Jones diffusion time, evaluated from the squared histogram DCT
// coefficients a2[k] (k = 1..G-1) of the relative frequencies.
inline double diffusion_xi_gamma(double t, int n_samples, const std::vector<double>& a2) {
  const int l = 7;
  const int m = static_cast<int>(a2.size());  // coefficients 1..G-1
  const double pi = kPi;
  auto weighted_sum = [&](int s, double time) {
    double acc = 0.0;
    for (int k = 1; k <= m; ++k) {
      const double k2 = static_cast<double>(k) * k;
      acc += std::pow(k2, s) * a2[k - 1] * std::exp(-k2 * pi * pi * time);
    }
    return 2.0 * std::pow(pi, 2.0 * s) * acc;
  };
  double f = weighted_sum(l, t);
  for (int s = l - 1; s >= 2; --s) {
    double odd_factorial = 1.0;  // (2s-1)!!
    for (int i = 3; i <= 2 * s - 1; i += 2) odd_factorial *= i;
    const double k0 = odd_factorial / std::sqrt(2.0 * pi);
    const double c = (1.0 + std::pow(0.5, s + 0.5)) / 3.0;
    const double time = std::pow(2.0 * c * k0 / (n_samples * f), 2.0 / (3.0 + 2.0 * s));
    f = weighted_sum(s, time);
  }
  return std::pow(2.0 * n_samples * std::sqrt(pi) * f, -0.4);
}

// Silverman's rule of thumb mapped to unit-domain diffusion time, computed
// from histogram moments. Clamped below by half a grid cell so degenerate
// data still yields a positive time.
inline double silverman_time(const std::vector<double>& p, int n_samples) {
  const int g = static_cast<int>(p.size());
  double m1 = 0.0, m2 = 0.0;
  for (int j = 0; j < g; ++j) {
    const double u = (j + 0.5) / g;
    m1 += p[j] * u;
    m2 += p[j] * u * u;
  }
  const double var = std::max(m2 - m1 * m1, 0.0);
  const double h = std::sqrt(var) * std::pow(4.0 / (3.0 * n_samples), 0.2);
  const double floor_h = 0.5 / g;
  return std::max(h * h, floor_h * floor_h);
}

}  // namespace detail

// Improved Sheather-Jones diffusion time for one axis, selected from that
// axis's marginal histogram. Falls back to Silverman's rule when the fixed
// point t = xi*gamma(t) cannot be bracketed away from t = 0.
inline BandwidthResult select_bandwidth(const std::vector<double>& histogram, int n_samples) {
  if (n_samples < 2) throw NumericError("select_bandwidth: needs at least 2 samples");
  if (!is_pow2(static_cast<int>(histogram.size())))
    throw NumericError("select_bandwidth: histogram length must be a power of two");
  double total = 0.0;
  for (double v : histogram) {
    if (v < 0.0 || !std::isfinite(v))
      throw std::invalid_argument("select_bandwidth: histogram must be nonnegative and finite");
    total += v;
  }
  if (total <= 0.0) throw std::invalid_argument("select_bandwidth: histogram total must be positive");

  std::vector<double> p(histogram.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = histogram[i] / total;

  std::vector<double> coeffs = p;
  detail::dct2_halfcos(coeffs);
  std::vector<double> a2(coeffs.size() - 1);
  for (std::size_t k = 1; k < coeffs.size(); ++k) a2[k - 1] = coeffs[k] * coeffs[k];

  auto g = [&](double t) { return t - detail::diffusion_xi_gamma(t, n_samples, a2); };

  // Diffusion times below half a grid cell are indistinguishable from no
  // smoothing; a "root" there means the asymptotics collapsed (e.g. all
  // samples equal) and counts as a fixed-point failure.
  const double t_floor = 0.25 / (static_cast<double>(p.size()) * p.size());
  const double lo = 1e-12, hi = 0.1;
  const double glo = g(lo), ghi = g(hi);
  if (!std::isfinite(glo) || !std::isfinite(ghi) || glo >= 0.0 || ghi <= 0.0)
    return {detail::silverman_time(p, n_samples), true};

  double a = lo, b = hi;
  for (int it = 0; it < 200 && b - a > 1e-16 * b; ++it) {
    const double mid = 0.5 * (a + b);
    if (g(mid) < 0.0)
      a = mid;
    else
      b = mid;
  }
  const double t = 0.5 * (a + b);
  if (!std::isfinite(t) || t <= t_floor) return {detail::silverman_time(p, n_samples), true};
  return {t, false};
}

namespace detail {

inline int grid_index(double v, int g) {
  int idx = static_cast<int>((v + 1.0) * 0.5 * g);
  return std::clamp(idx, 0, g - 1);
}

inline void attenuate(Tensor& coeffs, double t_act, double t_val) {
  const int g = coeffs.rows();
  std::vector<double> da(g), dv(g);
  for (int k = 0; k < g; ++k) {
    const double f = kPi * kPi * static_cast<double>(k) * k * 0.5;
    da[k] = std::exp(-f * t_act);
    dv[k] = std::exp(-f * t_val);
  }
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) coeffs(r, c) *= da[r] * dv[c];
}

inline void clip_normalize(Tensor& grid) {
  double total = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0) grid[i] = 0.0;
    total += grid[i];
  }
  if (!(total > 0.0)) throw NumericError("kde: smoothed grid has no mass");
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] /= total;
}

struct AxisTimes {
  double t_act, t_val;
  bool fallback_act = false, fallback_val = false;
};

inline AxisTimes resolve_bandwidth(const Tensor& histogram, int n, const KdeConfig& cfg) {
  AxisTimes out{cfg.t_act, cfg.t_val};
  if (cfg.mode == KdeConfig::Bandwidth::fixed) {
    if (!(cfg.t_act > 0.0) || !(cfg.t_val > 0.0))
      throw std::invalid_argument("kde: fixed bandwidths must be positive");
    return out;
  }
  const int g = histogram.rows();
  std::vector<double> act_marginal(g, 0.0), val_marginal(g, 0.0);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      act_marginal[r] += histogram(r, c);
      val_marginal[c] += histogram(r, c);
    }
  BandwidthResult ba = select_bandwidth(act_marginal, n);
  BandwidthResult bv = select_bandwidth(val_marginal, n);
  out.t_act = ba.t;
  out.t_val = bv.t;
  out.fallback_act = ba.silverman_fallback;
  out.fallback_val = bv.silverman_fallback;
  return out;
}

}  // namespace detail

// Diffusion KDE over [-1,1]^2: hard histogram -> DCT -> per-axis Gaussian
// attenuation exp(-(pi k)^2 t / 2) -> inverse DCT -> clip negatives -> sum 1.
inline ProbabilityGrid kde2d(const std::vector<double>& act, const std::vector<double>& val,
                             const KdeConfig& cfg) {
  if (act.size() != val.size()) throw std::invalid_argument("kde2d: act/val length mismatch");
  if (act.size() < 2) throw NumericError("kde2d: needs at least 2 observations");
  if (!is_pow2(cfg.grid_size) || cfg.grid_size < 8)
    throw NumericError("kde2d: grid size must be a power of two >= 8");
  const int g = cfg.grid_size;
  Tensor hist(g, g);
  for (std::size_t i = 0; i < act.size(); ++i) {
    const double a = std::clamp(act[i], -1.0, 1.0);
    const double v = std::clamp(val[i], -1.0, 1.0);
    hist(detail::grid_index(a, g), detail::grid_index(v, g)) += 1.0;
  }
  const detail::AxisTimes t = detail::resolve_bandwidth(hist, static_cast<int>(act.size()), cfg);
  Tensor coeffs = dct2_forward(hist);
  detail::attenuate(coeffs, t.t_act, t.t_val);
  Tensor smoothed = dct2_inverse(coeffs);
  detail::clip_normalize(smoothed);
  return ProbabilityGrid{g, std::move(smoothed)};
}

namespace detail {

// S = C^T diag(exp(-(pi k)^2 t / 2)) C, the diffusion-smoothing operator for
// one axis as a dense symmetric matrix.
inline Tensor smoothing_operator(int g, double t) {
  const Tensor& c = [g]() -> const Tensor& {
    static thread_local Tensor cached;
    static thread_local int cached_g = -1;
    if (cached_g != g) {
      cached = dct2_matrix(g);
      cached_g = g;
    }
    return cached;
  }();
  Tensor dc(g, g);
  for (int k = 0; k < g; ++k) {
    const double d = std::exp(-kPi * kPi * static_cast<double>(k) * k * 0.5 * t);
    for (int j = 0; j < g; ++j) dc(k, j) = d * c(k, j);
  }
  Tensor s(g, g);
  matmul_tn_into(c, dc, s);
  return s;
}

}  // namespace detail

// Differentiable KDE: identical pipeline to kde2d but seeded with the soft
// histogram. The bandwidth is selected from the detached histogram values and
// treated as a constant during backpropagation.
inline ad::Var diffkde(ad::Tape& tape, ad::Var act, ad::Var val, const SoftHistConfig& hist_cfg,
                       const KdeConfig& kde_cfg) {
  if (kde_cfg.grid_size != hist_cfg.bins)
    throw std::invalid_argument("diffkde: kde grid size must equal soft-histogram bins");
  if (!is_pow2(kde_cfg.grid_size) || kde_cfg.grid_size < 8)
    throw NumericError("diffkde: grid size must be a power of two >= 8");
  if (act.rows() < 2) throw NumericError("diffkde: needs at least 2 observations");

  ad::Var hist = soft_histogram_2d_t(tape, act, val, hist_cfg);
  const detail::AxisTimes t =
      detail::resolve_bandwidth(hist.value(), act.rows(), kde_cfg);
  ad::Var s_act = tape.constant(detail::smoothing_operator(kde_cfg.grid_size, t.t_act));
  ad::Var s_val = tape.constant(detail::smoothing_operator(kde_cfg.grid_size, t.t_val));
  ad::Var smoothed = tape.matmul(tape.matmul(s_act, hist), s_val);  // S_a H S_v, both symmetric
  ad::Var clipped = tape.relu(smoothed);
  ad::Var total = tape.sum(clipped);
  if (!(total.item() > 0.0)) throw NumericError("diffkde: smoothed grid has no mass");
  return tape.div_bc(clipped, total);
}

// Mean over (G/N)x(G/N) blocks, renormalized to sum 1.
inline BinnedDistribution bin_grid(const ProbabilityGrid& grid, int n) {
  if (n < 1 || grid.size % n != 0)
    throw std::invalid_argument("bin_grid: grid size must be divisible by bin count");
  const int block = grid.size / n;
  Tensor out(n, n);
  for (int r = 0; r < grid.size; ++r)
    for (int c = 0; c < grid.size; ++c) out(r / block, c / block) += grid.cells(r, c);
  const double scale = 1.0 / (static_cast<double>(block) * block);
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= scale;  // block mean
    total += out[i];
  }
  if (!(total > 0.0)) throw NumericError("bin_grid: grid has no mass");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
  return BinnedDistribution{n, std::move(out)};
}

// Tape version of bin_grid on a B x B grid Var.
inline ad::Var bin_grid_t(ad::Tape& tape, ad::Var grid, int n) {
  const int g = grid.rows();
  if (grid.cols() != g) throw std::invalid_argument("bin_grid_t: grid must be square");
  if (n < 1 || g % n != 0)
    throw std::invalid_argument("bin_grid_t: grid size must be divisible by bin count");
  const int block = g / n;
  Tensor pool(n, g);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < block; ++j) pool(i, i * block + j) = 1.0 / block;
  ad::Var p = tape.constant(pool);
  ad::Var means = tape.matmul(tape.matmul(p, grid), tape.transpose(p));
  return tape.div_bc(means, tape.sum(means));
}

}  // namespace annodist

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "annodist/rng.hpp"
#include "annodist/tensor.hpp"

namespace testutil {

using annodist::Rng;
using annodist::Tensor;

// Relative error with a floor so that genuinely-zero gradients compare equal.
inline double rel_err(double a, double b) {
  const double diff = std::fabs(a - b);
  const double scale = std::max(std::fabs(a), std::fabs(b));
  if (scale < 1e-9) return diff < 1e-9 ? 0.0 : diff / 1e-9;
  return diff / std::max(scale, 1e-6);
}

// Central finite differences over every coordinate of the given tensors.
// eval() must recompute the forward pass from the (mutated) tensors.
inline double max_fd_rel_err(const std::vector<Tensor*>& inputs,
                             const std::vector<const Tensor*>& analytic,
                             const std::function<double()>& eval, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = *inputs[t];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double fp = eval();
      x[i] = orig - h;
      const double fm = eval();
      x[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(fd, (*analytic[t])[i]));
    }
  }
  return worst;
}

inline std::vector<double> random_vector(Rng& rng, int n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_tensor(Rng& rng, int rows, int cols, double lo, double hi) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Hard 2D histogram over [-1,1]^2 with b bins per axis; rows are activation.
inline Tensor hard_histogram_2d(const std::vector<double>& act, const std::vector<double>& val,
                                int b) {
  Tensor h(b, b);
  auto index = [b](double v) {
    int i = static_cast<int>((v + 1.0) * 0.5 * b);
    return std::min(std::max(i, 0), b - 1);
  };
  for (std::size_t i = 0; i < act.size(); ++i) h(index(act[i]), index(val[i])) += 1.0;
  return h;
}

// Values that keep at least `margin` distance from every bin edge of a
// b-bin partition of [-1,1].
inline std::vector<double> edge_safe_values(Rng& rng, int n, int b, double margin) {
  const double width = 2.0 / b;
  std::vector<double> v(n);
  for (double& x : v) {
    const int cell = static_cast<int>(rng.below(b));
    const double lo = -1.0 + cell * width + margin;
    const double hi = -1.0 + (cell + 1) * width - margin;
    x = rng.uniform(lo, hi);
  }
  return v;
}

// Brute-force separable Gaussian KDE evaluated at cell centers of a g-grid
// over [-1,1]^2 and normalized to sum 1. sigma_* are in data units.
inline Tensor gaussian_kde_oracle(const std::vector<double>& act, const std::vector<double>& val,
                                  int g, double sigma_act, double sigma_val) {
  Tensor out(g, g);
  const double width = 2.0 / g;
  for (int r = 0; r < g; ++r) {
    const double a = -1.0 + (r + 0.5) * width;
    for (int c = 0; c < g; ++c) {
      const double v = -1.0 + (c + 0.5) * width;
      double s = 0.0;
      for (std::size_t i = 0; i < act.size(); ++i) {
        const double da = (a - act[i]) / sigma_act;
        const double dv = (v - val[i]) / sigma_val;
        s += std::exp(-0.5 * (da * da + dv * dv));
      }
      out(r, c) = s;
    }
  }
  const double total = out.sum();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
  return out;
}

}  // namespace testutil

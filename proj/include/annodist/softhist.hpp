#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "annodist/autodiff.hpp"
#include "annodist/tensor.hpp"

namespace annodist {

// Sigmoid soft-histogram configuration over the fixed domain [-1, 1].
struct SoftHistConfig {
  int bins = 64;       // B
  double sigma = 8.0;  // sharpness; larger values approach a hard histogram
  double delta() const { return 2.0 / bins; }
};

// Centers of B equal bins over [-1, 1]: c_i = -1 + (2i+1)/B.
inline std::vector<double> bin_centers(const SoftHistConfig& cfg) {
  std::vector<double> c(cfg.bins);
  for (int i = 0; i < cfg.bins; ++i)
    c[i] = -1.0 + (2.0 * i + 1.0) * cfg.delta() * 0.5;
  return c;
}

// Per-annotation fractional bin weights:
//   w[i][j] = sigmoid(sigma*(x + delta/2)) - sigmoid(sigma*(x - delta/2)),
// with x = a_i - c_j. Rows are annotations, columns bins.
inline Tensor soft_weights_1d(const std::vector<double>& annotations, const SoftHistConfig& cfg) {
  const std::vector<double> centers = bin_centers(cfg);
  const double half = cfg.delta() * 0.5;
  Tensor w(static_cast<int>(annotations.size()), cfg.bins);
  for (int i = 0; i < w.rows(); ++i) {
    for (int j = 0; j < cfg.bins; ++j) {
      const double x = annotations[i] - centers[j];
      w(i, j) = ad::Tape::stable_sigmoid(cfg.sigma * (x + half)) -
                ad::Tape::stable_sigmoid(cfg.sigma * (x - half));
    }
  }
  return w;
}

// 2D soft histogram: soft_weights(act)^T * soft_weights(val), a B x B matrix
// with rows indexing activation bins.
inline Tensor soft_histogram_2d(const std::vector<double>& act, const std::vector<double>& val,
                                const SoftHistConfig& cfg) {
  if (act.size() != val.size())
    throw std::invalid_argument("soft_histogram_2d: act/val length mismatch");
  if (act.empty()) throw std::invalid_argument("soft_histogram_2d: empty observation set");
  Tensor wa = soft_weights_1d(act, cfg);
  Tensor wv = soft_weights_1d(val, cfg);
  Tensor out(cfg.bins, cfg.bins);
  matmul_tn_into(wa, wv, out);
  return out;
}

// Tape version of soft_weights_1d; a is an n x 1 column.
inline ad::Var soft_weights_1d_t(ad::Tape& tape, ad::Var a, const SoftHistConfig& cfg) {
  if (a.cols() != 1) throw std::invalid_argument("soft_weights_1d_t: input must be a column");
  const int n = a.rows();
  const std::vector<double> centers = bin_centers(cfg);
  Tensor center_row(1, cfg.bins);
  for (int j = 0; j < cfg.bins; ++j) center_row(0, j) = centers[j];
  // x[i][j] = a_i - c_j via rank-1 products with constants
  ad::Var x = tape.sub(tape.matmul(a, tape.constant(Tensor::full(1, cfg.bins, 1.0))),
                       tape.matmul(tape.constant(Tensor::full(n, 1, 1.0)), tape.constant(center_row)));
  const double half = cfg.delta() * 0.5;
  ad::Var upper = tape.sigmoid(tape.mul_scalar(tape.add_scalar(x, half), cfg.sigma));
  ad::Var lower = tape.sigmoid(tape.mul_scalar(tape.add_scalar(x, -half), cfg.sigma));
  return tape.sub(upper, lower);
}

inline ad::Var soft_histogram_2d_t(ad::Tape& tape, ad::Var act, ad::Var val,
                                   const SoftHistConfig& cfg) {
  if (act.rows() != val.rows())
    throw std::invalid_argument("soft_histogram_2d_t: act/val length mismatch");
  if (act.rows() == 0) throw std::invalid_argument("soft_histogram_2d_t: empty observation set");
  ad::Var wa = soft_weights_1d_t(tape, act, cfg);
  ad::Var wv = soft_weights_1d_t(tape, val, cfg);
  return tape.matmul(tape.transpose(wa), wv);
}

}  // namespace annodist

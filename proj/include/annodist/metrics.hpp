#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "annodist/autodiff.hpp"
#include "annodist/core.hpp"

namespace annodist {

namespace detail {

struct Moments {
  double mean = 0.0, var = 0.0;  // population variance
};

inline Moments moments(std::span<const double> x) {
  Moments m;
  const double n = static_cast<double>(x.size());
  for (double v : x) m.mean += v;
  m.mean /= n;
  for (double v : x) m.var += (v - m.mean) * (v - m.mean);
  m.var /= n;
  return m;
}

}  // namespace detail

struct CccResult {
  double value = 0.0;
  bool degenerate = false;  // both sequences constant
};

// Lin's concordance correlation coefficient with population moments:
//   2 cov(x,y) / (var(x) + var(y) + (mean(x) - mean(y))^2).
// Both sequences constant: 1 when equal, 0 otherwise (degenerate flag set).
inline CccResult ccc_detailed(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("ccc: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("ccc: needs at least 2 pairs");
  auto is_constant = [](std::span<const double> v) {
    for (double e : v)
      if (e != v.front()) return false;
    return true;
  };
  if (is_constant(x) && is_constant(y)) return {x.front() == y.front() ? 1.0 : 0.0, true};
  const auto mx = detail::moments(x);
  const auto my = detail::moments(y);
  double cov = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) cov += (x[i] - mx.mean) * (y[i] - my.mean);
  cov /= static_cast<double>(x.size());
  const double dm = mx.mean - my.mean;
  return {2.0 * cov / (mx.var + my.var + dm * dm), false};
}

inline double ccc(std::span<const double> x, std::span<const double> y) {
  return ccc_detailed(x, y).value;
}

// Task 1 loss: 2 - CCC(m_act, act) - CCC(m_val, val).
inline double ccc_loss(std::span<const double> pred_act, std::span<const double> act,
                       std::span<const double> pred_val, std::span<const double> val) {
  return 2.0 - ccc(pred_act, act) - ccc(pred_val, val);
}

namespace detail {
inline void require_same_bins(const BinnedDistribution& p, const BinnedDistribution& q,
                              const char* what) {
  if (p.n != q.n || !p.cells.same_shape(q.cells))
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}
}  // namespace detail

// Total variation distance, 0.5 * sum |p - q|.
inline double tvd(const BinnedDistribution& p, const BinnedDistribution& q) {
  detail::require_same_bins(p, q, "tvd");
  double s = 0.0;
  for (std::size_t i = 0; i < p.cells.size(); ++i) s += std::fabs(p.cells[i] - q.cells[i]);
  return 0.5 * s;
}

// Jensen-Shannon divergence with the natural logarithm; bounded by ln 2.
inline double jsd(const BinnedDistribution& p, const BinnedDistribution& q) {
  detail::require_same_bins(p, q, "jsd");
  double s = 0.0;
  for (std::size_t i = 0; i < p.cells.size(); ++i) {
    const double pi = p.cells[i], qi = q.cells[i];
    const double mi = 0.5 * (pi + qi);
    if (pi > 0.0) s += 0.5 * pi * std::log(pi / mi);
    if (qi > 0.0) s += 0.5 * qi * std::log(qi / mi);
  }
  return s;
}

// -sum target * log(pred + 1e-8); the epsilon avoids log of 0.
inline double cross_entropy(const BinnedDistribution& target, const BinnedDistribution& pred) {
  detail::require_same_bins(target, pred, "cross_entropy");
  double s = 0.0;
  for (std::size_t i = 0; i < target.cells.size(); ++i)
    s -= target.cells[i] * std::log(pred.cells[i] + 1e-8);
  return s;
}

// Marginalizes a 4x4 distribution and dots each marginal with the paper's
// bin-value weights [-1, -0.5, 0.5, 1].
inline std::pair<double, double> consensus_from_distribution(const BinnedDistribution& d) {
  if (d.n != 4) throw std::invalid_argument("consensus_from_distribution: requires N = 4");
  static constexpr double kWeights[4] = {-1.0, -0.5, 0.5, 1.0};
  double act = 0.0, val = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      act += kWeights[i] * d.cells(i, j);
      val += kWeights[j] * d.cells(i, j);
    }
  return {act, val};
}

// ---- tape versions used as training losses ----

inline ad::Var ccc_t(ad::Tape& t, ad::Var x, ad::Var y) {
  ad::Var mx = t.mean(x);
  ad::Var my = t.mean(y);
  ad::Var cov = t.sub(t.mean(t.mul(x, y)), t.mul(mx, my));
  ad::Var dm = t.sub(mx, my);
  ad::Var denom = t.add(t.add(t.variance(x), t.variance(y)), t.mul(dm, dm));
  return t.div(t.mul_scalar(cov, 2.0), denom);
}

inline ad::Var ccc_loss_t(ad::Tape& t, ad::Var pred_act, ad::Var act, ad::Var pred_val,
                          ad::Var val) {
  ad::Var loss = t.sub(t.constant_scalar(2.0), ccc_t(t, pred_act, act));
  return t.sub(loss, ccc_t(t, pred_val, val));
}

inline ad::Var cross_entropy_t(ad::Tape& t, const Tensor& target, ad::Var pred) {
  if (!target.same_shape(pred.value()))
    throw std::invalid_argument("cross_entropy_t: shape mismatch");
  ad::Var logp = t.log(t.add_scalar(pred, 1e-8));
  return t.neg(t.sum(t.mul(t.constant(target), logp)));
}

// ---- evaluation report ----

struct SeedEvaluation {
  std::uint64_t seed = 0;
  double tvd_mean = 0.0;
  double jsd_mean = 0.0;
  double act_ccc = 0.0;  // consensus CCC
  double val_ccc = 0.0;
  bool has_annotator_ccc = false;
  double annotator_act_ccc = 0.0;  // pooled over all (annotator, utterance) pairs
  double annotator_val_ccc = 0.0;
  double annotator_act_ccc_macro = 0.0;  // mean of per-annotator CCCs
  double annotator_val_ccc_macro = 0.0;
};

struct EvalReport {
  std::string mode;  // "within" or "zero_shot"
  std::vector<SeedEvaluation> seeds;

  struct Stat {
    double mean = 0.0, stddev = 0.0;
  };

  template <typename F>
  Stat stat(F field) const {
    Stat s;
    if (seeds.empty()) return s;
    for (const auto& e : seeds) s.mean += field(e);
    s.mean /= static_cast<double>(seeds.size());
    for (const auto& e : seeds) {
      const double d = field(e) - s.mean;
      s.stddev += d * d;
    }
    s.stddev = std::sqrt(s.stddev / static_cast<double>(seeds.size()));
    return s;
  }

  Stat tvd() const { return stat([](const SeedEvaluation& e) { return e.tvd_mean; }); }
  Stat jsd() const { return stat([](const SeedEvaluation& e) { return e.jsd_mean; }); }
  Stat act_ccc() const { return stat([](const SeedEvaluation& e) { return e.act_ccc; }); }
  Stat val_ccc() const { return stat([](const SeedEvaluation& e) { return e.val_ccc; }); }
};

}  // namespace annodist

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "annodist/autodiff.hpp"
#include "annodist/core.hpp"
#include "annodist/kde.hpp"
#include "annodist/rng.hpp"
#include "annodist/softhist.hpp"

namespace annodist {

struct UpsampleConfig {
  int k_subsets = 100;
  double noise_epsilon = 1e-12;  // keeps the noise interval nonempty at std 0
  std::uint64_t rng_seed = 0;
};

namespace detail {

inline std::pair<double, double> population_std(const std::vector<std::pair<double, double>>& xs) {
  const double n = static_cast<double>(xs.size());
  double ma = 0.0, mv = 0.0;
  for (const auto& [a, v] : xs) {
    ma += a;
    mv += v;
  }
  ma /= n;
  mv /= n;
  double va = 0.0, vv = 0.0;
  for (const auto& [a, v] : xs) {
    va += (a - ma) * (a - ma);
    vv += (v - mv) * (v - mv);
  }
  return {std::sqrt(va / n), std::sqrt(vv / n)};
}

}  // namespace detail

// Upsamples annotations into k_subsets pseudo-observations: the mean of a
// uniformly sized random subset plus uniform noise in +-(std + eps)/2 per
// dimension, clamped to [-1, 1]. Deterministic given rng_seed.
inline std::vector<std::pair<double, double>> upsample(
    const std::vector<std::pair<double, double>>& annotations, const UpsampleConfig& cfg) {
  if (annotations.empty()) throw std::invalid_argument("upsample: empty annotation list");
  const int n = static_cast<int>(annotations.size());
  const auto [std_act, std_val] = detail::population_std(annotations);
  const double half_act = (std_act + cfg.noise_epsilon) * 0.5;
  const double half_val = (std_val + cfg.noise_epsilon) * 0.5;

  Rng rng(cfg.rng_seed, "upsample");
  std::vector<int> order(n);
  std::vector<std::pair<double, double>> out;
  out.reserve(cfg.k_subsets);
  for (int j = 0; j < cfg.k_subsets; ++j) {
    const int m = 1 + static_cast<int>(rng.below(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < m; ++i) {
      const int pick = i + static_cast<int>(rng.below(n - i));
      std::swap(order[i], order[pick]);
    }
    double sa = 0.0, sv = 0.0;
    for (int i = 0; i < m; ++i) {
      sa += annotations[order[i]].first;
      sv += annotations[order[i]].second;
    }
    double a = sa / m + rng.uniform(-half_act, half_act);
    double v = sv / m + rng.uniform(-half_val, half_val);
    out.emplace_back(std::clamp(a, -1.0, 1.0), std::clamp(v, -1.0, 1.0));
  }
  return out;
}

// The constants of one differentiable upsampling pass: which subsets were
// averaged and the unit noise draws. Gradients flow through the subset means
// and the std scale; the draws themselves are constants.
struct UpsamplePlan {
  Tensor subset_avg;             // k x n averaging matrix
  std::vector<double> xi_act;    // k draws in [-1, 1)
  std::vector<double> xi_val;
  double noise_epsilon = 1e-12;
};

inline UpsamplePlan draw_upsample_plan(int n, int k, double noise_epsilon, Rng& rng) {
  if (n < 1 || k < 1) throw std::invalid_argument("draw_upsample_plan: sizes must be positive");
  UpsamplePlan plan;
  plan.noise_epsilon = noise_epsilon;
  plan.subset_avg = Tensor(k, n);
  std::vector<int> order(n);
  for (int j = 0; j < k; ++j) {
    const int m = 1 + static_cast<int>(rng.below(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < m; ++i) {
      const int pick = i + static_cast<int>(rng.below(n - i));
      std::swap(order[i], order[pick]);
    }
    for (int i = 0; i < m; ++i) plan.subset_avg(j, order[i]) = 1.0 / m;
  }
  plan.xi_act.resize(k);
  plan.xi_val.resize(k);
  for (int j = 0; j < k; ++j) plan.xi_act[j] = rng.uniform(-1.0, 1.0);
  for (int j = 0; j < k; ++j) plan.xi_val[j] = rng.uniform(-1.0, 1.0);
  return plan;
}

// Differentiable upsampling of one dimension under a fixed plan:
//   u = clamp(M x + xi * (std(x) + eps) / 2, -1, 1).
inline ad::Var upsample_dim_t(ad::Tape& tape, ad::Var x, const Tensor& subset_avg,
                              const std::vector<double>& xi, double noise_epsilon) {
  if (x.cols() != 1 || x.rows() != subset_avg.cols())
    throw std::invalid_argument("upsample_dim_t: input must be an n x 1 column matching the plan");
  ad::Var means = tape.matmul(tape.constant(subset_avg), x);
  ad::Var spread = tape.mul_scalar(tape.add_scalar(tape.sqrt(tape.variance(x)), noise_epsilon), 0.5);
  ad::Var noise = tape.mul_bc(tape.constant(Tensor::column(std::vector<double>(xi))), spread);
  return tape.clamp(tape.add(means, noise), -1.0, 1.0);
}

inline std::pair<ad::Var, ad::Var> upsample_t(ad::Tape& tape, ad::Var act, ad::Var val,
                                              const UpsamplePlan& plan) {
  return {upsample_dim_t(tape, act, plan.subset_avg, plan.xi_act, plan.noise_epsilon),
          upsample_dim_t(tape, val, plan.subset_avg, plan.xi_val, plan.noise_epsilon)};
}

// Ground-truth target for one utterance: upsample -> kde2d -> bin. The RNG
// stream is derived from (rng_seed, utterance_id), so per-utterance target
// generation can run in parallel without affecting results.
inline std::pair<ProbabilityGrid, BinnedDistribution> make_target(const Utterance& utterance,
                                                                  const UpsampleConfig& up,
                                                                  const KdeConfig& kde,
                                                                  int n_bins) {
  if (utterance.annotations.empty())
    throw std::invalid_argument("make_target: utterance has no annotations");
  std::vector<std::pair<double, double>> ann;
  ann.reserve(utterance.annotations.size());
  for (const AnnotationRecord& a : utterance.annotations) ann.emplace_back(a.activation, a.valence);
  UpsampleConfig local = up;
  local.rng_seed = splitmix64(up.rng_seed ^ fnv1a(utterance.utterance_id));
  const auto samples = upsample(ann, local);
  std::vector<double> act(samples.size()), val(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    act[i] = samples[i].first;
    val[i] = samples[i].second;
  }
  ProbabilityGrid grid = kde2d(act, val, kde);
  BinnedDistribution binned = bin_grid(grid, n_bins);
  return {std::move(grid), std::move(binned)};
}

// Cached targets, keyed by utterance id.
struct TargetTable {
  int n_bins = 4;
  std::uint64_t seed = 0;
  std::map<std::string, BinnedDistribution> by_utterance;

  const BinnedDistribution* find(const std::string& utterance_id) const {
    auto it = by_utterance.find(utterance_id);
    return it == by_utterance.end() ? nullptr : &it->second;
  }
};

}  // namespace annodist

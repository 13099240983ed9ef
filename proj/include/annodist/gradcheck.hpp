#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "annodist/kde.hpp"
#include "annodist/labels.hpp"
#include "annodist/metrics.hpp"
#include "annodist/model.hpp"
#include "annodist/rng.hpp"
#include "annodist/softhist.hpp"

namespace annodist {

struct GradCheckLine {
  std::string name;
  double max_rel_err = 0.0;
  int coords_checked = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckLine> checks;
  double seconds = 0.0;
  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
};

namespace gradcheck_detail {

inline double rel_err(double a, double b) {
  const double diff = std::fabs(a - b);
  const double scale = std::max(std::fabs(a), std::fabs(b));
  if (scale < 1e-9) return diff < 1e-9 ? 0.0 : diff / 1e-9;
  return diff / std::max(scale, 1e-6);
}

// Central finite differences over selected coordinates of selected tensors.
// coords_per_tensor <= 0 checks every coordinate.
inline GradCheckLine fd_check(const std::string& name, std::vector<Tensor*> inputs,
                              const std::vector<Tensor>& analytic,
                              const std::function<double()>& eval, double tolerance,
                              int coords_per_tensor, std::uint64_t pick_seed) {
  GradCheckLine line;
  line.name = name;
  const double h = 1e-5;
  Rng pick(pick_seed, "gradcheck-pick");
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = *inputs[t];
    std::vector<std::size_t> coords;
    if (coords_per_tensor <= 0 || static_cast<std::size_t>(coords_per_tensor) >= x.size()) {
      for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(i);
    } else {
      for (int c = 0; c < coords_per_tensor; ++c) coords.push_back(pick.below(x.size()));
    }
    for (std::size_t i : coords) {
      const double orig = x[i];
      x[i] = orig + h;
      const double fp = eval();
      x[i] = orig - h;
      const double fm = eval();
      x[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      line.max_rel_err = std::max(line.max_rel_err, rel_err(fd, analytic[t][i]));
      ++line.coords_checked;
    }
  }
  line.passed = line.max_rel_err < tolerance;
  return line;
}

inline GradCheckLine check_ccc_loss(double tol) {
  Rng rng(901);
  auto rand_col = [&](int n, double lo, double hi) {
    Tensor t(n, 1);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
  };
  Tensor ma = rand_col(8, -0.8, 0.8), mv = rand_col(8, -0.8, 0.8);
  const Tensor act = rand_col(8, -0.9, 0.9), val = rand_col(8, -0.9, 0.9);
  ad::Tape tape;
  ad::Var va = tape.input(ma), vv = tape.input(mv);
  ad::Var loss = ccc_loss_t(tape, va, tape.constant(act), vv, tape.constant(val));
  tape.backward(loss);
  auto eval = [&]() {
    ad::Tape t2;
    return ccc_loss_t(t2, t2.input(ma), t2.constant(act), t2.input(mv), t2.constant(val)).item();
  };
  return fd_check("ccc_loss", {&ma, &mv}, {va.grad(), vv.grad()}, eval, tol, 0, 901);
}

inline GradCheckLine check_diffkde_inputs(double tol) {
  Rng rng(903);
  SoftHistConfig hc;
  const KdeConfig kc = KdeConfig::fixed_bandwidth(64, 3e-3, 2e-3);
  Tensor act(6, 1), val(6, 1), target(4, 4);
  for (std::size_t i = 0; i < act.size(); ++i) act[i] = rng.uniform(-0.85, 0.85);
  for (std::size_t i = 0; i < val.size(); ++i) val[i] = rng.uniform(-0.85, 0.85);
  double tsum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) tsum += (target[i] = rng.uniform(0.0, 1.0));
  for (std::size_t i = 0; i < target.size(); ++i) target[i] /= tsum;

  auto forward = [&](ad::Tape& tape, ad::Var& a, ad::Var& v) {
    a = tape.input(act);
    v = tape.input(val);
    return cross_entropy_t(tape, target, bin_grid_t(tape, diffkde(tape, a, v, hc, kc), 4));
  };
  ad::Tape tape;
  ad::Var a, v;
  ad::Var loss = forward(tape, a, v);
  tape.backward(loss);
  auto eval = [&]() {
    ad::Tape t2;
    ad::Var a2, v2;
    return forward(t2, a2, v2).item();
  };
  return fd_check("cross_entropy(bin(diffkde))", {&act, &val}, {a.grad(), v.grad()}, eval, tol, 0,
                  903);
}

struct ParamGrads {
  std::vector<Tensor*> tensors;
  std::vector<Tensor> grads;
};

inline ParamGrads collect_param_grads(ad::Tape& tape, TapedModel& model,
                                      std::vector<Tensor*> wanted) {
  ParamGrads out;
  for (Tensor* t : wanted) {
    out.tensors.push_back(t);
    out.grads.push_back(tape.grad(model.var(*t)));
  }
  return out;
}

inline std::vector<Tensor*> baseline_tensors(Parameters& p) {
  return {&p.trunk_w,        &p.trunk_b,        &p.dist_branch.w1, &p.dist_branch.b1,
          &p.dist_branch.w2, &p.dist_branch.b2, &p.baseline_w,     &p.baseline_b};
}

inline std::vector<Tensor*> mt_tensors(Parameters& p) {
  std::vector<Tensor*> out = {&p.trunk_w,       &p.trunk_b,       &p.act_branch.w1,
                              &p.act_branch.b1, &p.act_branch.w2, &p.act_branch.b2,
                              &p.val_branch.w1, &p.val_branch.b1, &p.val_branch.w2,
                              &p.val_branch.b2};
  for (std::size_t h = 0; h < p.act_head_w.size(); ++h) {
    out.push_back(&p.act_head_w[h]);
    out.push_back(&p.act_head_b[h]);
    out.push_back(&p.val_head_w[h]);
    out.push_back(&p.val_head_b[h]);
  }
  return out;
}

inline GradCheckLine check_baseline_path(const std::string& name, int hidden, int coords,
                                         double tol, std::uint64_t seed) {
  Rng rng(seed);
  ModelSpec spec;
  spec.kind = ModelKind::baseline;
  spec.input_dim = 6;
  spec.hidden = hidden;
  Parameters params = init_parameters(spec, seed, {});
  std::vector<double> features(spec.input_dim);
  for (double& f : features) f = rng.uniform(-1.0, 1.0);
  Tensor target(16, 1);
  double tsum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) tsum += (target[i] = rng.uniform(0.0, 1.0));
  for (std::size_t i = 0; i < target.size(); ++i) target[i] /= tsum;

  auto loss_of = [&]() {
    ad::Tape tape;
    TapedModel model(tape, params, false);
    return cross_entropy_t(tape, target, tape.softmax(model.baseline_logits(features))).item();
  };
  ad::Tape tape;
  TapedModel model(tape, params, false);
  ad::Var loss = cross_entropy_t(tape, target, tape.softmax(model.baseline_logits(features)));
  tape.backward(loss);
  ParamGrads pg = collect_param_grads(tape, model, baseline_tensors(params));
  return fd_check(name, pg.tensors, pg.grads, loss_of, tol, coords, seed);
}

// The full Task 2 loss: MT heads -> clamp -> upsample -> diffkde -> bin ->
// cross entropy, differentiated w.r.t. the model parameters. Upsample plans
// and bandwidths are frozen across FD evaluations.
inline GradCheckLine check_mt_task2_path(const std::string& name, int hidden, int coords,
                                         double tol, std::uint64_t seed) {
  Rng rng(seed);
  const int n_annotators = 3, n_utterances = 2;
  ModelSpec spec;
  spec.kind = ModelKind::multitask;
  spec.input_dim = 5;
  spec.n_annotators = n_annotators;
  spec.hidden = hidden;
  Parameters params = init_parameters(spec, seed, {"a0", "a1", "a2"});

  SoftHistConfig hc;
  const KdeConfig kc = KdeConfig::fixed_bandwidth(64, 2.5e-3, 2.5e-3);
  struct Item {
    std::vector<double> features;
    std::vector<int> heads;
    UpsamplePlan plan;
    Tensor target;
  };
  std::vector<Item> items(n_utterances);
  for (Item& it : items) {
    it.features.resize(spec.input_dim);
    for (double& f : it.features) f = rng.uniform(-1.0, 1.0);
    it.heads = {0, 1, 2};
    it.plan = draw_upsample_plan(3, 6, 1e-12, rng);
  }
  // Targets carry mass only on bins the initial prediction covers. Where the
  // predicted mass is below the cross-entropy epsilon, -t*log(p + eps) curves
  // too sharply for central differences at h=1e-5 to be meaningful.
  for (Item& it : items) {
    ad::Tape probe_tape;
    TapedModel probe(probe_tape, params, false);
    auto preds = probe.multitask_preds(it.features, it.heads);
    std::vector<ad::Var> acts, vals;
    for (auto& [a, v] : preds) {
      acts.push_back(a);
      vals.push_back(v);
    }
    ad::Var ac = probe_tape.clamp(
        probe_tape.concat_rows(std::span<const ad::Var>(acts.data(), acts.size())), -1.0, 1.0);
    ad::Var vc = probe_tape.clamp(
        probe_tape.concat_rows(std::span<const ad::Var>(vals.data(), vals.size())), -1.0, 1.0);
    auto [ua, uv] = upsample_t(probe_tape, ac, vc, it.plan);
    ad::Var binned =
        bin_grid_t(probe_tape, diffkde(probe_tape, ua, uv, hc, kc), 4);
    it.target = Tensor(4, 4);
    double tsum = 0.0;
    for (std::size_t i = 0; i < it.target.size(); ++i) {
      it.target[i] = binned.value()[i] >= 1e-3 ? rng.uniform(0.2, 1.0) : 0.0;
      tsum += it.target[i];
    }
    for (std::size_t i = 0; i < it.target.size(); ++i) it.target[i] /= tsum;
  }

  auto build = [&](ad::Tape& tape, TapedModel& model) {
    std::optional<ad::Var> total;
    for (const Item& it : items) {
      auto preds = model.multitask_preds(it.features, it.heads);
      std::vector<ad::Var> acts, vals;
      for (auto& [a, v] : preds) {
        acts.push_back(a);
        vals.push_back(v);
      }
      ad::Var ac = tape.clamp(
          tape.concat_rows(std::span<const ad::Var>(acts.data(), acts.size())), -1.0, 1.0);
      ad::Var vc = tape.clamp(
          tape.concat_rows(std::span<const ad::Var>(vals.data(), vals.size())), -1.0, 1.0);
      auto [ua, uv] = upsample_t(tape, ac, vc, it.plan);
      ad::Var ce = cross_entropy_t(
          tape, it.target, bin_grid_t(tape, diffkde(tape, ua, uv, hc, kc), 4));
      total = total ? tape.add(*total, ce) : ce;
    }
    return tape.mul_scalar(*total, 1.0 / n_utterances);
  };

  auto loss_of = [&]() {
    ad::Tape tape;
    TapedModel model(tape, params, false);
    return build(tape, model).item();
  };
  ad::Tape tape;
  TapedModel model(tape, params, false);
  ad::Var loss = build(tape, model);
  tape.backward(loss);
  ParamGrads pg = collect_param_grads(tape, model, mt_tensors(params));
  return fd_check(name, pg.tensors, pg.grads, loss_of, tol, coords, seed);
}

}  // namespace gradcheck_detail

// Verifies every loss path in the system against central finite differences.
inline GradCheckReport run_gradcheck(double tolerance = 1e-4) {
  using namespace gradcheck_detail;
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  report.checks.push_back(check_ccc_loss(tolerance));
  report.checks.push_back(check_diffkde_inputs(tolerance));
  report.checks.push_back(check_baseline_path("cross_entropy(softmax(baseline)), hidden=16", 16,
                                              0, tolerance, 911));
  report.checks.push_back(check_baseline_path("cross_entropy(softmax(baseline)), hidden=256", 256,
                                              20, tolerance, 913));
  report.checks.push_back(
      check_mt_task2_path("task2 path (mt->clamp->upsample->diffkde->bin->ce), hidden=8", 8, 0,
                          tolerance, 917));
  report.checks.push_back(
      check_mt_task2_path("task2 path (mt->clamp->upsample->diffkde->bin->ce), hidden=256", 256,
                          12, tolerance, 919));
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline std::string format_gradcheck(const GradCheckReport& report) {
  char buf[160];
  std::string out;
  for (const auto& c : report.checks) {
    std::snprintf(buf, sizeof(buf), "%s  %-55s max_rel_err=%.3e (%d coords)\n",
                  c.passed ? "PASS" : "FAIL", c.name.c_str(), c.max_rel_err, c.coords_checked);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%s  gradient suite in %.1fs\n",
                report.all_passed() ? "PASS" : "FAIL", report.seconds);
  out += buf;
  return out;
}

}  // namespace annodist

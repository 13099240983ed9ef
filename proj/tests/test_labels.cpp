#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "annodist/labels.hpp"
#include "annodist/metrics.hpp"
#include "test_helpers.hpp"

using namespace annodist;
using testutil::max_fd_rel_err;

namespace {

Utterance clustered_utterance(const std::string& id, double act, double val, int n) {
  Utterance u;
  u.utterance_id = id;
  for (int i = 0; i < n; ++i)
    u.annotations.push_back({id, "a" + std::to_string(i), act + 0.01 * i, val - 0.01 * i});
  return u;
}

}  // namespace

TEST_CASE("upsampling identical annotations reproduces the value") {
  UpsampleConfig cfg;
  cfg.k_subsets = 200;
  cfg.rng_seed = 7;
  const double v = 0.31;
  auto out = upsample({{v, v}, {v, v}, {v, v}, {v, v}}, cfg);
  REQUIRE(out.size() == 200);
  for (const auto& [a, b] : out) {
    REQUIRE(a == Catch::Approx(v).margin(1e-12));  // std 0 leaves only the eps band
    REQUIRE(b == Catch::Approx(v).margin(1e-12));
  }
}

TEST_CASE("upsampling a single annotation stays inside its noise band") {
  UpsampleConfig cfg;
  cfg.k_subsets = 100;
  cfg.rng_seed = 9;
  auto out = upsample({{-0.4, 0.8}}, cfg);
  for (const auto& [a, b] : out) {
    REQUIRE(a == Catch::Approx(-0.4).margin(1e-12));
    REQUIRE(b == Catch::Approx(0.8).margin(1e-12));
  }
}

TEST_CASE("upsampled means are unbiased") {
  UpsampleConfig cfg;
  cfg.k_subsets = 100000;
  cfg.rng_seed = 11;
  std::vector<std::pair<double, double>> ann = {
      {0.1, -0.2}, {0.3, 0.0}, {-0.25, 0.4}, {0.05, 0.15}, {0.2, -0.1}};
  double mean_act = 0.0;
  for (const auto& [a, v] : ann) mean_act += a;
  mean_act /= static_cast<double>(ann.size());

  auto out = upsample(ann, cfg);
  double emp = 0.0;
  for (const auto& [a, v] : out) emp += a;
  emp /= static_cast<double>(out.size());
  double var = 0.0;
  for (const auto& [a, v] : out) var += (a - emp) * (a - emp);
  var /= static_cast<double>(out.size());
  const double se = std::sqrt(var / static_cast<double>(out.size()));
  REQUIRE(std::fabs(emp - mean_act) < 3.0 * se);
}

TEST_CASE("upsampled values never leave the domain") {
  UpsampleConfig cfg;
  cfg.k_subsets = 2000;
  cfg.rng_seed = 13;
  auto out = upsample({{1.0, -1.0}, {0.9, -0.95}, {-1.0, 1.0}}, cfg);
  for (const auto& [a, v] : out) {
    REQUIRE(a >= -1.0);
    REQUIRE(a <= 1.0);
    REQUIRE(v >= -1.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("upsampling is deterministic per seed and empty input is rejected") {
  UpsampleConfig cfg;
  cfg.rng_seed = 17;
  std::vector<std::pair<double, double>> ann = {{0.2, 0.3}, {-0.1, 0.6}};
  REQUIRE(upsample(ann, cfg) == upsample(ann, cfg));
  cfg.rng_seed = 18;
  REQUIRE(upsample(ann, cfg) != upsample({{0.2, 0.3}, {-0.1, 0.6}}, UpsampleConfig{100, 1e-12, 17}));
  REQUIRE_THROWS_AS(upsample({}, cfg), std::invalid_argument);
}

TEST_CASE("make_target places clustered annotations in the matching corner bin") {
  Utterance u = clustered_utterance("u_corner", 0.93, 0.9, 5);
  auto [grid, binned] = make_target(u, UpsampleConfig{100, 1e-12, 3}, KdeConfig::auto_bandwidth(512), 4);
  REQUIRE(is_normalized_grid(grid.cells));
  REQUIRE(is_normalized_grid(binned.cells));
  int best = 0;
  for (int i = 1; i < 16; ++i)
    if (binned.cells[i] > binned.cells[best]) best = i;
  REQUIRE(best == 15);  // (high act, high val)
}

TEST_CASE("make_target is bit-reproducible for a fixed seed") {
  Utterance u = clustered_utterance("u_rep", -0.2, 0.5, 7);
  UpsampleConfig up{100, 1e-12, 21};
  auto [g1, b1] = make_target(u, up, KdeConfig::auto_bandwidth(512), 4);
  auto [g2, b2] = make_target(u, up, KdeConfig::auto_bandwidth(512), 4);
  for (std::size_t i = 0; i < b1.cells.size(); ++i) REQUIRE(b1.cells[i] == b2.cells[i]);
  for (std::size_t i = 0; i < g1.cells.size(); ++i) REQUIRE(g1.cells[i] == g2.cells[i]);
}

TEST_CASE("symmetric annotations give a nearly rotation-invariant target") {
  Utterance u;
  u.utterance_id = "u_sym";
  u.annotations = {{"u_sym", "a0", 0.42, 0.17},  {"u_sym", "a1", -0.42, -0.17},
                   {"u_sym", "a2", 0.63, -0.33}, {"u_sym", "a3", -0.63, 0.33},
                   {"u_sym", "a4", 0.11, 0.52},  {"u_sym", "a5", -0.11, -0.52}};
  // repeated-seed oracle: averaging over seeds removes Monte-Carlo noise,
  // leaving only systematic asymmetry
  BinnedDistribution avg{4, Tensor(4, 4)};
  const int n_seeds = 8;
  for (int s = 0; s < n_seeds; ++s) {
    auto [grid, binned] = make_target(u, UpsampleConfig{1000, 1e-12, 29 + s},
                                      KdeConfig::auto_bandwidth(512), 4);
    for (std::size_t i = 0; i < avg.cells.size(); ++i)
      avg.cells[i] += binned.cells[i] / n_seeds;
  }
  BinnedDistribution rotated{4, Tensor(4, 4)};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) rotated.cells(r, c) = avg.cells(3 - r, 3 - c);
  REQUIRE(tvd(avg, rotated) < 0.02);
}

TEST_CASE("targets from two seeds are close at high upsample counts") {
  Utterance u = clustered_utterance("u_seeds", 0.1, -0.3, 6);
  auto [g1, b1] = make_target(u, UpsampleConfig{1000, 1e-12, 100},
                              KdeConfig::auto_bandwidth(512), 4);
  auto [g2, b2] = make_target(u, UpsampleConfig{1000, 1e-12, 200},
                              KdeConfig::auto_bandwidth(512), 4);
  REQUIRE(tvd(b1, b2) < 0.05);
}

TEST_CASE("differentiable upsampling matches its closed form under a fixed plan") {
  Rng rng(31);
  const int n = 5, k = 9;
  UpsamplePlan plan = draw_upsample_plan(n, k, 1e-12, rng);
  Tensor act0 = testutil::random_tensor(rng, n, 1, -0.7, 0.7);
  Tensor val0 = testutil::random_tensor(rng, n, 1, -0.7, 0.7);

  ad::Tape tape;
  ad::Var a = tape.input(act0);
  ad::Var v = tape.input(val0);
  auto [ua, uv] = upsample_t(tape, a, v, plan);

  // closed form: M x + xi * (std + eps) / 2, clamped
  double mean = 0.0, var = 0.0;
  for (int i = 0; i < n; ++i) mean += act0[i];
  mean /= n;
  for (int i = 0; i < n; ++i) var += (act0[i] - mean) * (act0[i] - mean);
  var /= n;
  const double spread = (std::sqrt(var) + 1e-12) * 0.5;
  for (int j = 0; j < k; ++j) {
    double m = 0.0;
    for (int i = 0; i < n; ++i) m += plan.subset_avg(j, i) * act0[i];
    const double expected = std::clamp(m + plan.xi_act[j] * spread, -1.0, 1.0);
    REQUIRE(ua.value()[j] == Catch::Approx(expected).margin(1e-14));
  }

  // gradients flow through both the subset means and the std scale
  ad::Var loss = tape.add(tape.variance(ua), tape.mean(uv));
  tape.backward(loss);
  auto eval = [&]() {
    ad::Tape t2;
    ad::Var a2 = t2.input(act0);
    ad::Var v2 = t2.input(val0);
    auto [ua2, uv2] = upsample_t(t2, a2, v2, plan);
    return t2.add(t2.variance(ua2), t2.mean(uv2)).item();
  };
  REQUIRE(max_fd_rel_err({&act0, &val0}, {&a.grad(), &v.grad()}, eval) < 1e-4);
}

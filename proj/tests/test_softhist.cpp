#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "annodist/softhist.hpp"
#include "test_helpers.hpp"

using namespace annodist;
using testutil::edge_safe_values;
using testutil::hard_histogram_2d;
using testutil::max_fd_rel_err;

TEST_CASE("bin centers partition [-1,1] evenly") {
  SoftHistConfig c4{4};
  REQUIRE(bin_centers(c4) == std::vector<double>{-0.75, -0.25, 0.25, 0.75});
  SoftHistConfig c2{2};
  REQUIRE(bin_centers(c2) == std::vector<double>{-0.5, 0.5});
  SoftHistConfig c64{64};
  auto centers = bin_centers(c64);
  REQUIRE(centers.front() == Catch::Approx(-63.0 / 64.0).margin(1e-15));
  REQUIRE(centers.back() == Catch::Approx(63.0 / 64.0).margin(1e-15));
  for (std::size_t i = 1; i < centers.size(); ++i) REQUIRE(centers[i] > centers[i - 1]);
}

TEST_CASE("weights at zero split evenly between the two nearest bins") {
  SoftHistConfig cfg;  // B=64, sigma=8
  Tensor w = soft_weights_1d({0.0}, cfg);
  // centers -1/64 and +1/64 are bins 31 and 32
  const double expected = 1.0 / (1.0 + std::exp(-0.25)) - 0.5;  // sigmoid(0.25) - sigmoid(0)
  REQUIRE(w(0, 31) == Catch::Approx(expected).margin(1e-9));
  REQUIRE(w(0, 32) == Catch::Approx(expected).margin(1e-9));
  REQUIRE(w(0, 31) == Catch::Approx(0.062177).margin(1e-6));
  for (int j = 0; j < cfg.bins; ++j) {
    REQUIRE(w(0, j) > 0.0);
    REQUIRE(w(0, j) < 1.0);
  }
}

TEST_CASE("saturated sigma concentrates the weight at the containing bin") {
  SoftHistConfig cfg;
  cfg.sigma = 1e4;
  const auto centers = bin_centers(cfg);
  Tensor w = soft_weights_1d({centers[20]}, cfg);
  REQUIRE(w(0, 20) > 1.0 - 1e-6);
  for (int j = 0; j < cfg.bins; ++j)
    if (j != 20) REQUIRE(w(0, j) < 1e-6);
}

TEST_CASE("weights of a and -a are reverses of each other") {
  SoftHistConfig cfg;
  const double a = 0.3721;
  Tensor w1 = soft_weights_1d({a}, cfg);
  Tensor w2 = soft_weights_1d({-a}, cfg);
  for (int j = 0; j < cfg.bins; ++j)
    REQUIRE(w1(0, j) == Catch::Approx(w2(0, cfg.bins - 1 - j)).margin(1e-14));
}

TEST_CASE("row sums telescope to the two boundary sigmoids") {
  SoftHistConfig cfg;
  Rng rng(31);
  const auto centers = bin_centers(cfg);
  for (int i = 0; i < 20; ++i) {
    const double a = rng.uniform(-1.0, 1.0);
    Tensor w = soft_weights_1d({a}, cfg);
    double total = 0.0;
    for (int j = 0; j < cfg.bins; ++j) total += w(0, j);
    const double half = cfg.delta() * 0.5;
    const double expected =
        ad::Tape::stable_sigmoid(cfg.sigma * (a - centers.front() + half)) -
        ad::Tape::stable_sigmoid(cfg.sigma * (a - centers.back() - half));
    REQUIRE(total == Catch::Approx(expected).margin(1e-12));
  }
}

TEST_CASE("weight at the containing bin is nondecreasing in sigma") {
  SoftHistConfig cfg;
  const double a = bin_centers(cfg)[40];
  double prev = 0.0;
  for (double sigma : {1.0, 2.0, 4.0, 8.0, 16.0, 64.0, 256.0, 1e4}) {
    cfg.sigma = sigma;
    Tensor w = soft_weights_1d({a}, cfg);
    REQUIRE(w(0, 40) >= prev);
    prev = w(0, 40);
  }
}

TEST_CASE("2D histogram of a saturated point is a point mass") {
  SoftHistConfig cfg;
  cfg.sigma = 1e4;
  const auto centers = bin_centers(cfg);
  Tensor h = soft_histogram_2d({centers[10]}, {centers[50]}, cfg);
  REQUIRE(h(10, 50) > 1.0 - 1e-5);
  REQUIRE(h.sum() == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("swapping act and val transposes the 2D histogram") {
  SoftHistConfig cfg;
  Rng rng(33);
  auto act = testutil::random_vector(rng, 5, -0.9, 0.9);
  auto val = testutil::random_vector(rng, 5, -0.9, 0.9);
  Tensor h1 = soft_histogram_2d(act, val, cfg);
  Tensor h2 = soft_histogram_2d(val, act, cfg);
  for (int r = 0; r < cfg.bins; ++r)
    for (int c = 0; c < cfg.bins; ++c) REQUIRE(h1(r, c) == Catch::Approx(h2(c, r)).margin(1e-14));
}

TEST_CASE("two points sum as rank-1 outer products") {
  SoftHistConfig cfg{8, 8.0};
  const std::vector<double> act = {0.11, -0.62}, val = {-0.35, 0.77};
  Tensor h = soft_histogram_2d(act, val, cfg);
  Tensor expected(cfg.bins, cfg.bins);
  for (int p = 0; p < 2; ++p) {
    Tensor wa = soft_weights_1d({act[p]}, cfg);
    Tensor wv = soft_weights_1d({val[p]}, cfg);
    for (int r = 0; r < cfg.bins; ++r)
      for (int c = 0; c < cfg.bins; ++c) expected(r, c) += wa(0, r) * wv(0, c);
  }
  for (std::size_t i = 0; i < h.size(); ++i)
    REQUIRE(h[i] == Catch::Approx(expected[i]).margin(1e-13));
}

TEST_CASE("empty observation set is rejected") {
  SoftHistConfig cfg;
  REQUIRE_THROWS_AS(soft_histogram_2d({}, {}, cfg), std::invalid_argument);
}

TEST_CASE("tape and plain soft histograms agree") {
  SoftHistConfig cfg;
  Rng rng(35);
  auto act = testutil::random_vector(rng, 6, -1.0, 1.0);
  auto val = testutil::random_vector(rng, 6, -1.0, 1.0);
  Tensor plain = soft_histogram_2d(act, val, cfg);
  ad::Tape tape;
  ad::Var h = soft_histogram_2d_t(tape, tape.input(Tensor::column(act)),
                                  tape.input(Tensor::column(val)), cfg);
  for (std::size_t i = 0; i < plain.size(); ++i)
    REQUIRE(h.value()[i] == Catch::Approx(plain[i]).margin(1e-14));
}

TEST_CASE("soft histogram gradients match finite differences") {
  for (int bins : {8, 64}) {
    SoftHistConfig cfg;
    cfg.bins = bins;
    Rng rng(100 + bins);
    Tensor act0 = testutil::random_tensor(rng, 5, 1, -0.9, 0.9);
    Tensor val0 = testutil::random_tensor(rng, 5, 1, -0.9, 0.9);
    Tensor probe = testutil::random_tensor(rng, bins, bins, 0.0, 1.0);

    auto forward = [&](ad::Tape& tape, ad::Var& a, ad::Var& v) {
      a = tape.input(act0);
      v = tape.input(val0);
      ad::Var h = soft_histogram_2d_t(tape, a, v, cfg);
      return tape.sum(tape.mul(h, tape.constant(probe)));
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
    REQUIRE(max_fd_rel_err({&act0, &val0}, {&a.grad(), &v.grad()}, eval) < 1e-4);
  }
}

TEST_CASE("saturated soft histogram matches the hard histogram") {
  SoftHistConfig cfg;
  cfg.sigma = 1e4;
  Rng rng(41);
  for (int inst = 0; inst < 5; ++inst) {
    auto act = edge_safe_values(rng, 12, cfg.bins, 1e-2);
    auto val = edge_safe_values(rng, 12, cfg.bins, 1e-2);
    Tensor soft = soft_histogram_2d(act, val, cfg);
    Tensor hard = hard_histogram_2d(act, val, cfg.bins);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < soft.size(); ++i)
      max_abs = std::max(max_abs, std::fabs(soft[i] - hard[i]));
    REQUIRE(max_abs < 1e-3);
  }
}

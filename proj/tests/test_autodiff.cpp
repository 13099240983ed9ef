#include <catch2/catch_amalgamated.hpp>

#include "annodist/autodiff.hpp"
#include "annodist/metrics.hpp"
#include "annodist/rng.hpp"
#include "test_helpers.hpp"

using namespace annodist;
using testutil::max_fd_rel_err;
using testutil::random_tensor;

TEST_CASE("sigmoid derivative at zero is 0.25") {
  ad::Tape tape;
  ad::Var x = tape.input(Tensor::scalar(0.0));
  ad::Var y = tape.sigmoid(x);
  tape.backward(y);
  REQUIRE(y.item() == Catch::Approx(0.5));
  REQUIRE(x.grad()[0] == Catch::Approx(0.25));
}

TEST_CASE("gradient of sum is all ones") {
  ad::Tape tape;
  Rng rng(7);
  ad::Var x = tape.input(random_tensor(rng, 3, 4, -1.0, 1.0));
  tape.backward(tape.sum(x));
  for (std::size_t i = 0; i < x.grad().size(); ++i) REQUIRE(x.grad()[i] == 1.0);
}

TEST_CASE("backward of a constant leaves gradients at zero") {
  ad::Tape tape;
  ad::Var x = tape.input(Tensor::scalar(2.0));
  ad::Var c = tape.constant_scalar(5.0);
  tape.backward(tape.sum(c));  // no-op: root does not require grad
  REQUIRE(x.grad()[0] == 0.0);
}

TEST_CASE("two backward passes accumulate additively") {
  ad::Tape tape;
  ad::Var x = tape.input(Tensor::scalar(3.0));
  ad::Var y = tape.mul(x, x);
  tape.backward(y);
  REQUIRE(x.grad()[0] == Catch::Approx(6.0));
  tape.backward(y);
  REQUIRE(x.grad()[0] == Catch::Approx(12.0));
  tape.zero_grad();
  REQUIRE(x.grad()[0] == 0.0);
}

TEST_CASE("shape mismatch is rejected at record time") {
  ad::Tape tape;
  ad::Var a = tape.input(Tensor(2, 3));
  ad::Var b = tape.input(Tensor(3, 2));
  REQUIRE_THROWS_AS(tape.add(a, b), std::invalid_argument);
  REQUIRE_THROWS_AS(tape.matmul(a, a), std::invalid_argument);
}

TEST_CASE("clamp gradient passes inside the interval and is zero outside") {
  ad::Tape tape;
  ad::Var x = tape.input(Tensor::column({-2.0, 0.3, 2.0}));
  ad::Var y = tape.clamp(x, -1.0, 1.0);
  tape.backward(tape.sum(y));
  REQUIRE(y.value()[0] == -1.0);
  REQUIRE(y.value()[2] == 1.0);
  REQUIRE(x.grad()[0] == 0.0);
  REQUIRE(x.grad()[1] == 1.0);
  REQUIRE(x.grad()[2] == 0.0);
}

TEST_CASE("softmax output is a distribution") {
  ad::Tape tape;
  Rng rng(3);
  ad::Var x = tape.input(random_tensor(rng, 6, 1, -3.0, 3.0));
  ad::Var y = tape.softmax(x);
  double total = 0.0;
  for (std::size_t i = 0; i < y.value().size(); ++i) {
    REQUIRE(y.value()[i] > 0.0);
    total += y.value()[i];
  }
  REQUIRE(total == Catch::Approx(1.0).epsilon(1e-12));
}

// Every primitive exercised in one composite scalar, checked against central
// finite differences.
TEST_CASE("composite primitive gradients match finite differences") {
  Rng rng(11);
  Tensor a0 = random_tensor(rng, 3, 2, 0.2, 1.5);
  Tensor b0 = random_tensor(rng, 2, 4, -1.0, 1.0);
  Tensor c0 = random_tensor(rng, 3, 4, 0.3, 1.2);
  Tensor s0 = Tensor::scalar(0.7);

  auto build = [&](ad::Tape& tape, ad::Var& a, ad::Var& b, ad::Var& c, ad::Var& s) {
    a = tape.input(a0);
    b = tape.input(b0);
    c = tape.input(c0);
    s = tape.input(s0);
    ad::Var m = tape.matmul(a, b);                     // 3x4
    ad::Var d = tape.div(tape.exp(tape.mul_scalar(m, 0.3)), tape.add_scalar(c, 1.0));
    ad::Var e = tape.add(tape.sigmoid(d), tape.relu(tape.add_scalar(m, -0.1)));
    ad::Var f = tape.mul_bc(tape.log(tape.add_scalar(e, 1.0)), s);
    ad::Var g = tape.div_bc(f, tape.add_scalar(tape.sqrt(tape.variance(f)), 0.5));
    ad::Var t = tape.transpose(g);
    ad::Var sm = tape.softmax(tape.clamp(t, -0.8, 0.8));
    ad::Var pooled = tape.concat_rows({tape.mean(sm), tape.sum(tape.mul(g, g)), s});
    return tape.add(tape.mean(pooled), tape.add_bc(tape.mean(g), tape.mean(sm)));
  };

  ad::Tape tape;
  ad::Var a, b, c, s;
  ad::Var loss = build(tape, a, b, c, s);
  tape.backward(loss);

  auto eval = [&]() {
    ad::Tape t2;
    ad::Var a2, b2, c2, s2;
    return build(t2, a2, b2, c2, s2).item();
  };
  const double err = max_fd_rel_err({&a0, &b0, &c0, &s0},
                                    {&a.grad(), &b.grad(), &c.grad(), &s.grad()}, eval);
  REQUIRE(err < 1e-4);
}

TEST_CASE("ccc_loss gradient matches finite differences on a random batch") {
  Rng rng(21);
  Tensor ma0 = random_tensor(rng, 8, 1, -0.8, 0.8);
  Tensor mv0 = random_tensor(rng, 8, 1, -0.8, 0.8);
  const Tensor act = random_tensor(rng, 8, 1, -0.9, 0.9);
  const Tensor val = random_tensor(rng, 8, 1, -0.9, 0.9);

  ad::Tape tape;
  ad::Var ma = tape.input(ma0);
  ad::Var mv = tape.input(mv0);
  ad::Var loss = ccc_loss_t(tape, ma, tape.constant(act), mv, tape.constant(val));
  tape.backward(loss);

  auto eval = [&]() {
    ad::Tape t2;
    return ccc_loss_t(t2, t2.input(ma0), t2.constant(act), t2.input(mv0), t2.constant(val)).item();
  };
  const double err = max_fd_rel_err({&ma0, &mv0}, {&ma.grad(), &mv.grad()}, eval);
  REQUIRE(err < 1e-4);

  // spot-check the forward value against the plain implementation
  std::vector<double> pa(ma0.vec()), aa(act.vec()), pv(mv0.vec()), vv(val.vec());
  REQUIRE(loss.item() == Catch::Approx(ccc_loss(pa, aa, pv, vv)).epsilon(1e-12));
}

TEST_CASE("variance primitive matches population variance") {
  ad::Tape tape;
  ad::Var x = tape.input(Tensor::column({1.0, 2.0, 3.0, 4.0}));
  REQUIRE(tape.variance(x).item() == Catch::Approx(1.25));
}

// SPDX-License-Identifier: Apache-2.0
#include "qloop/analysis.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "qloop/rng.hpp"

using namespace qloop;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ScalarLoop example_loop() {
  // The running example: open-loop gain 3.3, closed-loop gain 0.4.
  ScalarLoop lp;
  lp.alpha = 3.3;
  lp.closed_gain = 0.4;
  lp.sigma_w2 = 1.0;
  lp.sigma_0_2 = 1.0;
  return lp;
}

}  // namespace

TEST_CASE("capacity threshold") {
  const double expected =
      0.5 * std::log2(std::numbers::pi * std::numbers::e * 3.3 * 3.3 / 6.0);
  CHECK(capacity_threshold_bits(3.3) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(capacity_threshold_bits(3.3) == doctest::Approx(1.9771).epsilon(1e-4));
}

TEST_CASE("bernoulli scalar bound") {
  const ScalarLoop lp = example_loop();
  const StabilityReport inf_rep =
      bernoulli_scalar_bound(lp, ChannelModel::infinite());
  CHECK(inf_rep.regime == Regime::infinite_capacity);
  CHECK(inf_rep.bound == doctest::Approx(0.84 / 10.73).epsilon(1e-13));
  CHECK(inf_rep.stable);

  // c = 0 (alpha = bl): p_max = 1/alpha^2.
  ScalarLoop dead = lp;
  dead.closed_gain = 0.0;
  CHECK(bernoulli_scalar_bound(dead, ChannelModel::infinite()).bound ==
        doctest::Approx(1.0 / (3.3 * 3.3)).epsilon(1e-13));

  // Finite capacity above threshold is strictly smaller than the asymptote.
  const StabilityReport fin =
      bernoulli_scalar_bound(lp, ChannelModel::finite(6.0));
  CHECK(fin.regime == Regime::finite_capacity);
  const double eta = 2.0 * std::numbers::pi * std::numbers::e / 4096.0;
  const double G = 2.9 * 2.9 / 12.0;
  CHECK(fin.bound ==
        doctest::Approx((0.84 - eta * G) / (10.73 - eta * G)).epsilon(1e-13));
  CHECK(fin.bound < inf_rep.bound);

  // Below threshold nothing stabilizes.
  const StabilityReport low =
      bernoulli_scalar_bound(lp, ChannelModel::finite(1.5));
  CHECK(low.regime == Regime::below_threshold);
  CHECK(low.bound == 0.0);
  CHECK_FALSE(low.stable);

  // An already-unstable closed loop reports bound 0.
  ScalarLoop hopeless = lp;
  hopeless.closed_gain = 1.2;
  const StabilityReport rep =
      bernoulli_scalar_bound(hopeless, ChannelModel::infinite());
  CHECK(rep.bound == 0.0);
  CHECK_FALSE(rep.stable);
}

TEST_CASE("bernoulli bound is nondecreasing in capacity with the right asymptote") {
  const ScalarLoop lp = example_loop();
  double prev = 0.0;
  for (double c = 2.0; c <= 24.0; c += 0.25) {
    const double b = bernoulli_scalar_bound(lp, ChannelModel::finite(c)).bound;
    CHECK(b >= prev - 1e-15);
    prev = b;
  }
  const double limit = bernoulli_scalar_bound(lp, ChannelModel::infinite()).bound;
  CHECK(prev <= limit);
  CHECK(std::abs(prev - limit) < 1e-9);
}

TEST_CASE("bernoulli asymptotic variance") {
  const ScalarLoop lp = example_loop();
  // omega^2(0.05) = 10.89*0.05 + 0.16*0.95 = 0.6965.
  CHECK(bernoulli_scalar_asymptotic_var(lp, ChannelModel::infinite(), 0.05) ==
        doctest::Approx(1.0 / (1.0 - 0.6965)).epsilon(1e-12));
  ScalarLoop dead = lp;
  dead.closed_gain = 0.0;
  CHECK(bernoulli_scalar_asymptotic_var(dead, ChannelModel::infinite(), 0.0) ==
        doctest::Approx(dead.sigma_w2).epsilon(1e-15));
  // Above the bound the variance diverges.
  CHECK(bernoulli_scalar_asymptotic_var(lp, ChannelModel::infinite(), 0.10) ==
        kInf);
}

TEST_CASE("markov scalar bound and asymptote") {
  const ScalarLoop lp = example_loop();
  const StabilityReport rep = markov_scalar_bound(lp, ChannelModel::infinite());
  CHECK(rep.bound == doctest::Approx(0.84 / 9.89).epsilon(1e-13));

  // p=0.05, q=0.95 sits inside; p=0.25, q=0.95 outside.
  CHECK(0.05 / 0.95 < rep.bound);
  CHECK(0.25 / 0.95 > rep.bound);

  const double v =
      markov_scalar_asymptotic_var(lp, ChannelModel::infinite(), 0.05, 0.95);
  const double ratio = 0.05 / 0.95;
  CHECK(v == doctest::Approx((1.0 + ratio) /
                             (1.0 - 0.16 - ratio * (10.89 - 1.0)))
                 .epsilon(1e-12));
  CHECK(v == doctest::Approx(3.2949).epsilon(1e-4));

  // p = 0: the loop never opens.
  CHECK(markov_scalar_asymptotic_var(lp, ChannelModel::infinite(), 0.0, 0.5) ==
        doctest::Approx(1.0 / (1.0 - 0.16)).epsilon(1e-12));

  // Exactly at the bound the variance is +inf (strict inequality).
  const double q = 0.95;
  const double p_at = rep.bound * q;
  CHECK(markov_scalar_asymptotic_var(lp, ChannelModel::infinite(), p_at, q) ==
        kInf);

  CHECK(markov_scalar_asymptotic_var(lp, ChannelModel::infinite(), 0.25, 0.95) ==
        kInf);

  // Finite capacity: same shape with the eta G correction.
  const StabilityReport fin = markov_scalar_bound(lp, ChannelModel::finite(6.0));
  const double eta = 2.0 * std::numbers::pi * std::numbers::e / 4096.0;
  const double G = 2.9 * 2.9 / 12.0;
  CHECK(fin.bound ==
        doctest::Approx((0.84 - eta * G) / 9.89).epsilon(1e-13));
  const double vf =
      markov_scalar_asymptotic_var(lp, ChannelModel::finite(6.0), 0.05, 0.95);
  const double expected_vf = ((1.0 + ratio) * 1.0 + 1e-3 * G) /
                             ((1.0 + ratio) - (10.89 * ratio + 0.16 + eta * G));
  CHECK(vf == doctest::Approx(expected_vf).epsilon(1e-12));

  const StabilityReport low = markov_scalar_bound(lp, ChannelModel::finite(1.9));
  CHECK(low.regime == Regime::below_threshold);
  CHECK_FALSE(low.stable);
}

TEST_CASE("variance sequence matches one-step arithmetic") {
  ScalarLoop lp = example_loop();
  lp.sigma_0_2 = 4.0;
  // One step at p = 0.1, C = inf: omega^2 = 1.233, so 1.233*4 + 1 = 5.932.
  const auto seq = variance_sequence_scalar(lp, SwitchModel::bernoulli(0.1),
                                            ChannelModel::infinite(), 1);
  REQUIRE(seq.size() == 2);
  CHECK(seq[0] == 4.0);
  CHECK(seq[1] == doctest::Approx(5.932).epsilon(1e-12));
}

TEST_CASE("bernoulli variance sequence equals the closed form everywhere") {
  ScalarLoop lp = example_loop();
  lp.sigma_0_2 = 4.0;
  for (double p : {0.02, 0.05, 0.0782852, 0.2}) {
    const auto seq = variance_sequence_scalar(lp, SwitchModel::bernoulli(p),
                                              ChannelModel::infinite(), 1000);
    for (std::size_t k = 0; k <= 1000; ++k) {
      const double cf = bernoulli_variance_closed_form(lp, p, k);
      if (!std::isfinite(cf)) {
        CHECK(seq[k] == cf);  // both overflow together in divergent regimes
      } else {
        CHECK(std::abs(seq[k] - cf) <= 1e-10 * std::max(1.0, std::abs(cf)));
      }
    }
  }
  // omega^2 == 1 exactly: alpha=2, c=0, p=0.25 -> sigma_k^2 = s0 + k sw2.
  ScalarLoop edge;
  edge.alpha = 2.0;
  edge.closed_gain = 0.0;
  edge.sigma_w2 = 1.0;
  edge.sigma_0_2 = 4.0;
  const auto seq = variance_sequence_scalar(edge, SwitchModel::bernoulli(0.25),
                                            ChannelModel::infinite(), 1000);
  for (std::size_t k = 0; k <= 1000; ++k) {
    const double cf = bernoulli_variance_closed_form(edge, 0.25, k);
    CHECK(cf == doctest::Approx(4.0 + static_cast<double>(k)).epsilon(1e-14));
    CHECK(std::abs(seq[k] - cf) <= 1e-10 * std::max(1.0, cf));
  }
}

TEST_CASE("markov variance sequence uses the chain law") {
  const ScalarLoop lp = example_loop();
  const SwitchModel sw = SwitchModel::markov(0.1, 0.5, 0.0);
  const auto seq =
      variance_sequence_scalar(lp, sw, ChannelModel::infinite(), 3);
  // Hand recursion with pi_0 = 0, pi_1 = 0.1, pi_2 = 0.1*0.4 + 0.1 = ...
  double pi = 0.0, s2 = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double w2 = 10.89 * pi + 0.16 * (1.0 - pi);
    s2 = w2 * s2 + 1.0;
    pi = (1.0 - pi) * 0.1 + pi * 0.5;
    CHECK(seq[k + 1] == doctest::Approx(s2).epsilon(1e-14));
  }
}

TEST_CASE("vector bernoulli bound") {
  const Matrix A = Matrix::diagonal(std::vector<double>{2.0, 0.5});
  const Matrix closed = Matrix::diagonal(std::vector<double>{0.1, 0.1});
  const StabilityReport rep = vector_bernoulli_bound(A, closed);
  CHECK(rep.bound == doctest::Approx(0.99 / 3.99).epsilon(1e-12));

  // ||A-BL|| >= 1: unsatisfiable criterion, bound 0 plus warning.
  const StabilityReport warn =
      vector_bernoulli_bound(A, Matrix::diagonal(std::vector<double>{1.2, 0.1}));
  CHECK(warn.bound == 0.0);
  CHECK(warn.norm_criterion_unsatisfiable);

  CHECK_THROWS_AS(
      vector_bernoulli_bound(closed, A),  // open loop better than closed
      DomainError);
}

TEST_CASE("vector markov bound") {
  const Matrix A = Matrix::diagonal(std::vector<double>{2.0, 0.5});
  const Matrix closed = Matrix::diagonal(std::vector<double>{0.1, 0.1});
  CHECK(vector_markov_bound(A, closed).bound ==
        doctest::Approx(0.99 / 3.0).epsilon(1e-12));
  CHECK(vector_markov_bound(A, Matrix::diagonal(std::vector<double>{1.0, 0.0}))
            .bound == 0.0);
  CHECK_THROWS_AS(
      vector_markov_bound(Matrix::diagonal(std::vector<double>{0.9, 0.1}), closed),
      DomainError);
}

TEST_CASE("scalar reductions of the vector bounds agree to 1e-12") {
  const ScalarLoop lp = example_loop();
  const Matrix A{{3.3}};
  const Matrix closed{{0.4}};
  CHECK(std::abs(vector_bernoulli_bound(A, closed).bound -
                 bernoulli_scalar_bound(lp, ChannelModel::infinite()).bound) <=
        1e-12);
  CHECK(std::abs(vector_markov_bound(A, closed).bound -
                 markov_scalar_bound(lp, ChannelModel::infinite()).bound) <=
        1e-12);
}

TEST_CASE("covariance recursion branches") {
  const Matrix A{{1.5, 0.3}, {0.0, 1.2}};
  const Matrix closed{{0.2, 0.0}, {0.1, 0.1}};
  const Matrix W = Matrix::identity(2);
  const Matrix P{{2.0, 0.5}, {0.5, 1.0}};

  const Matrix open_only = covariance_recursion(A, closed, W, 1.0, P);
  const Matrix expect_open = symmetrize(A * P * transpose(A) + W);
  CHECK(max_abs(open_only - expect_open) < 1e-14);

  const Matrix closed_zero =
      covariance_recursion(A, Matrix(2, 2, 0.0), W, 0.0, P);
  CHECK(max_abs(closed_zero - W) < 1e-14);

  // n = 1 reduces to the scalar Bernoulli variance recursion.
  const Matrix one = covariance_recursion(Matrix{{3.3}}, Matrix{{0.4}},
                                          Matrix{{1.0}}, 0.05, Matrix{{4.0}});
  CHECK(one(0, 0) == doctest::Approx(0.6965 * 4.0 + 1.0).epsilon(1e-13));
}

TEST_CASE("stationary covariance: methods agree and match the scalar oracle") {
  // 1x1: sigma_w^2 / (1 - omega^2) = 3.2948929...
  const Matrix s = solve_stationary_covariance(
      Matrix{{3.3}}, Matrix{{0.4}}, Matrix{{1.0}}, 0.05,
      StationaryMethod::linear_system);
  CHECK(s(0, 0) == doctest::Approx(1.0 / (1.0 - 0.6965)).epsilon(1e-10));
  const Matrix sf = solve_stationary_covariance(
      Matrix{{3.3}}, Matrix{{0.4}}, Matrix{{1.0}}, 0.05,
      StationaryMethod::fixed_point);
  CHECK(std::abs(sf(0, 0) - s(0, 0)) <= 1e-8);

  // Diagonal systems decouple into scalar formulas per dimension.
  const Matrix A = Matrix::diagonal(std::vector<double>{2.0, 0.5});
  const Matrix G = Matrix::diagonal(std::vector<double>{0.1, 0.3});
  const double w = 0.1;
  const Matrix P = solve_stationary_covariance(A, G, Matrix::identity(2), w,
                                               StationaryMethod::linear_system);
  CHECK(P(0, 0) ==
        doctest::Approx(1.0 / (1.0 - (w * 4.0 + (1 - w) * 0.01))).epsilon(1e-12));
  CHECK(P(1, 1) ==
        doctest::Approx(1.0 / (1.0 - (w * 0.25 + (1 - w) * 0.09))).epsilon(1e-12));
  CHECK(std::abs(P(0, 1)) < 1e-12);

  // weight = 0 with a strict contraction: the discrete Lyapunov equation,
  // cross-checked by 200 steps of fixed-point iteration.
  const Matrix C{{0.4, 0.2}, {-0.1, 0.3}};
  const Matrix W{{1.0, 0.2}, {0.2, 2.0}};
  const Matrix lyap = solve_stationary_covariance(Matrix::identity(2), C, W, 0.0,
                                                  StationaryMethod::linear_system);
  Matrix it = W;
  for (int k = 0; k < 200; ++k) it = symmetrize(C * it * transpose(C) + W);
  CHECK(max_abs(lyap - it) < 1e-10);

  // Contraction violated -> refuse.
  CHECK_THROWS_AS(
      solve_stationary_covariance(Matrix{{3.3}}, Matrix{{0.4}}, Matrix{{1.0}},
                                  0.2, StationaryMethod::linear_system),
      ConvergenceError);
}

TEST_CASE("stationary covariance on random stable 3x3 instances") {
  RngStream rng(31);
  int tested = 0;
  while (tested < 20) {
    Matrix A(3, 3), G(3, 3);
    for (auto& v : A.a) v = 3.0 * (2.0 * rng.next_double() - 1.0);
    for (auto& v : G.a) v = 0.45 * (2.0 * rng.next_double() - 1.0);
    const double na = spectral_norm(A);
    const double ng = spectral_norm(G);
    if (ng >= 0.95) continue;
    // Weight chosen safely inside the contraction region.
    const double wmax = (1.0 - ng * ng) / (na * na - ng * ng);
    const double w = 0.5 * wmax;
    if (!(w > 0.0) || !(w <= 1.0)) continue;
    Matrix W = Matrix::identity(3);
    const Matrix p_lin =
        solve_stationary_covariance(A, G, W, w, StationaryMethod::linear_system);
    const Matrix p_fix =
        solve_stationary_covariance(A, G, W, w, StationaryMethod::fixed_point);
    CHECK(max_abs(p_lin - p_fix) <= 1e-8);
    // Contraction certificate holds by construction.
    CHECK(w * na * na + (1.0 - w) * ng * ng < 1.0);
    // And the solution really is a fixed point.
    const Matrix resid = covariance_recursion(A, G, W, w, p_lin) - p_lin;
    CHECK(max_abs(resid) <= 1e-8);
    ++tested;
  }
}

TEST_CASE("scalar loop validation") {
  ScalarLoop bad;
  bad.alpha = 0.5;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

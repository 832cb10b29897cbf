#include <doctest.h>

#include <array>
#include <cmath>

#include "cmlab/metrics.hpp"

using namespace cmlab;

namespace {

Eigen::VectorXd vec1(double a) {
  Eigen::VectorXd v(1);
  v << a;
  return v;
}

double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) /
         std::sqrt(2.0 * 3.14159265358979323846 * var);
}

// idealized constant-step smooth grid: t_k = gap + k h, t'_k = t_k - gap
Schedule ideal_smooth(double lipschitz, int steps) {
  const double h = 1.0 / (3.0 * (lipschitz + 1.0));
  const double gap = 1.0 / (6.0 * (lipschitz + 1.0));
  std::vector<double> t(steps + 1), tp(steps);
  for (int k = 0; k <= steps; ++k) t[k] = gap + k * h;
  for (int k = 0; k < steps; ++k) tp[k] = t[k] - gap;
  return make_schedule(Regime::Smooth, std::move(t), std::move(tp), lipschitz,
                       1, 0.0);
}

}  // namespace

TEST_CASE("gaussian kl closed form") {
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  CHECK(kl_gaussian(z, 1.0, z, 1.0) == 0.0);

  // d = 1, variances 2 vs 1: (v - 1 - ln v)/2
  CHECK(kl_gaussian(z, 2.0, z, 1.0) ==
        doctest::Approx(0.5 * (1.0 - std::log(2.0))).epsilon(1e-12));
  CHECK(kl_gaussian(z, 2.0, z, 1.0) == doctest::Approx(0.15343).epsilon(1e-4));

  // mean shift with equal variances
  const Eigen::VectorXd b = vec1(0.3);
  CHECK(kl_gaussian(b, 2.5, z, 2.5) ==
        doctest::Approx(0.09 / 5.0).epsilon(1e-12));

  // tiny variance ratios stay accurate through the series branch
  const double rho = 3e-11;
  const double kl = kl_gaussian(z, 1.0 + rho, z, 1.0);
  CHECK(kl == doctest::Approx(0.25 * rho * rho).epsilon(1e-6));

  CHECK_THROWS(kl_gaussian(z, 0.0, z, 1.0));
  CHECK_THROWS(kl_gaussian(z, 1.0, z, -2.0));
}

TEST_CASE("conditional step kl") {
  const Eigen::VectorXd f = vec1(0.4);
  CHECK(kl_conditional_step(f, f, 0.2, 0.5) == 0.0);

  // choose the gap so e^{2(t'-t)} = 1/2; the whole term reduces to q/2
  const double gap = 0.5 * std::log(2.0);
  const Eigen::VectorXd g = vec1(0.4 + 0.3);
  const double q = 0.09;
  CHECK(kl_conditional_step(f, g, 1.0, 1.0 + gap) ==
        doctest::Approx(q / 2.0).epsilon(1e-12));

  // coincides with the gaussian kl of the two renoise conditionals
  const double tp = 0.7, tprev = 0.9;
  const double shrink = std::exp(tp - tprev);
  const double noise_sq = 1.0 - shrink * shrink;
  const double via_gauss =
      kl_gaussian(shrink * f, noise_sq, shrink * g, noise_sq);
  CHECK(kl_conditional_step(f, g, tp, tprev) ==
        doctest::Approx(via_gauss).epsilon(1e-12));

  CHECK_THROWS(kl_conditional_step(f, g, 0.9, 0.9));
}

TEST_CASE("chain bound accumulates") {
  CHECK(kl_chain_upper_bound(std::array<double, 3>{0.0, 0.0, 0.0}, 0.0) == 0.0);
  CHECK(kl_chain_upper_bound(std::array<double, 2>{0.1, 0.2}, 0.05) ==
        doctest::Approx(0.35).epsilon(1e-15));
  CHECK(kl_chain_upper_bound(std::array<double, 1>{0.125}, 0.0) == 0.125);
  CHECK_THROWS(kl_chain_upper_bound(std::array<double, 1>{-0.1}, 0.0));
}

TEST_CASE("quadrature kl cross validates the closed form") {
  const auto p = [](double x) { return normal_pdf(x, 0.0, 2.0); };
  const auto q = [](double x) { return normal_pdf(x, 0.0, 1.0); };
  const auto same = kl_quadrature_1d(p, p, -15.0, 15.0);
  CHECK(std::abs(same.value) < 1e-10);

  const auto r = kl_quadrature_1d(p, q, -15.0, 15.0);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  CHECK(r.value == doctest::Approx(kl_gaussian(z, 2.0, z, 1.0)).epsilon(1e-8));
  CHECK(r.error_estimate < 1e-6);

  const auto bad = [](double x) { return x < 0.0 ? -1.0 : 1.0; };
  CHECK_THROWS(kl_quadrature_1d(bad, q, -1.0, 1.0));
}

TEST_CASE("bound formula from schedule data") {
  // zero score error leaves only the initialization term
  const Schedule s = build_schedule_smooth(1.0, 2, 2.0, 0.04);
  const auto b0 = theorem_rhs(s, 2, 2.0, 0.0);
  CHECK(b0.value == doctest::Approx((2.0 + 2.0) * 0.04 / 4.0).epsilon(1e-12));
  CHECK(b0.value == b0.init_term);

  // constant-step instance: sum of 1/(4 gap) over 28 steps at gap 1/12 is 84,
  // and every h'_k = 1/4
  const Schedule ideal = ideal_smooth(1.0, 28);
  const auto b = theorem_rhs(ideal, 2, 2.0, 0.1);
  CHECK(b.score_coefficient ==
        doctest::Approx(std::exp(2.0) * (1.0 / 16.0) * 84.0).epsilon(1e-12));
  CHECK(b.init_term ==
        doctest::Approx(4.0 * std::exp(-ideal.total_time())).epsilon(1e-12));
  CHECK(b.value == doctest::Approx(b.init_term + b.score_coefficient * 0.01)
                       .epsilon(1e-12));

  // doubling the horizon multiplies the first term by e^{-T}
  const auto bT = theorem_rhs(ideal_smooth(1.0, 28), 2, 2.0, 0.0);
  const auto b2T = theorem_rhs(ideal_smooth(1.0, 56), 2, 2.0, 0.0);
  const double T = ideal_smooth(1.0, 28).total_time();
  const double T2 = ideal_smooth(1.0, 56).total_time();
  CHECK(b2T.init_term ==
        doctest::Approx(bT.init_term * std::exp(-(T2 - T))).epsilon(1e-12));

  // nonsmooth regime carries the e^4 constant
  const Schedule ns = build_schedule_nonsmooth(1, 1.0, 0.02, std::log(2.0));
  const auto bn = theorem_rhs(ns, 1, 1.0, 0.1);
  double acc = 0.0;
  for (int k = 1; k <= ns.steps(); ++k) {
    acc += ns.h_prime(k) * ns.h_prime(k) / (4.0 * ns.gap(k - 1));
  }
  CHECK(bn.score_coefficient == doctest::Approx(std::exp(4.0) * acc).epsilon(1e-12));
}

TEST_CASE("bound formula monotonicity") {
  // decreasing in total time at fixed eps
  double prev = 1e9;
  for (const int steps : {10, 20, 40, 80}) {
    const auto b = theorem_rhs(ideal_smooth(1.0, steps), 2, 2.0, 0.0);
    CHECK(b.value < prev);
    CHECK(b.value > 0.0);
    prev = b.value;
  }
  // increasing in the score error at fixed schedule
  const Schedule s = ideal_smooth(1.0, 20);
  double lo = 0.0;
  for (const double eps : {0.01, 0.02, 0.05, 0.2}) {
    const double v = theorem_rhs(s, 2, 2.0, eps).value;
    CHECK(v > lo);
    lo = v;
  }
}

TEST_CASE("initialization error bound holds for gaussian targets") {
  // exact KL(N(0, v_T I) || N(0, I)) <= (d + m2) e^{-T}
  for (const double cov : {0.0, 0.25, 1.0, 4.0, 16.0}) {
    for (const int d : {1, 2, 8}) {
      for (const double T : {1.0, 2.0, 4.0, 8.0}) {
        const double vT = cov * std::exp(-2.0 * T) + (1.0 - std::exp(-2.0 * T));
        const Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
        const double kl = kl_gaussian(z, vT, z, 1.0);
        const double m2 = d * cov;
        CHECK(kl <= (d + m2) * std::exp(-T));
      }
    }
  }
}

#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmlab/targets.hpp"

using namespace cmlab;

namespace {

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

Eigen::VectorXd vec1(double a) {
  Eigen::VectorXd v(1);
  v << a;
  return v;
}

std::vector<GaussianMixture> test_targets() {
  return {
      GaussianMixture::standard_normal(2),
      GaussianMixture::single(vec2(1.0, -0.5), 4.0),
      GaussianMixture::symmetric_pair_1d(1.0, 0.25),
      GaussianMixture::point_mass(vec2(0.3, 0.0)),
  };
}

}  // namespace

TEST_CASE("noised marginal closed form") {
  const auto std2 = GaussianMixture::standard_normal(2);
  for (const double t : {0.0, 0.3, 2.0, 9.0}) {
    const auto m = std2.marginal_at(t);
    CHECK(m.components()[0].var == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(m.components()[0].mean.norm() == 0.0);
  }

  const auto wide = GaussianMixture::single(vec2(0.0, 0.0), 4.0);
  const double t = std::log(std::sqrt(3.0));  // e^{-2t} = 1/3
  CHECK(wide.marginal_at(t).components()[0].var ==
        doctest::Approx(2.0).epsilon(1e-14));

  const auto mix = GaussianMixture::symmetric_pair_1d(1.0, 0.25);
  const auto late = mix.marginal_at(40.0);
  for (const auto& c : late.components()) {
    CHECK(std::abs(c.mean[0]) < 1e-15);
    CHECK(c.var == doctest::Approx(1.0).epsilon(1e-14));
  }

  // t = 0 returns the target parameters themselves
  const auto at0 = wide.marginal_at(0.0);
  CHECK(at0.components()[0].var == 4.0);
  const auto mix0 = mix.marginal_at(0.0);
  CHECK(mix0.components()[0].mean[0] == 1.0);
  CHECK(mix0.components()[0].var == 0.25);
}

TEST_CASE("score closed forms") {
  const auto std2 = GaussianMixture::standard_normal(2);
  const Eigen::VectorXd x = vec2(0.7, -1.1);
  CHECK((std2.score(1.3, x) + x).norm() < 1e-14);

  const auto wide = GaussianMixture::single(vec2(0.0, 0.0), 4.0);
  const double t = std::log(std::sqrt(3.0));
  CHECK((wide.score(t, vec2(2.0, 0.0)) - vec2(-1.0, 0.0)).norm() < 1e-14);

  const auto mix = GaussianMixture::symmetric_pair_1d(0.8, 0.25);
  CHECK(std::abs(mix.score(0.5, vec1(0.0))[0]) < 1e-14);
}

TEST_CASE("score matches finite differences of the log density") {
  Rng rng(91);
  const double eps = 1e-5;
  for (const auto& target : test_targets()) {
    for (const double t : {0.1, 0.5, 1.0, 3.0}) {
      const auto marg = target.marginal_at(t);
      const Eigen::MatrixXd xs = marg.sample(100, rng);
      for (Eigen::Index j = 0; j < xs.cols(); ++j) {
        const Eigen::VectorXd s = target.score(t, xs.col(j));
        for (int i = 0; i < target.dim(); ++i) {
          Eigen::VectorXd hi = xs.col(j), lo = xs.col(j);
          hi[i] += eps;
          lo[i] -= eps;
          const double fd =
              (target.log_density(t, hi) - target.log_density(t, lo)) /
              (2.0 * eps);
          CHECK(std::abs(s[i] - fd) <=
                1e-6 * std::max(1.0, std::abs(s[i])));
        }
      }
    }
  }
}

TEST_CASE("hessian closed forms and finite differences") {
  const auto std2 = GaussianMixture::standard_normal(2);
  const Eigen::MatrixXd h0 = std2.score_hessian(0.7, vec2(0.7, 0.2));
  CHECK((h0 + Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-14);

  // point mass: hessian is -I/sigma_t^2 everywhere, Frobenius norm sqrt(d)/sigma^2
  const auto pm = GaussianMixture::point_mass(vec2(0.0, 0.0));
  const double t = 0.4;
  const double s2 = -std::expm1(-2.0 * t);
  const Eigen::MatrixXd hp = pm.score_hessian(t, vec2(0.3, -0.9));
  CHECK((hp + Eigen::MatrixXd::Identity(2, 2) / s2).norm() < 1e-12);
  CHECK(hp.norm() == doctest::Approx(std::sqrt(2.0) / s2).epsilon(1e-12));
  CHECK(hp.norm() <= 2.0 / s2);

  // central differences of the score, column by column
  Rng rng(17);
  const double eps = 1e-5;
  for (const auto& target : test_targets()) {
    const double tt = 0.6;
    const auto marg = target.marginal_at(tt);
    const Eigen::MatrixXd xs = marg.sample(20, rng);
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
      const Eigen::MatrixXd h = target.score_hessian(tt, xs.col(j));
      CHECK((h - h.transpose()).norm() < 1e-12);
      for (int i = 0; i < target.dim(); ++i) {
        Eigen::VectorXd hi = xs.col(j), lo = xs.col(j);
        hi[i] += eps;
        lo[i] -= eps;
        const Eigen::VectorXd fd =
            (target.score(tt, hi) - target.score(tt, lo)) / (2.0 * eps);
        CHECK((h.col(i) - fd).norm() <= 1e-6 * std::max(1.0, h.col(i).norm()));
      }
    }
  }
}

TEST_CASE("hessian norm quantile for mixtures stays near the reference scale") {
  // reported, not asserted tightly: the sub-exponential bound concerns the
  // norm's tail, so only a generous multiple is checked here
  const auto mix = GaussianMixture::symmetric_pair_1d(1.0, 0.25);
  Rng rng(3);
  for (const double t : {0.25, 0.5, 1.0}) {
    const double s2 = -std::expm1(-2.0 * t);
    const auto marg = mix.marginal_at(t);
    const Eigen::MatrixXd xs = marg.sample(10000, rng);
    std::vector<double> norms(xs.cols());
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
      norms[j] = marg.score_hessian(xs.col(j)).norm();
    }
    std::sort(norms.begin(), norms.end());
    const double q99 = norms[static_cast<std::size_t>(0.99 * norms.size())];
    const double ref = 1.0 / s2;  // d/sigma_t^2 with d = 1
    CHECK(q99 < 20.0 * ref);
    MESSAGE("t=", t, " q99/|d/sigma^2| = ", q99 / ref);
  }
}

TEST_CASE("second moment") {
  CHECK(GaussianMixture::standard_normal(3).second_moment() == 3.0);
  CHECK(GaussianMixture::single(vec2(1.0, 1.0), 2.0).second_moment() ==
        doctest::Approx(6.0).epsilon(1e-15));
  CHECK(GaussianMixture::point_mass(vec2(0.0, 0.0)).second_moment() == 0.0);
}

TEST_CASE("sampling moments, occupancy and determinism") {
  const auto std2 = GaussianMixture::standard_normal(2);
  Rng rng(1234);
  const std::size_t n = 100000;
  const Eigen::MatrixXd xs = std2.sample(n, rng);
  CHECK(xs.rowwise().mean().norm() <
        3.0 * std::sqrt(2.0 / static_cast<double>(n)));

  const auto mix = GaussianMixture::symmetric_pair_1d(3.0, 0.01);
  Rng rng2(77);
  const Eigen::MatrixXd ms = mix.sample(n, rng2);
  const auto hits =
      (ms.row(0).array() > 0.0).count();  // components well separated
  const double band = 3.0 * std::sqrt(0.25 * n);
  CHECK(std::abs(static_cast<double>(hits) - 0.5 * n) < band);

  Rng a(9), b(9);
  CHECK((std2.sample(64, a) - std2.sample(64, b)).norm() == 0.0);
}

TEST_CASE("mixture validation") {
  CHECK_THROWS(GaussianMixture({MixtureComponent{0.5, vec1(0.0), 1.0},
                                MixtureComponent{0.4, vec1(1.0), 1.0}}));
  CHECK_THROWS(GaussianMixture({MixtureComponent{1.0, vec1(0.0), -1.0}}));
  CHECK_THROWS(GaussianMixture::point_mass(vec1(0.0)).score(0.0, vec1(0.1)));
  CHECK_NOTHROW(GaussianMixture::point_mass(vec1(0.0)).score(0.01, vec1(0.1)));
}

TEST_CASE("lipschitz reporter") {
  const auto wide = GaussianMixture::single(vec2(0.0, 0.0), 4.0);
  const auto at0 = wide.score_lipschitz(0.0, 0.0);
  CHECK(at0.exact);
  CHECK(at0.value == doctest::Approx(0.25).epsilon(1e-14));
  const auto sup = wide.score_lipschitz(0.0, 50.0);
  CHECK(sup.value == doctest::Approx(1.0).epsilon(1e-9));

  const auto narrow = GaussianMixture::single(vec1(0.0), 0.25);
  CHECK(narrow.score_lipschitz(0.0, 50.0).value ==
        doctest::Approx(4.0).epsilon(1e-12));

  const auto mix = GaussianMixture::symmetric_pair_1d(1.0, 0.25);
  const auto est = mix.score_lipschitz(0.1, 3.0);
  CHECK_FALSE(est.exact);
  CHECK(est.value > 0.0);
}

#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "cmlab/distill.hpp"
#include "cmlab/sampler.hpp"

using namespace cmlab;

namespace {

Eigen::VectorXd vec1(double a) {
  Eigen::VectorXd v(1);
  v << a;
  return v;
}

// write the closed-form affine transport into the parameter table
void set_oracle_params(Approximator& approx, const GaussianMixture& target) {
  const auto& grid = approx.grid();
  for (int n = 1; n < grid.size(); ++n) {
    for (int m = 0; m < n; ++m) {
      const double tn = grid.knots[n];
      const double tm = grid.knots[m];
      const double scale = std::sqrt(target.component_var_at(tm) /
                                     target.component_var_at(tn));
      const Eigen::VectorXd offset = target.component_mean_at(tm) -
                                     scale * target.component_mean_at(tn);
      const int off = approx.pair_offset(m, n);
      approx.set_param(off, scale);
      for (int i = 0; i < target.dim(); ++i) {
        approx.set_param(off + 1 + i, offset[i]);
      }
    }
  }
  approx.reset_ema();
}

const GaussianMixture kWide = GaussianMixture::single(vec1(0.0), 4.0);

}  // namespace

TEST_CASE("train grid validation") {
  CHECK_THROWS(TrainGrid::uniform(0.0, 1.0, 8));
  CHECK_THROWS(TrainGrid::uniform(0.5, 0.5, 8));
  CHECK_THROWS(TrainGrid::uniform(0.1, 1.0, 1));
  const auto g = TrainGrid::uniform(0.1, 1.0, 10);
  CHECK(g.index_of(0.1) == 0);
  CHECK(g.index_of(1.0) == 9);
  CHECK(g.index_of(0.55) == -1);

  const Schedule s = make_schedule(Regime::Smooth, {0.25, 0.45, 0.65},
                                   {0.2, 0.4}, 1.0, 1, 0.0);
  const auto fs = TrainGrid::from_schedule(s);
  CHECK(fs.size() == 5);
  CHECK(fs.index_of(0.2) == 0);
  CHECK(fs.index_of(0.65) == 4);

  // default smooth builds touch t' = 0 and cannot seed a grid
  CHECK_THROWS(TrainGrid::from_schedule(build_schedule_smooth(1.0, 1, 4.0, 0.4)));
}

TEST_CASE("boundary is the identity for every parameter value") {
  Approximator a(Family::FeatureLinear, TrainGrid::uniform(0.1, 2.0, 6), 2);
  Rng rng(4);
  a.perturb_params(rng, 0.7);
  const Eigen::VectorXd x = (Eigen::VectorXd(2) << 0.7, -0.3).finished();
  for (const double t : {0.1, 0.48, 1.24, 2.0, 0.33}) {
    CHECK((a.eval(t, t, x) - x).norm() == 0.0);
  }
  CHECK_THROWS(a.eval(0.1, 0.5, x));              // non-knot source
  CHECK_THROWS(a.eval(0.48, 0.1, x));             // wrong direction
  CHECK_NOTHROW(a.eval(0.1, 0.48, x));
}

TEST_CASE("ema follows the running-average contract") {
  Approximator a(Family::AffinePerPair, TrainGrid::uniform(0.1, 1.0, 4), 1);
  Rng rng(9);

  a.set_ema_rate(0.0);
  a.perturb_params(rng, 0.3);
  a.set_param(0, 7.5);
  a.ema_update();
  CHECK(a.ema_params() == a.params());

  a.set_ema_rate(1.0);
  const Eigen::VectorXd frozen = a.ema_params();
  a.set_param(0, -2.5);
  a.ema_update();
  CHECK(a.ema_params() == frozen);

  a.set_ema_rate(0.5);
  a.reset_ema();
  const double before = a.ema_params()[0];
  a.set_param(0, before + 1.0);
  a.ema_update();
  CHECK(a.ema_params()[0] == doctest::Approx(before + 0.5).epsilon(1e-15));

  CHECK_THROWS(a.set_ema_rate(1.5));
}

TEST_CASE("identity parameters are a zero of the loss on the stationary law") {
  const auto std1 = GaussianMixture::standard_normal(1);
  const auto field = ScoreField::exact(std1);
  Approximator a(Family::AffinePerPair, TrainGrid::uniform(0.2, 2.0, 8), 1);
  Rng rng(21);
  const auto res = cd_loss(a, field, std1, 128, rng);
  CHECK(res.loss < 1e-26);
  CHECK(res.grad.norm() < 1e-12);
}

TEST_CASE("oracle parameters annihilate the loss under the exact backstep") {
  const auto field = ScoreField::exact(kWide);
  Approximator a(Family::AffinePerPair, TrainGrid::uniform(0.05, 3.0, 16), 1);
  set_oracle_params(a, kWide);
  Rng rng(22);
  const auto res = cd_loss(a, field, kWide, 128, rng, StepMethod::RungeKutta4);
  CHECK(res.loss < 1e-16);

  // the one-step exponential solver leaves only its own discretization
  // residual (the loss sums over all 120 pair terms)
  Rng rng2(23);
  const auto coarse = cd_loss(a, field, kWide, 128, rng2,
                              StepMethod::ExponentialIntegrator);
  CHECK(coarse.loss < 0.1);
  CHECK(coarse.loss > res.loss);
}

TEST_CASE("analytic gradients match central differences") {
  for (const Family family : {Family::AffinePerPair, Family::FeatureLinear}) {
    Approximator a(family, TrainGrid::uniform(0.2, 1.4, 5), 2);
    const auto target = GaussianMixture::single(
        (Eigen::VectorXd(2) << 0.4, -0.2).finished(), 2.0);
    const auto field = ScoreField::exact(target);
    Rng shape(31);
    a.perturb_params(shape, 0.2);

    const std::uint64_t seed = 77;
    Rng base(seed);
    const auto at = cd_loss(a, field, target, 32, base);

    Rng pick(5);
    for (int probe = 0; probe < 20; ++probe) {
      const int i =
          static_cast<int>(pick.next_u64() % static_cast<std::uint64_t>(a.param_count()));
      const double v = a.get_param(i);
      const double eps = 1e-5 * std::max(1.0, std::abs(v));
      a.set_param(i, v + eps);
      Rng hi(seed);
      const double up = cd_loss(a, field, target, 32, hi).loss;
      a.set_param(i, v - eps);
      Rng lo(seed);
      const double dn = cd_loss(a, field, target, 32, lo).loss;
      a.set_param(i, v);
      const double fd = (up - dn) / (2.0 * eps);
      CHECK(std::abs(at.grad[i] - fd) <=
            1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("training recovers the affine transport ratios") {
  const auto field = ScoreField::exact(kWide);
  const int n_knots = 64;
  Approximator a(Family::AffinePerPair,
                 TrainGrid::uniform(0.01, std::log(100.0), n_knots), 1);

  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.iterations = 1500;
  cfg.batch = 48;
  cfg.method = StepMethod::RungeKutta4;  // exact-Phi substitute
  cfg.ema_rate = 0.0;
  Rng rng(123);
  const auto history = train(a, field, kWide, cfg, rng);
  REQUIRE(static_cast<int>(history.size()) == cfg.iterations);

  // smoothed loss is nonincreasing on the benchmark
  const auto avg = [&](int lo, int hi) {
    double s = 0.0;
    for (int i = lo; i < hi; ++i) s += history[i];
    return s / (hi - lo);
  };
  CHECK(avg(cfg.iterations - 100, cfg.iterations) < avg(0, 100));
  CHECK(avg(cfg.iterations - 100, cfg.iterations) <
        avg(cfg.iterations / 2 - 50, cfg.iterations / 2 + 50) + 1e-12);

  const auto& grid = a.grid();
  double worst = 0.0;
  for (int n = 1; n < grid.size(); ++n) {
    for (int m = 0; m < n; ++m) {
      const double want = std::sqrt(kWide.component_var_at(grid.knots[m]) /
                                    kWide.component_var_at(grid.knots[n]));
      const auto got = *a.affine_at(grid.knots[m], grid.knots[n]);
      worst = std::max(worst, std::abs(got.scale - want));
    }
  }
  MESSAGE("worst scale deviation from the oracle: ", worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("feature family trains on a mixture target") {
  const auto mix = GaussianMixture::symmetric_pair_1d(1.0, 0.25);
  const auto field = ScoreField::exact(mix);
  Approximator a(Family::FeatureLinear, TrainGrid::uniform(0.3, 2.1, 7), 1);
  Rng shake(41);
  a.perturb_params(shake, 0.15);

  Rng before_rng(90);
  const double before = cd_loss(a, field, mix, 256, before_rng).loss;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.iterations = 400;
  cfg.batch = 64;
  cfg.ema_rate = 0.0;
  Rng trng(91);
  const auto history = train(a, field, mix, cfg, trng);
  Rng after_rng(90);
  const double after = cd_loss(a, field, mix, 256, after_rng).loss;
  CHECK(after < 0.1 * before);

  // the trained curved map tracks the oracle flow between its end knots
  const auto oracle = ConsistencyMap::ode_oracle(field);
  Rng prng(92);
  const auto gap = measure_map_gap(a, oracle, mix, 0.3, 2.1, 1000, prng);
  Rng nrng(92);
  Approximator naive(Family::FeatureLinear, a.grid(), 1);
  const auto naive_gap = measure_map_gap(naive, oracle, mix, 0.3, 2.1, 1000, nrng);
  MESSAGE("trained gap ", gap.mean_norm, " identity-map gap ", naive_gap.mean_norm);
  CHECK(gap.mean_norm < naive_gap.mean_norm);
}

TEST_CASE("zero iterations leave the approximator untouched") {
  const auto field = ScoreField::exact(kWide);
  Approximator a(Family::AffinePerPair, TrainGrid::uniform(0.1, 1.0, 6), 1);
  const Eigen::VectorXd before = a.params();
  TrainConfig cfg;
  cfg.iterations = 0;
  Rng rng(1);
  const auto history = train(a, field, kWide, cfg, rng);
  CHECK(history.empty());
  CHECK(a.params() == before);
}

TEST_CASE("divergent training aborts") {
  const auto field = ScoreField::exact(kWide);
  Approximator a(Family::AffinePerPair, TrainGrid::uniform(0.1, 3.0, 10), 1);
  TrainConfig cfg;
  cfg.learning_rate = 50.0;
  cfg.iterations = 400;
  Rng rng(2);
  CHECK_THROWS_AS(train(a, field, kWide, cfg, rng), std::runtime_error);
}

TEST_CASE("distillation residual: exact parameters, orderings and trends") {
  const auto field = ScoreField::exact(kWide);

  Approximator exact_a(Family::AffinePerPair, TrainGrid::uniform(0.05, 3.0, 16), 1);
  set_oracle_params(exact_a, kWide);
  Rng rng(7);
  const auto clean =
      measure_cd_error(exact_a, field, kWide, 512, rng, StepMethod::RungeKutta4);
  CHECK(clean.eps_cd < 1e-7);

  Approximator noisy = exact_a;
  Rng shake(8);
  noisy.perturb_params(shake, 0.05);
  Rng rng2(7);
  const auto dirty =
      measure_cd_error(noisy, field, kWide, 512, rng2, StepMethod::RungeKutta4);
  CHECK(dirty.eps_cd > 10.0 * clean.eps_cd);

  // halving the grid spacing lowers the residual against the exact backstep
  double prev = 1e100;
  for (const int n_knots : {9, 17, 33}) {
    Approximator a(Family::AffinePerPair,
                   TrainGrid::uniform(0.05, 3.25, n_knots), 1);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.iterations = 900;
    cfg.batch = 32;
    cfg.method = StepMethod::ExponentialIntegrator;
    cfg.ema_rate = 0.0;
    Rng trng(100 + n_knots);
    train(a, field, kWide, cfg, trng);
    Rng mrng(50);
    const auto rep =
        measure_cd_error(a, field, kWide, 1024, mrng, StepMethod::RungeKutta4);
    MESSAGE("knots ", n_knots, " eps_cd ", rep.eps_cd);
    CHECK(rep.eps_cd < prev);
    prev = rep.eps_cd;
  }
}

TEST_CASE("map gap against the reference transport") {
  const auto field = ScoreField::exact(kWide);
  const auto reference = ConsistencyMap::closed_form_affine(kWide);

  Approximator a(Family::AffinePerPair, TrainGrid::uniform(0.05, 3.0, 16), 1);
  set_oracle_params(a, kWide);
  Rng rng(11);
  const auto zero = measure_map_gap(a, reference, kWide, 0.05, 3.0, 2000, rng);
  CHECK(zero.mean_norm < 1e-12);

  Approximator off = a;
  const int slot = off.pair_offset(0, 15);
  off.set_param(slot, off.get_param(slot) + 0.05);
  Rng rng2(11);
  const auto moved = measure_map_gap(off, reference, kWide, 0.05, 3.0, 2000, rng2);
  CHECK(moved.mean_norm > 0.01);
  CHECK(moved.mean_sq > 0.0);
}

TEST_CASE("lipschitz probes of the learned map") {
  const auto std1 = GaussianMixture::standard_normal(1);
  Approximator id(Family::AffinePerPair, TrainGrid::uniform(0.1, 2.0, 8), 1);
  Rng rng(3);
  const auto p0 = verify_lipschitz(id, std1, 0.1, 2.0, 1.0, 200, rng);
  CHECK(p0.max_ratio == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p0.max_ratio <= p0.growth_bound);

  // exact wide-gaussian transport from log sqrt 3 to 0.01: scale about sqrt 2
  const double t3 = std::log(std::sqrt(3.0));
  TrainGrid g;
  g.knots = {0.01, t3};
  g.lambda = {1.0, 1.0};
  Approximator wide_map(Family::AffinePerPair, g, 1);
  set_oracle_params(wide_map, kWide);
  Rng rng2(4);
  const auto p1 = verify_lipschitz(wide_map, kWide, 0.01, t3, 1.0, 200, rng2);
  CHECK(p1.max_ratio ==
        doctest::Approx(std::sqrt(kWide.component_var_at(0.01) /
                                  kWide.component_var_at(t3)))
            .epsilon(1e-9));
  CHECK(p1.max_ratio <= p1.growth_bound);

  Approximator rough = wide_map;
  Rng shake(5);
  rough.perturb_params(shake, 0.4);
  Rng rng3(4);
  const auto p2 = verify_lipschitz(rough, kWide, 0.01, t3, 1.0, 200, rng3);
  CHECK(p2.max_ratio > p1.max_ratio);
  CHECK(std::isfinite(p2.max_ratio));

  // the expected-contraction report presumes a fine discretization: many
  // small backsteps, so the n E||x-y|| term dominates the actual growth
  Approximator fine(Family::AffinePerPair, TrainGrid::uniform(0.05, 3.0, 16), 1);
  set_oracle_params(fine, kWide);
  Rng rng4(6);
  const auto probe = verify_expected_contraction(fine, kWide, 15, 1e-3,
                                                 0.0, 200, rng4);
  CHECK(probe.satisfied);
  CHECK(probe.lhs <= probe.rhs);
}

TEST_CASE("serialized approximators round-trip and snapshot") {
  Approximator a(Family::FeatureLinear, TrainGrid::uniform(0.2, 1.8, 5), 2);
  Rng rng(77);
  a.perturb_params(rng, 0.3);
  const std::string path = "/tmp/cmlab_test_approx.json";
  a.save(path);
  const Approximator b = Approximator::load(path);
  CHECK(b.family() == a.family());
  CHECK(b.params() == a.params());
  CHECK(b.ema_params() == a.ema_params());
  CHECK(b.grid().knots == a.grid().knots);
  std::remove(path.c_str());

  // the consistency-map adapter snapshots parameters at creation
  Approximator c(Family::AffinePerPair, TrainGrid::uniform(0.2, 1.8, 5), 1);
  const auto map = c.as_consistency_map();
  const Eigen::VectorXd x = vec1(0.8);
  const Eigen::VectorXd before = map.eval(0.2, 1.8, x);
  c.set_param(c.pair_offset(0, 4), 5.0);
  CHECK((map.eval(0.2, 1.8, x) - before).norm() == 0.0);
  CHECK((c.eval(0.2, 1.8, x) - before).norm() > 0.1);
}

TEST_CASE("trained transport drives the sampler to the exact-map divergence") {
  // strictly positive schedule so its knots can seed a training grid
  std::vector<double> t, tp;
  for (int k = 0; k <= 8; ++k) t.push_back(0.25 + 0.2 * k);
  for (int k = 0; k < 8; ++k) tp.push_back(t[k] - 0.05);
  const Schedule s =
      make_schedule(Regime::Smooth, std::move(t), std::move(tp), 1.0, 1, 0.0);

  const auto field = ScoreField::exact(kWide);
  Approximator a(Family::AffinePerPair, TrainGrid::from_schedule(s), 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.iterations = 1200;
  cfg.batch = 48;
  cfg.method = StepMethod::RungeKutta4;
  cfg.ema_rate = 0.0;
  Rng rng(2025);
  train(a, field, kWide, cfg, rng);

  const auto learned_map = a.as_consistency_map();
  const auto exact_map = ConsistencyMap::closed_form_affine(kWide);
  const auto got =
      gaussian_pushforward(s, learned_map, InitKind::StandardNormal, kWide);
  const auto want =
      gaussian_pushforward(s, exact_map, InitKind::StandardNormal, kWide);
  MESSAGE("learned kl ", got.kl_exact, " exact kl ", want.kl_exact);
  CHECK(got.kl_exact <= 2.0 * want.kl_exact);
  CHECK(got.kl_exact >= 0.5 * want.kl_exact);
}

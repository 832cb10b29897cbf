#include "cmlab/sampler.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "cmlab/metrics.hpp"

namespace cmlab {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

void run_chunked(Eigen::Index n, int workers,
                 const std::function<void(Eigen::Index, Eigen::Index)>& fn) {
  const int w = std::max(1, workers);
  if (w == 1 || n < 256) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (n + w - 1) / w;
  for (int i = 0; i < w; ++i) {
    const Eigen::Index lo = i * chunk;
    if (lo >= n) break;
    const Eigen::Index hi = std::min(n, lo + chunk);
    pool.emplace_back([&, lo, hi] { fn(lo, hi - lo); });
  }
  for (auto& th : pool) th.join();
}

Eigen::MatrixXd draw_init(const SamplerRun& run, std::vector<Rng>& streams) {
  const int d = run.map->dim();
  Eigen::MatrixXd x(d, static_cast<Eigen::Index>(run.batch));
  if (run.init == InitKind::StandardNormal) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (int i = 0; i < d; ++i) x(i, j) = streams[j].next_normal();
    }
    return x;
  }
  if (run.target == nullptr) {
    throw std::invalid_argument("sampler: exact-terminal init needs a target");
  }
  const NoisedMixture terminal =
      run.target->marginal_at(run.schedule.total_time());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    x.col(j) = terminal.sample(1, streams[j]).col(0);
  }
  return x;
}

}  // namespace

SamplerResult run_multistep(const SamplerRun& run) {
  if (run.map == nullptr) throw std::invalid_argument("sampler: no map");
  if (run.batch < 1) throw std::invalid_argument("sampler: need batch >= 1");
  const Schedule& sch = run.schedule;
  sch.validate();

  std::vector<Rng> streams;
  streams.reserve(run.batch);
  for (std::size_t j = 0; j < run.batch; ++j) {
    streams.push_back(Rng::for_stream(run.seed, j));
  }

  SamplerResult result;
  result.stop_time = sch.stop_time();
  Eigen::MatrixXd x = draw_init(run, streams);
  if (run.trace) result.trace.push_back(x);

  const int K = sch.steps();
  for (int k = K; k >= 1; --k) {
    const double t_land = sch.t_prime[k - 1];
    const double t_k = sch.t[k];
    Eigen::MatrixXd mapped(x.rows(), x.cols());
    run_chunked(x.cols(), run.workers, [&](Eigen::Index lo, Eigen::Index n) {
      mapped.middleCols(lo, n) =
          run.map->eval_batch(t_land, t_k, x.middleCols(lo, n));
    });
    x = std::move(mapped);

    if (k == 1 && sch.regime == Regime::NonSmooth) break;  // stop at delta

    const OuTransition tr = ou_transition(t_land, sch.t[k - 1]);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        x(i, j) = tr.shrink * x(i, j) + tr.noise_std * streams[j].next_normal();
      }
    }
    if (run.trace) result.trace.push_back(x);
  }
  if (run.trace && sch.regime == Regime::NonSmooth) result.trace.push_back(x);
  result.output = std::move(x);
  return result;
}

SamplerResult run_true_counterpart(SamplerRun run) {
  if (run.target == nullptr) {
    throw std::invalid_argument("true counterpart: needs the target law");
  }
  ConsistencyMap exact =
      run.target->is_single()
          ? ConsistencyMap::closed_form_affine(*run.target)
          : ConsistencyMap::ode_oracle(ScoreField::exact(*run.target));
  run.map = &exact;
  run.init = InitKind::ExactTerminal;
  return run_multistep(run);
}

GaussianPushforward gaussian_pushforward(const Schedule& schedule,
                                         const ConsistencyMap& map,
                                         InitKind init,
                                         const GaussianMixture& target) {
  schedule.validate();
  if (!target.is_single()) {
    throw std::invalid_argument("pushforward: single-Gaussian targets only");
  }
  if (!map.affine_coefficients(schedule.t_prime.back(), schedule.t.back())) {
    throw std::invalid_argument("pushforward: map must expose affine coefficients");
  }
  const int d = target.dim();
  const double T = schedule.total_time();

  GaussianPushforward out;
  Eigen::VectorXd mean;
  double var = 0.0;
  if (init == InitKind::StandardNormal) {
    mean = Eigen::VectorXd::Zero(d);
    var = 1.0;
  } else {
    mean = target.component_mean_at(T);
    var = target.component_var_at(T);
  }
  out.kl_terminal =
      kl_gaussian(target.component_mean_at(T), target.component_var_at(T),
                  mean, var);
  out.stages.push_back({T, mean, var});

  const ConsistencyMap exact_map = ConsistencyMap::closed_form_affine(target);
  const int K = schedule.steps();
  for (int k = K; k >= 1; --k) {
    const double t_land = schedule.t_prime[k - 1];
    const double t_k = schedule.t[k];
    const auto approx = *map.affine_coefficients(t_land, t_k);
    const auto exact = *exact_map.affine_coefficients(t_land, t_k);

    // expected squared map disagreement over the true marginal at t_k
    const Eigen::VectorXd m_true = target.component_mean_at(t_k);
    const double v_true = target.component_var_at(t_k);
    const double da = exact.scale - approx.scale;
    const Eigen::VectorXd db = exact.offset - approx.offset;
    const double mean_diff_sq = da * da * (m_true.squaredNorm() + d * v_true) +
                                2.0 * da * db.dot(m_true) + db.squaredNorm();

    mean = approx.scale * mean + approx.offset;
    var = approx.scale * approx.scale * var;

    if (!(k == 1 && schedule.regime == Regime::NonSmooth)) {
      const double t_prev = schedule.t[k - 1];
      const double e2 = std::exp(2.0 * (t_land - t_prev));
      out.step_kls.push_back(
          e2 < 1.0 ? e2 * mean_diff_sq / (2.0 * (1.0 - e2))
                   : (mean_diff_sq == 0.0
                          ? 0.0
                          : std::numeric_limits<double>::infinity()));
      const OuTransition tr = ou_transition(t_land, t_prev);
      mean *= tr.shrink;
      var = tr.shrink * tr.shrink * var + tr.noise_std * tr.noise_std;
      out.stages.push_back({t_prev, mean, var});
    } else {
      out.stages.push_back({t_land, mean, var});
    }
  }

  const double stop = schedule.stop_time();
  out.mean = mean;
  out.var = var;
  out.true_mean = target.component_mean_at(stop);
  out.true_var = target.component_var_at(stop);
  out.kl_exact = kl_gaussian(out.true_mean, out.true_var, mean, var);
  out.kl_chain = schedule.regime == Regime::Smooth
                     ? kl_chain_upper_bound(out.step_kls, out.kl_terminal)
                     : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::function<double(double)> DensityGrid::interpolator() const {
  const Eigen::VectorXd xs = x;
  const Eigen::VectorXd ps = pdf;
  const double lo = xs[0];
  const double dx = xs[1] - xs[0];
  const Eigen::Index n = xs.size();
  return [xs, ps, lo, dx, n](double v) -> double {
    const double u = (v - lo) / dx;
    if (u <= 0.0 || u >= static_cast<double>(n - 1)) return 0.0;
    const auto i = static_cast<Eigen::Index>(u);
    const double w = u - static_cast<double>(i);
    return (1.0 - w) * ps[i] + w * ps[i + 1];
  };
}

DensityPushforward density_pushforward_1d(const Schedule& schedule,
                                          const ConsistencyMap& map,
                                          InitKind init,
                                          const GaussianMixture& target,
                                          int grid_points, double half_width) {
  schedule.validate();
  if (map.dim() != 1 || target.dim() != 1) {
    throw std::invalid_argument("density pushforward: one-dimensional only");
  }
  if (grid_points < 64) {
    throw std::invalid_argument("density pushforward: grid too coarse");
  }
  double R = half_width;
  if (R <= 0.0) {
    double worst_mean = 0.0;
    double worst_var = 1.0;
    for (const auto& c : target.components()) {
      worst_mean = std::max(worst_mean, std::abs(c.mean[0]));
      worst_var = std::max(worst_var, c.cov_scale);
    }
    R = worst_mean + 10.0 * std::sqrt(worst_var);
  }

  const Eigen::Index n = grid_points;
  Eigen::VectorXd grid(n);
  const double dx = 2.0 * R / static_cast<double>(n - 1);
  for (Eigen::Index i = 0; i < n; ++i) grid[i] = -R + dx * i;

  const double T = schedule.total_time();
  Eigen::VectorXd pdf(n);
  if (init == InitKind::StandardNormal) {
    pdf = (-0.5 * grid.array().square()).exp() / std::sqrt(kTwoPi);
  } else {
    const NoisedMixture terminal = target.marginal_at(T);
    Eigen::VectorXd one(1);
    for (Eigen::Index i = 0; i < n; ++i) {
      one[0] = grid[i];
      pdf[i] = terminal.density(one);
    }
  }

  const int K = schedule.steps();
  for (int k = K; k >= 1; --k) {
    const double t_land = schedule.t_prime[k - 1];
    const double t_k = schedule.t[k];
    const Eigen::MatrixXd mapped =
        map.eval_batch(t_land, t_k, grid.transpose());
    const Eigen::VectorXd f = mapped.row(0);

    if (k == 1 && schedule.regime == Regime::NonSmooth) {
      // stop before the last renoise: change of variables through the final
      // monotone map, jacobian from centered differences of the transported
      // knots, then resample back onto the uniform grid
      Eigen::VectorXd out_pdf(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index a = std::max<Eigen::Index>(0, i - 1);
        const Eigen::Index b = std::min<Eigen::Index>(n - 1, i + 1);
        const double jac = (f[b] - f[a]) / (grid[b] - grid[a]);
        out_pdf[i] = jac > 0.0 ? pdf[i] / jac : 0.0;
      }
      Eigen::VectorXd resampled = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = grid[i];
        if (v <= f[0] || v >= f[n - 1]) continue;
        Eigen::Index lo = 0, hi = n - 1;
        while (hi - lo > 1) {
          const Eigen::Index mid = (lo + hi) / 2;
          (f[mid] <= v ? lo : hi) = mid;
        }
        const double w = (v - f[lo]) / (f[lo + 1] - f[lo]);
        resampled[i] = (1.0 - w) * out_pdf[lo] + w * out_pdf[lo + 1];
      }
      pdf = std::move(resampled);
      break;
    }

    const OuTransition tr = ou_transition(t_land, schedule.t[k - 1]);
    const double s2 = tr.noise_std * tr.noise_std;
    const double norm = 1.0 / std::sqrt(kTwoPi * s2);
    // law after map-then-renoise is a Gaussian smoothing of the transported
    // density: integrate the kernel against the current grid mass
    const Eigen::ArrayXd mass = pdf.array() * dx;
    const Eigen::ArrayXd centers = tr.shrink * f.array();
    Eigen::VectorXd next(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      next[i] = norm * (mass * (-0.5 / s2 * (grid[i] - centers).square()).exp()).sum();
    }
    pdf = std::move(next);
  }

  DensityPushforward out;
  out.stop_time = schedule.stop_time();
  out.raw_mass = pdf.sum() * dx;
  if (out.raw_mass > 0.0) pdf /= out.raw_mass;
  out.at_stop = {std::move(grid), std::move(pdf)};
  return out;
}

}  // namespace cmlab

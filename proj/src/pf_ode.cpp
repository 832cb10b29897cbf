#include "cmlab/pf_ode.hpp"

#include <cmath>
#include <stdexcept>

namespace cmlab {

namespace {

// 16-point Gauss-Legendre nodes/weights on [-1, 1]
constexpr int kGlN = 16;
constexpr double kGlX[kGlN] = {
    -0.9894009349916499, -0.9445750230732326, -0.8656312023878318,
    -0.7554044083550030, -0.6178762444026438, -0.4580167776572274,
    -0.2816035507792589, -0.0950125098376374, 0.0950125098376374,
    0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
    0.7554044083550030,  0.8656312023878318,  0.9445750230732326,
    0.9894009349916499};
constexpr double kGlW[kGlN] = {
    0.0271524594117540, 0.0622535239386477, 0.0951585116824926,
    0.1246289712555340, 0.1495959888165768, 0.1691565193950026,
    0.1826034150449236, 0.1894506104550686, 0.1894506104550686,
    0.1826034150449236, 0.1691565193950026, 0.1495959888165768,
    0.1246289712555340, 0.0951585116824926, 0.0622535239386477,
    0.0271524594117540};

double quad(const std::function<double(double)>& f, double a, double b) {
  const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / 0.25)));
  const double w = (b - a) / panels;
  double acc = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * w;
    const double mid = lo + 0.5 * w;
    for (int i = 0; i < kGlN; ++i) {
      acc += 0.5 * w * kGlW[i] * f(mid + 0.5 * w * kGlX[i]);
    }
  }
  return acc;
}

Eigen::MatrixXd rk4_batch(const ScoreField& field, Eigen::MatrixXd xs,
                          double t_from, double t_to, double substep) {
  const double span = std::abs(t_to - t_from);
  if (span == 0.0) return xs;
  const double sgn = t_to > t_from ? 1.0 : -1.0;
  const int n = std::max(1, static_cast<int>(std::ceil(span / substep)));
  const double h = sgn * span / n;
  // dx/ds = -x - score(s, x); reverse runs step with negative h, which is the
  // forward integration of the negated field in the clock variable
  Eigen::MatrixXd k1, k2, k3, k4, stage;
  const auto rhs = [&](double s, const Eigen::MatrixXd& v, Eigen::MatrixXd& out) {
    out.noalias() = -v - field.eval_batch(s, v);
  };
  double s = t_from;
  for (int i = 0; i < n; ++i) {
    rhs(s, xs, k1);
    stage = xs + (0.5 * h) * k1;
    rhs(s + 0.5 * h, stage, k2);
    stage = xs + (0.5 * h) * k2;
    rhs(s + 0.5 * h, stage, k3);
    stage = xs + h * k3;
    rhs(s + h, stage, k4);
    xs += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    s = (i + 1 == n) ? t_to : t_from + (i + 1) * h;
  }
  return xs;
}

Eigen::MatrixXd stepper_batch(const ScoreField& field, Eigen::MatrixXd xs,
                              double t_from, double t_to,
                              const IntegratorConfig& cfg) {
  const double span = t_from - t_to;
  if (span == 0.0) return xs;
  if (span < 0.0) {
    throw std::invalid_argument(
        "integrate: Euler/exponential methods step the reverse direction only");
  }
  const int n = std::max(1, static_cast<int>(std::ceil(span / cfg.substep)));
  const double h = span / n;
  for (int i = 0; i < n; ++i) {
    const double hi = t_from - i * h;
    const double lo = (i + 1 == n) ? t_to : t_from - (i + 1) * h;
    const double step = hi - lo;
    const double t_eval = cfg.anchor == StepAnchor::Start ? hi : lo;
    if (cfg.method == StepMethod::ExponentialIntegrator) {
      xs = solver_step_phi_batch(field, xs, hi, lo, cfg.method, cfg.anchor);
    } else {
      // forward Euler on the full field -x - s(x); note this differs from the
      // score-only one-step update, which is not a convergent discretization
      xs = (1.0 + step) * xs + step * field.eval_batch(t_eval, xs);
    }
  }
  return xs;
}

Eigen::MatrixXd integrate_batch_impl(const ScoreField& field,
                                     Eigen::MatrixXd xs, double t_from,
                                     double t_to, const IntegratorConfig& cfg) {
  if (cfg.method == StepMethod::RungeKutta4) {
    return rk4_batch(field, std::move(xs), t_from, t_to, cfg.substep);
  }
  return stepper_batch(field, std::move(xs), t_from, t_to, cfg);
}

}  // namespace

Eigen::MatrixXd solver_step_phi_batch(const ScoreField& field,
                                      const Eigen::MatrixXd& xs, double t_from,
                                      double t_to, StepMethod method,
                                      StepAnchor anchor) {
  const double h = t_from - t_to;
  if (h < 0.0) throw std::invalid_argument("solver step: need t_to <= t_from");
  if (h == 0.0) return xs;
  const double t_eval = anchor == StepAnchor::Start ? t_from : t_to;
  const Eigen::MatrixXd s = field.eval_batch(t_eval, xs);
  switch (method) {
    case StepMethod::Euler:
      return xs - h * s;
    case StepMethod::ExponentialIntegrator: {
      const double eh = std::exp(h);
      return eh * xs + (eh - 1.0) * s;
    }
    case StepMethod::RungeKutta4:
      throw std::invalid_argument("solver step: use Euler or the exponential integrator");
  }
  throw std::logic_error("unreachable");
}

Eigen::VectorXd solver_step_phi(const ScoreField& field,
                                const Eigen::VectorXd& x, double t_from,
                                double t_to, StepMethod method,
                                StepAnchor anchor) {
  return solver_step_phi_batch(field, x, t_from, t_to, method, anchor);
}

Eigen::MatrixXd integrate_batch(const ScoreField& field, Eigen::MatrixXd xs,
                                double t_from, double t_to,
                                const IntegratorConfig& cfg) {
  if (cfg.verify && t_from != t_to) {
    IntegratorConfig probe = cfg;
    probe.verify = false;
    const Eigen::VectorXd x0 = xs.col(0);
    const double err = richardson_error(field, x0, t_from, t_to, probe);
    if (err > cfg.tolerance) {
      throw std::runtime_error("integrate: tolerance not met, worst local-error estimate " +
                               std::to_string(err));
    }
  }
  return integrate_batch_impl(field, std::move(xs), t_from, t_to, cfg);
}

Eigen::VectorXd integrate_trajectory(const ScoreField& field,
                                     const Eigen::VectorXd& x, double t_from,
                                     double t_to, const IntegratorConfig& cfg) {
  return integrate_batch(field, x, t_from, t_to, cfg);
}

std::vector<Eigen::VectorXd> integrate_with_knots(
    const ScoreField& field, const Eigen::VectorXd& x, double t_from,
    std::span<const double> knots, const IntegratorConfig& cfg) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(knots.size());
  Eigen::VectorXd cur = x;
  double t = t_from;
  for (const double knot : knots) {
    cur = integrate_trajectory(field, cur, t, knot, cfg);
    t = knot;
    out.push_back(cur);
  }
  return out;
}

double richardson_error(const ScoreField& field, const Eigen::VectorXd& x,
                        double t_from, double t_to,
                        const IntegratorConfig& cfg) {
  IntegratorConfig fine = cfg;
  fine.substep = cfg.substep / 2.0;
  const Eigen::VectorXd a = integrate_trajectory(field, x, t_from, t_to, cfg);
  const Eigen::VectorXd b = integrate_trajectory(field, x, t_from, t_to, fine);
  return (a - b).norm();
}

ConsistencyMap ConsistencyMap::closed_form_affine(GaussianMixture single_target) {
  if (!single_target.is_single()) {
    throw std::invalid_argument("closed-form map: single-Gaussian targets only");
  }
  ConsistencyMap m;
  m.kind_ = Kind::ClosedFormAffine;
  m.dim_ = single_target.dim();
  m.target_ = std::move(single_target);
  return m;
}

ConsistencyMap ConsistencyMap::closed_form_affine(GaussianMixture single_target,
                                                  Perturbation perturbation) {
  if (perturbation.mode != PerturbationMode::ConstantDirection) {
    throw std::invalid_argument(
        "closed-form map: only ConstantDirection perturbations keep the flow affine");
  }
  ConsistencyMap m = closed_form_affine(std::move(single_target));
  m.perturbation_ = std::move(perturbation);
  return m;
}

ConsistencyMap ConsistencyMap::ode_oracle(ScoreField field, IntegratorConfig cfg) {
  ConsistencyMap m;
  m.kind_ = Kind::OdeOracle;
  m.dim_ = field.dim();
  m.field_ = std::move(field);
  m.cfg_ = cfg;
  return m;
}

ConsistencyMap ConsistencyMap::learned(int dim, EvalFn eval, AffineFn affine) {
  if (!eval) throw std::invalid_argument("learned map: empty callable");
  ConsistencyMap m;
  m.kind_ = Kind::Learned;
  m.dim_ = dim;
  m.eval_fn_ = std::move(eval);
  m.affine_fn_ = std::move(affine);
  return m;
}

void ConsistencyMap::check_times(double t_prime, double t) const {
  if (t_prime < 0.0 || t_prime > t) {
    throw std::invalid_argument("consistency map: need 0 <= t_prime <= t");
  }
  if (t_prime == 0.0) {
    const GaussianMixture* tg =
        target_ ? &*target_ : (field_ ? field_->target() : nullptr);
    if (tg != nullptr && tg->has_point_mass()) {
      throw std::invalid_argument(
          "consistency map: t_prime = 0 is undefined for point-mass targets");
    }
  }
}

std::optional<ConsistencyMap::Affine> ConsistencyMap::affine_coefficients(
    double t_prime, double t) const {
  check_times(t_prime, t);
  if (kind_ == Kind::Learned) {
    return affine_fn_ ? affine_fn_(t_prime, t) : std::nullopt;
  }
  if (kind_ != Kind::ClosedFormAffine) return std::nullopt;

  const double v_to = target_->component_var_at(t_prime);
  const double v_from = target_->component_var_at(t);
  const double scale = std::sqrt(v_to / v_from);
  Affine a;
  a.scale = scale;
  a.offset = target_->component_mean_at(t_prime) -
             scale * target_->component_mean_at(t);
  if (perturbation_ && perturbation_->magnitude > 0.0) {
    // variation of constants for the affine flow: the constant score offset
    // integrates against the linear transition sqrt(v_{t'}/v_s)
    const double j = quad(
        [&](double s) { return std::sqrt(v_to / target_->component_var_at(s)); },
        t_prime, t);
    a.offset += perturbation_->magnitude * j * perturbation_->direction;
  }
  return a;
}

Eigen::MatrixXd ConsistencyMap::eval_batch(double t_prime, double t,
                                           const Eigen::MatrixXd& xs) const {
  check_times(t_prime, t);
  if (t_prime == t) return xs;
  switch (kind_) {
    case Kind::ClosedFormAffine: {
      const Affine a = *affine_coefficients(t_prime, t);
      return (a.scale * xs).colwise() + a.offset;
    }
    case Kind::OdeOracle:
      return integrate_batch(*field_, xs, t, t_prime, cfg_);
    case Kind::Learned: {
      Eigen::MatrixXd out(xs.rows(), xs.cols());
      for (Eigen::Index j = 0; j < xs.cols(); ++j) {
        out.col(j) = eval_fn_(t_prime, t, xs.col(j));
      }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

Eigen::VectorXd ConsistencyMap::eval(double t_prime, double t,
                                     const Eigen::VectorXd& x) const {
  return eval_batch(t_prime, t, x);
}

StepErrorEstimate solver_step_error(const ScoreField& field,
                                    const GaussianMixture& target, double t_n,
                                    double h, std::size_t n, Rng& rng) {
  if (!(h > 0.0) || t_n - h < 0.0) {
    throw std::invalid_argument("solver_step_error: need 0 < h <= t_n");
  }
  const Eigen::MatrixXd xs = target.marginal_at(t_n).sample(n, rng);
  const Eigen::MatrixXd stepped = solver_step_phi_batch(
      field, xs, t_n, t_n - h, StepMethod::ExponentialIntegrator);
  const Eigen::MatrixXd exact =
      integrate_batch(field, xs, t_n, t_n - h, IntegratorConfig::oracle());
  const Eigen::ArrayXd sq =
      (stepped - exact).colwise().squaredNorm().transpose().array();
  const double mean = sq.mean();
  const double var = n > 1 ? (sq - mean).square().sum() / (n - 1) : 0.0;

  StepErrorEstimate est;
  est.mean_sq = mean;
  est.std_error = std::sqrt(var / n);
  const double lip = field.lipschitz().value_or(1.0);
  est.bound = std::exp(h) * lip * lip * lip * h * h * target.dim();
  return est;
}

}  // namespace cmlab

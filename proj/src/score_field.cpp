#include "cmlab/score_field.hpp"

#include <cmath>
#include <stdexcept>

namespace cmlab {

Perturbation Perturbation::constant_direction(Eigen::VectorXd u, double eps) {
  if (eps < 0.0) throw std::invalid_argument("perturbation: eps >= 0");
  const double n = u.norm();
  if (!(n > 0.0)) throw std::invalid_argument("perturbation: zero direction");
  Perturbation p;
  p.mode = PerturbationMode::ConstantDirection;
  p.magnitude = eps;
  p.direction = u / n;
  return p;
}

Perturbation Perturbation::smooth_field(int dim, double eps, double omega,
                                        std::uint64_t phase_seed) {
  if (eps < 0.0 || dim < 1) {
    throw std::invalid_argument("perturbation: need eps >= 0, dim >= 1");
  }
  Perturbation p;
  p.mode = PerturbationMode::SmoothField;
  p.magnitude = eps;
  p.omega = omega;
  p.phases.resize(dim);
  Rng rng = Rng::for_stream(phase_seed, 0x5f);
  for (int i = 0; i < dim; ++i) {
    p.phases[i] = rng.next_unit() * 6.28318530717958647692;
  }
  return p;
}

Eigen::VectorXd Perturbation::eval(double /*t*/, const Eigen::VectorXd& x) const {
  if (mode == PerturbationMode::ConstantDirection) {
    return magnitude * direction;
  }
  const double scale = magnitude / std::sqrt(static_cast<double>(x.size()));
  return scale * (omega * x + phases).array().sin().matrix();
}

double Perturbation::field_lipschitz() const {
  if (mode == PerturbationMode::ConstantDirection) return 0.0;
  return magnitude * omega / std::sqrt(static_cast<double>(phases.size()));
}

ScoreField ScoreField::exact(GaussianMixture target) {
  ScoreField f;
  f.kind_ = Kind::Exact;
  f.dim_ = target.dim();
  // the exact score of a single Gaussian is linear, so its constant over
  // [0, inf) is known in closed form
  if (target.is_single() && !target.has_point_mass()) {
    f.lipschitz_ = std::max(1.0, target.score_lipschitz(0.0, 50.0).value);
  }
  f.target_ = std::move(target);
  return f;
}

ScoreField ScoreField::perturbed(GaussianMixture target, Perturbation p) {
  ScoreField f = exact(std::move(target));
  f.kind_ = Kind::Perturbed;
  if (f.lipschitz_) *f.lipschitz_ += p.field_lipschitz();
  f.perturbation_ = std::move(p);
  return f;
}

ScoreField ScoreField::learned(int dim, Callable fn,
                               std::optional<double> lipschitz) {
  if (!fn) throw std::invalid_argument("learned score: empty callable");
  ScoreField f;
  f.kind_ = Kind::Learned;
  f.dim_ = dim;
  f.callable_ = std::move(fn);
  f.lipschitz_ = lipschitz;
  return f;
}

Eigen::VectorXd ScoreField::operator()(double t, const Eigen::VectorXd& x) const {
  switch (kind_) {
    case Kind::Exact:
      return target_->score(t, x);
    case Kind::Perturbed:
      return target_->score(t, x) + perturbation_.eval(t, x);
    case Kind::Learned:
      return callable_(t, x);
  }
  throw std::logic_error("unreachable");
}

Eigen::MatrixXd ScoreField::eval_batch(double t, const Eigen::MatrixXd& xs) const {
  if (kind_ == Kind::Learned) {
    Eigen::MatrixXd out(xs.rows(), xs.cols());
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
      out.col(j) = callable_(t, xs.col(j));
    }
    return out;
  }
  Eigen::MatrixXd out = target_->marginal_at(t).score_batch(xs);
  if (kind_ == Kind::Perturbed) {
    if (perturbation_.mode == PerturbationMode::ConstantDirection) {
      out.colwise() += (perturbation_.magnitude * perturbation_.direction).eval();
    } else {
      for (Eigen::Index j = 0; j < xs.cols(); ++j) {
        out.col(j) += perturbation_.eval(t, xs.col(j));
      }
    }
  }
  return out;
}

ErrorEstimate measure_score_error(const ScoreField& field,
                                  const GaussianMixture& target, double t,
                                  std::size_t n, Rng& rng) {
  if (n < 100) throw std::invalid_argument("measure_score_error: need n >= 100");
  const NoisedMixture marg = target.marginal_at(t);
  const Eigen::MatrixXd xs = marg.sample(n, rng);
  const Eigen::MatrixXd diff =
      field.eval_batch(t, xs) - marg.score_batch(xs);
  const Eigen::ArrayXd sq = diff.colwise().squaredNorm().transpose().array();
  const double mean = sq.mean();
  const double var = (sq - mean).square().sum() / (n - 1);
  return {mean, std::sqrt(var / n), n};
}

double effective_lipschitz(const ScoreField& field,
                           const GaussianMixture& ambient,
                           std::span<const double> times,
                           std::size_t pairs_per_time, Rng& rng) {
  const double eta = 1e-4;
  double best = 0.0;
  for (const double t : times) {
    const NoisedMixture marg = ambient.marginal_at(t);
    const Eigen::MatrixXd xs = marg.sample(pairs_per_time, rng);
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
      Eigen::VectorXd dir(xs.rows());
      for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = rng.next_normal();
      dir.normalize();
      const Eigen::VectorXd x = xs.col(j);
      const Eigen::VectorXd y = x + eta * dir;
      best = std::max(best, (field(t, x) - field(t, y)).norm() / eta);
    }
  }
  return best;
}

}  // namespace cmlab

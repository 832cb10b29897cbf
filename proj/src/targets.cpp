#include "cmlab/targets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmlab {

namespace {
constexpr double kTwoPi = 6.28318530717958647692;
}

NoisedMixture::NoisedMixture(double t, std::vector<NoisedComponent> comps)
    : t_(t), comps_(std::move(comps)) {
  if (comps_.empty()) throw std::invalid_argument("noised mixture: no components");
  dim_ = static_cast<int>(comps_.front().mean.size());
  for (const auto& c : comps_) {
    if (c.mean.size() != dim_) {
      throw std::invalid_argument("noised mixture: inconsistent dimensions");
    }
    if (!(c.var > 0.0)) {
      throw std::invalid_argument("noised mixture: component variance must be > 0");
    }
  }
}

double NoisedMixture::log_responsibilities(const Eigen::VectorXd& x,
                                           Eigen::VectorXd& log_r) const {
  const auto n = static_cast<Eigen::Index>(comps_.size());
  log_r.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = comps_[i];
    const double sq = (x - c.mean).squaredNorm();
    log_r[i] = std::log(c.weight) - 0.5 * sq / c.var -
               0.5 * dim_ * std::log(kTwoPi * c.var);
  }
  const double m = log_r.maxCoeff();
  const double lse = m + std::log((log_r.array() - m).exp().sum());
  log_r.array() -= lse;
  return lse;
}

double NoisedMixture::log_density(const Eigen::VectorXd& x) const {
  Eigen::VectorXd log_r;
  return log_responsibilities(x, log_r);
}

double NoisedMixture::density(const Eigen::VectorXd& x) const {
  return std::exp(log_density(x));
}

Eigen::VectorXd NoisedMixture::score(const Eigen::VectorXd& x) const {
  if (comps_.size() == 1) {
    return -(x - comps_[0].mean) / comps_[0].var;
  }
  Eigen::VectorXd log_r;
  log_responsibilities(x, log_r);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(dim_);
  for (std::size_t i = 0; i < comps_.size(); ++i) {
    s -= std::exp(log_r[static_cast<Eigen::Index>(i)]) *
         (x - comps_[i].mean) / comps_[i].var;
  }
  return s;
}

Eigen::MatrixXd NoisedMixture::score_hessian(const Eigen::VectorXd& x) const {
  const auto I = Eigen::MatrixXd::Identity(dim_, dim_);
  if (comps_.size() == 1) {
    return -I / comps_[0].var;
  }
  Eigen::VectorXd log_r;
  log_responsibilities(x, log_r);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim_, dim_);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(dim_);
  for (std::size_t i = 0; i < comps_.size(); ++i) {
    const double r = std::exp(log_r[static_cast<Eigen::Index>(i)]);
    const Eigen::VectorXd u = (x - comps_[i].mean) / comps_[i].var;
    h += r * (u * u.transpose() - I / comps_[i].var);
    s -= r * u;
  }
  h -= s * s.transpose();
  return h;
}

Eigen::MatrixXd NoisedMixture::score_batch(const Eigen::MatrixXd& xs) const {
  const Eigen::Index n = xs.cols();
  if (comps_.size() == 1) {
    return -(xs.colwise() - comps_[0].mean) / comps_[0].var;
  }
  if (comps_.size() == 2 && dim_ == 1) {
    // fused scalar pass; this is the batched-integration hot path
    const double m1 = comps_[0].mean[0], v1 = comps_[0].var;
    const double m2 = comps_[1].mean[0], v2 = comps_[1].var;
    const double cst = std::log(comps_[1].weight / comps_[0].weight) +
                       0.5 * std::log(v1 / v2);
    Eigen::MatrixXd out(1, n);
    const double* x = xs.data();
    double* s = out.data();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d1 = x[j] - m1;
      const double d2 = x[j] - m2;
      const double delta = d1 * d1 / (2.0 * v1) - d2 * d2 / (2.0 * v2) + cst;
      const double r = 1.0 / (1.0 + std::exp(-delta));
      s[j] = -((1.0 - r) * d1 / v1 + r * d2 / v2);
    }
    return out;
  }
  if (comps_.size() == 2) {
    // responsibilities through a single logistic per sample
    const auto& a = comps_[0];
    const auto& b = comps_[1];
    const Eigen::MatrixXd da = xs.colwise() - a.mean;
    const Eigen::MatrixXd db = xs.colwise() - b.mean;
    const double cst = std::log(b.weight / a.weight) +
                       0.5 * dim_ * std::log(a.var / b.var);
    const Eigen::ArrayXd delta =
        (da.colwise().squaredNorm() / (2.0 * a.var) -
         db.colwise().squaredNorm() / (2.0 * b.var))
            .transpose()
            .array() +
        cst;
    const Eigen::ArrayXd r_b = 1.0 / (1.0 + (-delta).exp());
    return -(da * (1.0 - r_b).matrix().asDiagonal()) / a.var -
           (db * r_b.matrix().asDiagonal()) / b.var;
  }
  const auto nc = static_cast<Eigen::Index>(comps_.size());
  Eigen::MatrixXd logw(nc, n);
  for (Eigen::Index i = 0; i < nc; ++i) {
    const auto& c = comps_[i];
    logw.row(i) = (-(0.5 / c.var) *
                   (xs.colwise() - c.mean).colwise().squaredNorm().array() +
                   (std::log(c.weight) - 0.5 * dim_ * std::log(kTwoPi * c.var)))
                      .matrix();
  }
  const Eigen::RowVectorXd m = logw.colwise().maxCoeff();
  Eigen::MatrixXd r = (logw.rowwise() - m).array().exp().matrix();
  const Eigen::RowVectorXd norm = r.colwise().sum();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(dim_, n);
  for (Eigen::Index i = 0; i < nc; ++i) {
    const auto& c = comps_[i];
    const Eigen::RowVectorXd ri = (r.row(i).array() / norm.array()).matrix();
    s -= ((xs.colwise() - c.mean) / c.var) * ri.asDiagonal();
  }
  return s;
}

Eigen::MatrixXd NoisedMixture::sample(std::size_t n, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("sample: need n >= 1");
  Eigen::MatrixXd out(dim_, static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    double u = rng.next_unit();
    std::size_t pick = comps_.size() - 1;
    for (std::size_t i = 0; i < comps_.size(); ++i) {
      if (u <= comps_[i].weight) {
        pick = i;
        break;
      }
      u -= comps_[i].weight;
    }
    const auto& c = comps_[pick];
    const double sd = std::sqrt(c.var);
    for (Eigen::Index i = 0; i < dim_; ++i) {
      out(i, j) = c.mean[i] + sd * rng.next_normal();
    }
  }
  return out;
}

Eigen::VectorXd NoisedMixture::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim_);
  for (const auto& c : comps_) m += c.weight * c.mean;
  return m;
}

double NoisedMixture::second_moment() const {
  double m2 = 0.0;
  for (const auto& c : comps_) {
    m2 += c.weight * (c.mean.squaredNorm() + dim_ * c.var);
  }
  return m2;
}

GaussianMixture::GaussianMixture(std::vector<MixtureComponent> comps)
    : comps_(std::move(comps)) {
  if (comps_.empty()) throw std::invalid_argument("mixture: no components");
  dim_ = static_cast<int>(comps_.front().mean.size());
  double wsum = 0.0;
  for (const auto& c : comps_) {
    if (c.mean.size() != dim_) {
      throw std::invalid_argument("mixture: inconsistent dimensions");
    }
    if (c.cov_scale < 0.0) {
      throw std::invalid_argument("mixture: cov_scale must be >= 0");
    }
    if (!(c.weight > 0.0)) {
      throw std::invalid_argument("mixture: weights must be > 0");
    }
    wsum += c.weight;
  }
  if (std::abs(wsum - 1.0) >= 1e-12) {
    throw std::invalid_argument("mixture: weights must sum to 1");
  }
}

GaussianMixture GaussianMixture::standard_normal(int dim) {
  return single(Eigen::VectorXd::Zero(dim), 1.0);
}

GaussianMixture GaussianMixture::single(Eigen::VectorXd mean, double cov_scale) {
  return GaussianMixture({MixtureComponent{1.0, std::move(mean), cov_scale}});
}

GaussianMixture GaussianMixture::point_mass(Eigen::VectorXd at) {
  return single(std::move(at), 0.0);
}

GaussianMixture GaussianMixture::symmetric_pair_1d(double mu, double cov_scale) {
  Eigen::VectorXd p(1), m(1);
  p << mu;
  m << -mu;
  return GaussianMixture({MixtureComponent{0.5, p, cov_scale},
                          MixtureComponent{0.5, m, cov_scale}});
}

bool GaussianMixture::has_point_mass() const {
  return std::any_of(comps_.begin(), comps_.end(),
                     [](const MixtureComponent& c) { return c.cov_scale == 0.0; });
}

double GaussianMixture::second_moment() const {
  double m2 = 0.0;
  for (const auto& c : comps_) {
    m2 += c.weight * (c.mean.squaredNorm() + dim_ * c.cov_scale);
  }
  return m2;
}

NoisedMixture GaussianMixture::marginal_at(double t) const {
  if (t < 0.0) throw std::invalid_argument("marginal_at: t >= 0");
  const double a = std::exp(-t);
  const double s2 = -std::expm1(-2.0 * t);  // 1 - e^{-2t}
  std::vector<NoisedComponent> nc;
  nc.reserve(comps_.size());
  for (const auto& c : comps_) {
    nc.push_back({c.weight, a * c.mean, a * a * c.cov_scale + s2});
  }
  return NoisedMixture(t, std::move(nc));
}

void GaussianMixture::require_score_defined(double t) const {
  if (t == 0.0 && has_point_mass()) {
    throw std::invalid_argument(
        "score is undefined at t = 0 for point-mass components");
  }
}

double GaussianMixture::log_density(double t, const Eigen::VectorXd& x) const {
  require_score_defined(t);
  return marginal_at(t).log_density(x);
}

Eigen::VectorXd GaussianMixture::score(double t, const Eigen::VectorXd& x) const {
  require_score_defined(t);
  return marginal_at(t).score(x);
}

Eigen::MatrixXd GaussianMixture::score_hessian(double t,
                                               const Eigen::VectorXd& x) const {
  require_score_defined(t);
  return marginal_at(t).score_hessian(x);
}

Eigen::MatrixXd GaussianMixture::sample(std::size_t n, Rng& rng) const {
  return marginal_at(0.0).sample(n, rng);
}

double GaussianMixture::component_var_at(double t) const {
  if (!is_single()) {
    throw std::logic_error("component_var_at: single-Gaussian targets only");
  }
  const double e = std::exp(-2.0 * t);
  return e * comps_[0].cov_scale + (1.0 - e);
}

Eigen::VectorXd GaussianMixture::component_mean_at(double t) const {
  if (!is_single()) {
    throw std::logic_error("component_mean_at: single-Gaussian targets only");
  }
  return std::exp(-t) * comps_[0].mean;
}

GaussianMixture::LipschitzReport GaussianMixture::score_lipschitz(
    double t_lo, double t_hi, std::size_t probe_samples,
    std::uint64_t seed) const {
  if (is_single()) {
    // score is -(x - m_t)/v_t, so the constant is max over t of 1/v_t;
    // v_t is monotone in t, hence the max sits at an interval end
    const double v = std::min(component_var_at(t_lo), component_var_at(t_hi));
    return {1.0 / v, true};
  }
  // sampled spectral-norm bound on the Hessian over a few noise levels
  Rng rng = Rng::for_stream(seed, 0x11f);
  double worst = 0.0;
  const int nt = 9;
  for (int i = 0; i <= nt; ++i) {
    const double t = t_lo + (t_hi - t_lo) * i / nt;
    if (t == 0.0 && has_point_mass()) continue;
    const NoisedMixture marg = marginal_at(t);
    const Eigen::MatrixXd xs = marg.sample(probe_samples / (nt + 1) + 1, rng);
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
      const Eigen::MatrixXd h = marg.score_hessian(xs.col(j));
      // spectral norm of a symmetric matrix via its largest |eigenvalue|;
      // for the small d here the Frobenius norm is an adequate upper proxy
      worst = std::max(worst, h.norm());
    }
  }
  return {worst, false};
}

}  // namespace cmlab

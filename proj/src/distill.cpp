#include "cmlab/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace cmlab {

namespace {

using nlohmann::json;

// one solver backstep t_hi -> t_lo; RungeKutta4 selects the oracle flow as
// the exact-Phi substitute
Eigen::MatrixXd phi_step(const ScoreField& field, const Eigen::MatrixXd& xs,
                         double t_hi, double t_lo, StepMethod method) {
  if (method == StepMethod::RungeKutta4) {
    return integrate_batch(field, xs, t_hi, t_lo, IntegratorConfig::oracle());
  }
  return solver_step_phi_batch(field, xs, t_hi, t_lo, method);
}

}  // namespace

TrainGrid TrainGrid::uniform(double t_min, double t_max, int n) {
  if (n < 2 || !(t_min > 0.0) || !(t_max > t_min)) {
    throw std::invalid_argument("train grid: need n >= 2 and 0 < t_min < t_max");
  }
  TrainGrid g;
  g.knots.resize(n);
  g.lambda.assign(n, 1.0);
  for (int i = 0; i < n; ++i) {
    g.knots[i] = t_min + (t_max - t_min) * i / (n - 1);
  }
  g.validate();
  return g;
}

TrainGrid TrainGrid::from_schedule(const Schedule& schedule) {
  std::vector<double> all(schedule.t.begin(), schedule.t.end());
  all.insert(all.end(), schedule.t_prime.begin(), schedule.t_prime.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end(),
                        [](double a, double b) { return std::abs(a - b) < 1e-12; }),
            all.end());
  if (all.front() <= 0.0) {
    throw std::invalid_argument(
        "train grid: schedule touches t = 0; the grid needs strictly positive knots");
  }
  TrainGrid g;
  g.knots = std::move(all);
  g.lambda.assign(g.knots.size(), 1.0);
  g.validate();
  return g;
}

int TrainGrid::index_of(double t, double tol) const {
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (std::abs(knots[i] - t) <= tol) return static_cast<int>(i);
  }
  return -1;
}

void TrainGrid::validate() const {
  if (knots.size() < 2) throw std::invalid_argument("train grid: need N >= 2");
  if (!(knots.front() > 0.0)) {
    throw std::invalid_argument("train grid: first knot must be > 0");
  }
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) {
      throw std::invalid_argument("train grid: knots must increase strictly");
    }
  }
  if (lambda.size() != knots.size()) {
    throw std::invalid_argument("train grid: one weight per knot");
  }
  for (const double l : lambda) {
    if (!(l > 0.0)) throw std::invalid_argument("train grid: weights must be > 0");
  }
}

const std::vector<double>& Approximator::radial_widths() {
  static const std::vector<double> widths = {0.5, 1.0, 2.0};
  return widths;
}

int Approximator::radial_count() const {
  return family_ == Family::FeatureLinear
             ? static_cast<int>(radial_widths().size())
             : 0;
}

int Approximator::pair_stride() const { return 1 + dim_ + radial_count(); }

int Approximator::pair_offset(int m, int n) const {
  if (!(0 <= m && m < n && n < grid_.size())) {
    throw std::invalid_argument("approximator: need knot indices 0 <= m < n < N");
  }
  const int pair_id = n * (n - 1) / 2 + m;
  return pair_id * pair_stride();
}

Approximator::Approximator(Family family, TrainGrid grid, int dim)
    : family_(family), grid_(std::move(grid)), dim_(dim) {
  grid_.validate();
  if (dim_ < 1) throw std::invalid_argument("approximator: dim >= 1");
  const int n = grid_.size();
  const int pairs = n * (n - 1) / 2;
  params_ = Eigen::VectorXd::Zero(pairs * pair_stride());
  // identity initialization: scale 1, offsets and radial weights 0
  for (int p = 0; p < pairs; ++p) params_[p * pair_stride()] = 1.0;
  ema_ = params_;
}

int Approximator::param_count() const { return static_cast<int>(params_.size()); }

double Approximator::get_param(int i) const { return params_[i]; }

void Approximator::set_param(int i, double v) { params_[i] = v; }

void Approximator::perturb_params(Rng& rng, double amplitude) {
  for (Eigen::Index i = 0; i < params_.size(); ++i) {
    params_[i] += amplitude * rng.next_normal();
  }
  reset_ema();
}

void Approximator::set_ema_rate(double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) {
    throw std::invalid_argument("approximator: ema rate in [0, 1]");
  }
  ema_rate_ = mu;
}

void Approximator::ema_update() {
  ema_ = ema_rate_ * ema_ + (1.0 - ema_rate_) * params_;
}

void Approximator::reset_ema() { ema_ = params_; }

Eigen::VectorXd Approximator::eval_pair(int m, int n, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& theta) const {
  const int off = pair_offset(m, n);
  const double scale = theta[off];
  Eigen::VectorXd out = scale * x + theta.segment(off + 1, dim_);
  if (family_ == Family::FeatureLinear) {
    const double sq = x.squaredNorm();
    const auto& widths = radial_widths();
    for (int j = 0; j < radial_count(); ++j) {
      const double w = widths[j];
      out += theta[off + 1 + dim_ + j] * std::exp(-0.5 * sq / (w * w)) * x;
    }
  }
  return out;
}

Eigen::VectorXd Approximator::eval(double t_target, double t_source,
                                   const Eigen::VectorXd& x, bool use_ema) const {
  if (t_target == t_source) return x;  // boundary tie, any time
  const int m = grid_.index_of(t_target);
  const int n = grid_.index_of(t_source);
  if (m < 0 || n < 0) {
    throw std::invalid_argument("approximator: times must be grid knots");
  }
  if (m == n) return x;
  if (m > n) {
    throw std::invalid_argument("approximator: map runs backward in time only");
  }
  return eval_pair(m, n, x, use_ema ? ema_ : params_);
}

Eigen::MatrixXd Approximator::eval_batch(double t_target, double t_source,
                                         const Eigen::MatrixXd& xs,
                                         bool use_ema) const {
  Eigen::MatrixXd out(xs.rows(), xs.cols());
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    out.col(j) = eval(t_target, t_source, xs.col(j), use_ema);
  }
  return out;
}

std::optional<ConsistencyMap::Affine> Approximator::affine_at(
    double t_target, double t_source) const {
  if (family_ != Family::AffinePerPair) return std::nullopt;
  if (t_target == t_source) {
    return ConsistencyMap::Affine{1.0, Eigen::VectorXd::Zero(dim_)};
  }
  const int m = grid_.index_of(t_target);
  const int n = grid_.index_of(t_source);
  if (m < 0 || n < 0 || m > n) return std::nullopt;
  if (m == n) return ConsistencyMap::Affine{1.0, Eigen::VectorXd::Zero(dim_)};
  const int off = pair_offset(m, n);
  return ConsistencyMap::Affine{params_[off], params_.segment(off + 1, dim_)};
}

ConsistencyMap Approximator::as_consistency_map() const {
  auto snapshot = std::make_shared<const Approximator>(*this);
  ConsistencyMap::EvalFn eval_fn =
      [snapshot](double tp, double t, const Eigen::VectorXd& x) {
        return snapshot->eval(tp, t, x);
      };
  ConsistencyMap::AffineFn affine_fn = [snapshot](double tp, double t) {
    return snapshot->affine_at(tp, t);
  };
  return ConsistencyMap::learned(dim_, std::move(eval_fn), std::move(affine_fn));
}

void Approximator::save(const std::string& path) const {
  json doc;
  doc["family"] = family_ == Family::AffinePerPair ? "affine_per_pair"
                                                   : "feature_linear";
  doc["dim"] = dim_;
  doc["ema_rate"] = ema_rate_;
  doc["knots"] = grid_.knots;
  doc["lambda"] = grid_.lambda;
  doc["params"] = std::vector<double>(params_.data(), params_.data() + params_.size());
  doc["ema_params"] = std::vector<double>(ema_.data(), ema_.data() + ema_.size());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("approximator: cannot write " + path);
  out << doc.dump(2) << '\n';
}

Approximator Approximator::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("approximator: cannot read " + path);
  json doc = json::parse(in);
  const std::string fam = doc.at("family").get<std::string>();
  TrainGrid grid;
  grid.knots = doc.at("knots").get<std::vector<double>>();
  grid.lambda = doc.at("lambda").get<std::vector<double>>();
  Approximator a(fam == "affine_per_pair" ? Family::AffinePerPair
                                          : Family::FeatureLinear,
                 std::move(grid), doc.at("dim").get<int>());
  const auto params = doc.at("params").get<std::vector<double>>();
  if (static_cast<int>(params.size()) != a.param_count()) {
    throw std::runtime_error("approximator: parameter block size mismatch");
  }
  a.params_ = Eigen::Map<const Eigen::VectorXd>(params.data(), params.size());
  const auto ema = doc.at("ema_params").get<std::vector<double>>();
  a.ema_ = Eigen::Map<const Eigen::VectorXd>(ema.data(), ema.size());
  a.ema_rate_ = doc.at("ema_rate").get<double>();
  return a;
}

CdLoss cd_loss(const Approximator& approx, const ScoreField& field,
               const GaussianMixture& target, std::size_t batch, Rng& rng,
               StepMethod method) {
  const TrainGrid& grid = approx.grid();
  const int n_knots = grid.size();
  const int d = approx.dim();
  if (target.dim() != d || field.dim() != d) {
    throw std::invalid_argument("cd_loss: dimension mismatch");
  }

  Eigen::MatrixXd x0 = target.sample(batch, rng);
  Eigen::MatrixXd z(d, x0.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (int i = 0; i < d; ++i) z(i, j) = rng.next_normal();
  }

  CdLoss result;
  result.grad = Eigen::VectorXd::Zero(approx.param_count());
  const int n_radial = approx.radial_count();
  const auto& widths = Approximator::radial_widths();

  for (int n = 0; n + 1 < n_knots; ++n) {
    const double t_hi = grid.knots[n + 1];
    const double t_lo = grid.knots[n];
    const double a_t = std::exp(-t_hi);
    const double s_t = std::sqrt(-std::expm1(-2.0 * t_hi));
    const Eigen::MatrixXd xt = a_t * x0 + s_t * z;
    const Eigen::MatrixXd xphi = phi_step(field, xt, t_hi, t_lo, method);

    // radial features of the live side depend on the source points only
    Eigen::MatrixXd feat_hi;
    if (n_radial > 0) {
      feat_hi.resize(n_radial, xt.cols());
      const Eigen::ArrayXd sq_hi = xt.colwise().squaredNorm().transpose();
      for (int j = 0; j < n_radial; ++j) {
        const double w2 = widths[j] * widths[j];
        feat_hi.row(j) = (-0.5 / w2 * sq_hi).exp().transpose();
      }
    }

    for (int m = 0; m <= n; ++m) {
      Eigen::MatrixXd pred(d, xt.cols());
      Eigen::MatrixXd targ(d, xt.cols());
      for (Eigen::Index j = 0; j < xt.cols(); ++j) {
        pred.col(j) = approx.eval(grid.knots[m], t_hi, xt.col(j), false);
        targ.col(j) = m == n
                          ? xphi.col(j)
                          : approx.eval(grid.knots[m], t_lo, xphi.col(j), true);
      }
      const Eigen::MatrixXd resid = pred - targ;
      const double term =
          grid.lambda[n] * resid.colwise().squaredNorm().mean();
      if (!std::isfinite(term)) {
        throw std::runtime_error("cd_loss: non-finite loss at knot index " +
                                 std::to_string(n));
      }
      result.loss += term;

      const int off = approx.pair_offset(m, n + 1);
      const double g_scale =
          2.0 * grid.lambda[n] / static_cast<double>(xt.cols());
      result.grad[off] += g_scale * resid.cwiseProduct(xt).sum();
      result.grad.segment(off + 1, d) += g_scale * resid.rowwise().sum();
      for (int j = 0; j < n_radial; ++j) {
        result.grad[off + 1 + d + j] +=
            g_scale *
            resid.cwiseProduct(xt * feat_hi.row(j).asDiagonal()).sum();
      }
    }
  }
  return result;
}

std::vector<double> train(Approximator& approx, const ScoreField& field,
                          const GaussianMixture& target, const TrainConfig& cfg,
                          Rng& rng) {
  approx.set_ema_rate(cfg.ema_rate);
  std::vector<double> history;
  history.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    CdLoss step = cd_loss(approx, field, target, cfg.batch, rng, cfg.method);
    if (step.loss > cfg.divergence_cap) {
      throw std::runtime_error("train: loss diverged at iteration " +
                               std::to_string(it));
    }
    for (int i = 0; i < approx.param_count(); ++i) {
      approx.set_param(i, approx.get_param(i) - cfg.learning_rate * step.grad[i]);
    }
    approx.ema_update();
    history.push_back(step.loss);
  }
  return history;
}

CdErrorReport measure_cd_error(const Approximator& approx,
                               const ScoreField& field,
                               const GaussianMixture& target,
                               std::size_t batch, Rng& rng, StepMethod method) {
  const TrainGrid& grid = approx.grid();
  const double t_first = grid.knots.front();
  CdErrorReport report;

  for (int k = 0; k + 1 < grid.size(); ++k) {
    const double t_hi = grid.knots[k + 1];
    const double t_lo = grid.knots[k];
    const double h = t_hi - t_lo;
    const NoisedMixture marg = target.marginal_at(t_hi);
    const Eigen::MatrixXd xt = marg.sample(batch, rng);
    const Eigen::MatrixXd xphi = phi_step(field, xt, t_hi, t_lo, method);
    Eigen::ArrayXd sq(xt.cols());
    for (Eigen::Index j = 0; j < xt.cols(); ++j) {
      const Eigen::VectorXd a = approx.eval(t_first, t_hi, xt.col(j));
      const Eigen::VectorXd b = k == 0 ? xphi.col(j)
                                       : approx.eval(t_first, t_lo, xphi.col(j));
      sq[j] = (a - b).squaredNorm() / (h * h);
    }
    const double mean = sq.mean();
    const double var =
        xt.cols() > 1 ? (sq - mean).square().sum() / (xt.cols() - 1) : 0.0;
    report.per_knot.push_back(mean);
    report.per_knot_se.push_back(std::sqrt(var / xt.cols()));
  }
  double worst = 0.0;
  for (const double v : report.per_knot) worst = std::max(worst, v);
  report.eps_cd = std::sqrt(worst);
  return report;
}

MapGap measure_map_gap(const Approximator& approx,
                       const ConsistencyMap& reference,
                       const GaussianMixture& target, double t_prime, double t,
                       std::size_t batch, Rng& rng) {
  const Eigen::MatrixXd xs = target.marginal_at(t).sample(batch, rng);
  const Eigen::MatrixXd ref = reference.eval_batch(t_prime, t, xs);
  const Eigen::MatrixXd got = approx.eval_batch(t_prime, t, xs);
  const Eigen::ArrayXd norms =
      (ref - got).colwise().norm().transpose().array();
  const Eigen::ArrayXd sqs = norms.square();

  MapGap gap;
  gap.mean_norm = norms.mean();
  gap.mean_sq = sqs.mean();
  const auto n = static_cast<double>(batch);
  if (batch > 1) {
    gap.se_norm = std::sqrt((norms - gap.mean_norm).square().sum() / (n - 1) / n);
    gap.se_sq = std::sqrt((sqs - gap.mean_sq).square().sum() / (n - 1) / n);
  }
  return gap;
}

double distill_gap_bound_smooth(double l_f, double lipschitz, int dim, double h,
                                double eps_cd, double t_n, double t_first) {
  return l_f * std::exp(0.5 * h) * std::pow(lipschitz, 1.5) *
             std::sqrt(static_cast<double>(dim)) * h +
         eps_cd * (t_n - t_first);
}

double distill_gap_bound_nonsmooth(int n_steps, double lipschitz, int dim,
                                   double h, double eps_cd, double eps_score,
                                   double t_n, double t_first) {
  return n_steps * std::exp(0.5 * h) * std::pow(lipschitz, 1.5) *
             std::sqrt(static_cast<double>(dim)) * h +
         (t_n - t_first) * (3.0 * eps_cd + 2.0 * eps_score);
}

LipschitzProbe verify_lipschitz(const Approximator& approx,
                                const GaussianMixture& target, double t_prime,
                                double t, double lipschitz, std::size_t pairs,
                                Rng& rng) {
  const NoisedMixture marg = target.marginal_at(t);
  const Eigen::MatrixXd xs = marg.sample(pairs, rng);
  LipschitzProbe probe;
  probe.growth_bound = std::exp((1.0 + lipschitz) * (t - t_prime));
  const double eta = 1e-3;
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    Eigen::VectorXd dir(xs.rows());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = rng.next_normal();
    dir.normalize();
    const Eigen::VectorXd x = xs.col(j);
    const Eigen::VectorXd y = x + eta * dir;
    const double ratio =
        (approx.eval(t_prime, t, x) - approx.eval(t_prime, t, y)).norm() / eta;
    probe.max_ratio = std::max(probe.max_ratio, ratio);
  }
  return probe;
}

ContractionProbe verify_expected_contraction(const Approximator& approx,
                                             const GaussianMixture& target,
                                             int source_index, double eps_cd,
                                             double eps_score,
                                             std::size_t pairs, Rng& rng) {
  const TrainGrid& grid = approx.grid();
  if (!(source_index > 0 && source_index < grid.size())) {
    throw std::invalid_argument("contraction probe: bad source index");
  }
  const double t_n = grid.knots[source_index];
  const double t_first = grid.knots.front();
  const NoisedMixture marg = target.marginal_at(t_n);
  const Eigen::MatrixXd xs = marg.sample(pairs, rng);

  double lhs = 0.0;
  double sep = 0.0;
  const double eta = 0.05;
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    Eigen::VectorXd dir(xs.rows());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = rng.next_normal();
    dir.normalize();
    const Eigen::VectorXd x = xs.col(j);
    const Eigen::VectorXd y = x + eta * dir;
    lhs += (approx.eval(t_first, t_n, x) - approx.eval(t_first, t_n, y)).norm();
    sep += eta;
  }
  lhs /= static_cast<double>(xs.cols());
  sep /= static_cast<double>(xs.cols());

  ContractionProbe probe;
  probe.lhs = lhs;
  probe.rhs = 2.0 * (t_n - t_first) * (eps_cd + eps_score) +
              source_index * sep;
  probe.satisfied = probe.lhs <= probe.rhs;
  return probe;
}

}  // namespace cmlab

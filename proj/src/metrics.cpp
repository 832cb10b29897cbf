#include "cmlab/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace cmlab {

namespace {

// rho - log(1 + rho), stable for |rho| << 1
double ratio_term(double rho) {
  if (std::abs(rho) < 1e-4) {
    // rho^2/2 - rho^3/3 + rho^4/4 - ...
    return rho * rho * (0.5 + rho * (-1.0 / 3.0 + rho * 0.25));
  }
  return rho - std::log1p(rho);
}

}  // namespace

double kl_gaussian(const Eigen::VectorXd& mean_a, double var_a,
                   const Eigen::VectorXd& mean_b, double var_b) {
  if (!(var_a > 0.0) || !(var_b > 0.0)) {
    throw std::invalid_argument("kl_gaussian: variances must be > 0");
  }
  if (mean_a.size() != mean_b.size()) {
    throw std::invalid_argument("kl_gaussian: dimension mismatch");
  }
  const double d = static_cast<double>(mean_a.size());
  const double rho = var_a / var_b - 1.0;
  return 0.5 * d * ratio_term(rho) +
         (mean_a - mean_b).squaredNorm() / (2.0 * var_b);
}

double kl_conditional_step(const Eigen::VectorXd& f_out,
                           const Eigen::VectorXd& fhat_out, double t_prime,
                           double t_prev) {
  if (!(t_prime < t_prev)) {
    throw std::invalid_argument("kl_conditional_step: need t_prime < t_prev");
  }
  const double e2 = std::exp(2.0 * (t_prime - t_prev));
  return e2 * (f_out - fhat_out).squaredNorm() / (2.0 * (1.0 - e2));
}

double kl_chain_upper_bound(std::span<const double> step_terms,
                            double terminal_kl) {
  if (terminal_kl < 0.0) {
    throw std::invalid_argument("kl_chain_upper_bound: negative terminal term");
  }
  double acc = terminal_kl;
  for (const double v : step_terms) {
    if (v < 0.0) {
      throw std::invalid_argument("kl_chain_upper_bound: negative step term");
    }
    acc += v;
  }
  return acc;
}

QuadratureResult kl_quadrature_1d(const std::function<double(double)>& p,
                                  const std::function<double(double)>& q,
                                  double lo, double hi, double tol) {
  if (!(hi > lo)) throw std::invalid_argument("kl_quadrature_1d: empty interval");
  const auto integrand = [&](double x) -> double {
    const double pv = p(x);
    const double qv = q(x);
    if (pv < 0.0 || qv < 0.0) {
      throw std::runtime_error("kl_quadrature_1d: negative density");
    }
    if (pv <= 1e-300) return 0.0;
    return pv * std::log(pv / std::max(qv, 1e-300));
  };

  std::size_t n = 256;
  const double width = hi - lo;
  double sum = 0.5 * (integrand(lo) + integrand(hi));
  for (std::size_t i = 1; i < n; ++i) sum += integrand(lo + width * i / n);
  double estimate = sum * width / n;
  std::size_t evals = n + 1;

  double change = tol + 1.0;
  while (n < (1u << 21) && std::abs(change) > tol) {
    // refine by inserting midpoints, reusing all prior evaluations
    for (std::size_t i = 0; i < n; ++i) {
      sum += integrand(lo + width * (2.0 * i + 1.0) / (2.0 * n));
    }
    evals += n;
    n *= 2;
    const double next = sum * width / n;
    change = next - estimate;
    estimate = next;
  }
  return {estimate, std::abs(change), evals};
}

BoundFormula theorem_rhs(const Schedule& schedule, int dim, double m2,
                         double eps_score) {
  schedule.validate();
  BoundFormula b;
  b.regime = schedule.regime;
  b.dim = dim;
  b.m2 = m2;
  b.lipschitz_or_delta =
      schedule.regime == Regime::Smooth ? schedule.lipschitz : schedule.delta;
  b.total_time = schedule.total_time();
  b.eps_score = eps_score;
  b.init_term = (dim + m2) * std::exp(-b.total_time);

  const double c =
      schedule.regime == Regime::Smooth ? std::exp(2.0) : std::exp(4.0);
  double acc = 0.0;
  for (int k = 1; k <= schedule.steps(); ++k) {
    const double hp = schedule.h_prime(k);
    acc += hp * hp / (4.0 * schedule.gap(k - 1));
  }
  b.score_coefficient = c * acc;
  b.value = b.init_term + b.score_coefficient * eps_score * eps_score;
  return b;
}

}  // namespace cmlab

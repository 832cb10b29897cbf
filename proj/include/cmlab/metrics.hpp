#pragma once

#include <Eigen/Core>
#include <functional>
#include <span>

#include "cmlab/schedule.hpp"

namespace cmlab {

// KL(N(meanA, varA I) || N(meanB, varB I)); series branch keeps tiny
// variance ratios accurate.
double kl_gaussian(const Eigen::VectorXd& mean_a, double var_a,
                   const Eigen::VectorXd& mean_b, double var_b);

// KL between the two renoise conditionals of one generation step whose maps
// landed at f_out vs fhat_out at time t_prime before renoising up to t_prev:
//   e^{2(t'-t)} ||f - fhat||^2 / (2 (1 - e^{2(t'-t)}))
double kl_conditional_step(const Eigen::VectorXd& f_out,
                           const Eigen::VectorXd& fhat_out, double t_prime,
                           double t_prev);

// Chain decomposition upper bound: terminal KL plus the per-step expected
// conditional KLs.
double kl_chain_upper_bound(std::span<const double> step_terms,
                            double terminal_kl);

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t evaluations = 0;
};

// KL(p || q) for one-dimensional densities by refining trapezoid sums on
// [lo, hi] until the estimate moves by less than tol.
QuadratureResult kl_quadrature_1d(const std::function<double(double)>& p,
                                  const std::function<double(double)>& q,
                                  double lo, double hi, double tol = 1e-9);

// Convergence-guarantee right-hand side evaluated from actual schedule data:
//   (d + m2) e^{-T} + C h'^2_k eps^2 sum_k 1/(4 (t_k - t'_k))
// with C = e^2 in the smooth regime and e^4 in the nonsmooth one.
struct BoundFormula {
  Regime regime = Regime::Smooth;
  int dim = 1;
  double m2 = 0.0;
  double lipschitz_or_delta = 0.0;
  double total_time = 0.0;
  double eps_score = 0.0;
  double init_term = 0.0;        // (d + m2) e^{-T}
  double score_coefficient = 0.0;  // C sum_k h'^2_k / (4 gap_{k-1})
  double value = 0.0;            // init_term + score_coefficient * eps^2
};

BoundFormula theorem_rhs(const Schedule& schedule, int dim, double m2,
                         double eps_score);

}  // namespace cmlab

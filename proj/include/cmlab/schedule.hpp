#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "cmlab/rng.hpp"

namespace cmlab {

enum class Regime { Smooth, NonSmooth };

// One forward OU hop t_from -> t_to:  x_to = shrink * x_from + noise_std * z.
struct OuTransition {
  double t_from = 0.0;
  double t_to = 0.0;
  double shrink = 1.0;
  double noise_std = 0.0;
};

OuTransition ou_transition(double t_from, double t_to);

Eigen::VectorXd renoise(const Eigen::VectorXd& x, double t_from, double t_to,
                        Rng& rng);

// Time grid for multi-step generation. t has K+1 knots, t_prime has K knots;
// t_prime[k] pairs with t[k] and is the point the k+1-th reverse jump lands on
// before renoising back up to t[k].
struct Schedule {
  Regime regime = Regime::Smooth;
  double lipschitz = 1.0;  // smooth regime only
  int dim = 1;             // nonsmooth regime only
  double delta = 0.0;      // nonsmooth early-stop time (= t_prime[0])

  std::vector<double> t;
  std::vector<double> t_prime;

  int steps() const { return static_cast<int>(t_prime.size()); }
  double total_time() const { return t.back(); }
  // where the sampler output lives: t[0] in the smooth regime, t_prime[0]
  // (= delta) in the nonsmooth regime
  double stop_time() const {
    return regime == Regime::Smooth ? t.front() : t_prime.front();
  }

  double h(int k) const { return t[k] - t[k - 1]; }              // k in [1,K]
  double h_prime(int k) const { return t[k] - t_prime[k - 1]; }  // k in [1,K]
  double gap(int k) const { return t[k] - t_prime[k]; }          // k in [0,K-1]

  double max_h_prime() const;

  // throws std::invalid_argument on any regime invariant violation
  void validate() const;

  // columns: k,t_k,t_prime_k,h_k,h_prime_k (cells left empty where undefined)
  std::string to_csv() const;
};

// Constant-step smooth-regime grid: h = 1/(3(L+1)), h' = 1/(2(L+1)),
// T = log((d+m2)/eps), K = ceil(T/h). All steps above t[1] equal h and
// t[K] = T exactly; the sampler-final step (t[0] -> t[1]) absorbs the
// remainder. gap_override replaces the default knot gap h' - h.
Schedule build_schedule_smooth(double lipschitz, int dim, double m2,
                               double eps,
                               std::optional<double> gap_override = {});

// Same grid driven by total time T directly (eps = (d+m2) e^{-T}).
Schedule build_schedule_smooth_time(double lipschitz, double total_time,
                                    std::optional<double> gap_override = {});

// Nonsmooth-regime grid: h = (1-e^{-delta})/(2d), h' = (1-e^{-delta})/d,
// K = ceil(T/h) with T = log((d+m2)/eps). The grid starts at
// t[0] = delta + (h'-h) so that t_prime[0] = delta exactly, and keeps every
// step equal to h, so t[K] = t[0] + K h >= T.
Schedule build_schedule_nonsmooth(int dim, double m2, double eps, double delta,
                                  int max_steps = 200000);

Schedule build_schedule_nonsmooth_time(int dim, double total_time,
                                       double delta, int max_steps = 200000);

// Explicit grid (used by config loading and tests); validates on return.
Schedule make_schedule(Regime regime, std::vector<double> t,
                       std::vector<double> t_prime, double lipschitz, int dim,
                       double delta);

}  // namespace cmlab

#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "cmlab/pf_ode.hpp"
#include "cmlab/schedule.hpp"

namespace cmlab {

enum class InitKind { StandardNormal, ExactTerminal };

struct SamplerRun {
  Schedule schedule;
  const ConsistencyMap* map = nullptr;
  InitKind init = InitKind::StandardNormal;
  const GaussianMixture* target = nullptr;  // required for ExactTerminal
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  bool trace = false;
  int workers = 1;
};

struct SamplerResult {
  Eigen::MatrixXd output;  // d x batch, law at stop_time
  double stop_time = 0.0;
  // when tracing: K+1 stages from the terminal batch down to the output
  std::vector<Eigen::MatrixXd> trace;
};

// Multi-step generation: alternate reverse consistency jumps
// t_k -> t'_{k-1} with forward renoising t'_{k-1} -> t_{k-1}. Smooth-regime
// runs output at t_0; nonsmooth runs stop at t'_0 = delta before the last
// renoise. Sample j draws only from stream (seed, j), so every trajectory is
// reproducible in isolation.
SamplerResult run_multistep(const SamplerRun& run);

// Same loop driven by the exact consistency map of run.target with exact
// terminal initialization; its output law is the true marginal at stop time.
SamplerResult run_true_counterpart(SamplerRun run);

struct StageLaw {
  double t = 0.0;
  Eigen::VectorXd mean;
  double var = 0.0;
};

// Closed-form shadow of the sampler over a single-Gaussian target and an
// affine map: propagates (mean, var) exactly and returns exact output KL plus
// the chain-decomposition terms; no Monte Carlo anywhere.
struct GaussianPushforward {
  Eigen::VectorXd mean;  // output law
  double var = 0.0;
  Eigen::VectorXd true_mean;  // p at stop time
  double true_var = 0.0;
  double kl_exact = 0.0;     // KL(p_stop || output law)
  double kl_terminal = 0.0;  // KL(p_T || init law)
  std::vector<double> step_kls;  // expected conditional KL per renoised step
  double kl_chain = 0.0;         // terminal + sum of step terms (smooth only)
  std::vector<StageLaw> stages;  // law after every stage, terminal first
};

GaussianPushforward gaussian_pushforward(const Schedule& schedule,
                                         const ConsistencyMap& map,
                                         InitKind init,
                                         const GaussianMixture& target);

// Density of the sampler output for one-dimensional targets, computed by
// transporting a grid through each reverse jump and convolving with the
// renoise kernel; makes quadrature KL evaluable for mixtures.
struct DensityGrid {
  Eigen::VectorXd x;    // uniform knots
  Eigen::VectorXd pdf;  // normalized

  std::function<double(double)> interpolator() const;
};

struct DensityPushforward {
  DensityGrid at_stop;
  double stop_time = 0.0;
  double raw_mass = 0.0;  // grid mass before normalization
};

DensityPushforward density_pushforward_1d(const Schedule& schedule,
                                          const ConsistencyMap& map,
                                          InitKind init,
                                          const GaussianMixture& target,
                                          int grid_points = 2001,
                                          double half_width = 0.0);

}  // namespace cmlab

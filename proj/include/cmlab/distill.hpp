#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "cmlab/pf_ode.hpp"
#include "cmlab/schedule.hpp"

namespace cmlab {

enum class Family { AffinePerPair, FeatureLinear };

// Training discretization, independent of (and typically finer than) the
// sampler schedule. The first knot is strictly positive.
struct TrainGrid {
  std::vector<double> knots;
  std::vector<double> lambda;  // per-source-knot positive weights

  static TrainGrid uniform(double t_min, double t_max, int n);
  // all schedule times (t and t') as knots; requires them strictly positive
  static TrainGrid from_schedule(const Schedule& schedule);

  int size() const { return static_cast<int>(knots.size()); }
  int index_of(double t, double tol = 1e-9) const;  // -1 when absent
  void validate() const;
};

// Low-capacity analytic approximator of the backward transport map over knot
// pairs (t_m, t_n), m < n. AffinePerPair keeps a scale and offset per pair;
// FeatureLinear adds weighted radial bumps. The same-knot map is the identity
// by construction, which ties the boundary condition structurally.
class Approximator {
 public:
  Approximator(Family family, TrainGrid grid, int dim);

  Family family() const { return family_; }
  const TrainGrid& grid() const { return grid_; }
  int dim() const { return dim_; }

  int param_count() const;
  double get_param(int i) const;
  void set_param(int i, double v);
  void perturb_params(Rng& rng, double amplitude);

  double ema_rate() const { return ema_rate_; }
  void set_ema_rate(double mu);
  void ema_update();       // ema <- mu ema + (1-mu) params
  void reset_ema();        // ema <- params
  const Eigen::VectorXd& params() const { return params_; }
  const Eigen::VectorXd& ema_params() const { return ema_; }

  Eigen::VectorXd eval(double t_target, double t_source,
                       const Eigen::VectorXd& x, bool use_ema = false) const;
  Eigen::MatrixXd eval_batch(double t_target, double t_source,
                             const Eigen::MatrixXd& xs,
                             bool use_ema = false) const;

  // affine coefficients per pair (AffinePerPair only)
  std::optional<ConsistencyMap::Affine> affine_at(double t_target,
                                                  double t_source) const;

  // snapshot adapter for the sampler
  ConsistencyMap as_consistency_map() const;

  void save(const std::string& path) const;
  static Approximator load(const std::string& path);

  // flat layout helpers (used by the loss gradient)
  int pair_stride() const;
  int pair_offset(int m, int n) const;
  int radial_count() const;
  static const std::vector<double>& radial_widths();

 private:
  Eigen::VectorXd eval_pair(int m, int n, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& theta) const;

  Family family_;
  TrainGrid grid_;
  int dim_ = 1;
  double ema_rate_ = 0.9;
  Eigen::VectorXd params_;
  Eigen::VectorXd ema_;
};

struct CdLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

// Consistency-distillation objective: for every source pair
// (t_n -> t_{n+1}) and every target knot t_m <= t_n, match the map of a
// noised sample at t_{n+1} against the EMA map of its one-step solver
// backstep, averaged over the batch and the pair terms. Gradients flow
// through the live parameters only.
CdLoss cd_loss(const Approximator& approx, const ScoreField& field,
               const GaussianMixture& target, std::size_t batch, Rng& rng,
               StepMethod method = StepMethod::ExponentialIntegrator);

struct TrainConfig {
  double learning_rate = 0.05;
  int iterations = 1000;
  std::size_t batch = 64;
  StepMethod method = StepMethod::ExponentialIntegrator;
  double ema_rate = 0.5;
  double divergence_cap = 1e6;
};

std::vector<double> train(Approximator& approx, const ScoreField& field,
                          const GaussianMixture& target, const TrainConfig& cfg,
                          Rng& rng);

struct CdErrorReport {
  std::vector<double> per_knot;     // normalized mean squared residual
  std::vector<double> per_knot_se;
  double eps_cd = 0.0;              // max over knots of sqrt(normalized)
};

CdErrorReport measure_cd_error(const Approximator& approx,
                               const ScoreField& field,
                               const GaussianMixture& target,
                               std::size_t batch, Rng& rng,
                               StepMethod method = StepMethod::ExponentialIntegrator);

struct MapGap {
  double mean_norm = 0.0;
  double se_norm = 0.0;
  double mean_sq = 0.0;
  double se_sq = 0.0;
};

// E || f_ref(t', t, x) - f_theta(t', t, x) || over x ~ p_t.
MapGap measure_map_gap(const Approximator& approx,
                       const ConsistencyMap& reference,
                       const GaussianMixture& target, double t_prime, double t,
                       std::size_t batch, Rng& rng);

// Gap guarantees for the trained map, evaluated with measured inputs.
double distill_gap_bound_smooth(double l_f, double lipschitz, int dim, double h,
                                double eps_cd, double t_n, double t_first);
double distill_gap_bound_nonsmooth(int n_steps, double lipschitz, int dim,
                                   double h, double eps_cd, double eps_score,
                                   double t_n, double t_first);

struct LipschitzProbe {
  double max_ratio = 0.0;
  double growth_bound = 0.0;  // e^{(1+L)(t - t')}
};

LipschitzProbe verify_lipschitz(const Approximator& approx,
                                const GaussianMixture& target, double t_prime,
                                double t, double lipschitz, std::size_t pairs,
                                Rng& rng);

struct ContractionProbe {
  double lhs = 0.0;  // E || f(t_1, t_n, x) - f(t_1, t_n, y) ||
  double rhs = 0.0;  // 2 (t_n - t_1)(eps_cd + eps_score) + n E||x - y||
  bool satisfied = false;
};

ContractionProbe verify_expected_contraction(const Approximator& approx,
                                             const GaussianMixture& target,
                                             int source_index, double eps_cd,
                                             double eps_score,
                                             std::size_t pairs, Rng& rng);

}  // namespace cmlab

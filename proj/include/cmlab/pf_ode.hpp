#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <optional>

#include "cmlab/score_field.hpp"

namespace cmlab {

enum class StepMethod { RungeKutta4, ExponentialIntegrator, Euler };
enum class StepAnchor { Start, End };  // where the one-step score is evaluated

struct IntegratorConfig {
  StepMethod method = StepMethod::RungeKutta4;
  double substep = 1e-3;
  double tolerance = 1e-8;
  StepAnchor anchor = StepAnchor::Start;
  // when set, integrate_* re-runs at substep/2 and throws if the endpoint
  // deviation exceeds tolerance
  bool verify = false;

  static IntegratorConfig oracle() { return {}; }
};

// Single explicit step of the reverse flow from t_from down to t_to < t_from.
// Euler:        x - (t_from - t_to) s(x)
// Exponential:  e^h x + (e^h - 1) s(x),  h = t_from - t_to
Eigen::VectorXd solver_step_phi(const ScoreField& field,
                                const Eigen::VectorXd& x, double t_from,
                                double t_to, StepMethod method,
                                StepAnchor anchor = StepAnchor::Start);

Eigen::MatrixXd solver_step_phi_batch(const ScoreField& field,
                                      const Eigen::MatrixXd& xs, double t_from,
                                      double t_to, StepMethod method,
                                      StepAnchor anchor = StepAnchor::Start);

// Integrates dx/ds = -x - s_s(x) from t_from to t_to (reverse when
// t_to < t_from; forward runs are supported for RungeKutta4 only and are used
// by round-trip checks). Reverse-time runs integrate the negated field in a
// forward clock variable.
Eigen::VectorXd integrate_trajectory(const ScoreField& field,
                                     const Eigen::VectorXd& x, double t_from,
                                     double t_to, const IntegratorConfig& cfg);

// Same flow applied to every column in lockstep.
Eigen::MatrixXd integrate_batch(const ScoreField& field, Eigen::MatrixXd xs,
                                double t_from, double t_to,
                                const IntegratorConfig& cfg);

// Dense output: trajectory values at each requested knot (knots must be
// monotone from t_from towards t_to).
std::vector<Eigen::VectorXd> integrate_with_knots(
    const ScoreField& field, const Eigen::VectorXd& x, double t_from,
    std::span<const double> knots, const IntegratorConfig& cfg);

// Endpoint deviation between runs at substep and substep/2 (order-4 Richardson
// residual for the RK4 oracle).
double richardson_error(const ScoreField& field, const Eigen::VectorXd& x,
                        double t_from, double t_to, const IntegratorConfig& cfg);

// Backward transport map f(t', t, x): the PF-ODE solution at time t' of the
// trajectory passing through x at time t >= t'.
class ConsistencyMap {
 public:
  enum class Kind { ClosedFormAffine, OdeOracle, Learned };

  struct Affine {
    double scale = 1.0;
    Eigen::VectorXd offset;
  };

  // Exact affine transport for a single-Gaussian target, optionally under a
  // ConstantDirection score perturbation (the flow stays affine).
  static ConsistencyMap closed_form_affine(GaussianMixture single_target);
  static ConsistencyMap closed_form_affine(GaussianMixture single_target,
                                           Perturbation perturbation);

  static ConsistencyMap ode_oracle(ScoreField field,
                                   IntegratorConfig cfg = IntegratorConfig::oracle());

  using EvalFn =
      std::function<Eigen::VectorXd(double, double, const Eigen::VectorXd&)>;
  using AffineFn = std::function<std::optional<Affine>(double, double)>;
  static ConsistencyMap learned(int dim, EvalFn eval, AffineFn affine = {});

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }
  const ScoreField* field() const { return field_ ? &*field_ : nullptr; }

  Eigen::VectorXd eval(double t_prime, double t, const Eigen::VectorXd& x) const;
  Eigen::MatrixXd eval_batch(double t_prime, double t,
                             const Eigen::MatrixXd& xs) const;

  // f(t',t,x) = scale x + offset where available (closed-form and
  // affine-learned kinds); nullopt otherwise
  std::optional<Affine> affine_coefficients(double t_prime, double t) const;

 private:
  ConsistencyMap() = default;
  void check_times(double t_prime, double t) const;

  Kind kind_ = Kind::OdeOracle;
  int dim_ = 0;
  std::optional<GaussianMixture> target_;  // ClosedFormAffine
  std::optional<Perturbation> perturbation_;
  std::optional<ScoreField> field_;  // OdeOracle
  IntegratorConfig cfg_;
  EvalFn eval_fn_;
  AffineFn affine_fn_;
};

struct StepErrorEstimate {
  double mean_sq = 0.0;
  double std_error = 0.0;
  double bound = 0.0;  // e^h L^3 h^2 d
};

// One-step error of the exponential integrator against the RK4 oracle on the
// same field, averaged over x ~ p_{t_n}.
StepErrorEstimate solver_step_error(const ScoreField& field,
                                    const GaussianMixture& target, double t_n,
                                    double h, std::size_t n, Rng& rng);

}  // namespace cmlab

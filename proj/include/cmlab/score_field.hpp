#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <span>

#include "cmlab/targets.hpp"

namespace cmlab {

enum class PerturbationMode { ConstantDirection, SmoothField };

// Controlled deviation added to an analytic score. ConstantDirection gives a
// fixed offset of norm eps, so the mean squared score error equals eps^2
// exactly. SmoothField is a low-order trigonometric field with unit sup-norm
// and Lipschitz constant omega/sqrt(d), so the error stays <= eps^2.
struct Perturbation {
  PerturbationMode mode = PerturbationMode::ConstantDirection;
  double magnitude = 0.0;
  Eigen::VectorXd direction;  // ConstantDirection, unit norm
  double omega = 1.0;         // SmoothField frequency
  Eigen::VectorXd phases;     // SmoothField per-coordinate phases

  static Perturbation constant_direction(Eigen::VectorXd u, double eps);
  static Perturbation smooth_field(int dim, double eps, double omega,
                                   std::uint64_t phase_seed);

  Eigen::VectorXd eval(double t, const Eigen::VectorXd& x) const;
  double field_lipschitz() const;
};

// Evaluable score: exact analytic, analytic plus a controlled perturbation,
// or an externally supplied callable.
class ScoreField {
 public:
  enum class Kind { Exact, Perturbed, Learned };
  using Callable =
      std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

  static ScoreField exact(GaussianMixture target);
  static ScoreField perturbed(GaussianMixture target, Perturbation p);
  static ScoreField learned(int dim, Callable fn,
                            std::optional<double> lipschitz = {});

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }
  const GaussianMixture* target() const {
    return target_ ? &*target_ : nullptr;
  }
  const Perturbation* perturbation() const {
    return kind_ == Kind::Perturbed ? &perturbation_ : nullptr;
  }
  std::optional<double> lipschitz() const { return lipschitz_; }
  void declare_lipschitz(double value) { lipschitz_ = value; }

  Eigen::VectorXd operator()(double t, const Eigen::VectorXd& x) const;
  Eigen::MatrixXd eval_batch(double t, const Eigen::MatrixXd& xs) const;

 private:
  ScoreField() = default;

  Kind kind_ = Kind::Exact;
  int dim_ = 0;
  std::optional<GaussianMixture> target_;
  Perturbation perturbation_;
  Callable callable_;
  std::optional<double> lipschitz_;
};

struct ErrorEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

// Monte Carlo estimate of E_{x ~ p_t} ||field(t,x) - exact score(t,x)||^2.
ErrorEstimate measure_score_error(const ScoreField& field,
                                  const GaussianMixture& target, double t,
                                  std::size_t n, Rng& rng);

// Largest finite-difference ratio ||s(x)-s(y)||/||x-y|| seen over probe pairs
// drawn from p_t at the given times. A lower bound on the true constant.
double effective_lipschitz(const ScoreField& field,
                           const GaussianMixture& ambient,
                           std::span<const double> times,
                           std::size_t pairs_per_time, Rng& rng);

}  // namespace cmlab

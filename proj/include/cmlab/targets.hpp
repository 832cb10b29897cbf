#pragma once

#include <Eigen/Core>
#include <vector>

#include "cmlab/rng.hpp"

namespace cmlab {

struct MixtureComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  double cov_scale = 1.0;  // isotropic covariance cov_scale * I
};

// A Gaussian mixture after OU noising for time t: component covariances are
// var * I with var = e^{-2t} cov_scale + (1 - e^{-2t}).
struct NoisedComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  double var = 1.0;
};

class NoisedMixture {
 public:
  NoisedMixture(double t, std::vector<NoisedComponent> comps);

  double time() const { return t_; }
  int dim() const { return dim_; }
  const std::vector<NoisedComponent>& components() const { return comps_; }

  double log_density(const Eigen::VectorXd& x) const;
  double density(const Eigen::VectorXd& x) const;
  Eigen::VectorXd score(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd score_hessian(const Eigen::VectorXd& x) const;

  // column-per-sample batch evaluation (lockstep PF-ODE integration hot path)
  Eigen::MatrixXd score_batch(const Eigen::MatrixXd& xs) const;

  Eigen::MatrixXd sample(std::size_t n, Rng& rng) const;  // d x n

  // moments of the mixture law itself
  Eigen::VectorXd mean() const;
  double second_moment() const;

 private:
  // log responsibilities via log-sum-exp; returns overall log density
  double log_responsibilities(const Eigen::VectorXd& x,
                              Eigen::VectorXd& log_r) const;

  double t_ = 0.0;
  int dim_ = 0;
  std::vector<NoisedComponent> comps_;
};

// Target data law: an isotropic Gaussian mixture with closed-form noised
// marginals, scores and Hessians under the OU forward process.
class GaussianMixture {
 public:
  explicit GaussianMixture(std::vector<MixtureComponent> comps);

  static GaussianMixture standard_normal(int dim);
  static GaussianMixture single(Eigen::VectorXd mean, double cov_scale);
  static GaussianMixture point_mass(Eigen::VectorXd at);
  // weights 1/2 at +-mu in one dimension
  static GaussianMixture symmetric_pair_1d(double mu, double cov_scale);

  int dim() const { return dim_; }
  const std::vector<MixtureComponent>& components() const { return comps_; }
  bool is_single() const { return comps_.size() == 1; }
  bool has_point_mass() const;

  double second_moment() const;

  NoisedMixture marginal_at(double t) const;

  double log_density(double t, const Eigen::VectorXd& x) const;
  Eigen::VectorXd score(double t, const Eigen::VectorXd& x) const;
  Eigen::MatrixXd score_hessian(double t, const Eigen::VectorXd& x) const;

  Eigen::MatrixXd sample(std::size_t n, Rng& rng) const;

  // single component helpers (marginal mean/variance of the lone component)
  double component_var_at(double t) const;
  Eigen::VectorXd component_mean_at(double t) const;

  struct LipschitzReport {
    double value = 0.0;
    bool exact = false;  // exact for single Gaussians, sampled otherwise
  };
  // Lipschitz constant of the exact score over t in [t_lo, t_hi]
  LipschitzReport score_lipschitz(double t_lo, double t_hi,
                                  std::size_t probe_samples = 2000,
                                  std::uint64_t seed = 0) const;

 private:
  void require_score_defined(double t) const;

  std::vector<MixtureComponent> comps_;
  int dim_ = 0;
};

}  // namespace cmlab

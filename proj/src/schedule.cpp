#include "cmlab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cmlab {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double sigma2(double t) { return -std::expm1(-2.0 * t); }  // 1 - e^{-2t}

}  // namespace

OuTransition ou_transition(double t_from, double t_to) {
  if (t_from < 0.0 || t_to < t_from) {
    throw std::invalid_argument("ou_transition: need 0 <= t_from <= t_to");
  }
  OuTransition tr;
  tr.t_from = t_from;
  tr.t_to = t_to;
  tr.shrink = std::exp(t_from - t_to);
  tr.noise_std = std::sqrt(-std::expm1(2.0 * (t_from - t_to)));
  return tr;
}

Eigen::VectorXd renoise(const Eigen::VectorXd& x, double t_from, double t_to,
                        Rng& rng) {
  const OuTransition tr = ou_transition(t_from, t_to);
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    out[i] = tr.shrink * x[i] + tr.noise_std * rng.next_normal();
  }
  return out;
}

double Schedule::max_h_prime() const {
  double m = 0.0;
  for (int k = 1; k <= steps(); ++k) m = std::max(m, h_prime(k));
  return m;
}

void Schedule::validate() const {
  const int K = steps();
  if (K < 1 || static_cast<int>(t.size()) != K + 1) {
    throw std::invalid_argument("schedule: need K >= 1 with K+1 time knots");
  }
  if (t.front() < 0.0) throw std::invalid_argument("schedule: t[0] < 0");
  for (int k = 1; k <= K; ++k) {
    if (!(t[k] > t[k - 1])) {
      throw std::invalid_argument("schedule: t not strictly increasing");
    }
  }
  for (int k = 0; k < K; ++k) {
    // equality is the degenerate no-renoise gap, kept legal so the sampler's
    // reduction to plain reverse jumps stays expressible
    if (!(t_prime[k] >= 0.0 && t_prime[k] <= t[k])) {
      throw std::invalid_argument("schedule: need t_prime[k] in [0, t[k]]");
    }
  }
  if (regime == Regime::Smooth) {
    const double cap = 1.0 / (2.0 * (1.0 + lipschitz));
    for (int k = 1; k <= K; ++k) {
      if (h_prime(k) > cap * (1.0 + 1e-12)) {
        throw std::invalid_argument(
            "schedule: smooth regime needs h'_k <= 1/(2(1+L))");
      }
    }
  } else {
    if (!(delta > 0.0)) {
      throw std::invalid_argument("schedule: nonsmooth regime needs delta > 0");
    }
    if (t_prime.front() != delta) {
      throw std::invalid_argument("schedule: nonsmooth regime needs t'_0 = delta");
    }
    for (int k = 1; k <= K; ++k) {
      if (!(h_prime(k) < sigma2(t_prime[k - 1]) / dim)) {
        throw std::invalid_argument(
            "schedule: nonsmooth regime needs h'_k < sigma^2_{t'_{k-1}}/d");
      }
    }
  }
}

std::string Schedule::to_csv() const {
  std::string out = "k,t_k,t_prime_k,h_k,h_prime_k\n";
  const int K = steps();
  for (int k = 0; k <= K; ++k) {
    out += std::to_string(k);
    out += ',' + fmt(t[k]);
    out += ',';
    if (k < K) out += fmt(t_prime[k]);
    out += ',';
    if (k >= 1) out += fmt(h(k));
    out += ',';
    if (k >= 1) out += fmt(h_prime(k));
    out += '\n';
  }
  return out;
}

namespace {

Schedule finish(Schedule s) {
  s.validate();
  return s;
}

}  // namespace

Schedule build_schedule_smooth_time(double lipschitz, double total_time,
                                    std::optional<double> gap_override) {
  if (lipschitz < 1.0) throw std::invalid_argument("smooth schedule: L >= 1");
  if (!(total_time > 0.0)) {
    throw std::invalid_argument("smooth schedule: total time must be > 0");
  }
  const double h = 1.0 / (3.0 * (lipschitz + 1.0));
  const double default_gap = 1.0 / (6.0 * (lipschitz + 1.0));
  const double gap = gap_override.value_or(default_gap);
  if (!(gap > 0.0 && gap <= default_gap)) {
    throw std::invalid_argument(
        "smooth schedule: gap override must lie in (0, 1/(6(L+1))]");
  }
  const int K = static_cast<int>(std::ceil(total_time / h));

  Schedule s;
  s.regime = Regime::Smooth;
  s.lipschitz = lipschitz;
  s.t.resize(K + 1);
  s.t_prime.resize(K);
  for (int k = 1; k <= K; ++k) s.t[k] = total_time - (K - k) * h;
  s.t[K] = total_time;
  // the remainder T - (K-1)h lands on the sampler-final step; keep t[0]
  // strictly positive and leave room for t'_0 >= 0
  s.t[0] = std::min(gap, 0.5 * s.t[1]);
  for (int k = 0; k < K; ++k) s.t_prime[k] = std::max(s.t[k] - gap, 0.0);
  return finish(std::move(s));
}

Schedule build_schedule_smooth(double lipschitz, int dim, double m2, double eps,
                               std::optional<double> gap_override) {
  if (dim < 1 || m2 < 0.0 || !(eps > 0.0)) {
    throw std::invalid_argument("smooth schedule: need d >= 1, m2 >= 0, eps > 0");
  }
  if (eps >= dim + m2) {
    throw std::invalid_argument("smooth schedule: eps >= d + m2 gives T <= 0");
  }
  return build_schedule_smooth_time(lipschitz, std::log((dim + m2) / eps),
                                    gap_override);
}

Schedule build_schedule_nonsmooth_time(int dim, double total_time, double delta,
                                       int max_steps) {
  if (dim < 1) throw std::invalid_argument("nonsmooth schedule: d >= 1");
  if (!(delta > 0.0)) throw std::invalid_argument("nonsmooth schedule: delta > 0");
  if (!(total_time > 0.0)) {
    throw std::invalid_argument("nonsmooth schedule: total time must be > 0");
  }
  const double h = -std::expm1(-delta) / (2.0 * dim);
  const double gap = h;  // h' = 2h for the constant-step grid
  const int K = static_cast<int>(std::ceil(total_time / h));
  if (K > max_steps) {
    throw std::invalid_argument(
        "nonsmooth schedule: step count exceeds the configured maximum");
  }

  Schedule s;
  s.regime = Regime::NonSmooth;
  s.dim = dim;
  s.delta = delta;
  s.t.resize(K + 1);
  s.t_prime.resize(K);
  s.t[0] = delta + gap;
  for (int k = 1; k <= K; ++k) s.t[k] = s.t[0] + k * h;
  for (int k = 0; k < K; ++k) s.t_prime[k] = s.t[k] - gap;
  s.t_prime[0] = delta;  // pin exactly
  return finish(std::move(s));
}

Schedule build_schedule_nonsmooth(int dim, double m2, double eps, double delta,
                                  int max_steps) {
  if (m2 < 0.0 || !(eps > 0.0) || eps >= dim + m2) {
    throw std::invalid_argument("nonsmooth schedule: need 0 < eps < d + m2");
  }
  return build_schedule_nonsmooth_time(dim, std::log((dim + m2) / eps), delta,
                                       max_steps);
}

Schedule make_schedule(Regime regime, std::vector<double> t,
                       std::vector<double> t_prime, double lipschitz, int dim,
                       double delta) {
  Schedule s;
  s.regime = regime;
  s.lipschitz = lipschitz;
  s.dim = dim;
  s.delta = delta;
  s.t = std::move(t);
  s.t_prime = std::move(t_prime);
  return finish(std::move(s));
}

}  // namespace cmlab

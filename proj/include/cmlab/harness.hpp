#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cmlab/distill.hpp"
#include "cmlab/metrics.hpp"
#include "cmlab/sampler.hpp"

namespace cmlab {

// Experiment configuration parsed from a single JSON file. Unknown keys are
// rejected anywhere in the document.
struct ScheduleSpec {
  Regime regime = Regime::Smooth;
  double lipschitz = 1.0;
  double delta = 0.0;
  std::optional<double> eps;         // accuracy target; or
  std::optional<double> total_time;  // direct horizon; or
  std::vector<double> t;             // explicit knots
  std::vector<double> t_prime;
  std::optional<double> gap;         // smooth-regime knot-gap override
  int max_steps = 200000;

  Schedule build(int dim, double m2) const;
  Schedule build_for_time(int dim, double total_time_override) const;
};

struct ScoreSpec {
  enum class Kind { Exact, Perturbed };
  Kind kind = Kind::Exact;
  PerturbationMode mode = PerturbationMode::ConstantDirection;
  double eps = 0.0;
  std::vector<double> direction;  // defaults to e_1
  double omega = 1.0;
  std::uint64_t phase_seed = 0;

  ScoreField build(const GaussianMixture& target) const;
  ScoreField build_with_eps(const GaussianMixture& target, double eps_override) const;
};

struct MapSpec {
  enum class Kind { ClosedFormAffine, OdeOracle, Learned };
  Kind kind = Kind::OdeOracle;
  std::string path;  // learned kind: serialized approximator
  IntegratorConfig integrator;

  ConsistencyMap build(const GaussianMixture& target, const ScoreSpec& score) const;
};

struct SampleSpec {
  std::size_t batch = 1000;
  InitKind init = InitKind::StandardNormal;
  bool trace = false;
  double trace_cap = 5e7;  // stage cells kept in memory at most
};

struct SweepSpec {
  std::vector<double> total_times;
  std::vector<double> eps_scores;
  enum class KlKind { Exact, Quadrature };
  KlKind kl = KlKind::Exact;
  double timeout_seconds = 600.0;
};

struct DistillSpec {
  Family family = Family::AffinePerPair;
  int knots = 64;
  double t_min = 0.01;
  int iterations = 2000;
  double learning_rate = 0.1;
  double ema_rate = 0.0;
  StepMethod phi = StepMethod::ExponentialIntegrator;
  std::size_t batch = 48;
};

struct VerifySpec {
  double tolerance_scale = 1.0;
  enum class NegativeControl { None, MissignScore };
  NegativeControl negative_control = NegativeControl::None;
};

struct BoundsSpec {
  std::vector<double> eps_scores = {0.02, 0.05, 0.1};
  std::vector<double> steps = {0.2, 0.1, 0.05, 0.025};
  std::size_t mc_samples = 2000;
};

struct PlotSpec {
  std::string input;          // records csv produced by sweep-kl
  std::string x = "T";
  std::string y = "kl_measured";
  std::string bound = "kl_bound";
  std::string name = "figure";
  bool render_svg = true;
};

struct ExperimentConfig {
  enum class Kind { Verify, Sample, SweepKl, Distill, CheckBounds, Plot };

  Kind kind = Kind::Verify;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int workers = 1;

  std::optional<GaussianMixture> target;
  ScheduleSpec schedule;
  ScoreSpec score;
  MapSpec map;
  SampleSpec sample;
  SweepSpec sweep;
  DistillSpec distill;
  VerifySpec verify;
  BoundsSpec bounds;
  PlotSpec plot;

  std::string canonical_json() const;
  std::uint64_t hash() const;

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);

  const GaussianMixture& require_target() const;
};

// ---- verify ----

struct CheckResult {
  std::string module;
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string note;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool all_pass = false;
  std::string to_json() const;
};

VerifyReport run_verify(const ExperimentConfig& cfg);

// ---- sweeps ----

struct SweepRecord {
  std::uint64_t config_hash = 0;
  int index = 0;
  double total_time = 0.0;
  int steps = 0;
  double eps_score = 0.0;
  int dim = 1;
  double lipschitz_or_delta = 0.0;
  double kl_measured = 0.0;
  double kl_bound = 0.0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
};

std::vector<SweepRecord> run_sweep_kl(const ExperimentConfig& cfg);
std::string sweep_records_csv(const std::vector<SweepRecord>& records);

// ---- bound table ----

struct BoundRow {
  std::string name;
  double lhs = 0.0;
  double lhs_se = 0.0;
  double rhs = 0.0;
  bool satisfied = false;
  std::string note;
};

std::vector<BoundRow> run_check_bounds(const ExperimentConfig& cfg);
std::string bound_rows_csv(const std::vector<BoundRow>& rows);

// ---- sample / distill drivers (file-producing) ----

struct SampleOutput {
  std::string csv_path;
  std::string sidecar_path;
  double seconds = 0.0;
};
SampleOutput run_sample(const ExperimentConfig& cfg);

struct DistillOutput {
  std::string approximator_path;
  std::string loss_csv_path;
  double final_loss = 0.0;
};
DistillOutput run_distill(const ExperimentConfig& cfg);

// ---- plot emission ----

struct PlotOutput {
  std::string csv_path;
  std::string svg_path;  // empty when rendering is off
};
PlotOutput emit_plot_data(const std::vector<SweepRecord>& records,
                          const ExperimentConfig& cfg);
PlotOutput emit_plot_from_csv(const ExperimentConfig& cfg);

}  // namespace cmlab

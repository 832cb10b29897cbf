#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cmlab/harness.hpp"

using namespace cmlab;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kSweepConfig = R"({
  "experiment": "sweep-kl",
  "seed": 3,
  "out_dir": "/tmp/cmlab_test_harness",
  "workers": 2,
  "target": {"components": [{"weight": 1.0, "mean": [0.0], "cov_scale": 4.0}]},
  "schedule": {"regime": "smooth", "lipschitz": 1.0},
  "sweep": {"total_times": [1, 2, 4, 8], "eps_scores": [0, 0.01, 0.02, 0.04], "kl": "exact"}
})";

}  // namespace

TEST_CASE("config parsing is strict about keys and values") {
  CHECK_THROWS_AS(ExperimentConfig::from_json_text("{\"experiment\": \"dance\"}"),
                  std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(
                      "{\"experiment\": \"verify\", \"typo\": 1}"),
                  std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(
                      "{\"experiment\": \"verify\", \"schedule\": "
                      "{\"regime\": \"smooth\", \"stepsize\": 0.1}}"),
                  std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(
                      "{\"experiment\": \"verify\", \"workers\": 0}"),
                  std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text("not json"),
                  std::invalid_argument);

  const auto cfg = ExperimentConfig::from_json_text(kSweepConfig);
  CHECK(cfg.kind == ExperimentConfig::Kind::SweepKl);
  CHECK(cfg.seed == 3);
  CHECK(cfg.workers == 2);
  CHECK(cfg.require_target().is_single());
  CHECK(cfg.sweep.total_times.size() == 4);
}

TEST_CASE("config hash is stable and sensitive") {
  const auto a = ExperimentConfig::from_json_text(kSweepConfig);
  const auto b = ExperimentConfig::from_json_text(kSweepConfig);
  CHECK(a.hash() == b.hash());
  auto c = a;
  c.seed = 4;
  CHECK(c.hash() != a.hash());
}

TEST_CASE("verify passes on the default config and reports controls") {
  ExperimentConfig cfg;
  const auto report = run_verify(cfg);
  CHECK(report.all_pass);
  CHECK(report.checks.size() >= 25);

  // a sign-flipped score must surface in the marginal-preservation check
  ExperimentConfig bad;
  bad.verify.negative_control = VerifySpec::NegativeControl::MissignScore;
  const auto broken = run_verify(bad);
  CHECK_FALSE(broken.all_pass);
  bool found = false;
  for (const auto& c : broken.checks) {
    if (c.name == "marginal-preservation") {
      found = true;
      CHECK_FALSE(c.pass);
    }
  }
  CHECK(found);

  // tightening the integrator tolerances makes the oracle checks fail
  ExperimentConfig tight;
  tight.verify.tolerance_scale = 1e-3;
  const auto strained = run_verify(tight);
  CHECK_FALSE(strained.all_pass);
  bool oracle_failed = false;
  for (const auto& c : strained.checks) {
    if (c.name == "closed-form-vs-oracle" && !c.pass) oracle_failed = true;
  }
  CHECK(oracle_failed);
  const auto doc = strained.to_json();
  CHECK(doc.find("\"pass\": false") != std::string::npos);
}

TEST_CASE("kl sweep covers the grid and matches the guarantees") {
  const auto cfg = ExperimentConfig::from_json_text(kSweepConfig);
  const auto records = run_sweep_kl(cfg);
  REQUIRE(records.size() == 16);

  for (const auto& r : records) {
    REQUIRE(r.status == "ok");
    CHECK(r.kl_measured <= r.kl_bound);
    if (r.eps_score == 0.0) {
      CHECK(r.kl_measured <= 5.0 * std::exp(-r.total_time));
    }
  }

  // at the largest horizon the divergence grows linearly in eps^2 (within 20%)
  std::vector<const SweepRecord*> at8;
  for (const auto& r : records) {
    if (r.total_time == 8.0 && r.eps_score > 0.0) at8.push_back(&r);
  }
  REQUIRE(at8.size() == 3);
  const double base = at8[0]->kl_measured /
                      (at8[0]->eps_score * at8[0]->eps_score);
  for (const auto* r : at8) {
    const double ratio = r->kl_measured / (r->eps_score * r->eps_score);
    CHECK(ratio == doctest::Approx(base).epsilon(0.2));
  }

  // rerunning the same config reproduces the table (timing aside)
  auto again = run_sweep_kl(cfg);
  auto strip = [](std::vector<SweepRecord> rs) {
    for (auto& r : rs) r.seconds = 0.0;
    return sweep_records_csv(rs);
  };
  CHECK(strip(records) == strip(again));
}

TEST_CASE("sweep failures are rows, not exceptions") {
  auto cfg = ExperimentConfig::from_json_text(kSweepConfig);
  cfg.target = GaussianMixture::symmetric_pair_1d(1.0, 0.25);  // not single
  const auto records = run_sweep_kl(cfg);
  REQUIRE(records.size() == 16);
  for (const auto& r : records) {
    CHECK(r.status.rfind("failed:", 0) == 0);
  }
}

TEST_CASE("quadrature sweep agrees with the analytic route on gaussians") {
  auto cfg = ExperimentConfig::from_json_text(kSweepConfig);
  cfg.sweep.total_times = {2.0};
  cfg.sweep.eps_scores = {0.0, 0.05};
  const auto exact = run_sweep_kl(cfg);
  cfg.sweep.kl = SweepSpec::KlKind::Quadrature;
  const auto quad = run_sweep_kl(cfg);
  REQUIRE(exact.size() == quad.size());
  for (std::size_t i = 0; i < exact.size(); ++i) {
    REQUIRE(quad[i].status == "ok");
    CHECK(quad[i].kl_measured ==
          doctest::Approx(exact[i].kl_measured).epsilon(0.05));
  }
}

TEST_CASE("bound table rows are satisfied and collapse at zero error") {
  ExperimentConfig cfg;
  cfg.seed = 11;
  cfg.bounds.eps_scores = {0.0};
  cfg.bounds.steps = {0.1};
  cfg.bounds.mc_samples = 500;
  const auto rows = run_check_bounds(cfg);
  REQUIRE(!rows.empty());
  for (const auto& r : rows) {
    CHECK(r.satisfied);
    if (r.name == "gronwall-smooth" || r.name == "gronwall-nonsmooth") {
      CHECK(r.lhs < 1e-12);  // exact score everywhere
    }
  }
  const std::string csv = bound_rows_csv(rows);
  CHECK(csv.rfind("name,lhs,lhs_se,rhs,satisfied,note\n", 0) == 0);
}

TEST_CASE("sample runs write deterministic batches with a sidecar") {
  namespace fs = std::filesystem;
  ExperimentConfig cfg;
  cfg.kind = ExperimentConfig::Kind::Sample;
  cfg.seed = 21;
  cfg.out_dir = "/tmp/cmlab_test_harness";
  cfg.target = GaussianMixture::symmetric_pair_1d(1.0, 0.25);
  cfg.schedule.regime = Regime::NonSmooth;
  cfg.schedule.delta = std::log(2.0);
  cfg.schedule.eps = 0.05;
  cfg.sample.batch = 100;
  cfg.sample.trace = true;

  const auto out = run_sample(cfg);
  const std::string first = read_file(out.csv_path);
  CHECK(std::count(first.begin(), first.end(), '\n') == 101);  // header + rows
  CHECK(read_file(out.sidecar_path).find("wall_seconds") != std::string::npos);
  char tag[20];
  std::snprintf(tag, sizeof(tag), "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  CHECK(fs::exists(cfg.out_dir + "/trace_" + std::string(tag) + ".csv"));

  const auto rerun = run_sample(cfg);
  CHECK(read_file(rerun.csv_path) == first);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("distill runs produce an approximator the sampler can load") {
  namespace fs = std::filesystem;
  ExperimentConfig cfg;
  cfg.kind = ExperimentConfig::Kind::Distill;
  cfg.seed = 5;
  cfg.out_dir = "/tmp/cmlab_test_harness_distill";
  cfg.target = GaussianMixture::single(Eigen::VectorXd::Zero(1), 4.0);
  // explicit strictly positive knots so the trained map covers every time
  // the sampler will ask for
  for (int k = 0; k <= 8; ++k) cfg.schedule.t.push_back(0.3 + 0.2 * k);
  for (int k = 0; k < 8; ++k) cfg.schedule.t_prime.push_back(0.25 + 0.2 * k);
  cfg.distill.knots = 9;
  cfg.distill.iterations = 400;
  cfg.distill.learning_rate = 0.1;
  cfg.distill.t_min = 0.2;
  cfg.distill.batch = 32;
  cfg.distill.phi = StepMethod::RungeKutta4;  // exact backstep

  const auto out = run_distill(cfg);
  CHECK(out.final_loss < 1e-4);

  const auto loaded = Approximator::load(out.approximator_path);
  CHECK(loaded.grid().size() >= 9);  // uniform knots plus the schedule's own
  const auto map = loaded.as_consistency_map();
  const double t_lo = loaded.grid().knots.front();
  const double t_hi = loaded.grid().knots.back();
  const auto exact = ConsistencyMap::closed_form_affine(*cfg.target);
  Eigen::VectorXd x(1);
  x << 1.3;
  CHECK((map.eval(t_lo, t_hi, x) - exact.eval(t_lo, t_hi, x)).norm() < 0.05);

  // the serialized transport feeds straight back into the sampler
  ExperimentConfig sample_cfg = cfg;
  sample_cfg.kind = ExperimentConfig::Kind::Sample;
  sample_cfg.map.kind = MapSpec::Kind::Learned;
  sample_cfg.map.path = out.approximator_path;
  sample_cfg.sample.batch = 200;
  sample_cfg.sample.init = InitKind::ExactTerminal;
  const auto sampled = run_sample(sample_cfg);
  const std::string body = read_file(sampled.csv_path);
  CHECK(std::count(body.begin(), body.end(), '\n') == 201);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("plot emission is deterministic and rejects empty input") {
  namespace fs = std::filesystem;
  auto cfg = ExperimentConfig::from_json_text(kSweepConfig);
  cfg.sweep.total_times = {1.0, 2.0};
  cfg.sweep.eps_scores = {0.02};
  cfg.out_dir = "/tmp/cmlab_test_harness_plot";
  const auto records = run_sweep_kl(cfg);
  const auto a = emit_plot_data(records, cfg);
  const auto b = emit_plot_data(records, cfg);
  CHECK(read_file(a.csv_path) == read_file(b.csv_path));
  CHECK(read_file(a.svg_path).rfind("<svg", 0) == 0);

  // round trip through the records csv and the plot subcommand path
  const std::string table = cfg.out_dir + "/records.csv";
  {
    std::ofstream out(table);
    out << sweep_records_csv(records);
  }
  cfg.plot.input = table;
  const auto c = emit_plot_from_csv(cfg);
  CHECK(read_file(c.csv_path) == read_file(a.csv_path));

  CHECK_THROWS(emit_plot_data({}, cfg));
  fs::remove_all(cfg.out_dir);
}

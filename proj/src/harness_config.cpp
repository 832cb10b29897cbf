#include "cmlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace cmlab {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void config_error(const std::string& msg) {
  throw std::invalid_argument("config: " + msg);
}

void require_keys(const json& j, const std::vector<std::string>& allowed,
                  const std::string& where) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

GaussianMixture parse_target(const json& j) {
  require_keys(j, {"components"}, "target");
  std::vector<MixtureComponent> comps;
  for (const auto& c : j.at("components")) {
    require_keys(c, {"weight", "mean", "cov_scale"}, "target.components[]");
    MixtureComponent mc;
    mc.weight = c.at("weight").get<double>();
    const auto mean = c.at("mean").get<std::vector<double>>();
    mc.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
    mc.cov_scale = c.at("cov_scale").get<double>();
    comps.push_back(std::move(mc));
  }
  return GaussianMixture(std::move(comps));
}

StepMethod parse_method(const std::string& s, const std::string& where) {
  if (s == "rk4") return StepMethod::RungeKutta4;
  if (s == "exponential") return StepMethod::ExponentialIntegrator;
  if (s == "euler") return StepMethod::Euler;
  config_error(where + ": unknown method '" + s + "'");
}

const char* method_name(StepMethod m) {
  switch (m) {
    case StepMethod::RungeKutta4: return "rk4";
    case StepMethod::ExponentialIntegrator: return "exponential";
    case StepMethod::Euler: return "euler";
  }
  return "?";
}

}  // namespace

Schedule ScheduleSpec::build(int dim, double m2) const {
  if (!t.empty()) {
    return make_schedule(regime, t, t_prime, lipschitz, dim, delta);
  }
  if (total_time) return build_for_time(dim, *total_time);
  if (!eps) {
    config_error("schedule: provide eps, total_time or explicit knots");
  }
  if (regime == Regime::Smooth) {
    return build_schedule_smooth(lipschitz, dim, m2, *eps, gap);
  }
  return build_schedule_nonsmooth(dim, m2, *eps, delta, max_steps);
}

Schedule ScheduleSpec::build_for_time(int dim, double t) const {
  if (regime == Regime::Smooth) {
    return build_schedule_smooth_time(lipschitz, t, gap);
  }
  return build_schedule_nonsmooth_time(dim, t, delta, max_steps);
}

ScoreField ScoreSpec::build(const GaussianMixture& target) const {
  return build_with_eps(target, eps);
}

ScoreField ScoreSpec::build_with_eps(const GaussianMixture& target,
                                     double e) const {
  if (kind == Kind::Exact || e == 0.0) return ScoreField::exact(target);
  if (mode == PerturbationMode::ConstantDirection) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(target.dim());
    if (direction.empty()) {
      u[0] = 1.0;
    } else {
      if (static_cast<int>(direction.size()) != target.dim()) {
        config_error("score.direction dimension mismatch");
      }
      u = Eigen::Map<const Eigen::VectorXd>(direction.data(), direction.size());
    }
    return ScoreField::perturbed(target, Perturbation::constant_direction(u, e));
  }
  return ScoreField::perturbed(
      target, Perturbation::smooth_field(target.dim(), e, omega, phase_seed));
}

ConsistencyMap MapSpec::build(const GaussianMixture& target,
                              const ScoreSpec& score) const {
  switch (kind) {
    case Kind::ClosedFormAffine: {
      if (!target.is_single()) {
        config_error("map: closed_form_affine needs a single-Gaussian target");
      }
      if (score.kind == ScoreSpec::Kind::Exact || score.eps == 0.0) {
        return ConsistencyMap::closed_form_affine(target);
      }
      if (score.mode != PerturbationMode::ConstantDirection) {
        config_error("map: closed_form_affine supports constant-direction scores");
      }
      const ScoreField f = score.build(target);
      return ConsistencyMap::closed_form_affine(target, *f.perturbation());
    }
    case Kind::OdeOracle:
      return ConsistencyMap::ode_oracle(score.build(target), integrator);
    case Kind::Learned: {
      if (path.empty()) config_error("map: learned kind needs a path");
      auto approx = std::make_shared<Approximator>(Approximator::load(path));
      return approx->as_consistency_map();
    }
  }
  config_error("map: bad kind");
}

const GaussianMixture& ExperimentConfig::require_target() const {
  if (!target) config_error("a target is required for this experiment");
  return *target;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    config_error(std::string("invalid json: ") + e.what());
  }
  require_keys(j,
               {"experiment", "seed", "out_dir", "workers", "target",
                "schedule", "score", "map", "sample", "sweep", "distill",
                "verify", "bounds", "plot"},
               "top level");

  ExperimentConfig cfg;
  const std::string kind = j.at("experiment").get<std::string>();
  if (kind == "verify") {
    cfg.kind = Kind::Verify;
  } else if (kind == "sample") {
    cfg.kind = Kind::Sample;
  } else if (kind == "sweep-kl") {
    cfg.kind = Kind::SweepKl;
  } else if (kind == "distill") {
    cfg.kind = Kind::Distill;
  } else if (kind == "check-bounds") {
    cfg.kind = Kind::CheckBounds;
  } else if (kind == "plot") {
    cfg.kind = Kind::Plot;
  } else {
    config_error("unknown experiment '" + kind + "'");
  }

  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("workers")) {
    cfg.workers = j.at("workers").get<int>();
    if (cfg.workers < 1) config_error("workers must be >= 1");
  }
  if (j.contains("target")) cfg.target = parse_target(j.at("target"));

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    require_keys(s,
                 {"regime", "lipschitz", "delta", "eps", "total_time", "t",
                  "t_prime", "gap", "max_steps"},
                 "schedule");
    const std::string regime = s.at("regime").get<std::string>();
    if (regime == "smooth") {
      cfg.schedule.regime = Regime::Smooth;
    } else if (regime == "nonsmooth") {
      cfg.schedule.regime = Regime::NonSmooth;
    } else {
      config_error("schedule.regime must be smooth or nonsmooth");
    }
    if (s.contains("lipschitz")) cfg.schedule.lipschitz = s.at("lipschitz").get<double>();
    if (s.contains("delta")) cfg.schedule.delta = s.at("delta").get<double>();
    if (s.contains("eps")) cfg.schedule.eps = s.at("eps").get<double>();
    if (s.contains("total_time")) cfg.schedule.total_time = s.at("total_time").get<double>();
    if (s.contains("t")) cfg.schedule.t = s.at("t").get<std::vector<double>>();
    if (s.contains("t_prime")) {
      cfg.schedule.t_prime = s.at("t_prime").get<std::vector<double>>();
    }
    if (s.contains("gap")) cfg.schedule.gap = s.at("gap").get<double>();
    if (s.contains("max_steps")) cfg.schedule.max_steps = s.at("max_steps").get<int>();
  }

  if (j.contains("score")) {
    const json& s = j.at("score");
    require_keys(s, {"kind", "mode", "eps", "direction", "omega", "phase_seed"},
                 "score");
    const std::string kind_s = s.at("kind").get<std::string>();
    if (kind_s == "exact") {
      cfg.score.kind = ScoreSpec::Kind::Exact;
    } else if (kind_s == "perturbed") {
      cfg.score.kind = ScoreSpec::Kind::Perturbed;
    } else {
      config_error("score.kind must be exact or perturbed");
    }
    if (s.contains("mode")) {
      const std::string m = s.at("mode").get<std::string>();
      if (m == "constant_direction") {
        cfg.score.mode = PerturbationMode::ConstantDirection;
      } else if (m == "smooth_field") {
        cfg.score.mode = PerturbationMode::SmoothField;
      } else {
        config_error("score.mode must be constant_direction or smooth_field");
      }
    }
    if (s.contains("eps")) cfg.score.eps = s.at("eps").get<double>();
    if (s.contains("direction")) {
      cfg.score.direction = s.at("direction").get<std::vector<double>>();
    }
    if (s.contains("omega")) cfg.score.omega = s.at("omega").get<double>();
    if (s.contains("phase_seed")) cfg.score.phase_seed = s.at("phase_seed").get<std::uint64_t>();
  }

  if (j.contains("map")) {
    const json& m = j.at("map");
    require_keys(m, {"kind", "path", "integrator"}, "map");
    const std::string kind_m = m.at("kind").get<std::string>();
    if (kind_m == "closed_form_affine") {
      cfg.map.kind = MapSpec::Kind::ClosedFormAffine;
    } else if (kind_m == "ode_oracle") {
      cfg.map.kind = MapSpec::Kind::OdeOracle;
    } else if (kind_m == "learned") {
      cfg.map.kind = MapSpec::Kind::Learned;
    } else {
      config_error("map.kind must be closed_form_affine, ode_oracle or learned");
    }
    if (m.contains("path")) cfg.map.path = m.at("path").get<std::string>();
    if (m.contains("integrator")) {
      const json& ic = m.at("integrator");
      require_keys(ic, {"method", "substep", "tolerance", "anchor"},
                   "map.integrator");
      if (ic.contains("method")) {
        cfg.map.integrator.method =
            parse_method(ic.at("method").get<std::string>(), "map.integrator");
      }
      if (ic.contains("substep")) {
        cfg.map.integrator.substep = ic.at("substep").get<double>();
        if (!(cfg.map.integrator.substep > 0.0)) config_error("substep must be > 0");
      }
      if (ic.contains("tolerance")) {
        cfg.map.integrator.tolerance = ic.at("tolerance").get<double>();
      }
      if (ic.contains("anchor")) {
        const std::string a = ic.at("anchor").get<std::string>();
        if (a == "start") {
          cfg.map.integrator.anchor = StepAnchor::Start;
        } else if (a == "end") {
          cfg.map.integrator.anchor = StepAnchor::End;
        } else {
          config_error("map.integrator.anchor must be start or end");
        }
      }
    }
  }

  if (j.contains("sample")) {
    const json& s = j.at("sample");
    require_keys(s, {"batch", "init", "trace", "trace_cap"}, "sample");
    if (s.contains("batch")) cfg.sample.batch = s.at("batch").get<std::size_t>();
    if (s.contains("init")) {
      const std::string init = s.at("init").get<std::string>();
      if (init == "standard_normal") {
        cfg.sample.init = InitKind::StandardNormal;
      } else if (init == "exact_terminal") {
        cfg.sample.init = InitKind::ExactTerminal;
      } else {
        config_error("sample.init must be standard_normal or exact_terminal");
      }
    }
    if (s.contains("trace")) cfg.sample.trace = s.at("trace").get<bool>();
    if (s.contains("trace_cap")) {
      cfg.sample.trace_cap = s.at("trace_cap").get<double>();
    }
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    require_keys(s, {"total_times", "eps_scores", "kl", "timeout_seconds"},
                 "sweep");
    if (s.contains("total_times")) {
      cfg.sweep.total_times = s.at("total_times").get<std::vector<double>>();
    }
    if (s.contains("eps_scores")) {
      cfg.sweep.eps_scores = s.at("eps_scores").get<std::vector<double>>();
    }
    if (s.contains("kl")) {
      const std::string klk = s.at("kl").get<std::string>();
      if (klk == "exact") {
        cfg.sweep.kl = SweepSpec::KlKind::Exact;
      } else if (klk == "quadrature") {
        cfg.sweep.kl = SweepSpec::KlKind::Quadrature;
      } else {
        config_error("sweep.kl must be exact or quadrature");
      }
    }
    if (s.contains("timeout_seconds")) {
      cfg.sweep.timeout_seconds = s.at("timeout_seconds").get<double>();
    }
  }

  if (j.contains("distill")) {
    const json& d = j.at("distill");
    require_keys(d,
                 {"family", "knots", "t_min", "iterations", "learning_rate",
                  "ema_rate", "phi", "batch"},
                 "distill");
    if (d.contains("family")) {
      const std::string fam = d.at("family").get<std::string>();
      if (fam == "affine_per_pair") {
        cfg.distill.family = Family::AffinePerPair;
      } else if (fam == "feature_linear") {
        cfg.distill.family = Family::FeatureLinear;
      } else {
        config_error("distill.family must be affine_per_pair or feature_linear");
      }
    }
    if (d.contains("knots")) cfg.distill.knots = d.at("knots").get<int>();
    if (d.contains("t_min")) cfg.distill.t_min = d.at("t_min").get<double>();
    if (d.contains("iterations")) cfg.distill.iterations = d.at("iterations").get<int>();
    if (d.contains("learning_rate")) {
      cfg.distill.learning_rate = d.at("learning_rate").get<double>();
    }
    if (d.contains("ema_rate")) cfg.distill.ema_rate = d.at("ema_rate").get<double>();
    if (d.contains("phi")) {
      cfg.distill.phi = parse_method(d.at("phi").get<std::string>(), "distill.phi");
    }
    if (d.contains("batch")) cfg.distill.batch = d.at("batch").get<std::size_t>();
  }

  if (j.contains("verify")) {
    const json& v = j.at("verify");
    require_keys(v, {"tolerance_scale", "negative_control"}, "verify");
    if (v.contains("tolerance_scale")) {
      cfg.verify.tolerance_scale = v.at("tolerance_scale").get<double>();
      if (!(cfg.verify.tolerance_scale > 0.0)) {
        config_error("verify.tolerance_scale must be > 0");
      }
    }
    if (v.contains("negative_control")) {
      const std::string nc = v.at("negative_control").get<std::string>();
      if (nc == "none") {
        cfg.verify.negative_control = VerifySpec::NegativeControl::None;
      } else if (nc == "missign_score") {
        cfg.verify.negative_control = VerifySpec::NegativeControl::MissignScore;
      } else {
        config_error("verify.negative_control must be none or missign_score");
      }
    }
  }

  if (j.contains("bounds")) {
    const json& b = j.at("bounds");
    require_keys(b, {"eps_scores", "steps", "mc_samples"}, "bounds");
    if (b.contains("eps_scores")) {
      cfg.bounds.eps_scores = b.at("eps_scores").get<std::vector<double>>();
    }
    if (b.contains("steps")) {
      cfg.bounds.steps = b.at("steps").get<std::vector<double>>();
    }
    if (b.contains("mc_samples")) {
      cfg.bounds.mc_samples = b.at("mc_samples").get<std::size_t>();
    }
  }

  if (j.contains("plot")) {
    const json& p = j.at("plot");
    require_keys(p, {"input", "x", "y", "bound", "name", "render_svg"}, "plot");
    if (p.contains("input")) cfg.plot.input = p.at("input").get<std::string>();
    if (p.contains("x")) cfg.plot.x = p.at("x").get<std::string>();
    if (p.contains("y")) cfg.plot.y = p.at("y").get<std::string>();
    if (p.contains("bound")) cfg.plot.bound = p.at("bound").get<std::string>();
    if (p.contains("name")) cfg.plot.name = p.at("name").get<std::string>();
    if (p.contains("render_svg")) cfg.plot.render_svg = p.at("render_svg").get<bool>();
  }

  return cfg;
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  switch (kind) {
    case Kind::Verify: j["experiment"] = "verify"; break;
    case Kind::Sample: j["experiment"] = "sample"; break;
    case Kind::SweepKl: j["experiment"] = "sweep-kl"; break;
    case Kind::Distill: j["experiment"] = "distill"; break;
    case Kind::CheckBounds: j["experiment"] = "check-bounds"; break;
    case Kind::Plot: j["experiment"] = "plot"; break;
  }
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["workers"] = workers;
  if (target) {
    json comps = json::array();
    for (const auto& c : target->components()) {
      comps.push_back({{"weight", c.weight},
                       {"mean", std::vector<double>(c.mean.data(),
                                                    c.mean.data() + c.mean.size())},
                       {"cov_scale", c.cov_scale}});
    }
    j["target"] = {{"components", comps}};
  }
  j["schedule"] = {{"regime", schedule.regime == Regime::Smooth ? "smooth"
                                                                : "nonsmooth"},
                   {"lipschitz", schedule.lipschitz},
                   {"delta", schedule.delta},
                   {"max_steps", schedule.max_steps}};
  if (schedule.eps) j["schedule"]["eps"] = *schedule.eps;
  if (schedule.total_time) j["schedule"]["total_time"] = *schedule.total_time;
  if (!schedule.t.empty()) {
    j["schedule"]["t"] = schedule.t;
    j["schedule"]["t_prime"] = schedule.t_prime;
  }
  if (schedule.gap) j["schedule"]["gap"] = *schedule.gap;
  j["score"] = {{"kind", score.kind == ScoreSpec::Kind::Exact ? "exact"
                                                              : "perturbed"},
                {"mode", score.mode == PerturbationMode::ConstantDirection
                             ? "constant_direction"
                             : "smooth_field"},
                {"eps", score.eps},
                {"direction", score.direction},
                {"omega", score.omega},
                {"phase_seed", score.phase_seed}};
  j["map"] = {{"kind", map.kind == MapSpec::Kind::ClosedFormAffine
                           ? "closed_form_affine"
                           : map.kind == MapSpec::Kind::OdeOracle ? "ode_oracle"
                                                                  : "learned"},
              {"path", map.path},
              {"integrator",
               {{"method", method_name(map.integrator.method)},
                {"substep", map.integrator.substep},
                {"tolerance", map.integrator.tolerance},
                {"anchor", map.integrator.anchor == StepAnchor::Start
                               ? "start"
                               : "end"}}}};
  j["sample"] = {{"trace_cap", sample.trace_cap},
                 {"batch", sample.batch},
                 {"init", sample.init == InitKind::StandardNormal
                              ? "standard_normal"
                              : "exact_terminal"},
                 {"trace", sample.trace}};
  j["sweep"] = {{"total_times", sweep.total_times},
                {"eps_scores", sweep.eps_scores},
                {"kl", sweep.kl == SweepSpec::KlKind::Exact ? "exact"
                                                            : "quadrature"},
                {"timeout_seconds", sweep.timeout_seconds}};
  j["distill"] = {{"family", distill.family == Family::AffinePerPair
                                 ? "affine_per_pair"
                                 : "feature_linear"},
                  {"knots", distill.knots},
                  {"t_min", distill.t_min},
                  {"iterations", distill.iterations},
                  {"learning_rate", distill.learning_rate},
                  {"ema_rate", distill.ema_rate},
                  {"phi", method_name(distill.phi)},
                  {"batch", distill.batch}};
  j["verify"] = {{"tolerance_scale", verify.tolerance_scale},
                 {"negative_control",
                  verify.negative_control == VerifySpec::NegativeControl::None
                      ? "none"
                      : "missign_score"}};
  j["bounds"] = {{"eps_scores", bounds.eps_scores},
                 {"steps", bounds.steps},
                 {"mc_samples", bounds.mc_samples}};
  j["plot"] = {{"input", plot.input}, {"x", plot.x},     {"y", plot.y},
               {"bound", plot.bound}, {"name", plot.name},
               {"render_svg", plot.render_svg}};
  return j.dump();
}

std::uint64_t ExperimentConfig::hash() const {
  // FNV-1a, stable across platforms for deterministic file naming
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : canonical_json()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string VerifyReport::to_json() const {
  json arr = json::array();
  for (const auto& c : checks) {
    arr.push_back({{"module", c.module},
                   {"name", c.name},
                   {"measured", c.measured},
                   {"threshold", c.threshold},
                   {"pass", c.pass},
                   {"note", c.note}});
  }
  return json{{"all_pass", all_pass}, {"checks", arr}}.dump(2);
}

}  // namespace cmlab


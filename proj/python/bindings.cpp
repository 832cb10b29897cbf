#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cmlab/harness.hpp"

namespace py = pybind11;
using namespace cmlab;

namespace {

GaussianMixture make_mixture(
    const std::vector<std::tuple<double, Eigen::VectorXd, double>>& comps) {
  std::vector<MixtureComponent> mc;
  mc.reserve(comps.size());
  for (const auto& [w, mean, cov] : comps) {
    mc.push_back({w, mean, cov});
  }
  return GaussianMixture(std::move(mc));
}

InitKind parse_init(const std::string& s) {
  if (s == "standard_normal") return InitKind::StandardNormal;
  if (s == "exact_terminal") return InitKind::ExactTerminal;
  throw std::invalid_argument("init must be standard_normal or exact_terminal");
}

StepMethod parse_method(const std::string& s) {
  if (s == "rk4") return StepMethod::RungeKutta4;
  if (s == "exponential") return StepMethod::ExponentialIntegrator;
  if (s == "euler") return StepMethod::Euler;
  throw std::invalid_argument("method must be rk4, exponential or euler");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multi-step consistency generation laboratory";

  py::class_<Schedule>(m, "Schedule")
      .def_property_readonly("steps", &Schedule::steps)
      .def_property_readonly("total_time", &Schedule::total_time)
      .def_property_readonly("stop_time", &Schedule::stop_time)
      .def_property_readonly(
          "regime",
          [](const Schedule& s) {
            return s.regime == Regime::Smooth ? "smooth" : "nonsmooth";
          })
      .def_readonly("t", &Schedule::t)
      .def_readonly("t_prime", &Schedule::t_prime)
      .def("h", &Schedule::h, py::arg("k"))
      .def("h_prime", &Schedule::h_prime, py::arg("k"))
      .def("gap", &Schedule::gap, py::arg("k"))
      .def("validate", &Schedule::validate)
      .def("to_csv", &Schedule::to_csv);

  m.def("build_schedule_smooth", &build_schedule_smooth, py::arg("lipschitz"),
        py::arg("dim"), py::arg("m2"), py::arg("eps"),
        py::arg("gap") = std::optional<double>{});
  m.def("build_schedule_smooth_time", &build_schedule_smooth_time,
        py::arg("lipschitz"), py::arg("total_time"),
        py::arg("gap") = std::optional<double>{});
  m.def("build_schedule_nonsmooth", &build_schedule_nonsmooth, py::arg("dim"),
        py::arg("m2"), py::arg("eps"), py::arg("delta"),
        py::arg("max_steps") = 200000);
  m.def("build_schedule_nonsmooth_time", &build_schedule_nonsmooth_time,
        py::arg("dim"), py::arg("total_time"), py::arg("delta"),
        py::arg("max_steps") = 200000);

  py::class_<OuTransition>(m, "OuTransition")
      .def_readonly("t_from", &OuTransition::t_from)
      .def_readonly("t_to", &OuTransition::t_to)
      .def_readonly("shrink", &OuTransition::shrink)
      .def_readonly("noise_std", &OuTransition::noise_std);
  m.def("ou_transition", &ou_transition, py::arg("t_from"), py::arg("t_to"));

  py::class_<GaussianMixture>(m, "GaussianMixture")
      .def(py::init(&make_mixture), py::arg("components"),
           "components: list of (weight, mean, cov_scale)")
      .def_static("standard_normal", &GaussianMixture::standard_normal)
      .def_static("single", &GaussianMixture::single)
      .def_static("point_mass", &GaussianMixture::point_mass)
      .def_static("symmetric_pair_1d", &GaussianMixture::symmetric_pair_1d)
      .def_property_readonly("dim", &GaussianMixture::dim)
      .def("second_moment", &GaussianMixture::second_moment)
      .def("log_density", &GaussianMixture::log_density, py::arg("t"),
           py::arg("x"))
      .def("score", &GaussianMixture::score, py::arg("t"), py::arg("x"))
      .def("score_hessian", &GaussianMixture::score_hessian, py::arg("t"),
           py::arg("x"))
      .def(
          "sample",
          [](const GaussianMixture& g, std::size_t n, std::uint64_t seed) {
            Rng rng(seed);
            return Eigen::MatrixXd(g.sample(n, rng).transpose());
          },
          py::arg("n"), py::arg("seed"), "rows are samples")
      .def(
          "marginal_variance_at",
          [](const GaussianMixture& g, double t) {
            return g.component_var_at(t);
          },
          py::arg("t"), "single-Gaussian targets only");

  py::class_<Perturbation>(m, "Perturbation")
      .def_static("constant_direction", &Perturbation::constant_direction,
                  py::arg("direction"), py::arg("eps"))
      .def_static("smooth_field", &Perturbation::smooth_field, py::arg("dim"),
                  py::arg("eps"), py::arg("omega"), py::arg("phase_seed"));

  py::class_<ScoreField>(m, "ScoreField")
      .def_static("exact", &ScoreField::exact, py::arg("target"))
      .def_static("perturbed", &ScoreField::perturbed, py::arg("target"),
                  py::arg("perturbation"))
      .def("__call__", &ScoreField::operator(), py::arg("t"), py::arg("x"))
      .def_property_readonly("lipschitz", &ScoreField::lipschitz);

  m.def(
      "measure_score_error",
      [](const ScoreField& f, const GaussianMixture& g, double t,
         std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        const auto e = measure_score_error(f, g, t, n, rng);
        return py::make_tuple(e.mean, e.std_error);
      },
      py::arg("field"), py::arg("target"), py::arg("t"), py::arg("n"),
      py::arg("seed"));

  py::class_<IntegratorConfig>(m, "IntegratorConfig")
      .def(py::init([](const std::string& method, double substep,
                       double tolerance) {
             IntegratorConfig c;
             c.method = parse_method(method);
             c.substep = substep;
             c.tolerance = tolerance;
             return c;
           }),
           py::arg("method") = "rk4", py::arg("substep") = 1e-3,
           py::arg("tolerance") = 1e-8);

  py::class_<ConsistencyMap>(m, "ConsistencyMap")
      .def_static(
          "closed_form_affine",
          [](const GaussianMixture& g) {
            return ConsistencyMap::closed_form_affine(g);
          },
          py::arg("target"))
      .def_static(
          "closed_form_affine_perturbed",
          [](const GaussianMixture& g, const Perturbation& p) {
            return ConsistencyMap::closed_form_affine(g, p);
          },
          py::arg("target"), py::arg("perturbation"))
      .def_static(
          "ode_oracle",
          [](const ScoreField& f, const IntegratorConfig& c) {
            return ConsistencyMap::ode_oracle(f, c);
          },
          py::arg("field"), py::arg("config") = IntegratorConfig::oracle())
      .def("eval", &ConsistencyMap::eval, py::arg("t_prime"), py::arg("t"),
           py::arg("x"));

  m.def(
      "solver_step_phi",
      [](const ScoreField& f, const Eigen::VectorXd& x, double t_from,
         double t_to, const std::string& method) {
        return solver_step_phi(f, x, t_from, t_to, parse_method(method));
      },
      py::arg("field"), py::arg("x"), py::arg("t_from"), py::arg("t_to"),
      py::arg("method") = "exponential");

  m.def(
      "multistep_sample",
      [](const Schedule& schedule, const ConsistencyMap& map,
         const GaussianMixture& target, const std::string& init,
         std::size_t batch, std::uint64_t seed, int workers) {
        SamplerRun run;
        run.schedule = schedule;
        run.map = &map;
        run.target = &target;
        run.init = parse_init(init);
        run.batch = batch;
        run.seed = seed;
        run.workers = workers;
        const auto res = run_multistep(run);
        return py::make_tuple(Eigen::MatrixXd(res.output.transpose()),
                              res.stop_time);
      },
      py::arg("schedule"), py::arg("map"), py::arg("target"),
      py::arg("init") = "standard_normal", py::arg("batch") = 1000,
      py::arg("seed") = 0, py::arg("workers") = 1,
      "returns (samples with one row each, stop_time)");

  py::class_<GaussianPushforward>(m, "GaussianPushforward")
      .def_readonly("mean", &GaussianPushforward::mean)
      .def_readonly("var", &GaussianPushforward::var)
      .def_readonly("true_mean", &GaussianPushforward::true_mean)
      .def_readonly("true_var", &GaussianPushforward::true_var)
      .def_readonly("kl_exact", &GaussianPushforward::kl_exact)
      .def_readonly("kl_terminal", &GaussianPushforward::kl_terminal)
      .def_readonly("kl_chain", &GaussianPushforward::kl_chain)
      .def_readonly("step_kls", &GaussianPushforward::step_kls);

  m.def(
      "gaussian_pushforward",
      [](const Schedule& schedule, const ConsistencyMap& map,
         const std::string& init, const GaussianMixture& target) {
        return gaussian_pushforward(schedule, map, parse_init(init), target);
      },
      py::arg("schedule"), py::arg("map"), py::arg("init"), py::arg("target"));

  m.def("kl_gaussian", &kl_gaussian, py::arg("mean_a"), py::arg("var_a"),
        py::arg("mean_b"), py::arg("var_b"));
  m.def("kl_conditional_step", &kl_conditional_step, py::arg("f_out"),
        py::arg("fhat_out"), py::arg("t_prime"), py::arg("t_prev"));

  py::class_<BoundFormula>(m, "BoundFormula")
      .def_readonly("value", &BoundFormula::value)
      .def_readonly("init_term", &BoundFormula::init_term)
      .def_readonly("score_coefficient", &BoundFormula::score_coefficient)
      .def_readonly("total_time", &BoundFormula::total_time);
  m.def("theorem_rhs", &theorem_rhs, py::arg("schedule"), py::arg("dim"),
        py::arg("m2"), py::arg("eps_score"));

  py::class_<TrainGrid>(m, "TrainGrid")
      .def_static("uniform", &TrainGrid::uniform, py::arg("t_min"),
                  py::arg("t_max"), py::arg("n"))
      .def_readonly("knots", &TrainGrid::knots);

  py::class_<Approximator>(m, "Approximator")
      .def(py::init([](const std::string& family, const TrainGrid& grid,
                       int dim) {
             return Approximator(family == "feature_linear"
                                     ? Family::FeatureLinear
                                     : Family::AffinePerPair,
                                 grid, dim);
           }),
           py::arg("family"), py::arg("grid"), py::arg("dim"))
      .def("eval",
           [](const Approximator& a, double tp, double t,
              const Eigen::VectorXd& x) { return a.eval(tp, t, x); })
      .def("save", &Approximator::save)
      .def_static("load", &Approximator::load)
      .def("as_consistency_map", &Approximator::as_consistency_map);

  m.def(
      "train_distillation",
      [](Approximator& approx, const ScoreField& field,
         const GaussianMixture& target, double learning_rate, int iterations,
         std::size_t batch, const std::string& method, double ema_rate,
         std::uint64_t seed) {
        TrainConfig cfg;
        cfg.learning_rate = learning_rate;
        cfg.iterations = iterations;
        cfg.batch = batch;
        cfg.method = parse_method(method);
        cfg.ema_rate = ema_rate;
        Rng rng(seed);
        return train(approx, field, target, cfg, rng);
      },
      py::arg("approximator"), py::arg("field"), py::arg("target"),
      py::arg("learning_rate") = 0.1, py::arg("iterations") = 1000,
      py::arg("batch") = 48, py::arg("method") = "exponential",
      py::arg("ema_rate") = 0.0, py::arg("seed") = 0);

  m.def(
      "measure_cd_error",
      [](const Approximator& approx, const ScoreField& field,
         const GaussianMixture& target, std::size_t batch,
         const std::string& method, std::uint64_t seed) {
        Rng rng(seed);
        const auto rep =
            measure_cd_error(approx, field, target, batch, rng,
                             parse_method(method));
        return rep.eps_cd;
      },
      py::arg("approximator"), py::arg("field"), py::arg("target"),
      py::arg("batch") = 512, py::arg("method") = "exponential",
      py::arg("seed") = 0);

  m.def("run_verify", [](std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    const auto report = run_verify(cfg);
    py::list checks;
    for (const auto& c : report.checks) {
      py::dict d;
      d["module"] = c.module;
      d["name"] = c.name;
      d["measured"] = c.measured;
      d["threshold"] = c.threshold;
      d["pass"] = c.pass;
      checks.append(d);
    }
    return py::make_tuple(report.all_pass, checks);
  }, py::arg("seed") = 0);
}

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cmlab/harness.hpp"

namespace cmlab {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Eigen::VectorXd vec1(double a) {
  Eigen::VectorXd v(1);
  v << a;
  return v;
}

void write_file(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

double elapsed(std::chrono::steady_clock::time_point from) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - from)
      .count();
}

// one sweep point: sampler output divergence against the marginal at the stop
// time plus the matching guarantee value
void eval_sweep_point(const ExperimentConfig& cfg, SweepRecord& rec) {
  const GaussianMixture& target = cfg.require_target();
  const int d = target.dim();
  const double m2 = target.second_moment();

  const Schedule schedule = cfg.schedule.build_for_time(d, rec.total_time);
  rec.steps = schedule.steps();
  rec.dim = d;
  rec.lipschitz_or_delta = schedule.regime == Regime::Smooth
                               ? schedule.lipschitz
                               : schedule.delta;
  rec.kl_bound = theorem_rhs(schedule, d, m2, rec.eps_score).value;

  if (cfg.sweep.kl == SweepSpec::KlKind::Exact) {
    if (!target.is_single()) {
      throw std::invalid_argument("sweep: exact kl needs a single-Gaussian target");
    }
    MapSpec affine;
    affine.kind = MapSpec::Kind::ClosedFormAffine;
    ScoreSpec score = cfg.score;
    score.eps = rec.eps_score;
    if (rec.eps_score > 0.0) score.kind = ScoreSpec::Kind::Perturbed;
    const ConsistencyMap map = affine.build(target, score);
    const auto push =
        gaussian_pushforward(schedule, map, cfg.sample.init, target);
    rec.kl_measured = push.kl_exact;
    return;
  }

  if (d != 1) {
    throw std::invalid_argument("sweep: quadrature kl is one-dimensional only");
  }
  ScoreSpec score = cfg.score;
  score.eps = rec.eps_score;
  if (rec.eps_score > 0.0) score.kind = ScoreSpec::Kind::Perturbed;
  const ConsistencyMap map =
      ConsistencyMap::ode_oracle(score.build(target), cfg.map.integrator);
  const auto dens =
      density_pushforward_1d(schedule, map, cfg.sample.init, target);
  const NoisedMixture truth = target.marginal_at(schedule.stop_time());
  const auto interp = dens.at_stop.interpolator();
  Eigen::VectorXd x(1);
  const auto p_fn = [&](double v) {
    x[0] = v;
    return truth.density(x);
  };
  const double lo = dens.at_stop.x[0];
  const double hi = dens.at_stop.x[dens.at_stop.x.size() - 1];
  rec.kl_measured = kl_quadrature_1d(p_fn, interp, lo, hi, 1e-9).value;
}

}  // namespace

std::vector<SweepRecord> run_sweep_kl(const ExperimentConfig& cfg) {
  if (cfg.sweep.total_times.empty() || cfg.sweep.eps_scores.empty()) {
    throw std::invalid_argument("sweep: total_times and eps_scores must be nonempty");
  }
  std::vector<SweepRecord> records;
  for (const double T : cfg.sweep.total_times) {
    for (const double e : cfg.sweep.eps_scores) {
      SweepRecord rec;
      rec.config_hash = cfg.hash();
      rec.index = static_cast<int>(records.size());
      rec.total_time = T;
      rec.eps_score = e;
      rec.seed = cfg.seed;
      records.push_back(rec);
    }
  }

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= records.size()) return;
      const auto start = std::chrono::steady_clock::now();
      try {
        eval_sweep_point(cfg, records[i]);
        records[i].status = "ok";
      } catch (const std::exception& e) {
        records[i].status = std::string("failed: ") + e.what();
      }
      records[i].seconds = elapsed(start);
      if (records[i].status == "ok" &&
          records[i].seconds > cfg.sweep.timeout_seconds) {
        records[i].status = "timeout";
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < cfg.workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  // records are already index-ordered by construction; completion order is
  // irrelevant to the output
  return records;
}

std::string sweep_records_csv(const std::vector<SweepRecord>& records) {
  std::string out =
      "index,config_hash,T,steps,eps_score,dim,l_or_delta,kl_measured,"
      "kl_bound,seconds,seed,status\n";
  for (const auto& r : records) {
    out += std::to_string(r.index) + ',' + hash_hex(r.config_hash) + ',' +
           fmt(r.total_time) + ',' + std::to_string(r.steps) + ',' +
           fmt(r.eps_score) + ',' + std::to_string(r.dim) + ',' +
           fmt(r.lipschitz_or_delta) + ',' + fmt(r.kl_measured) + ',' +
           fmt(r.kl_bound) + ',' + fmt(r.seconds) + ',' +
           std::to_string(r.seed) + ',' + r.status + '\n';
  }
  return out;
}

std::vector<BoundRow> run_check_bounds(const ExperimentConfig& cfg) {
  std::vector<BoundRow> rows;
  const auto wide = GaussianMixture::single(vec1(0.0), 4.0);
  const auto mix = GaussianMixture::symmetric_pair_1d(1.0, 0.25);
  const std::size_t n = cfg.bounds.mc_samples;

  // initialization error, closed form over the reference grid
  {
    BoundRow row;
    row.name = "init-error";
    double worst = 0.0, at_bound = 1.0;
    for (const double cov : {0.0, 0.25, 4.0, 16.0}) {
      for (const double T : {1.0, 2.0, 4.0, 8.0}) {
        const double vT = cov * std::exp(-2.0 * T) + (1.0 - std::exp(-2.0 * T));
        const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
        const double kl = kl_gaussian(z, vT, z, 1.0);
        const double bound = (1.0 + cov) * std::exp(-T);
        if (kl / bound > worst / at_bound) {
          worst = kl;
          at_bound = bound;
        }
      }
    }
    row.lhs = worst;
    row.rhs = at_bound;
    row.satisfied = worst <= at_bound;
    row.note = "worst grid point";
    rows.push_back(row);
  }

  // per-step deviation between the exact and perturbed flows
  const auto exact_map = ConsistencyMap::closed_form_affine(wide);
  for (const double eps : cfg.bounds.eps_scores) {
    Rng rng = Rng::for_stream(cfg.seed, 0x20);
    BoundRow row;
    row.name = "gronwall-smooth";
    row.note = "eps=" + fmt(eps) + " h'=0.25 L=1";
    const auto hat =
        eps == 0.0
            ? ConsistencyMap::ode_oracle(ScoreField::exact(wide))
            : ConsistencyMap::ode_oracle(ScoreField::perturbed(
                  wide, Perturbation::constant_direction(vec1(1.0), eps)));
    const Eigen::MatrixXd xs = wide.marginal_at(1.0).sample(n, rng);
    const Eigen::ArrayXd sq = (exact_map.eval_batch(0.75, 1.0, xs) -
                               hat.eval_batch(0.75, 1.0, xs))
                                  .colwise()
                                  .squaredNorm()
                                  .transpose();
    row.lhs = sq.mean();
    row.lhs_se = std::sqrt((sq - row.lhs).square().sum() / (n - 1) / n);
    row.rhs = std::exp(2.0) * 0.0625 * eps * eps;
    row.satisfied = row.lhs <= row.rhs + 3.0 * row.lhs_se + 1e-12;
    rows.push_back(row);
  }

  const auto mix_exact = ConsistencyMap::ode_oracle(ScoreField::exact(mix));
  for (const double eps : cfg.bounds.eps_scores) {
    Rng rng = Rng::for_stream(cfg.seed, 0x21);
    BoundRow row;
    row.name = "gronwall-nonsmooth";
    const double delta = std::log(2.0), hp = 0.25;
    row.note = "eps=" + fmt(eps) + " h'=0.25 delta=log2";
    const auto hat =
        eps == 0.0
            ? ConsistencyMap::ode_oracle(ScoreField::exact(mix))
            : ConsistencyMap::ode_oracle(ScoreField::perturbed(
                  mix, Perturbation::constant_direction(vec1(1.0), eps)));
    const Eigen::MatrixXd xs = mix.marginal_at(delta + hp).sample(n, rng);
    const Eigen::ArrayXd sq = (mix_exact.eval_batch(delta, delta + hp, xs) -
                               hat.eval_batch(delta, delta + hp, xs))
                                  .colwise()
                                  .squaredNorm()
                                  .transpose();
    row.lhs = sq.mean();
    row.lhs_se = std::sqrt((sq - row.lhs).square().sum() / (n - 1) / n);
    row.rhs = std::exp(4.0) * hp * hp * eps * eps;
    row.satisfied = row.lhs <= row.rhs + 3.0 * row.lhs_se + 1e-12;
    rows.push_back(row);
  }

  // one-step solver error against the oracle flow
  {
    const auto field = ScoreField::exact(wide);
    for (const double h : cfg.bounds.steps) {
      Rng rng = Rng::for_stream(cfg.seed, 0x22);
      const auto est = solver_step_error(field, wide, 1.0, h, n, rng);
      BoundRow row;
      row.name = "solver-step";
      row.note = "h=" + fmt(h);
      row.lhs = est.mean_sq;
      row.lhs_se = est.std_error;
      row.rhs = est.bound;
      row.satisfied = est.mean_sq <= est.bound;
      rows.push_back(row);
    }
  }

  // trained-transport gap rows, empirical reference then true reference
  {
    const double horizon = 3.0;
    const auto field = ScoreField::exact(wide);
    Approximator a(Family::AffinePerPair, TrainGrid::uniform(0.05, horizon, 33), 1);
    TrainConfig tc;
    tc.learning_rate = 0.1;
    tc.iterations = 700;
    tc.batch = 32;
    tc.method = StepMethod::ExponentialIntegrator;
    tc.ema_rate = 0.0;
    Rng trng = Rng::for_stream(cfg.seed, 0x23);
    train(a, field, wide, tc, trng);

    Rng mrng = Rng::for_stream(cfg.seed, 0x24);
    const auto cd = measure_cd_error(a, field, wide, 512, mrng);
    const double t_first = a.grid().knots.front();
    const double h = a.grid().knots[1] - t_first;
    Rng prng = Rng::for_stream(cfg.seed, 0x25);
    const auto lip = verify_lipschitz(a, wide, t_first, horizon, 1.0, 200, prng);

    Rng grng = Rng::for_stream(cfg.seed, 0x26);
    const auto gap = measure_map_gap(a, ConsistencyMap::ode_oracle(field), wide,
                                     t_first, horizon, n, grng);
    BoundRow emp;
    emp.name = "distill-gap-empirical";
    emp.lhs = gap.mean_norm;
    emp.lhs_se = gap.se_norm;
    emp.rhs = distill_gap_bound_smooth(lip.max_ratio, 1.0, 1, h, cd.eps_cd,
                                       horizon, t_first);
    emp.satisfied = emp.lhs <= emp.rhs + 3.0 * emp.lhs_se + 1e-12;
    emp.note = "eps_cd=" + fmt(cd.eps_cd) + " L_f=" + fmt(lip.max_ratio);
    rows.push_back(emp);

    // retrain against a perturbed score and compare with the true transport
    const double eps_score =
        cfg.bounds.eps_scores.empty() ? 0.05 : cfg.bounds.eps_scores.front();
    const auto hat_field =
        eps_score == 0.0
            ? field
            : ScoreField::perturbed(
                  wide, Perturbation::constant_direction(vec1(1.0), eps_score));
    Approximator b(Family::AffinePerPair, TrainGrid::uniform(0.05, horizon, 33), 1);
    Rng trng2 = Rng::for_stream(cfg.seed, 0x27);
    train(b, hat_field, wide, tc, trng2);
    Rng mrng2 = Rng::for_stream(cfg.seed, 0x28);
    const auto cd2 = measure_cd_error(b, hat_field, wide, 512, mrng2);
    Rng grng2 = Rng::for_stream(cfg.seed, 0x29);
    const auto gap2 = measure_map_gap(b, exact_map, wide, t_first, horizon, n,
                                      grng2);
    BoundRow tru;
    tru.name = "distill-gap-true";
    tru.lhs = gap2.mean_norm;
    tru.lhs_se = gap2.se_norm;
    tru.rhs = distill_gap_bound_nonsmooth(32, 1.0, 1, h, cd2.eps_cd, eps_score,
                                          horizon, t_first);
    tru.satisfied = tru.lhs <= tru.rhs + 3.0 * tru.lhs_se + 1e-12;
    tru.note = "eps_cd=" + fmt(cd2.eps_cd) + " eps_score=" + fmt(eps_score);
    rows.push_back(tru);
  }

  return rows;
}

std::string bound_rows_csv(const std::vector<BoundRow>& rows) {
  std::string out = "name,lhs,lhs_se,rhs,satisfied,note\n";
  for (const auto& r : rows) {
    out += r.name + ',' + fmt(r.lhs) + ',' + fmt(r.lhs_se) + ',' + fmt(r.rhs) +
           ',' + (r.satisfied ? "1" : "0") + ',' + r.note + '\n';
  }
  return out;
}

SampleOutput run_sample(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const GaussianMixture& target = cfg.require_target();
  const Schedule schedule =
      cfg.schedule.build(target.dim(), target.second_moment());
  const ConsistencyMap map = cfg.map.build(target, cfg.score);

  SamplerRun run;
  run.schedule = schedule;
  run.map = &map;
  run.init = cfg.sample.init;
  run.target = &target;
  run.batch = cfg.sample.batch;
  run.seed = cfg.seed;
  run.trace = cfg.sample.trace;
  run.workers = cfg.workers;
  if (run.trace) {
    const double cells = static_cast<double>(run.batch) * (schedule.steps() + 1) *
                         target.dim();
    if (cells > cfg.sample.trace_cap) {
      throw std::invalid_argument("sample: trace exceeds the memory cap");
    }
  }
  const SamplerResult result = run_multistep(run);

  const std::string tag = hash_hex(cfg.hash());
  write_file(cfg.out_dir + "/schedule_" + tag + ".csv", schedule.to_csv());
  SampleOutput out;
  out.csv_path = cfg.out_dir + "/sample_" + tag + ".csv";
  std::string csv;
  for (int i = 0; i < target.dim(); ++i) {
    csv += (i ? ",x" : "x") + std::to_string(i);
  }
  csv += '\n';
  for (Eigen::Index j = 0; j < result.output.cols(); ++j) {
    for (Eigen::Index i = 0; i < result.output.rows(); ++i) {
      if (i) csv += ',';
      csv += fmt(result.output(i, j));
    }
    csv += '\n';
  }
  write_file(out.csv_path, csv);

  if (run.trace) {
    std::string trace_csv = "stage,t";
    for (int i = 0; i < target.dim(); ++i) trace_csv += ",x" + std::to_string(i);
    trace_csv += '\n';
    for (std::size_t stage = 0; stage < result.trace.size(); ++stage) {
      const double t = stage + 1 < result.trace.size()
                           ? schedule.t[schedule.steps() - stage]
                           : result.stop_time;
      for (Eigen::Index j = 0; j < result.trace[stage].cols(); ++j) {
        trace_csv += std::to_string(stage) + ',' + fmt(t);
        for (Eigen::Index i = 0; i < result.trace[stage].rows(); ++i) {
          trace_csv += ',' + fmt(result.trace[stage](i, j));
        }
        trace_csv += '\n';
      }
    }
    write_file(cfg.out_dir + "/trace_" + tag + ".csv", trace_csv);
  }

  out.seconds = elapsed(start);
  out.sidecar_path = cfg.out_dir + "/sample_" + tag + ".json";
  json side;
  side["config"] = json::parse(cfg.canonical_json());
  side["wall_seconds"] = out.seconds;
  side["stop_time"] = result.stop_time;
  side["output"] = out.csv_path;
  write_file(out.sidecar_path, side.dump(2) + "\n");
  return out;
}

DistillOutput run_distill(const ExperimentConfig& cfg) {
  const GaussianMixture& target = cfg.require_target();
  const Schedule schedule =
      cfg.schedule.build(target.dim(), target.second_moment());
  const ScoreField field = cfg.score.build(target);

  // union of a uniform fine grid with the schedule's own knots, so the
  // sampler can later evaluate the trained map at its jump times
  TrainGrid grid =
      TrainGrid::uniform(cfg.distill.t_min, schedule.total_time(),
                         cfg.distill.knots);
  for (const double knot : schedule.t) {
    if (knot > 0.0 && grid.index_of(knot, 1e-12) < 0) grid.knots.push_back(knot);
  }
  for (const double knot : schedule.t_prime) {
    if (knot > 0.0 && grid.index_of(knot, 1e-12) < 0) grid.knots.push_back(knot);
  }
  std::sort(grid.knots.begin(), grid.knots.end());
  grid.knots.erase(std::unique(grid.knots.begin(), grid.knots.end()),
                   grid.knots.end());
  grid.lambda.assign(grid.knots.size(), 1.0);
  grid.validate();
  Approximator approx(cfg.distill.family, grid, target.dim());
  TrainConfig tc;
  tc.learning_rate = cfg.distill.learning_rate;
  tc.iterations = cfg.distill.iterations;
  tc.batch = cfg.distill.batch;
  tc.method = cfg.distill.phi;
  tc.ema_rate = cfg.distill.ema_rate;
  Rng rng = Rng::for_stream(cfg.seed, 0x30);
  const auto history = train(approx, field, target, tc, rng);

  const std::string tag = hash_hex(cfg.hash());
  DistillOutput out;
  out.approximator_path = cfg.out_dir + "/approximator_" + tag + ".json";
  fs::create_directories(cfg.out_dir);
  approx.save(out.approximator_path);

  std::string csv = "iteration,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    csv += std::to_string(i) + ',' + fmt(history[i]) + '\n';
  }
  out.loss_csv_path = cfg.out_dir + "/loss_" + tag + ".csv";
  write_file(out.loss_csv_path, csv);
  out.final_loss = history.empty() ? 0.0 : history.back();
  return out;
}

namespace {

double record_field(const SweepRecord& r, const std::string& name) {
  if (name == "T") return r.total_time;
  if (name == "steps") return r.steps;
  if (name == "eps_score") return r.eps_score;
  if (name == "kl_measured") return r.kl_measured;
  if (name == "kl_bound") return r.kl_bound;
  if (name == "seconds") return r.seconds;
  throw std::invalid_argument("plot: unknown column '" + name + "'");
}

std::string render_svg(const std::vector<double>& xs,
                       const std::vector<double>& ys,
                       const std::vector<double>& bounds,
                       const PlotSpec& spec) {
  const int width = 640, height = 440, ml = 70, mr = 20, mt = 20, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const double v : xs) {
    xmin = std::min(xmin, v);
    xmax = std::max(xmax, v);
  }
  bool log_y = true;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] <= 0.0 || bounds[i] <= 0.0) log_y = false;
  }
  const auto yv = [&](double v) { return log_y ? std::log10(v) : v; };
  for (std::size_t i = 0; i < ys.size(); ++i) {
    ymin = std::min({ymin, yv(ys[i]), yv(bounds[i])});
    ymax = std::max({ymax, yv(ys[i]), yv(bounds[i])});
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;

  const auto px = [&](double v) {
    return ml + (v - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  const auto py = [&](double v) {
    return height - mb - (yv(v) - ymin) / (ymax - ymin) * (height - mt - mb);
  };
  const auto polyline = [&](const std::vector<double>& vals,
                            const std::string& style) {
    std::string p = "  <polyline fill=\"none\" " + style + " points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      p += fmt(px(xs[i])) + ',' + fmt(py(vals[i])) + ' ';
    }
    return p + "\"/>\n";
  };

  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
      std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "  <line x1=\"" + std::to_string(ml) + "\" y1=\"" +
         std::to_string(height - mb) + "\" x2=\"" + std::to_string(width - mr) +
         "\" y2=\"" + std::to_string(height - mb) + "\" stroke=\"black\"/>\n";
  svg += "  <line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) +
         "\" x2=\"" + std::to_string(ml) + "\" y2=\"" +
         std::to_string(height - mb) + "\" stroke=\"black\"/>\n";
  svg += polyline(ys, "stroke=\"#1f77b4\" stroke-width=\"2\"");
  svg += polyline(bounds,
                  "stroke=\"#d62728\" stroke-width=\"2\" stroke-dasharray=\"6 4\"");
  svg += "  <text x=\"" + std::to_string(width / 2) + "\" y=\"" +
         std::to_string(height - 12) + "\" text-anchor=\"middle\">" + spec.x +
         "</text>\n";
  svg += "  <text x=\"16\" y=\"" + std::to_string(height / 2) +
         "\" transform=\"rotate(-90 16 " + std::to_string(height / 2) + ")\" " +
         "text-anchor=\"middle\">" + spec.y + (log_y ? " (log10)" : "") +
         "</text>\n";
  svg += "  <text x=\"" + std::to_string(ml + 8) + "\" y=\"" +
         std::to_string(mt + 16) + "\" fill=\"#1f77b4\">" + spec.y + "</text>\n";
  svg += "  <text x=\"" + std::to_string(ml + 8) + "\" y=\"" +
         std::to_string(mt + 34) + "\" fill=\"#d62728\">" + spec.bound +
         "</text>\n";
  svg += "  <text x=\"" + std::to_string(ml - 6) + "\" y=\"" +
         std::to_string(height - mb + 16) + "\" text-anchor=\"end\">" +
         fmt(xmin) + "</text>\n";
  svg += "  <text x=\"" + std::to_string(width - mr) + "\" y=\"" +
         std::to_string(height - mb + 16) + "\" text-anchor=\"end\">" +
         fmt(xmax) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace

PlotOutput emit_plot_data(const std::vector<SweepRecord>& records,
                          const ExperimentConfig& cfg) {
  std::vector<double> xs, ys, bounds;
  for (const auto& r : records) {
    if (r.status != "ok") continue;
    xs.push_back(record_field(r, cfg.plot.x));
    ys.push_back(record_field(r, cfg.plot.y));
    bounds.push_back(record_field(r, cfg.plot.bound));
  }
  if (xs.empty()) throw std::invalid_argument("plot: no usable records");

  const std::string tag = hash_hex(cfg.hash());
  PlotOutput out;
  out.csv_path = cfg.out_dir + "/" + cfg.plot.name + "_" + tag + ".csv";
  std::string csv = cfg.plot.x + ',' + cfg.plot.y + ',' + cfg.plot.bound + '\n';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    csv += fmt(xs[i]) + ',' + fmt(ys[i]) + ',' + fmt(bounds[i]) + '\n';
  }
  write_file(out.csv_path, csv);

  if (cfg.plot.render_svg) {
    out.svg_path = cfg.out_dir + "/" + cfg.plot.name + "_" + tag + ".svg";
    write_file(out.svg_path, render_svg(xs, ys, bounds, cfg.plot));
  }
  return out;
}

PlotOutput emit_plot_from_csv(const ExperimentConfig& cfg) {
  std::ifstream in(cfg.plot.input);
  if (!in) throw std::invalid_argument("plot: cannot read " + cfg.plot.input);
  std::string header;
  std::getline(in, header);
  std::vector<std::string> cols;
  std::stringstream hs(header);
  std::string cell;
  while (std::getline(hs, cell, ',')) cols.push_back(cell);
  const auto col_of = [&](const std::string& name) {
    const auto it = std::find(cols.begin(), cols.end(), name);
    if (it == cols.end()) {
      throw std::invalid_argument("plot: column '" + name + "' not in " +
                                  cfg.plot.input);
    }
    return static_cast<std::size_t>(it - cols.begin());
  };
  const std::size_t xi = col_of(cfg.plot.x);
  const std::size_t yi = col_of(cfg.plot.y);
  const std::size_t bi = col_of(cfg.plot.bound);
  const std::size_t si = col_of("status");

  std::vector<SweepRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < cols.size()) continue;
    SweepRecord r;
    r.status = cells[si];
    // route the three plotted columns through the record fields the plot
    // spec names; the remaining fields are irrelevant here
    const auto set_field = [&](const std::string& name, double v) {
      if (name == "T") r.total_time = v;
      if (name == "steps") r.steps = static_cast<int>(v);
      if (name == "eps_score") r.eps_score = v;
      if (name == "kl_measured") r.kl_measured = v;
      if (name == "kl_bound") r.kl_bound = v;
      if (name == "seconds") r.seconds = v;
    };
    set_field(cfg.plot.x, std::stod(cells[xi]));
    set_field(cfg.plot.y, std::stod(cells[yi]));
    set_field(cfg.plot.bound, std::stod(cells[bi]));
    records.push_back(r);
  }
  return emit_plot_data(records, cfg);
}

}  // namespace cmlab

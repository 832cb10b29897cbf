#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cmlab/harness.hpp"

namespace {

using cmlab::ExperimentConfig;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "experiment config (json)");
  cmd->add_option("--out", flags.out_dir, "output directory override");
  cmd->add_option("--seed", flags.seed, "seed override");
  cmd->add_option("--workers", flags.workers, "worker pool size override");
}

ExperimentConfig load(const CommonFlags& flags, ExperimentConfig::Kind kind) {
  ExperimentConfig cfg;
  if (!flags.config_path.empty()) {
    cfg = ExperimentConfig::from_file(flags.config_path);
  }
  cfg.kind = kind;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.workers) cfg.workers = *flags.workers;
  return cfg;
}

void write(const std::string& path, const std::string& content) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot write " + path);
  std::fwrite(content.data(), 1, content.size(), f);
  std::fclose(f);
}

std::string hash_tag(const ExperimentConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for multi-step consistency generation"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* verify = app.add_subcommand("verify", "run the full invariant suite");
  add_common(verify, flags);

  auto* sample = app.add_subcommand("sample", "draw a batch from the sampler");
  add_common(sample, flags);
  std::optional<std::string> target_json;
  std::optional<std::string> regime;
  std::optional<double> lipschitz, delta, eps_score, total_time, acc_eps;
  std::optional<std::size_t> batch;
  std::optional<bool> trace;
  std::optional<std::string> init;
  sample->add_option("--target", target_json,
                     "inline target json: {\"components\": [...]}");
  sample->add_option("--regime", regime, "smooth | nonsmooth");
  sample->add_option("--lipschitz", lipschitz, "smooth-regime L");
  sample->add_option("--delta", delta, "nonsmooth early-stop time");
  sample->add_option("--eps-score", eps_score, "score perturbation magnitude");
  sample->add_option("--total-time", total_time, "horizon T");
  sample->add_option("--eps", acc_eps, "accuracy target (alternative to T)");
  sample->add_option("--batch", batch, "sample count");
  sample->add_option("--trace", trace, "store per-step batches");
  sample->add_option("--init", init, "standard_normal | exact_terminal");

  auto* sweep = app.add_subcommand("sweep-kl", "measured kl vs bound over a grid");
  add_common(sweep, flags);

  auto* distill = app.add_subcommand("distill", "train a transport approximator");
  add_common(distill, flags);

  auto* bounds = app.add_subcommand("check-bounds",
                                    "per-guarantee lhs/rhs comparison table");
  add_common(bounds, flags);

  auto* plot = app.add_subcommand("plot", "figure csv and svg from sweep records");
  add_common(plot, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) {
      const auto cfg = load(flags, ExperimentConfig::Kind::Verify);
      const auto report = cmlab::run_verify(cfg);
      for (const auto& c : report.checks) {
        std::printf("[%s] %s/%s measured %.6g threshold %.6g %s\n",
                    c.pass ? "PASS" : "FAIL", c.module.c_str(), c.name.c_str(),
                    c.measured, c.threshold, c.note.c_str());
      }
      const std::string path = cfg.out_dir + "/verify_" + hash_tag(cfg) + ".json";
      std::filesystem::create_directories(cfg.out_dir);
      write(path, report.to_json() + "\n");
      std::printf("%s (%zu checks) -> %s\n",
                  report.all_pass ? "ALL PASS" : "FAILURES PRESENT",
                  report.checks.size(), path.c_str());
      return report.all_pass ? 0 : 1;
    }

    if (sample->parsed()) {
      auto cfg = load(flags, ExperimentConfig::Kind::Sample);
      if (target_json) {
        const auto wrapped = "{\"experiment\":\"sample\",\"target\":" +
                             *target_json + "}";
        cfg.target = ExperimentConfig::from_json_text(wrapped).target;
      }
      if (regime) {
        if (*regime == "smooth") {
          cfg.schedule.regime = cmlab::Regime::Smooth;
        } else if (*regime == "nonsmooth") {
          cfg.schedule.regime = cmlab::Regime::NonSmooth;
        } else {
          throw std::invalid_argument("config: bad --regime");
        }
      }
      if (lipschitz) cfg.schedule.lipschitz = *lipschitz;
      if (delta) cfg.schedule.delta = *delta;
      if (total_time) cfg.schedule.total_time = *total_time;
      if (acc_eps) cfg.schedule.eps = *acc_eps;
      if (eps_score) {
        cfg.score.eps = *eps_score;
        cfg.score.kind = *eps_score > 0.0 ? cmlab::ScoreSpec::Kind::Perturbed
                                          : cmlab::ScoreSpec::Kind::Exact;
      }
      if (batch) cfg.sample.batch = *batch;
      if (trace) cfg.sample.trace = *trace;
      if (init) {
        if (*init == "standard_normal") {
          cfg.sample.init = cmlab::InitKind::StandardNormal;
        } else if (*init == "exact_terminal") {
          cfg.sample.init = cmlab::InitKind::ExactTerminal;
        } else {
          throw std::invalid_argument("config: bad --init");
        }
      }
      const auto out = cmlab::run_sample(cfg);
      std::printf("wrote %s (%.2fs), sidecar %s\n", out.csv_path.c_str(),
                  out.seconds, out.sidecar_path.c_str());
      return 0;
    }

    if (sweep->parsed()) {
      const auto cfg = load(flags, ExperimentConfig::Kind::SweepKl);
      const auto records = cmlab::run_sweep_kl(cfg);
      const std::string path = cfg.out_dir + "/sweep_" + hash_tag(cfg) + ".csv";
      std::filesystem::create_directories(cfg.out_dir);
      write(path, cmlab::sweep_records_csv(records));
      int failed = 0;
      for (const auto& r : records) {
        if (r.status != "ok") ++failed;
      }
      std::printf("wrote %s (%zu points, %d failed)\n", path.c_str(),
                  records.size(), failed);
      return 0;
    }

    if (distill->parsed()) {
      const auto cfg = load(flags, ExperimentConfig::Kind::Distill);
      const auto out = cmlab::run_distill(cfg);
      std::printf("wrote %s and %s (final loss %.6g)\n",
                  out.approximator_path.c_str(), out.loss_csv_path.c_str(),
                  out.final_loss);
      return 0;
    }

    if (bounds->parsed()) {
      const auto cfg = load(flags, ExperimentConfig::Kind::CheckBounds);
      const auto rows = cmlab::run_check_bounds(cfg);
      const std::string path = cfg.out_dir + "/bounds_" + hash_tag(cfg) + ".csv";
      std::filesystem::create_directories(cfg.out_dir);
      write(path, cmlab::bound_rows_csv(rows));
      bool all = true;
      for (const auto& r : rows) {
        std::printf("[%s] %-22s lhs %.6g (se %.2g) rhs %.6g %s\n",
                    r.satisfied ? "PASS" : "FAIL", r.name.c_str(), r.lhs,
                    r.lhs_se, r.rhs, r.note.c_str());
        all = all && r.satisfied;
      }
      std::printf("wrote %s\n", path.c_str());
      return all ? 0 : 1;
    }

    if (plot->parsed()) {
      const auto cfg = load(flags, ExperimentConfig::Kind::Plot);
      const auto out = cmlab::emit_plot_from_csv(cfg);
      std::printf("wrote %s%s%s\n", out.csv_path.c_str(),
                  out.svg_path.empty() ? "" : " and ", out.svg_path.c_str());
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

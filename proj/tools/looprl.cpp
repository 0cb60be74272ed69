// looprl: pretrain, fine-tune and probe the toy diffusion policy.
//
//   looprl pretrain        --out-dir out
//   looprl finetune        --estimator loop --k 4 --seed 0
//   looprl variance-study  --probe-resamples 1000
//   looprl gradcheck
//   looprl compare         --seeds 5 --no-timing
//
// Exit status: 0 success, 1 check failure, 2 config error, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "looprl/checkpoint.hpp"
#include "looprl/config.hpp"
#include "looprl/dataset.hpp"
#include "looprl/error.hpp"
#include "looprl/gradcheck.hpp"
#include "looprl/rewards.hpp"
#include "looprl/trainer.hpp"

namespace fs = std::filesystem;
using namespace looprl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

DiffusionPolicy load_or_pretrain(const CliConfig& cli) {
  const TrainConfig& cfg = cli.train;
  if (cli.base_checkpoint) {
    Checkpoint ckpt = load_checkpoint(*cli.base_checkpoint);
    const DiffusionPolicy shape(cfg.policy_config());
    if (!(ckpt.spec == shape.spec())) {
      throw ConfigError("checkpoint " + cli.base_checkpoint->string() + " has shape " +
                        ckpt.spec.shape_string() + ", config expects " +
                        shape.spec().shape_string());
    }
    return DiffusionPolicy(cfg.policy_config(), std::move(ckpt.values));
  }
  std::fprintf(stderr, "pretraining base model (%zu steps)\n", cfg.pretrain_steps);
  return pretrain_base(cfg).policy;
}

int cmd_pretrain(const CliConfig& cli) {
  prepare_out_dir(cli.out_dir);
  const PretrainResult result = pretrain_base(cli.train);

  write_dataset(cli.out_dir / "dataset.txt", result.dataset);
  save_checkpoint(cli.out_dir / "base_checkpoint.txt", result.policy.spec(),
                  result.policy.params().values());
  auto losses = open_output(cli.out_dir / "pretrain_loss.csv");
  losses << "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) losses << i << ',' << result.losses[i] << '\n';

  const RewardFn reward = reward_registry(cli.train.reward_name);
  std::printf("final loss %.5f, base validation reward %.4f\n",
              result.losses.empty() ? 0.0 : result.losses.back(),
              validation_reward(result.policy, cli.train, reward));
  return kExitOk;
}

int cmd_finetune(const CliConfig& cli) {
  prepare_out_dir(cli.out_dir);
  const DiffusionPolicy base = load_or_pretrain(cli);
  RunOptions options{default_run_id(cli.train), cli.out_dir, cli.timing};
  const ExperimentResult r = run_experiment(cli.train, options, &base);
  std::printf("%s: base validation %.4f, final validation %.4f\n", options.run_id.c_str(),
              r.base_validation, r.final_validation);
  return kExitOk;
}

int cmd_variance_study(const CliConfig& cli) {
  prepare_out_dir(cli.out_dir);
  const DiffusionPolicy base = load_or_pretrain(cli);
  const RewardFn reward = reward_registry(cli.train.reward_name);
  const VarianceReport report =
      variance_probe(base, cli.train, reward, cli.train.probe_resamples, cli.train.probe_ks);
  auto out = open_output(cli.out_dir / "variance.csv");
  write_variance_csv(out, report);
  for (const auto& row : report.rows) {
    std::printf("K=%zu  trace=%.6g\n", row.k, row.cov_trace);
  }
  std::printf("log-log slope %.3f (1/K scaling: -1, 1/K^2 scaling: -2)\n", report.slope_loglog);
  return kExitOk;
}

int cmd_gradcheck(const CliConfig& cli) {
  GradcheckOptions options;
  options.seed = cli.train.seed;
  options.inject_sign_flip = cli.inject_sign_flip;
  const GradcheckReport report = run_gradcheck(options);
  std::fputs(format_report(report).c_str(), stdout);
  return report.passed() ? kExitOk : kExitCheckFailed;
}

int cmd_compare(const CliConfig& cli) {
  prepare_out_dir(cli.out_dir);
  const DiffusionPolicy base = load_or_pretrain(cli);
  const CompareResult result = run_compare(cli.train, base);

  auto csv = open_output(cli.out_dir / "compare.csv");
  write_metrics_header(csv);
  for (const auto& row : result.rows) write_metrics_row(csv, row, cli.timing);

  auto summary = open_output(cli.out_dir / "compare_validation.csv");
  summary << "run_id,estimator,k,seed,base_validation,final_validation\n";
  for (const auto& run : result.runs) {
    summary << run.run_id << ',' << to_string(run.estimator) << ',' << run.k << ',' << run.seed
            << ',' << run.base_validation << ',' << run.final_validation << '\n';
  }
  for (const auto& entry : compare_entries(cli.train)) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& run : result.runs) {
      if (run.estimator == entry.estimator && run.k == entry.k) {
        sum += run.final_validation;
        ++n;
      }
    }
    std::printf("%-13s k=%zu  mean final validation %.4f over %zu seeds\n",
                std::string(to_string(entry.estimator)).c_str(), entry.k, sum / n, n);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const CliConfig cli = parse_config(argc, argv);
    if (!cli.command) {
      std::fputs("missing command: pretrain, finetune, variance-study, gradcheck or compare\n"
                 "run with --help for the option list\n",
                 stderr);
      return kExitConfig;
    }
    switch (*cli.command) {
      case Command::pretrain: return cmd_pretrain(cli);
      case Command::finetune: return cmd_finetune(cli);
      case Command::variance_study: return cmd_variance_study(cli);
      case Command::gradcheck: return cmd_gradcheck(cli);
      case Command::compare: return cmd_compare(cli);
    }
  } catch (const HelpRequested& help) {
    std::fputs(help.text.c_str(), stdout);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const LookupError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return kExitOk;
}

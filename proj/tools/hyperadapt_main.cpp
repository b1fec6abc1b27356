#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hyperadapt/experiment.hpp"

namespace fs = std::filesystem;
using namespace hyperadapt;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::size_t threads = 0;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::uint64_t sample_seed = 0;
};

ExperimentConfig read_config(const Options& opt) {
  std::ifstream in(opt.config);
  if (!in) throw ConfigError(opt.config, "cannot read config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_with_overrides(ss.str(), opt.config, opt.overrides);
}

// Flag, then environment, then config file.
fs::path output_dir(const Options& opt, const ExperimentConfig& config) {
  if (!opt.out.empty()) return opt.out;
  if (const char* env = std::getenv("HYPERADAPT_OUT"); env != nullptr && *env != '\0') return env;
  return config.output_dir;
}

std::size_t thread_count(const Options& opt, const ExperimentConfig& config) {
  if (opt.threads > 0) return opt.threads;
  if (const char* env = std::getenv("HYPERADAPT_THREADS"); env != nullptr && *env != '\0') {
    try {
      const long n = std::stol(env);
      if (n > 0) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
    throw ConfigError("HYPERADAPT_THREADS", std::string("expects a positive integer, got '") + env + "'");
  }
  return config.threads;
}

int cmd_run(const Options& opt) {
  const ExperimentConfig config = read_config(opt);
  const fs::path out = output_dir(opt, config);
  const std::size_t threads = thread_count(opt, config);
  const auto points = validate_experiment(config, opt.config);
  std::cout << "running " << points.size() << " point(s) into " << out.string() << "\n";
  const ExperimentReport report = run_experiment(config, out, threads, &std::cout);
  for (const auto& note : report.notes) std::cout << note << "\n";
  std::cout << "summary: " << (out / "summary.csv").string() << "\n";
  if (report.any_aborted()) {
    for (const auto& r : report.results) {
      if (r.aborted) std::cerr << "numeric abort in " << r.point.name << ": " << r.abort_reason << "\n";
    }
    return kExitNumericAbort;
  }
  return kExitOk;
}

int cmd_audit(const Options& opt) {
  const ExperimentConfig config = read_config(opt);
  validate_experiment(config, opt.config);
  const auto lines = audit_experiment(config);
  std::cout << audit_text(lines);
  const fs::path out = output_dir(opt, config);
  fs::create_directories(out);
  std::ofstream csv(out / "audit.csv", std::ios::binary | std::ios::trunc);
  csv << audit_csv(lines);
  std::cout << "audit: " << (out / "audit.csv").string() << "\n";
  return kExitOk;
}

int cmd_inspect(const Options& opt) {
  const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
  std::cout << format_inspect(inspect_checkpoint(ckpt, opt.sample_seed));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperadapt: hypernetwork-generated adapters on a toy multimodal model"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory (overrides HYPERADAPT_OUT and the config)");
    sub->add_option("--override", opt.overrides, "table.key=value, repeatable")->take_all();
  };
  CLI::App* run = app.add_subcommand("run", "train every sweep point and write metrics, checkpoints, summary.csv");
  add_common(run);
  run->add_option("--threads", opt.threads, "sweep points run in parallel (overrides HYPERADAPT_THREADS)")
      ->check(CLI::PositiveNumber);
  CLI::App* audit = app.add_subcommand("audit", "parameter counts per sweep point");
  add_common(audit);
  CLI::App* inspect = app.add_subcommand("inspect", "dump generated adapter statistics of a checkpoint");
  inspect->add_option("checkpoint,--checkpoint", opt.checkpoint, "checkpoint file")->required();
  inspect->add_option("--sample-seed", opt.sample_seed, "index of the synthetic sample to condition on");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (*run) return cmd_run(opt);
    if (*audit) return cmd_audit(opt);
    return cmd_inspect(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumericAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crowdcal/error.hpp"
#include "crowdcal/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::size_t> jobs;
  std::string corpus;
  std::string judgments;
  std::string woc;
  bool print_config = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowd label calibration experiments"};
  app.set_version_flag("--version", std::string(CROWDCAL_VERSION));
  app.require_subcommand(1);

  Options opt;
  std::vector<CLI::App*> subs;
  for (const char* name : crowdcal::kSubcommands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "master seed");
    sub->add_option("--out", opt.out, "run directory (must not hold a manifest)");
    sub->add_option("--set", opt.overrides, "override a config key, e.g. aggregation.k=5");
    sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--print-config", opt.print_config, "print the resolved config and exit");
    const std::string n = name;
    if (n == "aggregate" || n == "recalibrate" || n == "evaluate") {
      sub->add_option("--corpus", opt.corpus, "corpus CSV for external inputs")
          ->check(CLI::ExistingFile);
    }
    if (n == "aggregate" || n == "recalibrate") {
      sub->add_option("--judgments", opt.judgments, "judgment CSV to process")
          ->check(CLI::ExistingFile);
    }
    if (n == "evaluate") {
      sub->add_option("--woc", opt.woc, "WoC dataset CSV to score")->check(CLI::ExistingFile);
    }
    subs.push_back(sub);
  }
  CLI11_PARSE(app, argc, argv);

  std::string subcommand;
  for (CLI::App* sub : subs) {
    if (sub->parsed()) subcommand = sub->get_name();
  }

  try {
    std::vector<std::string> overrides = opt.overrides;
    if (opt.seed) overrides.push_back("seed=" + std::to_string(*opt.seed));
    if (opt.jobs) overrides.push_back("jobs=" + std::to_string(*opt.jobs));
    const crowdcal::ExperimentConfig cfg = crowdcal::load_config(opt.config, overrides);
    if (opt.print_config) {
      std::cout << cfg.to_json().dump(2) << "\n";
      return 0;
    }
    if (opt.out.empty()) {
      std::cerr << "--out is required\n";
      return 2;
    }
    crowdcal::CommandInputs inputs;
    if (!opt.corpus.empty()) inputs.corpus = opt.corpus;
    if (!opt.judgments.empty()) inputs.judgments = opt.judgments;
    if (!opt.woc.empty()) inputs.woc = opt.woc;

    const crowdcal::RunManifest m = crowdcal::run_command(subcommand, cfg, opt.out, inputs);
    std::cout << subcommand << ": " << m.artifacts.size() << " artifacts in " << opt.out << " ("
              << m.elapsed_seconds << " s)\n";
    if (std::filesystem::exists(std::filesystem::path(opt.out) / "report.txt")) {
      std::cout << "report: " << (std::filesystem::path(opt.out) / "report.txt").string() << "\n";
    }
    return 0;
  } catch (const crowdcal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

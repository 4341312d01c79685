#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vidreplay/experiment.hpp"
#include "vidreplay/selfcheck.hpp"

using namespace vidreplay;

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> method, variant, scenario, out, profile, data;
  std::optional<std::size_t> seeds;
  std::optional<std::uint64_t> seed;
  bool vid = false, fid = false;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--method", f.method, "ts, ft, gr-cg, gr-ig or ub");
  app->add_option("--variant", f.variant, "standard, mh, se or cm");
  app->add_option("--scenario", f.scenario, "fixed, incremental or partial");
  auto* vid = app->add_flag("--vid", f.vid, "mask sensors per task (keep 0.6)");
  auto* fid = app->add_flag("--fid", f.fid, "every task sees all sensors");
  vid->excludes(fid);
  app->add_option("--seeds", f.seeds, "number of seeds");
  app->add_option("--seed", f.seed, "first seed (default: VIDREPLAY_SEED, then 1)");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--profile", f.profile, "desk or full");
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c = f.config.empty() ? parse_config(nlohmann::json::object()) : load_config(f.config);
  auto wrap = [](const char* path, auto fn) {
    try {
      fn();
    } catch (const InvalidInput& e) {
      throw ConfigError(path, e.what());
    }
  };
  if (f.method) wrap("--method", [&] { c.method.method = method_from_string(*f.method); });
  if (f.variant) wrap("--variant", [&] { c.method.variant = conditioning_from_string(*f.variant); });
  if (f.scenario) wrap("--scenario", [&] { c.stream.scenario = class_scenario_from_string(*f.scenario); });
  if (f.vid) c.stream.keep = 0.6;
  if (f.fid) c.stream.keep = 1.0;
  if (f.seeds) {
    c.seeds.clear();
    c.seed_count = *f.seeds;
  }
  if (f.seed) {
    c.seeds.clear();
    c.seed = *f.seed;
  }
  if (f.out) c.out = *f.out;
  if (f.data) c.data = *f.data;
  if (f.profile) {
    wrap("--profile", [&] {
      c.profile = *f.profile;
      c.method.profile = ModelProfile::named(c.profile, c.stream.regression ? TaskMode::kRegression
                                                                            : TaskMode::kClassification);
    });
  }
  finalize(c);
  return c;
}

int cmd_synth(const Flags& f) {
  ExperimentConfig c = resolve(f);
  const std::uint64_t seed = c.seed_list().front();
  StreamConfig s = c.stream;
  s.seed = seed;
  export_stream(c.out, synth_stream(s), SensorCatalog::numbered(s.d), s);
  std::cout << "wrote " << s.tasks << " tasks (seed " << seed << ") to " << c.out << "\n";
  return 0;
}

int cmd_run(const Flags& f) {
  ExperimentConfig c = resolve(f);
  ExperimentResult r = run_experiment(c, std::cerr);
  std::cout << detail::read_file(std::filesystem::path(c.out) / "summary.txt");
  return r.all_completed() ? 0 : 1;
}

int cmd_ablate(const Flags& f) {
  ExperimentConfig c = resolve(f);
  AblationResult r = ablate_experiment(c, std::cerr);
  std::cout << render_ablation(r.records);
  for (const auto& s : r.seeds)
    if (!s.completed) return 1;
  return 0;
}

int cmd_check(std::size_t seeds, std::size_t trials) {
  std::vector<CheckResult> all = {check_solver_gradients(seeds), check_vae_gradients(seeds)};
  for (auto& r : check_conditioning(trials)) all.push_back(r);
  bool ok = true;
  for (const auto& r : all) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok &= r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning over sensor streams with generative replay"};
  app.require_subcommand(1);
  Flags flags;

  auto* synth = app.add_subcommand("synth", "write a synthetic task stream as CSV");
  add_common(synth, flags);
  auto* run = app.add_subcommand("run", "train a task sequence and write a run directory");
  add_common(run, flags);
  run->add_option("--data", flags.data, "stream directory written by `synth`");
  auto* ablate = app.add_subcommand("ablate", "score solver variants on unseen sensor combinations");
  add_common(ablate, flags);

  std::vector<std::string> paths;
  bool csv = false;
  auto* report = app.add_subcommand("report", "summarize run directories or metric CSV files");
  report->add_option("paths", paths, "run directories or metrics.csv files")->required();
  report->add_flag("--csv", csv, "emit the seed summary as CSV");

  std::size_t check_seeds = 20, check_trials = 200;
  auto* check = app.add_subcommand("check", "gradient and conditioning self-test");
  check->add_option("--seeds", check_seeds, "gradient-check seeds");
  check->add_option("--trials", check_trials, "random subsets for the conditioning properties");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*synth) return cmd_synth(flags);
    if (*run) return cmd_run(flags);
    if (*ablate) return cmd_ablate(flags);
    if (*check) return cmd_check(check_seeds, check_trials);
    if (*report) {
      if (csv) {
        write_summary_csv(std::cout, summarize(load_metrics(paths)));
      } else {
        std::cout << report_paths(paths);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vidreplay/config.hpp"

namespace vidreplay {

struct SeedStatus {
  std::uint64_t seed = 0;
  bool completed = false;
  std::string error;
};

struct ExperimentResult {
  std::vector<MetricRecord> metrics;
  std::vector<SeedStatus> seeds;
  bool all_completed() const {
    for (const auto& s : seeds)
      if (!s.completed) return false;
    return true;
  }
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_traces(std::ostream& out, const std::vector<TaskOutcome>& outcomes) {
  out << "task,model,epoch,train_loss,val_loss\n";
  for (const auto& o : outcomes) {
    for (std::size_t e = 0; e < o.solver.train_loss.size(); ++e)
      out << o.index + 1 << ",solver," << e + 1 << ',' << format_double(o.solver.train_loss[e]) << ','
          << format_double(o.solver.val_loss[e]) << '\n';
    if (!o.generator) continue;
    for (std::size_t e = 0; e < o.generator->epoch_loss.size(); ++e)
      out << o.index + 1 << ",generator," << e + 1 << ',' << format_double(o.generator->epoch_loss[e]) << ','
          << (e < o.generator->val_loss.size() ? format_double(o.generator->val_loss[e]) : "") << '\n';
  }
}

}  // namespace detail

inline std::vector<TaskData> experiment_stream(const ExperimentConfig& c, std::uint64_t seed, SensorCatalog& catalog) {
  if (!c.data.empty()) return load_stream(c.data, &catalog);
  StreamConfig s = c.stream;
  s.seed = seed;
  catalog = SensorCatalog::numbered(s.d);
  return synth_stream(s);
}

// Trains every seed and writes the run directory:
//   manifest.json, metrics.csv, summary.txt,
//   seed-<s>/traces.csv, seed-<s>/checkpoints/task<i>_{solver,generator}.json
// A failing seed is recorded and the others still run.
inline ExperimentResult run_experiment(const ExperimentConfig& c, std::ostream& log) {
  namespace fs = std::filesystem;
  const fs::path root(c.out);
  fs::create_directories(root);
  ExperimentResult result;
  nlohmann::json manifest = {{"config", to_json(c)}, {"metrics", "metrics.csv"}, {"summary", "summary.txt"}};
  manifest["seeds"] = nlohmann::json::array();
  for (std::uint64_t seed : c.seed_list()) {
    SeedStatus status{seed, false, ""};
    nlohmann::json entry = {{"seed", seed}};
    const std::string dir = "seed-" + std::to_string(seed);
    try {
      SensorCatalog catalog;
      auto tasks = experiment_stream(c, seed, catalog);
      const std::size_t d = catalog.size();
      log << "seed " << seed << ": " << to_string(c.method.method) << " on " << tasks.size() << " tasks\n";
      RunResult run = run_sequence(tasks, c.method, d, seed, c.scenario_name());
      std::ostringstream traces;
      detail::write_traces(traces, run.outcomes);
      detail::write_file(root / dir / "traces.csv", traces.str());
      nlohmann::json checkpoints = nlohmann::json::array();
      for (std::size_t i = 0; i < run.registry.size(); ++i) {
        const CompletedTask& t = run.registry.at(i);
        const std::string stem = dir + "/checkpoints/task" + std::to_string(i + 1);
        nlohmann::json ck = {{"task", i + 1}, {"solver", stem + "_solver.json"}};
        detail::write_file(root / (stem + "_solver.json"), solver_checkpoint(t.solver, catalog, t.means).dump() + "\n");
        if (t.generator) {
          ck["generator"] = stem + "_generator.json";
          detail::write_file(root / (stem + "_generator.json"), generator_checkpoint(*t.generator).dump() + "\n");
        }
        checkpoints.push_back(ck);
      }
      entry["status"] = "completed";
      entry["traces"] = dir + "/traces.csv";
      entry["checkpoints"] = checkpoints;
      result.metrics.insert(result.metrics.end(), run.metrics.begin(), run.metrics.end());
      status.completed = true;
    } catch (const std::exception& e) {
      entry["status"] = "failed";
      entry["error"] = e.what();
      status.error = e.what();
      log << "seed " << seed << " failed: " << e.what() << "\n";
    }
    manifest["seeds"].push_back(entry);
    result.seeds.push_back(status);
  }
  std::ostringstream metrics;
  write_metrics_csv(metrics, result.metrics);
  detail::write_file(root / "metrics.csv", metrics.str());
  detail::write_file(root / "summary.txt", render_report(result.metrics));
  detail::write_file(root / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

// Metric records from run directories or metric CSV files.
inline std::vector<MetricRecord> load_metrics(const std::vector<std::string>& paths) {
  namespace fs = std::filesystem;
  std::vector<MetricRecord> all;
  for (const auto& p : paths) {
    fs::path file = fs::is_directory(p) ? fs::path(p) / "metrics.csv" : fs::path(p);
    std::ifstream in(file);
    if (!in) throw InvalidInput("cannot read '" + file.string() + "'");
    auto records = read_metrics_csv(in, file.string());
    all.insert(all.end(), records.begin(), records.end());
  }
  return all;
}

// For a single run directory this reproduces its summary.txt.
inline std::string report_paths(const std::vector<std::string>& paths) { return render_report(load_metrics(paths)); }

struct AblationResult {
  std::vector<AblationRecord> records;
  std::vector<SeedStatus> seeds;
};

// Unseen sensor-combination protocol for each seed; writes ablation.csv and
// ablation.txt under the output directory.
inline AblationResult ablate_experiment(const ExperimentConfig& c, std::ostream& log) {
  namespace fs = std::filesystem;
  AblationResult out;
  for (std::uint64_t seed : c.seed_list()) {
    try {
      log << "seed " << seed << ": unseen-combination protocol\n";
      auto r = unseen_combination_protocol(c.ablation, seed);
      out.records.insert(out.records.end(), r.begin(), r.end());
      out.seeds.push_back({seed, true, ""});
    } catch (const std::exception& e) {
      out.seeds.push_back({seed, false, e.what()});
      log << "seed " << seed << " failed: " << e.what() << "\n";
    }
  }
  std::ostringstream csv;
  write_ablation_csv(csv, out.records);
  detail::write_file(fs::path(c.out) / "ablation.csv", csv.str());
  detail::write_file(fs::path(c.out) / "ablation.txt", render_ablation(out.records));
  detail::write_file(fs::path(c.out) / "manifest.json",
                     nlohmann::json{{"config", to_json(c)}, {"records", "ablation.csv"}, {"summary", "ablation.txt"}}
                             .dump(2) + "\n");
  return out;
}

}  // namespace vidreplay

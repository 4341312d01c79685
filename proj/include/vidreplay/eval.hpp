#pragma once

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "vidreplay/orchestrator.hpp"

namespace vidreplay {

// 100 * (ts - method) / ts; NaN when the baseline is exactly zero.
inline double percentage_gain(double ts, double method) {
  if (ts == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * (ts - method) / ts;
}

// ---------------------------------------------------------------------------
// Metric log: `method,scenario,i,j,seed,metric_kind,value`

inline const char* kMetricHeader = "method,scenario,i,j,seed,metric_kind,value";

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records) {
  out << kMetricHeader << '\n';
  for (const auto& r : records) {
    out << r.method << ',' << r.scenario << ',' << r.i << ',' << r.j << ',' << r.seed << ',' << to_string(r.kind)
        << ',' << detail::format_double(r.value) << '\n';
  }
}

inline std::vector<MetricRecord> read_metrics_csv(std::istream& in, const std::string& source = "") {
  std::string row;
  if (!std::getline(in, row) || row != kMetricHeader) throw ParseError("expected header '" + std::string(kMetricHeader) + "'", 1, source);
  std::vector<MetricRecord> out;
  std::size_t line = 1;
  auto integer = [&](const std::string& s, const char* what) {
    std::uint64_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty())
      throw ParseError(std::string("bad ") + what + " '" + s + "'", line, source);
    return v;
  };
  while (std::getline(in, row)) {
    ++line;
    if (row.empty()) continue;
    auto f = detail::split_fields(row);
    if (f.size() != 7) throw ParseError("expected 7 fields, got " + std::to_string(f.size()), line, source);
    MetricRecord r;
    r.method = f[0];
    r.scenario = f[1];
    r.i = integer(f[2], "task index i");
    r.j = integer(f[3], "task index j");
    r.seed = integer(f[4], "seed");
    try {
      r.kind = metric_kind_from_string(f[5]);
      r.value = detail::parse_double(f[6], line, "value");
    } catch (const ParseError& e) {
      throw ParseError(e.message(), line, source);
    } catch (const InvalidInput& e) {
      throw ParseError(e.what(), line, source);
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seed aggregation

struct SummaryRow {
  std::string method;
  std::string scenario;
  std::size_t i = 0;
  std::size_t j = 0;
  MetricKind kind = MetricKind::kError;
  double mean = 0.0;
  double std = 0.0;  // sample std; NaN for a single seed
  std::size_t seeds = 0;
};

inline double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Mean and sample std over seeds per (method, scenario, i, j), sorted by key.
inline std::vector<SummaryRow> summarize(const std::vector<MetricRecord>& records) {
  std::set<MetricKind> kinds;
  for (const auto& r : records) kinds.insert(r.kind);
  if (kinds.size() > 1) throw InvalidInput("report: records mix error and rmse");
  std::map<std::tuple<std::string, std::string, std::size_t, std::size_t>, std::vector<double>> groups;
  for (const auto& r : records) groups[{r.method, r.scenario, r.i, r.j}].push_back(r.value);
  std::vector<SummaryRow> out;
  for (const auto& [key, values] : groups) {
    SummaryRow row;
    std::tie(row.method, row.scenario, row.i, row.j) = key;
    row.kind = *kinds.begin();
    double s = 0.0;
    for (double v : values) s += v;
    row.mean = s / static_cast<double>(values.size());
    row.std = sample_std(values, row.mean);
    row.seeds = values.size();
    out.push_back(row);
  }
  return out;
}

inline const char* kSummaryHeader = "method,scenario,i,j,metric_kind,mean,std,seeds";

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << r.method << ',' << r.scenario << ',' << r.i << ',' << r.j << ',' << to_string(r.kind) << ','
        << detail::format_double(r.mean) << ',' << detail::format_double(r.std) << ',' << r.seeds << '\n';
  }
}

inline std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline void write_table(std::ostream& out, const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += "  ";
      line += row[c];
      if (c + 1 < row.size()) line.append(width[c] - row[c].size(), ' ');
    }
    out << line << '\n';
  }
}

// Aligned text: one row per (method, scenario, i, j) with mean +- std.
inline void write_summary_text(std::ostream& out, const std::vector<SummaryRow>& rows) {
  std::vector<std::vector<std::string>> cells = {{"method", "scenario", "i", "j", "metric", "mean", "std", "seeds"}};
  for (const auto& r : rows)
    cells.push_back({r.method, r.scenario, std::to_string(r.i), std::to_string(r.j), to_string(r.kind),
                     fixed(r.mean, 4), fixed(r.std, 4), std::to_string(r.seeds)});
  write_table(out, cells);
}

// Per-seed gain of every method over the baseline on each (scenario, i, j)
// cell, averaged over the seeds both have.
struct GainRow {
  std::string method;
  std::string scenario;
  std::size_t i = 0;
  std::size_t j = 0;
  double mean_gain = 0.0;
  std::size_t seeds = 0;
};

inline std::vector<GainRow> gain_table(const std::vector<MetricRecord>& records, const std::string& baseline = "ts") {
  std::map<std::tuple<std::string, std::size_t, std::size_t, std::uint64_t>, double> base;
  for (const auto& r : records)
    if (r.method == baseline) base[{r.scenario, r.i, r.j, r.seed}] = r.value;
  std::map<std::tuple<std::string, std::string, std::size_t, std::size_t>, std::vector<double>> acc;
  for (const auto& r : records) {
    if (r.method == baseline) continue;
    auto it = base.find({r.scenario, r.i, r.j, r.seed});
    if (it == base.end()) continue;
    acc[{r.method, r.scenario, r.i, r.j}].push_back(percentage_gain(it->second, r.value));
  }
  std::vector<GainRow> out;
  for (const auto& [key, gains] : acc) {
    GainRow g;
    std::tie(g.method, g.scenario, g.i, g.j) = key;
    double s = 0.0;
    for (double v : gains) s += v;
    g.mean_gain = s / static_cast<double>(gains.size());
    g.seeds = gains.size();
    out.push_back(g);
  }
  return out;
}

// Full report as written to summary.txt.
inline std::string render_report(const std::vector<MetricRecord>& records) {
  std::ostringstream out;
  auto rows = summarize(records);
  write_summary_text(out, rows);
  auto gains = gain_table(records);
  if (!gains.empty()) {
    out << "\ngain over ts (%)\n";
    std::vector<std::vector<std::string>> cells = {{"method", "scenario", "i", "j", "gain", "seeds"}};
    for (const auto& g : gains)
      cells.push_back({g.method, g.scenario, std::to_string(g.i), std::to_string(g.j), fixed(g.mean_gain, 2),
                       std::to_string(g.seeds)});
    write_table(out, cells);
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Generalization to sensor combinations never seen in training

struct AblationConfig {
  StreamConfig stream;  // d, classes, length, dynamics; stream.n = total instances
  double missing = 0.4;
  std::size_t mask_count = 20;  // distinct masks; half for train/val, half for fine-tune/test
  std::vector<Conditioning> variants = {Conditioning::kNone, Conditioning::kMultiHot, Conditioning::kEmbeddingMax,
                                        Conditioning::kGnn};
  MethodConfig method;  // profile, batch size, patience, dropout, embedding width
  bool fine_tune = true;
  std::size_t fine_tune_epochs = 0;  // 0 means the profile's solver epochs

  std::size_t kept() const {
    const std::size_t drop = static_cast<std::size_t>(std::lround(missing * static_cast<double>(stream.d)));
    return stream.d - std::min(drop, stream.d - 1);
  }
};

struct UnseenSplit {
  std::vector<SeriesInstance> train, val, fine_tune, test;
  std::vector<SensorSet> train_masks, test_masks;
};

inline SeriesInstance restrict_sensors(const SeriesInstance& x, const SensorSet& keep) {
  SeriesInstance out;
  out.sensors = keep;
  out.length = x.length;
  out.label = x.label;
  out.target = x.target;
  out.values.resize(x.length * keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::size_t src = x.sensors.position(keep[k]);
    for (std::size_t t = 0; t < x.length; ++t) out.values[t * keep.size() + k] = x.at(t, src);
  }
  return out;
}

// Full-sensor instances split 40/10/10/40 into train/val/fine-tune/test.
// Train and val draw masks from one pool, fine-tune and test from a disjoint one.
inline UnseenSplit unseen_split(const std::vector<SeriesInstance>& full, const AblationConfig& cfg,
                                std::uint64_t seed) {
  const std::size_t d = cfg.stream.d, keep = cfg.kept();
  double combos = 1.0;
  for (std::size_t k = 0; k < keep; ++k) combos = combos * static_cast<double>(d - k) / static_cast<double>(k + 1);
  if (cfg.mask_count < 2 || static_cast<double>(cfg.mask_count) > combos)
    throw InvalidInput("unseen split: cannot draw " + std::to_string(cfg.mask_count) + " distinct masks of " +
                       std::to_string(keep) + " from " + std::to_string(d) + " sensors");
  Rng mask_rng(derive_seed(seed, Stream::kMasks, 7));
  std::set<SensorSet> drawn;
  std::vector<SensorSet> masks;
  while (masks.size() < cfg.mask_count) {
    SensorSet m = draw_sensor_subset(d, keep, mask_rng);
    if (drawn.insert(m).second) masks.push_back(m);
  }
  UnseenSplit out;
  const std::size_t half = masks.size() / 2;
  out.train_masks.assign(masks.begin(), masks.begin() + static_cast<long>(half));
  out.test_masks.assign(masks.begin() + static_cast<long>(half), masks.end());

  std::vector<std::size_t> order(full.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, Stream::kSplit, 7));
  rng.shuffle(order);
  const std::size_t n = full.size();
  const std::size_t n_train = n * 4 / 10, n_val = n / 10, n_ft = n / 10;
  if (n_val == 0 || n_ft == 0 || n_train == 0) throw InvalidInput("unseen split: need at least 10 instances");
  for (std::size_t k = 0; k < n; ++k) {
    const SeriesInstance& x = full[order[k]];
    const bool seen = k < n_train + n_val;
    const auto& pool = seen ? out.train_masks : out.test_masks;
    SeriesInstance m = restrict_sensors(x, pool[rng.below(pool.size())]);
    if (k < n_train) out.train.push_back(std::move(m));
    else if (k < n_train + n_val) out.val.push_back(std::move(m));
    else if (k < n_train + n_val + n_ft) out.fine_tune.push_back(std::move(m));
    else out.test.push_back(std::move(m));
  }
  return out;
}

struct AblationRecord {
  Conditioning variant = Conditioning::kGnn;
  bool fine_tuned = false;
  std::uint64_t seed = 0;
  MetricKind kind = MetricKind::kError;
  double value = 0.0;
};

// Trains every variant on the seen-mask split and scores it on unseen masks,
// optionally after a further round of training on the fine-tune split (80/20
// into fit and early-stopping halves).
inline std::vector<AblationRecord> unseen_combination_protocol(const AblationConfig& cfg, std::uint64_t seed) {
  cfg.method.validate();
  StreamConfig sc = cfg.stream;
  sc.keep = 1.0;
  sc.seed = seed;
  sc.validate();
  SynthSystem system(sc);
  std::vector<int> classes;
  for (std::size_t c = 0; c < sc.classes; ++c) classes.push_back(static_cast<int>(c));
  Rng data_rng(derive_seed(seed, Stream::kStream, 1));
  std::vector<SeriesInstance> full;
  for (int label : balanced_labels(classes, sc.n, data_rng)) full.push_back(system.sample(label, SensorSet::all(sc.d), data_rng));

  UnseenSplit split = unseen_split(full, cfg, seed);
  NormStats stats = fit_normalization(split.train, cfg.method.norm_for(TaskMode::kClassification));
  for (auto* part : {&split.train, &split.val, &split.fine_tune, &split.test}) stats.apply(*part);
  Split ft = split_train_val(split.fine_tune, 0.2, derive_seed(seed, Stream::kSplit, 8));

  const ModelProfile& prof = cfg.method.profile;
  SolverTrainConfig st;
  st.max_epochs = prof.solver_epochs;
  st.patience = cfg.method.patience;
  st.batch_size = cfg.method.batch_size;
  st.learning_rate = prof.solver_lr;
  st.embedding_lr = prof.embedding_lr;
  st.q = 1.0;

  std::vector<AblationRecord> out;
  for (Conditioning v : cfg.variants) {
    SolverConfig c;
    c.classes = classes;
    c.sensors = sc.d;
    c.embedding_width = cfg.method.embedding_width_for(sc.d);
    c.hidden = prof.solver_hidden;
    c.layers = prof.solver_layers;
    c.conditioning = v;
    c.dropout = cfg.method.dropout;
    Rng init(derive_seed(seed, Stream::kSolverInit, 0));
    Solver solver(c, init);
    SensorMeans means(sc.d);
    means.add(split.train);
    train_solver(solver, split.train, split.val, means, st, derive_seed(seed, {1}));
    out.push_back({v, false, seed, MetricKind::kError, evaluate(solver, means, split.test).value});
    if (!cfg.fine_tune) continue;
    SensorMeans tuned_means = means;
    tuned_means.add(ft.train);
    SolverTrainConfig tune = st;
    if (cfg.fine_tune_epochs > 0) tune.max_epochs = cfg.fine_tune_epochs;
    train_solver(solver, ft.train, ft.val, tuned_means, tune, derive_seed(seed, {2}));
    out.push_back({v, true, seed, MetricKind::kError, evaluate(solver, tuned_means, split.test).value});
  }
  return out;
}

inline const char* kAblationHeader = "variant,fine_tuned,seed,metric_kind,value";

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRecord>& records) {
  out << kAblationHeader << '\n';
  for (const auto& r : records)
    out << to_string(r.variant) << ',' << (r.fine_tuned ? 1 : 0) << ',' << r.seed << ',' << to_string(r.kind) << ','
        << detail::format_double(r.value) << '\n';
}

// Median error per variant, fine-tuned or not.
inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string render_ablation(const std::vector<AblationRecord>& records) {
  std::map<std::pair<bool, Conditioning>, std::vector<double>> groups;
  for (const auto& r : records) groups[{r.fine_tuned, r.variant}].push_back(r.value);
  std::vector<std::vector<std::string>> cells = {{"variant", "fine_tuned", "median", "mean", "std", "seeds"}};
  for (const auto& [key, values] : groups) {
    double s = 0.0;
    for (double v : values) s += v;
    const double mean = s / static_cast<double>(values.size());
    cells.push_back({to_string(key.second), key.first ? "yes" : "no", fixed(median(values), 4), fixed(mean, 4),
                     fixed(sample_std(values, mean), 4), std::to_string(values.size())});
  }
  std::ostringstream out;
  write_table(out, cells);
  return out.str();
}

}  // namespace vidreplay

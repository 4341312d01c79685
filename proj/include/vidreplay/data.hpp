#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vidreplay/errors.hpp"
#include "vidreplay/random.hpp"
#include "vidreplay/series.hpp"

namespace vidreplay {

enum class ClassScenario { kFixed, kIncremental, kPartial };

inline std::string to_string(ClassScenario s) {
  switch (s) {
    case ClassScenario::kFixed: return "fixed";
    case ClassScenario::kIncremental: return "incremental";
    case ClassScenario::kPartial: return "partial";
  }
  return "?";
}

inline ClassScenario class_scenario_from_string(const std::string& s) {
  if (s == "fixed") return ClassScenario::kFixed;
  if (s == "incremental") return ClassScenario::kIncremental;
  if (s == "partial") return ClassScenario::kPartial;
  throw InvalidInput("unknown class scenario '" + s + "'");
}

struct StreamConfig {
  std::size_t d = 10;
  std::size_t classes = 6;
  std::size_t tasks = 5;
  std::size_t n = 120;       // labelled series per task (train + val)
  std::size_t n_test = 0;    // held-out series per task; 0 means n
  std::size_t length = 24;
  std::size_t hidden = 4;    // latent state width h, even
  double keep = 0.6;         // fraction of sensors observed per task
  ClassScenario scenario = ClassScenario::kFixed;
  std::size_t base_classes = 0;  // 0 picks the largest feasible base
  std::size_t replace = 1;       // classes swapped per task in the partial scenario
  bool regression = false;
  double obs_noise = 0.1;
  double process_noise = 0.1;
  double init_spread = 1.0;      // initial-state std around the class mean
  double class_separation = 1.0; // std of class means in latent space
  std::uint64_t seed = 0;

  std::size_t test_count() const { return n_test == 0 ? n : n_test; }
  std::size_t kept_sensors() const { return static_cast<std::size_t>(std::ceil(keep * static_cast<double>(d) - 1e-9)); }

  void validate() const {
    if (d == 0) throw InvalidInput("stream: d must be >= 1");
    if (tasks == 0) throw InvalidInput("stream: needs at least one task");
    if (length == 0) throw InvalidInput("stream: series length must be >= 1");
    if (n == 0) throw InvalidInput("stream: n must be >= 1");
    if (hidden == 0 || hidden % 2 != 0) throw InvalidInput("stream: hidden width must be even and >= 2");
    if (!(keep > 0.0 && keep <= 1.0)) throw InvalidInput("stream: keep fraction must be in (0, 1]");
    if (!regression && classes < 2) throw InvalidInput("stream: classification needs K >= 2");
  }
};

// Class sets Y_1..Y_m. New classes enter in index order; the partial scenario
// drops `replace` seeded-random classes per task.
inline std::vector<std::vector<int>> schedule_classes(ClassScenario scenario, std::size_t k, std::size_t m,
                                                      std::size_t base, std::size_t replace, std::uint64_t seed) {
  if (m == 0) return {};
  std::size_t needed = 0;
  switch (scenario) {
    case ClassScenario::kFixed:
      if (base == 0) base = k;
      needed = base;
      break;
    case ClassScenario::kIncremental:
      if (base == 0) base = k >= m - 1 ? k - (m - 1) : 0;
      needed = base + (m - 1);
      break;
    case ClassScenario::kPartial:
      if (replace == 0) throw InvalidInput("class schedule: partial scenario needs replace >= 1");
      if (base == 0) base = k >= (m - 1) * replace ? k - (m - 1) * replace : 0;
      if (replace > base) throw InvalidInput("class schedule: cannot replace more classes than the base set holds");
      needed = base + (m - 1) * replace;
      break;
  }
  if (base < 2 || needed > k) {
    throw InvalidInput("class schedule: " + to_string(scenario) + " over " + std::to_string(m) + " tasks needs " +
                       std::to_string(std::max<std::size_t>(needed, 2)) + " classes with base >= 2, K = " +
                       std::to_string(k) + " exhausted");
  }
  Rng rng(derive_seed(seed, Stream::kMasks, 1));
  std::vector<int> current;
  for (std::size_t c = 0; c < base; ++c) current.push_back(static_cast<int>(c));
  int next = static_cast<int>(base);
  std::vector<std::vector<int>> out{current};
  for (std::size_t i = 1; i < m; ++i) {
    if (scenario == ClassScenario::kIncremental) {
      current.push_back(next++);
    } else if (scenario == ClassScenario::kPartial) {
      for (std::size_t r = 0; r < replace; ++r) current.erase(current.begin() + static_cast<long>(rng.below(current.size())));
      for (std::size_t r = 0; r < replace; ++r) current.push_back(next++);
      std::sort(current.begin(), current.end());
    }
    out.push_back(current);
  }
  return out;
}

// Shared latent linear system. Class k evolves as
//   s_{t+1} = mu_k + A_k (s_t - mu_k) + process noise,
// with A_k block-diagonal 2x2 rotations of radius < 1, and every sensor reads
// y = C s + observation noise through one readout C shared by all tasks.
class SynthSystem {
 public:
  SynthSystem() = default;

  explicit SynthSystem(const StreamConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, Stream::kStream, 0));
    const std::size_t h = cfg.hidden;
    readout_.assign(cfg.d * h, 0.0);
    for (std::size_t s = 0; s < cfg.d; ++s) {
      double norm = 0.0;
      do {
        norm = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
          readout_[s * h + j] = rng.normal() / std::sqrt(static_cast<double>(h));
          norm += std::abs(readout_[s * h + j]);
        }
      } while (norm == 0.0);
    }
    const std::size_t k = cfg.regression ? 1 : cfg.classes;
    for (std::size_t c = 0; c < k; ++c) {
      ClassDynamics dyn;
      dyn.mean.resize(h);
      for (double& v : dyn.mean) v = cfg.class_separation * rng.normal();
      for (std::size_t b = 0; b < h / 2; ++b) {
        dyn.radius.push_back(rng.uniform(0.75, 0.95));
        dyn.angle.push_back(std::numbers::pi * rng.uniform(0.05, 0.45));
      }
      classes_.push_back(std::move(dyn));
    }
  }

  const StreamConfig& config() const { return cfg_; }
  double readout(std::size_t sensor, std::size_t j) const { return readout_[sensor * cfg_.hidden + j]; }
  double spectral_radius(std::size_t cls) const {
    const auto& r = classes_.at(cls).radius;
    return *std::max_element(r.begin(), r.end());
  }

  // Latent trajectory [T x h] for one series of class `cls`.
  std::vector<double> latent(std::size_t cls, std::size_t length, Rng& rng, double process_noise) const {
    const std::size_t h = cfg_.hidden;
    const auto& dyn = classes_.at(cls);
    std::vector<double> s(h), out(length * h);
    for (std::size_t j = 0; j < h; ++j) s[j] = dyn.mean[j] + cfg_.init_spread * rng.normal();
    for (std::size_t t = 0; t < length; ++t) {
      std::copy(s.begin(), s.end(), out.begin() + static_cast<long>(t * h));
      std::vector<double> next(h);
      for (std::size_t b = 0; b < h / 2; ++b) {
        const double dx = s[2 * b] - dyn.mean[2 * b], dy = s[2 * b + 1] - dyn.mean[2 * b + 1];
        const double c = dyn.radius[b] * std::cos(dyn.angle[b]), sn = dyn.radius[b] * std::sin(dyn.angle[b]);
        next[2 * b] = dyn.mean[2 * b] + c * dx - sn * dy;
        next[2 * b + 1] = dyn.mean[2 * b + 1] + sn * dx + c * dy;
      }
      for (std::size_t j = 0; j < h; ++j) s[j] = next[j] + process_noise * rng.normal();
    }
    return out;
  }

  // One classification series over `sensors`.
  SeriesInstance sample(int cls, const SensorSet& sensors, Rng& rng, bool noiseless = false) const {
    const double obs = noiseless ? 0.0 : cfg_.obs_noise;
    std::vector<double> z = latent(static_cast<std::size_t>(cls), cfg_.length, rng, noiseless ? 0.0 : cfg_.process_noise);
    SeriesInstance x = observe(z, sensors, rng, obs);
    x.label = cls;
    return x;
  }

  // One degradation series: health decays towards failure at a random time F
  // past the observed window; the target is the remaining life scaled to [0,1].
  SeriesInstance sample_degradation(const SensorSet& sensors, Rng& rng) const {
    const std::size_t h = cfg_.hidden, len = cfg_.length;
    const double horizon = 4.0 * static_cast<double>(len);
    const double life = rng.uniform(static_cast<double>(len), horizon);
    const double end = rng.uniform(static_cast<double>(len), life);
    std::vector<double> wobble = latent(0, len, rng, cfg_.process_noise);
    std::vector<double> z(len * h);
    for (std::size_t t = 0; t < len; ++t) {
      const double age = end - static_cast<double>(len - 1 - t);
      const double wear = std::pow(std::max(age, 0.0) / life, 2.0);
      for (std::size_t j = 0; j < h; ++j) {
        const double dir = classes_[0].mean[j] >= 0 ? 1.0 : -1.0;
        z[t * h + j] = 3.0 * wear * dir + 0.3 * (wobble[t * h + j] - classes_[0].mean[j]);
      }
    }
    SeriesInstance x = observe(z, sensors, rng, cfg_.obs_noise);
    x.target = std::clamp((life - end) / horizon, 0.0, 1.0);
    return x;
  }

 private:
  struct ClassDynamics {
    std::vector<double> mean;
    std::vector<double> radius;
    std::vector<double> angle;
  };

  SeriesInstance observe(const std::vector<double>& z, const SensorSet& sensors, Rng& rng, double noise) const {
    const std::size_t h = cfg_.hidden, len = z.size() / h;
    SeriesInstance x;
    x.sensors = sensors;
    x.length = len;
    x.values.resize(len * sensors.size());
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t k = 0; k < sensors.size(); ++k) {
        double v = 0.0;
        for (std::size_t j = 0; j < h; ++j) v += readout(sensors[k], j) * z[t * h + j];
        x.values[t * sensors.size() + k] = v + noise * rng.normal();
      }
    return x;
  }

  StreamConfig cfg_;
  std::vector<double> readout_;
  std::vector<ClassDynamics> classes_;
};

// Seeded draw of ceil(keep * d) distinct sensors.
inline SensorSet draw_sensor_subset(std::size_t d, std::size_t count, Rng& rng) {
  std::vector<std::size_t> all(d);
  for (std::size_t i = 0; i < d; ++i) all[i] = i;
  rng.shuffle(all);
  all.resize(count);
  return SensorSet(std::move(all));
}

// Balanced labels: cycle through the class set, then shuffle.
inline std::vector<int> balanced_labels(const std::vector<int>& classes, std::size_t n, Rng& rng) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = classes[i % classes.size()];
  rng.shuffle(out);
  return out;
}

inline std::vector<TaskData> synth_stream(const StreamConfig& cfg) {
  cfg.validate();
  SynthSystem system(cfg);
  std::vector<std::vector<int>> schedule;
  if (!cfg.regression) {
    schedule = schedule_classes(cfg.scenario, cfg.classes, cfg.tasks, cfg.base_classes, cfg.replace, cfg.seed);
  }
  std::vector<TaskData> out;
  for (std::size_t i = 0; i < cfg.tasks; ++i) {
    Rng mask_rng(derive_seed(cfg.seed, Stream::kMasks, 100 + i));
    Rng rng(derive_seed(cfg.seed, Stream::kStream, 1 + i));
    TaskData task;
    task.spec.sensors = draw_sensor_subset(cfg.d, cfg.kept_sensors(), mask_rng);
    task.spec.mode = cfg.regression ? TaskMode::kRegression : TaskMode::kClassification;
    auto fill = [&](std::vector<SeriesInstance>& dst, std::size_t count) {
      if (cfg.regression) {
        for (std::size_t r = 0; r < count; ++r) dst.push_back(system.sample_degradation(task.spec.sensors, rng));
        return;
      }
      for (int label : balanced_labels(task.spec.classes, count, rng))
        dst.push_back(system.sample(label, task.spec.sensors, rng));
    };
    if (!cfg.regression) task.spec.classes = schedule[i];
    fill(task.instances, cfg.n);
    fill(task.test, cfg.test_count());
    out.push_back(std::move(task));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormMode { kZScore, kMinMax };

inline std::string to_string(NormMode m) { return m == NormMode::kZScore ? "zscore" : "minmax"; }

inline NormMode norm_mode_from_string(const std::string& s) {
  if (s == "zscore") return NormMode::kZScore;
  if (s == "minmax") return NormMode::kMinMax;
  throw InvalidInput("unknown normalization '" + s + "'");
}

// Per-sensor affine map x -> (x - shift) * factor, keyed by catalog index.
struct NormStats {
  NormMode mode = NormMode::kZScore;
  std::map<std::size_t, std::pair<double, double>> sensors;  // shift, factor

  double apply(std::size_t sensor, double x) const {
    auto it = sensors.find(sensor);
    if (it == sensors.end()) throw InvalidInput("normalize: no statistics for sensor " + std::to_string(sensor));
    return (x - it->second.first) * it->second.second;
  }

  void apply(std::vector<SeriesInstance>& data) const {
    for (auto& x : data)
      for (std::size_t t = 0; t < x.length; ++t)
        for (std::size_t k = 0; k < x.sensors.size(); ++k) x.at(t, k) = apply(x.sensors[k], x.at(t, k));
  }
};

// Statistics from `train` only. Zero-spread sensors map to 0.
inline NormStats fit_normalization(const std::vector<SeriesInstance>& train, NormMode mode) {
  struct Acc {
    double sum = 0, sq = 0, lo = INFINITY, hi = -INFINITY;
    std::size_t n = 0;
  };
  std::map<std::size_t, Acc> acc;
  for (const auto& x : train)
    for (std::size_t k = 0; k < x.sensors.size(); ++k) {
      Acc& a = acc[x.sensors[k]];
      for (std::size_t t = 0; t < x.length; ++t) {
        const double v = x.at(t, k);
        a.sum += v;
        a.lo = std::min(a.lo, v);
        a.hi = std::max(a.hi, v);
        ++a.n;
      }
    }
  // Second pass for a stable variance.
  for (const auto& x : train)
    for (std::size_t k = 0; k < x.sensors.size(); ++k) {
      Acc& a = acc[x.sensors[k]];
      const double mean = a.sum / static_cast<double>(a.n);
      for (std::size_t t = 0; t < x.length; ++t) a.sq += (x.at(t, k) - mean) * (x.at(t, k) - mean);
    }
  NormStats stats;
  stats.mode = mode;
  for (const auto& [s, a] : acc) {
    if (mode == NormMode::kZScore) {
      const double mean = a.sum / static_cast<double>(a.n);
      const double sd = std::sqrt(a.sq / static_cast<double>(a.n));
      stats.sensors[s] = {mean, sd > 0.0 ? 1.0 / sd : 0.0};
    } else {
      const double range = a.hi - a.lo;
      stats.sensors[s] = {a.lo, range > 0.0 ? 1.0 / range : 0.0};
    }
  }
  return stats;
}

inline NormStats normalize(std::vector<SeriesInstance>& train, NormMode mode) {
  NormStats stats = fit_normalization(train, mode);
  stats.apply(train);
  return stats;
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<SeriesInstance> train;
  std::vector<SeriesInstance> val;
};

// Seeded split with round(n * val_fraction) validation series. Classification
// splits are stratified: each class gets floor(n_c * f) plus one of the
// leftover slots by largest remainder.
inline Split split_train_val(const std::vector<SeriesInstance>& data, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw InvalidInput("split: validation fraction must be in (0, 1)");
  Rng rng(seed);
  const bool stratify = !data.empty() && data.front().label.has_value();
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) groups[stratify ? *data[i].label : 0].push_back(i);

  const std::size_t total_val = static_cast<std::size_t>(std::llround(static_cast<double>(data.size()) * val_fraction));
  std::vector<std::pair<double, int>> remainders;
  std::map<int, std::size_t> quota;
  std::size_t assigned = 0;
  for (auto& [label, idx] : groups) {
    const double exact = static_cast<double>(idx.size()) * val_fraction;
    quota[label] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[label];
    remainders.push_back({exact - std::floor(exact), label});
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total_val && r < remainders.size(); ++r, ++assigned) ++quota[remainders[r].second];

  std::vector<bool> in_val(data.size(), false);
  for (auto& [label, idx] : groups) {
    if (stratify && (quota[label] == 0 || quota[label] >= idx.size())) {
      throw InvalidInput("split: class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                         " series, too few for both splits");
    }
    rng.shuffle(idx);
    for (std::size_t k = 0; k < quota[label]; ++k) in_val[idx[k]] = true;
  }
  Split out;
  for (std::size_t i = 0; i < data.size(); ++i) (in_val[i] ? out.val : out.train).push_back(data[i]);
  if (out.train.empty() || out.val.empty()) throw InvalidInput("split: an empty split");
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header `series_id,t,label,<sensor names>`, one row per series step.

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s, std::size_t line, const std::string& what) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError("bad " + what + " '" + s + "'", line);
  }
  return v;
}

inline std::vector<std::string> split_fields(const std::string& row) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(row);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!row.empty() && row.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline void write_csv(std::ostream& out, const std::vector<SeriesInstance>& data, const SensorCatalog& catalog) {
  if (data.empty()) throw InvalidInput("csv export: no series");
  const SensorSet& sensors = data.front().sensors;
  out << "series_id,t,label";
  for (auto s : sensors) out << ',' << catalog.name(s);
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& x = data[i];
    if (x.sensors != sensors) throw InvalidInput("csv export: series disagree on the sensor subset");
    const std::string label = x.label ? std::to_string(*x.label) : x.target ? detail::format_double(*x.target) : "";
    if (label.empty()) throw InvalidInput("csv export: series " + std::to_string(i) + " has no label");
    for (std::size_t t = 0; t < x.length; ++t) {
      out << i << ',' << t << ',' << label;
      for (std::size_t k = 0; k < sensors.size(); ++k) out << ',' << detail::format_double(x.at(t, k));
      out << '\n';
    }
  }
}

// Series are returned in order of first appearance, steps sorted by t.
inline std::vector<SeriesInstance> read_csv(std::istream& in, const SensorCatalog& catalog, TaskMode mode) {
  std::string row;
  std::size_t line = 1;
  if (!std::getline(in, row)) throw ParseError("empty file", line);
  if (!row.empty() && row.back() == '\r') row.pop_back();
  auto header = detail::split_fields(row);
  if (header.size() < 4 || header[0] != "series_id" || header[1] != "t" || header[2] != "label") {
    throw ParseError("header must start with series_id,t,label and name at least one sensor", line);
  }
  std::vector<std::size_t> columns;
  for (std::size_t c = 3; c < header.size(); ++c) {
    if (!catalog.contains(header[c])) throw ParseError("unknown column '" + header[c] + "'", line);
    columns.push_back(catalog.index_of(header[c]));
  }
  SensorSet sensors(columns);  // also rejects duplicate columns
  const std::size_t width = columns.size();

  struct Pending {
    std::string label;
    std::size_t first_line = 0;
    std::map<long, std::pair<std::size_t, std::vector<double>>> rows;  // t -> (line, values by column)
  };
  std::vector<std::string> order;
  std::map<std::string, Pending> series;
  while (std::getline(in, row)) {
    ++line;
    if (!row.empty() && row.back() == '\r') row.pop_back();
    if (row.empty()) continue;
    auto f = detail::split_fields(row);
    if (f.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()), line);
    }
    long t = 0;
    auto r = std::from_chars(f[1].data(), f[1].data() + f[1].size(), t);
    if (r.ec != std::errc() || r.ptr != f[1].data() + f[1].size() || t < 0) throw ParseError("bad t '" + f[1] + "'", line);
    auto [it, fresh] = series.try_emplace(f[0]);
    Pending& p = it->second;
    if (fresh) {
      order.push_back(f[0]);
      p.label = f[2];
      p.first_line = line;
    } else if (p.label != f[2]) {
      throw ParseError("series '" + f[0] + "' changes label", line);
    }
    std::vector<double> values(width);
    for (std::size_t c = 0; c < width; ++c) values[c] = detail::parse_double(f[3 + c], line, "value");
    if (!p.rows.emplace(t, std::make_pair(line, std::move(values))).second) {
      throw ParseError("duplicate row for series '" + f[0] + "' at t=" + f[1], line);
    }
  }

  std::vector<SeriesInstance> out;
  for (const auto& id : order) {
    const Pending& p = series.at(id);
    SeriesInstance x;
    x.sensors = sensors;
    x.length = p.rows.size();
    long expect = 0;
    for (const auto& [t, lv] : p.rows) {
      if (t != expect++) throw ParseError("ragged series '" + id + "': missing step " + std::to_string(expect - 1), lv.first);
      // Columns may list sensors in any order; values follow catalog order.
      for (auto s : sensors) x.values.push_back(lv.second[static_cast<std::size_t>(
          std::find(columns.begin(), columns.end(), s) - columns.begin())]);
    }
    if (!out.empty() && x.length != out.front().length) {
      throw ParseError("ragged series '" + id + "': length " + std::to_string(x.length) + " vs " +
                           std::to_string(out.front().length),
                       p.first_line);
    }
    if (mode == TaskMode::kClassification) {
      int label = 0;
      auto r = std::from_chars(p.label.data(), p.label.data() + p.label.size(), label);
      if (r.ec != std::errc() || r.ptr != p.label.data() + p.label.size() || label < 0) {
        throw ParseError("bad class label '" + p.label + "'", p.first_line);
      }
      x.label = label;
    } else {
      x.target = detail::parse_double(p.label, p.first_line, "target");
    }
    out.push_back(std::move(x));
  }
  return out;
}

inline std::vector<SeriesInstance> ingest_csv(const std::string& path, const SensorCatalog& catalog, TaskMode mode) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  try {
    return read_csv(in, catalog, mode);
  } catch (const ParseError& e) {
    throw ParseError(e.message(), e.line(), path);
  }
}

// Writes task{i}.csv, task{i}_test.csv and manifest.json under `dir`.
inline void export_stream(const std::string& dir, const std::vector<TaskData>& tasks, const SensorCatalog& catalog,
                          const StreamConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["scenario"] = cfg.regression ? "regression" : to_string(cfg.scenario);
  manifest["seed"] = cfg.seed;
  manifest["catalog"] = catalog.names();
  manifest["mode"] = cfg.regression ? "regression" : "classification";
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string train = "task" + std::to_string(i + 1) + ".csv";
    const std::string test = "task" + std::to_string(i + 1) + "_test.csv";
    std::ofstream a(fs::path(dir) / train), b(fs::path(dir) / test);
    if (!a || !b) throw InvalidInput("cannot write stream files under '" + dir + "'");
    write_csv(a, tasks[i].instances, catalog);
    write_csv(b, tasks[i].test, catalog);
    std::vector<std::string> names;
    for (auto s : tasks[i].spec.sensors) names.push_back(catalog.name(s));
    manifest["tasks"].push_back({{"sensors", names}, {"classes", tasks[i].spec.classes}, {"data", train}, {"test", test}});
  }
  std::ofstream m(fs::path(dir) / "manifest.json");
  m << manifest.dump(1) << '\n';
}

// Reads a stream written by export_stream (or laid out the same way by hand).
inline std::vector<TaskData> load_stream(const std::string& dir, SensorCatalog* catalog_out = nullptr) {
  namespace fs = std::filesystem;
  std::ifstream m(fs::path(dir) / "manifest.json");
  if (!m) throw InvalidInput("no manifest.json under '" + dir + "'");
  nlohmann::json manifest = nlohmann::json::parse(m);
  SensorCatalog catalog(manifest.at("catalog").get<std::vector<std::string>>());
  const TaskMode mode = manifest.value("mode", "classification") == "regression" ? TaskMode::kRegression
                                                                                  : TaskMode::kClassification;
  std::vector<TaskData> out;
  for (const auto& t : manifest.at("tasks")) {
    TaskData task;
    task.spec.mode = mode;
    task.spec.sensors = SensorSet::from_names(catalog, t.at("sensors").get<std::vector<std::string>>());
    task.spec.classes = t.value("classes", std::vector<int>{});
    std::sort(task.spec.classes.begin(), task.spec.classes.end());
    task.instances = ingest_csv((fs::path(dir) / t.at("data").get<std::string>()).string(), catalog, mode);
    task.test = ingest_csv((fs::path(dir) / t.at("test").get<std::string>()).string(), catalog, mode);
    for (const auto* part : {&task.instances, &task.test})
      for (const auto& x : *part)
        if (x.sensors != task.spec.sensors) throw InvalidInput("stream: task data columns differ from the manifest");
    if (mode == TaskMode::kClassification && task.spec.classes.empty()) {
      for (const auto& x : task.instances) task.spec.classes.push_back(*x.label);
      std::sort(task.spec.classes.begin(), task.spec.classes.end());
      task.spec.classes.erase(std::unique(task.spec.classes.begin(), task.spec.classes.end()), task.spec.classes.end());
    }
    out.push_back(std::move(task));
  }
  if (catalog_out) *catalog_out = catalog;
  return out;
}

}  // namespace vidreplay

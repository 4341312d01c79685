#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vidreplay/checkpoint.hpp"
#include "vidreplay/conditioning.hpp"
#include "vidreplay/layers.hpp"
#include "vidreplay/series.hpp"

namespace vidreplay {

// How the solver learns which sensors are present.
enum class Conditioning {
  kNone,          // standard solver: imputed values only
  kMultiHot,      // Solver-MH
  kEmbeddingMax,  // Solver-SE
  kGnn,           // Solver-CM
};

inline std::string to_string(Conditioning c) {
  switch (c) {
    case Conditioning::kNone: return "standard";
    case Conditioning::kMultiHot: return "mh";
    case Conditioning::kEmbeddingMax: return "se";
    case Conditioning::kGnn: return "cm";
  }
  return "?";
}

inline Conditioning conditioning_from_string(const std::string& s) {
  if (s == "standard") return Conditioning::kNone;
  if (s == "mh") return Conditioning::kMultiHot;
  if (s == "se") return Conditioning::kEmbeddingMax;
  if (s == "cm") return Conditioning::kGnn;
  throw InvalidInput("unknown solver variant '" + s + "'");
}

inline std::string to_string(TaskMode m) { return m == TaskMode::kClassification ? "classification" : "regression"; }

struct SolverConfig {
  TaskMode mode = TaskMode::kClassification;
  std::vector<int> classes;  // global class ids, one output per entry
  std::size_t sensors = 0;   // catalog width d
  std::size_t embedding_width = 0;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  Conditioning conditioning = Conditioning::kGnn;
  double dropout = 0.2;

  std::size_t conditioning_width() const {
    switch (conditioning) {
      case Conditioning::kNone: return 0;
      case Conditioning::kMultiHot: return sensors;
      case Conditioning::kEmbeddingMax:
      case Conditioning::kGnn: return embedding_width;
    }
    return 0;
  }

  std::size_t outputs() const { return mode == TaskMode::kClassification ? classes.size() : 1; }
  bool uses_embeddings() const {
    return conditioning == Conditioning::kEmbeddingMax || conditioning == Conditioning::kGnn;
  }
};

// Running per-sensor mean over every value observed for that sensor.
class SensorMeans {
 public:
  SensorMeans() = default;
  explicit SensorMeans(std::size_t d) : sum_(d, 0.0), count_(d, 0) {}

  std::size_t size() const { return sum_.size(); }

  void add(const SeriesInstance& x) {
    for (std::size_t k = 0; k < x.sensors.size(); ++k) {
      const std::size_t s = x.sensors[k];
      if (s >= size()) throw InvalidInput("sensor means: sensor index outside catalog");
      for (std::size_t t = 0; t < x.length; ++t) sum_[s] += x.at(t, k);
      count_[s] += x.length;
    }
  }

  void add(const std::vector<SeriesInstance>& xs) {
    for (const auto& x : xs) add(x);
  }

  std::uint64_t count(std::size_t s) const { return count_.at(s); }

  // Mean of sensor s; a never-observed sensor reads 0.0.
  double mean(std::size_t s) const { return count_.at(s) == 0 ? 0.0 : sum_[s] / static_cast<double>(count_[s]); }

  nlohmann::json to_json() const { return {{"sum", sum_}, {"count", count_}}; }

  static SensorMeans from_json(const nlohmann::json& j) {
    SensorMeans m;
    m.sum_ = j.at("sum").get<std::vector<double>>();
    m.count_ = j.at("count").get<std::vector<std::uint64_t>>();
    if (m.sum_.size() != m.count_.size()) throw InvalidInput("sensor means: sum/count width mismatch");
    return m;
  }

  bool operator==(const SensorMeans&) const = default;

 private:
  std::vector<double> sum_;
  std::vector<std::uint64_t> count_;
};

// Places x's sensors at their catalog columns and fills absent sensors with
// their stored mean at every step. Returns [T, d].
inline Tensor impute_and_index(const SeriesInstance& x, std::size_t catalog_size, const SensorMeans& means) {
  x.validate();
  for (auto s : x.sensors) {
    if (s >= catalog_size) throw InvalidInput("impute: unknown sensor index " + std::to_string(s));
  }
  std::vector<double> out(x.length * catalog_size);
  for (std::size_t s = 0; s < catalog_size; ++s) {
    if (x.sensors.contains(s)) continue;
    const double fill = s < means.size() ? means.mean(s) : 0.0;
    for (std::size_t t = 0; t < x.length; ++t) out[t * catalog_size + s] = fill;
  }
  for (std::size_t k = 0; k < x.sensors.size(); ++k)
    for (std::size_t t = 0; t < x.length; ++t) out[t * catalog_size + x.sensors[k]] = x.at(t, k);
  return Tensor({x.length, catalog_size}, std::move(out));
}

inline Tensor impute_and_index(const SeriesInstance& x, const SensorCatalog& catalog, const SensorMeans& means) {
  return impute_and_index(x, catalog.size(), means);
}

// Time-major imputed batch: steps[t] is [B, d]. All members share one length.
struct SeriesBatch {
  std::vector<Tensor> steps;
  std::vector<SensorSet> sensors;

  std::size_t size() const { return sensors.size(); }
};

inline SeriesBatch make_batch(const std::vector<const SeriesInstance*>& items, std::size_t catalog_size,
                              const SensorMeans& means) {
  if (items.empty()) throw InvalidInput("batch: no series");
  const std::size_t length = items.front()->length;
  const std::size_t batch = items.size();
  std::vector<std::vector<double>> steps(length, std::vector<double>(batch * catalog_size));
  SeriesBatch out;
  for (std::size_t b = 0; b < batch; ++b) {
    if (items[b]->length != length) throw InvalidInput("batch: series lengths differ");
    Tensor dense = impute_and_index(*items[b], catalog_size, means);
    auto v = dense.values();
    for (std::size_t t = 0; t < length; ++t)
      std::copy_n(v.data() + t * catalog_size, catalog_size, steps[t].data() + b * catalog_size);
    out.sensors.push_back(items[b]->sensors);
  }
  for (auto& s : steps) out.steps.emplace_back(Shape{batch, catalog_size}, std::move(s));
  return out;
}

inline SeriesBatch make_batch(const SeriesInstance& item, std::size_t catalog_size, const SensorMeans& means) {
  return make_batch(std::vector<const SeriesInstance*>{&item}, catalog_size, means);
}

// Targets for a batch: local class indices, or real values for regression.
struct Targets {
  std::vector<std::size_t> classes;
  std::vector<double> values;
};

// Per-row loss [B,1]: cross-entropy -sum_k y^k log p^k with one-hot y, or
// squared error.
inline Tensor solver_loss(const Tensor& prediction, const Targets& targets, TaskMode mode) {
  if (mode == TaskMode::kClassification) return ops::cross_entropy(prediction, targets.classes);
  return ops::squared_error(prediction, targets.values);
}

// Task-solving model: conditioning module + GRU core dynamics + output head.
class Solver {
 public:
  Solver() = default;

  explicit Solver(SolverConfig config) : config_(std::move(config)) { build(); }

  Solver(SolverConfig config, Rng& init) : Solver(std::move(config)) { initialize(init); }

  Solver(const Solver& other) : Solver(other.config_) { params_.copy_values_from(other.params_); }

  Solver& operator=(const Solver& other) {
    if (this != &other) {
      Solver copy(other);
      *this = std::move(copy);
    }
    return *this;
  }

  Solver(Solver&&) noexcept = default;
  Solver& operator=(Solver&&) noexcept = default;

  // Embeddings uniform in [-0.1, 0.1]; affine and GRU weights uniform in +-1/sqrt(fan_in).
  void initialize(Rng& rng) {
    if (config_.uses_embeddings()) fill_uniform(embeddings_, rng, 0.1);
    if (config_.conditioning == Conditioning::kGnn) gnn_.init(rng);
    gru_.init(rng);
    head_hidden_.init(rng);
    head_out_.init(rng);
  }

  const SolverConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Tensor& embeddings() const { return embeddings_; }
  const GnnParams& gnn() const { return gnn_; }
  const Linear& output_layer() const { return head_out_; }

  // Sensor embeddings go to plain SGD; everything else to Adam.
  std::vector<NamedParam> embedding_params() const {
    std::vector<NamedParam> out;
    for (const auto& p : params_)
      if (p.name == "embeddings") out.push_back(p);
    return out;
  }

  std::vector<NamedParam> dense_params() const {
    std::vector<NamedParam> out;
    for (const auto& p : params_)
      if (p.name != "embeddings") out.push_back(p);
    return out;
  }

  // Conditioning row for one sensor subset, width conditioning_width().
  Tensor condition(const SensorSet& sensors, const ForwardContext& ctx) const {
    switch (config_.conditioning) {
      case Conditioning::kNone: return Tensor::zeros({1, 0});
      case Conditioning::kMultiHot: return multi_hot_conditioning(sensors, config_.sensors);
      case Conditioning::kEmbeddingMax: return embedding_max_conditioning(sensors, embeddings_);
      case Conditioning::kGnn: return conditioning_vector(sensors, embeddings_, gnn_, ctx).value;
    }
    return {};
  }

  // Class probabilities [B,K] or regression outputs [B,1] in [0,1].
  Tensor forward(const SeriesBatch& batch, const ForwardContext& ctx) const {
    if (batch.steps.empty()) throw InvalidInput("solver: series of length 0");
    for (const auto& s : batch.sensors)
      if (s.empty()) throw InvalidInput("solver: empty sensor subset");
    if (batch.steps.front().cols() != config_.sensors) {
      throw ShapeError("solver: batch width " + std::to_string(batch.steps.front().cols()) + " != catalog width " +
                       std::to_string(config_.sensors));
    }

    std::vector<Tensor> inputs = batch.steps;
    if (config_.conditioning_width() > 0) {
      // One conditioning vector per distinct subset, gathered back per row.
      std::vector<SensorSet> distinct;
      std::vector<std::size_t> row_of;
      for (const auto& s : batch.sensors) {
        auto it = std::find(distinct.begin(), distinct.end(), s);
        if (it == distinct.end()) {
          distinct.push_back(s);
          it = distinct.end() - 1;
        }
        row_of.push_back(static_cast<std::size_t>(it - distinct.begin()));
      }
      std::vector<Tensor> rows;
      for (const auto& s : distinct) rows.push_back(condition(s, ctx));
      Tensor cond = ops::gather_rows(rows.size() == 1 ? rows.front() : ops::concat_rows(rows), std::move(row_of));
      for (auto& x : inputs) x = ops::concat_cols({x, cond});
    }

    Tensor last = gru_.last(inputs);
    Tensor hidden = apply_dropout(ops::relu(head_hidden_(last)), config_.dropout, ctx);
    Tensor logits = head_out_(hidden);
    return config_.mode == TaskMode::kClassification ? ops::softmax(logits) : ops::sigmoid(logits);
  }

  Tensor predict(const SeriesBatch& batch) const {
    NoGradGuard no_grad;
    return forward(batch, ForwardContext::eval());
  }

  std::size_t class_index(int label) const {
    auto it = std::find(config_.classes.begin(), config_.classes.end(), label);
    if (it == config_.classes.end()) {
      throw InvalidInput("solver: class " + std::to_string(label) + " is not in the solver's class set");
    }
    return static_cast<std::size_t>(it - config_.classes.begin());
  }

  bool has_class(int label) const {
    return std::find(config_.classes.begin(), config_.classes.end(), label) != config_.classes.end();
  }

  Targets targets(const std::vector<const SeriesInstance*>& items) const {
    Targets t;
    for (const auto* x : items) {
      if (config_.mode == TaskMode::kClassification) {
        if (!x->label) throw InvalidInput("solver: classification series without a label");
        t.classes.push_back(class_index(*x->label));
      } else {
        if (!x->target) throw InvalidInput("solver: regression series without a target");
        t.values.push_back(*x->target);
      }
    }
    return t;
  }

  nlohmann::json header_json() const {
    return {{"mode", to_string(config_.mode)},
            {"K", config_.outputs()},
            {"d", config_.sensors},
            {"d_prime", config_.embedding_width},
            {"H", config_.hidden},
            {"L", config_.layers},
            {"variant", to_string(config_.conditioning)},
            {"classes", config_.classes},
            {"dropout", config_.dropout}};
  }

  static SolverConfig config_from_header(const nlohmann::json& h) {
    SolverConfig c;
    c.mode = h.at("mode").get<std::string>() == "regression" ? TaskMode::kRegression : TaskMode::kClassification;
    c.sensors = h.at("d").get<std::size_t>();
    c.embedding_width = h.at("d_prime").get<std::size_t>();
    c.hidden = h.at("H").get<std::size_t>();
    c.layers = h.at("L").get<std::size_t>();
    c.conditioning = conditioning_from_string(h.at("variant").get<std::string>());
    c.classes = h.at("classes").get<std::vector<int>>();
    c.dropout = h.at("dropout").get<double>();
    return c;
  }

 private:
  void build() {
    const auto& c = config_;
    if (c.sensors == 0) throw InvalidInput("solver: catalog width must be >= 1");
    if (c.mode == TaskMode::kClassification && c.classes.size() < 2) {
      throw InvalidInput("solver: classification needs at least 2 classes");
    }
    if (c.hidden < 2 || c.layers == 0) throw InvalidInput("solver: needs hidden >= 2 and at least one GRU layer");
    if (c.uses_embeddings() && c.embedding_width == 0) throw InvalidInput("solver: embedding width must be >= 1");
    if (c.uses_embeddings()) embeddings_ = params_.add("embeddings", {c.sensors, c.embedding_width});
    if (c.conditioning == Conditioning::kGnn) gnn_ = GnnParams(params_, "gnn", c.embedding_width, c.dropout);
    gru_ = GruStack(params_, "gru", c.sensors + c.conditioning_width(), std::vector<std::size_t>(c.layers, c.hidden));
    head_hidden_ = Linear(params_, "head.0", c.hidden, c.hidden / 2);
    head_out_ = Linear(params_, "head.1", c.hidden / 2, c.outputs());
  }

  SolverConfig config_;
  ParamStore params_;
  Tensor embeddings_;
  GnnParams gnn_;
  GruStack gru_;
  Linear head_hidden_;
  Linear head_out_;
};

// Argmax with ties to the lowest index, optionally restricted to `allowed`
// output positions.
inline std::size_t argmax_row(const Tensor& probs, std::size_t row, const std::vector<bool>& allowed = {}) {
  std::size_t best = probs.cols();
  for (std::size_t k = 0; k < probs.cols(); ++k) {
    if (!allowed.empty() && !allowed[k]) continue;
    if (best == probs.cols() || probs(row, k) > probs(row, best)) best = k;
  }
  return best;
}

struct Label {
  std::optional<int> label;
  std::optional<double> target;
};

// Label a generated series with a frozen solver: argmax class (global id) or
// the real-valued output.
inline std::vector<Label> pseudo_label(const std::vector<const SeriesInstance*>& items, const Solver& solver,
                                       const SensorMeans& means) {
  std::vector<Label> out;
  if (items.empty()) return out;
  Tensor pred = solver.predict(make_batch(items, solver.config().sensors, means));
  for (std::size_t b = 0; b < items.size(); ++b) {
    if (solver.config().mode == TaskMode::kClassification) {
      out.push_back({solver.config().classes[argmax_row(pred, b)], std::nullopt});
    } else {
      out.push_back({std::nullopt, pred(b, 0)});
    }
  }
  return out;
}

inline Label pseudo_label(const SeriesInstance& x, const Solver& solver, const SensorMeans& means) {
  return pseudo_label(std::vector<const SeriesInstance*>{&x}, solver, means).front();
}

inline nlohmann::json solver_checkpoint(const Solver& solver, const SensorCatalog& catalog, const SensorMeans& means) {
  nlohmann::json header = solver.header_json();
  header["catalog"] = catalog.names();
  header["sensor_means"] = means.to_json();
  return params_to_json(solver.params(), std::move(header));
}

struct LoadedSolver {
  Solver solver;
  SensorCatalog catalog;
  SensorMeans means;
};

inline LoadedSolver load_solver_checkpoint(const nlohmann::json& doc) {
  const auto& h = doc.at("header");
  LoadedSolver out{Solver(Solver::config_from_header(h)), SensorCatalog(h.at("catalog").get<std::vector<std::string>>()),
                   SensorMeans::from_json(h.at("sensor_means"))};
  params_from_json(doc, out.solver.params());
  return out;
}

}  // namespace vidreplay

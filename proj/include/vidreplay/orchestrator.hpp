#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vidreplay/data.hpp"
#include "vidreplay/generator.hpp"
#include "vidreplay/metrics.hpp"
#include "vidreplay/solver.hpp"

namespace vidreplay {

enum class Method {
  kTaskSpecific,          // ts
  kFineTune,              // ft
  kCommonGenerator,       // gr-cg
  kIndependentGenerator,  // gr-ig
  kUpperBound,            // ub
};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kTaskSpecific: return "ts";
    case Method::kFineTune: return "ft";
    case Method::kCommonGenerator: return "gr-cg";
    case Method::kIndependentGenerator: return "gr-ig";
    case Method::kUpperBound: return "ub";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (auto m : {Method::kTaskSpecific, Method::kFineTune, Method::kCommonGenerator, Method::kIndependentGenerator,
                 Method::kUpperBound})
    if (to_string(m) == s) return m;
  throw InvalidInput("unknown method '" + s + "'");
}

inline bool uses_generator(Method m) { return m == Method::kCommonGenerator || m == Method::kIndependentGenerator; }

// Model sizes and optimizer settings.
struct ModelProfile {
  std::string name = "desk";
  std::size_t solver_hidden = 32;
  std::size_t solver_layers = 2;
  std::vector<std::size_t> generator_widths = {32, 32};
  std::size_t latent = 8;
  double solver_lr = 1e-3;     // Adam, everything except sensor embeddings
  double embedding_lr = 0.5;   // plain SGD on sensor embeddings; their gradients are small
  double generator_lr = 6e-3;
  std::size_t solver_epochs = 250;
  std::size_t generator_epochs = 500;

  static ModelProfile desk() { return {}; }

  static ModelProfile full(TaskMode mode = TaskMode::kClassification) {
    ModelProfile p;
    p.name = "full";
    p.solver_hidden = mode == TaskMode::kClassification ? 128 : 60;
    p.solver_layers = 3;
    p.generator_widths = {128, 128, 128};
    p.latent = 40;
    p.solver_lr = 1e-4;
    p.embedding_lr = 5e-4;
    p.generator_lr = 1e-4;
    return p;
  }

  static ModelProfile named(const std::string& name, TaskMode mode = TaskMode::kClassification) {
    if (name == "desk") return desk();
    if (name == "full") return full(mode);
    throw InvalidInput("unknown profile '" + name + "'");
  }
};

struct MethodConfig {
  Method method = Method::kIndependentGenerator;
  Conditioning variant = Conditioning::kGnn;
  double q = 0.5;
  ModelProfile profile;
  std::size_t batch_size = 32;
  std::size_t patience = 20;            // solver early stopping; 0 disables
  std::size_t generator_patience = 0;   // generator early stopping; 0 trains every epoch
  std::size_t embedding_width = 0;      // 0 means floor(d / 2)
  double dropout = 0.2;
  double val_fraction = 0.2;
  std::optional<NormMode> norm;  // default: z-score for classification, min-max for regression
  bool cached_replay = false;
  std::size_t retry_factor = 20;
  double beta = 1.0;
  NoiseScale noise = NoiseScale::kVariance;

  void validate() const {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("q", "must be in (0, 1]");
    if (batch_size == 0) throw ConfigError("batch_size", "must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must be in [0, 1)");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction", "must be in (0, 1)");
    if (profile.solver_hidden < 2 || profile.solver_layers == 0) throw ConfigError("profile", "bad solver size");
    if (profile.generator_widths.empty() || profile.latent == 0) throw ConfigError("profile", "bad generator size");
    if (retry_factor == 0) throw ConfigError("retry_factor", "must be >= 1");
  }

  std::size_t embedding_width_for(std::size_t d) const {
    return embedding_width > 0 ? embedding_width : std::max<std::size_t>(1, d / 2);
  }

  NormMode norm_for(TaskMode mode) const {
    return norm ? *norm : mode == TaskMode::kClassification ? NormMode::kZScore : NormMode::kMinMax;
  }
};

// Frozen models and statistics of one finished task.
struct CompletedTask {
  std::size_t index = 0;  // 0-based
  TaskSpec spec;
  std::size_t n = 0;  // training series
  SensorMeans means;
  Solver solver;
  std::optional<Generator> generator;
};

// Append-only record of finished tasks. Raw series are kept only for the
// upper-bound method.
class TaskRegistry {
 public:
  explicit TaskRegistry(Method method) : method_(method) {}

  Method method() const { return method_; }
  std::size_t size() const { return tasks_.size(); }
  bool empty() const { return tasks_.empty(); }
  const CompletedTask& at(std::size_t j) const { return *tasks_.at(j); }
  const CompletedTask& back() const {
    if (tasks_.empty()) throw StateError("registry: no completed task");
    return *tasks_.back();
  }

  void append(CompletedTask task) { tasks_.push_back(std::make_shared<const CompletedTask>(std::move(task))); }

  void store_raw(std::vector<SeriesInstance> train) {
    if (method_ != Method::kUpperBound) throw StateError("registry: raw data is only kept for the upper bound");
    raw_.push_back(std::move(train));
  }
  const std::vector<std::vector<SeriesInstance>>& raw() const { return raw_; }

 private:
  Method method_;
  std::vector<std::shared_ptr<const CompletedTask>> tasks_;
  std::vector<std::vector<SeriesInstance>> raw_;
};

// A task after the train/val split and normalization with training statistics.
struct PreparedTask {
  TaskSpec spec;
  std::vector<SeriesInstance> train;
  std::vector<SeriesInstance> val;
  std::vector<SeriesInstance> test;
  NormStats stats;
};

inline PreparedTask prepare_task(const TaskData& task, std::size_t index, const MethodConfig& cfg,
                                 std::uint64_t seed) {
  PreparedTask out;
  out.spec = task.spec;
  Split split = split_train_val(task.instances, cfg.val_fraction, derive_seed(seed, Stream::kSplit, index));
  out.train = std::move(split.train);
  out.val = std::move(split.val);
  out.test = task.test;
  out.stats = fit_normalization(out.train, cfg.norm_for(task.spec.mode));
  out.stats.apply(out.train);
  out.stats.apply(out.val);
  out.stats.apply(out.test);
  return out;
}

struct ReplayPool {
  std::vector<SeriesInstance> items;
  std::vector<std::size_t> retained;  // per source generator
  std::size_t draws = 0;
};

// Samples from earlier generators, pseudo-labelled by the matching frozen
// solver and filtered to the current class set. Independent generators each
// contribute n retained series; the common generator contributes n per earlier
// task and is labelled by the latest solver. Sampling stops early once
// retry_factor draws per wanted series have been spent.
inline ReplayPool build_replay(const TaskRegistry& registry, const TaskSpec& current, std::size_t n,
                               std::uint64_t seed, std::size_t retry_factor = 20) {
  ReplayPool pool;
  if (registry.empty() || n == 0) return pool;
  std::vector<int> wanted = current.classes;
  auto accept = [&](const Label& l) {
    return current.mode == TaskMode::kRegression ||
           std::find(wanted.begin(), wanted.end(), *l.label) != wanted.end();
  };
  auto draw_from = [&](const Generator& g, const CompletedTask& labeller, std::size_t target, std::uint64_t s) {
    std::size_t kept = 0, round = 0, spent = 0;
    const std::size_t budget = retry_factor * target;
    while (kept < target && spent < budget) {
      const std::size_t chunk = std::min(target, budget - spent);
      auto samples = sample_series(g, chunk, derive_seed(s, {round++}));
      spent += chunk;
      std::vector<const SeriesInstance*> ptrs;
      for (const auto& x : samples) ptrs.push_back(&x);
      auto labels = pseudo_label(ptrs, labeller.solver, labeller.means);
      for (std::size_t k = 0; k < samples.size() && kept < target; ++k) {
        if (!accept(labels[k])) continue;
        samples[k].label = labels[k].label;
        samples[k].target = labels[k].target;
        pool.items.push_back(std::move(samples[k]));
        ++kept;
      }
    }
    pool.retained.push_back(kept);
    pool.draws += spent;
  };

  if (registry.method() == Method::kCommonGenerator) {
    const CompletedTask& last = registry.back();
    if (!last.generator) throw StateError("replay: no common generator in the registry");
    draw_from(*last.generator, last, n * registry.size(), derive_seed(seed, {0}));
  } else {
    for (std::size_t j = 0; j < registry.size(); ++j) {
      const CompletedTask& t = registry.at(j);
      if (!t.generator) throw StateError("replay: task " + std::to_string(j + 1) + " has no generator");
      draw_from(*t.generator, t, n, derive_seed(seed, {j + 1}));
    }
  }
  return pool;
}

// q * mean(current) + (1 - q) * mean(replay); the current mean alone when
// there is no replay.
inline Tensor mixed_loss(const Tensor& current, const Tensor* replay, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw InvalidInput("mixed_loss: q must be in (0, 1]");
  if (!replay || replay->size() == 0) return ops::mean(current);
  return ops::add(ops::scale(ops::mean(current), q), ops::scale(ops::mean(*replay), 1.0 - q));
}

struct SolverTrainConfig {
  std::size_t max_epochs = 250;
  std::size_t patience = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double embedding_lr = 5e-4;
  double q = 0.5;
};

struct SolverTrace {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
};

// Labelled replay pool for a given epoch.
using ReplaySource = std::function<std::vector<SeriesInstance>(std::size_t epoch)>;

// Minibatch training with early stopping on validation loss; the best
// parameters are restored at the end. Each step pairs one current batch with
// the next replay batch from the epoch's shuffled pool.
inline SolverTrace train_solver(Solver& solver, const std::vector<SeriesInstance>& train,
                                const std::vector<SeriesInstance>& val, const SensorMeans& means,
                                const SolverTrainConfig& cfg, std::uint64_t seed, const ReplaySource& replay = {}) {
  if (train.empty()) throw InvalidInput("train_solver: empty training set");
  if (cfg.batch_size == 0) throw InvalidInput("train_solver: batch size must be >= 1");
  Rng shuffle_rng(derive_seed(seed, Stream::kShuffle));
  Rng dropout_rng(derive_seed(seed, Stream::kDropout));
  Rng replay_rng(derive_seed(seed, Stream::kReplay, 1));
  const std::size_t d = solver.config().sensors;
  const TaskMode mode = solver.config().mode;

  ParamGroup dense = make_param_group(OptimizerKind::kAdam, cfg.learning_rate, solver.dense_params());
  ParamGroup embed = make_param_group(OptimizerKind::kSgd, cfg.embedding_lr, solver.embedding_params());

  SolverTrace trace;
  double best_val = std::numeric_limits<double>::infinity();
  std::optional<Solver> best;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<SeriesInstance> pool = replay ? replay(epoch) : std::vector<SeriesInstance>{};
    std::vector<std::size_t> pool_order(pool.size());
    for (std::size_t i = 0; i < pool_order.size(); ++i) pool_order[i] = i;
    if (!pool.empty()) replay_rng.shuffle(pool_order);
    shuffle_rng.shuffle(order);

    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const SeriesInstance*> items;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) items.push_back(&train[order[k]]);
      const std::size_t current = items.size();
      if (!pool.empty()) {
        const std::size_t take = std::min(cfg.batch_size, pool.size());
        for (std::size_t r = 0; r < take; ++r) items.push_back(&pool[pool_order[(steps * cfg.batch_size + r) % pool.size()]]);
      }
      Tensor losses = solver_loss(solver.forward(make_batch(items, d, means), ForwardContext::train(dropout_rng)),
                                  solver.targets(items), mode);
      Tensor loss;
      if (items.size() == current) {
        loss = mixed_loss(losses, nullptr, cfg.q);
      } else {
        std::vector<std::size_t> cur(current), rep(items.size() - current);
        for (std::size_t k = 0; k < cur.size(); ++k) cur[k] = k;
        for (std::size_t k = 0; k < rep.size(); ++k) rep[k] = current + k;
        Tensor rep_losses = ops::gather_rows(losses, std::move(rep));
        loss = mixed_loss(ops::gather_rows(losses, std::move(cur)), &rep_losses, cfg.q);
      }
      total += loss.item();
      ++steps;
      GradientMap grads = backward(loss, solver.params());
      adam_step(dense, grads);
      if (!embed.params.empty()) sgd_step(embed, grads);
    }
    trace.train_loss.push_back(total / static_cast<double>(steps));

    const double v = mean_loss(solver, means, val.empty() ? train : val);
    trace.val_loss.push_back(v);
    if (v < best_val) {
      best_val = v;
      best = solver;
      trace.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  if (best) solver = *best;
  return trace;
}

// Copies every parameter from `previous` and, in the output layer, only the
// columns of classes both solvers share; other columns keep their fresh init.
inline void fine_tune_init(Solver& solver, const Solver& previous) {
  const auto& now = solver.config().classes;
  const auto& before = previous.config().classes;
  for (const auto& p : solver.params()) {
    if (!previous.params().contains(p.name)) continue;
    const Tensor& src = previous.params().at(p.name);
    Tensor dst = p.tensor;
    if (p.name == "head.1.weight" || p.name == "head.1.bias") {
      if (solver.config().mode == TaskMode::kRegression) {
        dst.assign(src.values());
        continue;
      }
      auto out = dst.mutable_values();
      auto in = src.values();
      const std::size_t rows = dst.rows();
      for (std::size_t c = 0; c < now.size(); ++c) {
        auto it = std::find(before.begin(), before.end(), now[c]);
        if (it == before.end()) continue;
        const std::size_t old = static_cast<std::size_t>(it - before.begin());
        for (std::size_t r = 0; r < rows; ++r) out[r * now.size() + c] = in[r * before.size() + old];
      }
      continue;
    }
    if (src.shape() == dst.shape()) dst.assign(src.values());
  }
}

struct TaskOutcome {
  std::size_t index = 0;
  SolverTrace solver;
  std::optional<GeneratorTrace> generator;
  std::size_t replay_size = 0;  // first epoch's pool
  std::vector<std::size_t> replay_retained;
  std::size_t replay_draws = 0;
};

class TaskFailure : public std::runtime_error {
 public:
  TaskFailure(std::size_t index, const std::string& what)
      : std::runtime_error("task " + std::to_string(index + 1) + ": " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Trains generator (for replay methods) and solver for one prepared task and
// appends the frozen result to the registry.
inline TaskOutcome train_task(const PreparedTask& task, std::size_t index, TaskRegistry& registry,
                              const MethodConfig& cfg, std::size_t d, std::uint64_t seed) {
  if (task.train.empty()) throw InvalidInput("task has no training series");
  const Method method = registry.method();
  const ModelProfile& prof = cfg.profile;
  TaskOutcome outcome;
  outcome.index = index;

  SensorMeans means = registry.empty() ? SensorMeans(d) : registry.back().means;
  means.add(task.train);

  SolverConfig sc;
  sc.mode = task.spec.mode;
  sc.classes = task.spec.classes;
  sc.sensors = d;
  sc.embedding_width = cfg.embedding_width_for(d);
  sc.hidden = prof.solver_hidden;
  sc.layers = prof.solver_layers;
  sc.conditioning = cfg.variant;
  sc.dropout = cfg.dropout;
  Rng init(derive_seed(seed, Stream::kSolverInit, index));
  Solver solver(sc, init);
  if (method == Method::kFineTune && !registry.empty()) fine_tune_init(solver, registry.back().solver);

  std::optional<Generator> generator;
  if (uses_generator(method)) {
    GeneratorConfig gc;
    gc.sensors = method == Method::kCommonGenerator ? SensorSet::all(d) : task.spec.sensors;
    gc.length = task.train.front().length;
    gc.latent = prof.latent;
    gc.widths = prof.generator_widths;
    gc.beta = cfg.beta;
    gc.noise = cfg.noise;
    const Generator* previous = nullptr;
    if (method == Method::kCommonGenerator && !registry.empty()) {
      previous = &*registry.back().generator;
      generator = *previous;
    } else {
      Rng ginit(derive_seed(seed, Stream::kGeneratorInit, index));
      generator.emplace(gc, ginit);
    }
    GeneratorTrainConfig gt;
    gt.mode = method == Method::kCommonGenerator ? GeneratorMode::kCommon : GeneratorMode::kIndependent;
    gt.max_epochs = prof.generator_epochs;
    gt.patience = cfg.generator_patience;
    gt.batch_size = cfg.batch_size;
    gt.learning_rate = prof.generator_lr;
    gt.q = method == Method::kCommonGenerator ? cfg.q : 1.0;
    outcome.generator = train_generator(*generator, task.train, task.val, gt,
                                        derive_seed(seed, Stream::kGeneratorTrain, index), previous,
                                        method == Method::kCommonGenerator ? &means : nullptr);
  }

  std::vector<SeriesInstance> train = task.train;
  if (method == Method::kUpperBound) {
    for (const auto& stored : registry.raw())
      for (const auto& x : stored)
        if (task.spec.mode == TaskMode::kRegression || solver.has_class(*x.label)) train.push_back(x);
  }

  ReplaySource source;
  if (uses_generator(method) && !registry.empty() && cfg.q < 1.0) {
    const std::size_t n = task.train.size();
    auto draw = [&registry, spec = task.spec, n, seed, index, retry = cfg.retry_factor](std::size_t epoch) {
      return build_replay(registry, spec, n, derive_seed(seed, Stream::kReplay, (index << 20) + epoch), retry);
    };
    ReplayPool first = draw(0);
    outcome.replay_size = first.items.size();
    outcome.replay_retained = first.retained;
    outcome.replay_draws = first.draws;
    means.add(first.items);
    auto cached = std::make_shared<std::vector<SeriesInstance>>(std::move(first.items));
    source = [cached, draw, fresh = !cfg.cached_replay](std::size_t epoch) {
      return epoch == 0 || !fresh ? *cached : draw(epoch).items;
    };
  }

  SolverTrainConfig st;
  st.max_epochs = prof.solver_epochs;
  st.patience = cfg.patience;
  st.batch_size = cfg.batch_size;
  st.learning_rate = prof.solver_lr;
  st.embedding_lr = prof.embedding_lr;
  st.q = cfg.q;
  outcome.solver = train_solver(solver, train, task.val, means, st, derive_seed(seed, {index, 77}), source);

  if (method == Method::kUpperBound) registry.store_raw(task.train);
  registry.append({index, task.spec, task.train.size(), std::move(means), std::move(solver), std::move(generator)});
  return outcome;
}

// Evaluates every M_i on the test series of every task j <= i. Under class
// mismatch only the shared classes are scored.
inline std::vector<MetricRecord> backward_matrix(const TaskRegistry& registry,
                                                 const std::vector<std::vector<SeriesInstance>>& tests,
                                                 const std::string& method, const std::string& scenario,
                                                 std::uint64_t seed) {
  std::vector<MetricRecord> out;
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const CompletedTask& ti = registry.at(i);
    for (std::size_t j = 0; j <= i && j < tests.size(); ++j) {
      const std::vector<int>& yj = registry.at(j).spec.classes;
      if (ti.spec.mode == TaskMode::kClassification) {
        bool shared = false;
        for (int c : yj) shared |= ti.solver.has_class(c);
        if (!shared) continue;
      }
      Evaluation e = evaluate(ti.solver, ti.means, tests[j], ti.spec.mode == TaskMode::kClassification ? &yj : nullptr);
      out.push_back({method, scenario, i + 1, j + 1, seed, e.kind, e.value});
    }
  }
  return out;
}

struct RunHooks {
  // Called after task `index` is trained and frozen; may modify the stream.
  std::function<void(std::size_t index, std::vector<TaskData>& tasks)> after_task;
};

struct RunResult {
  TaskRegistry registry{Method::kTaskSpecific};
  std::vector<TaskOutcome> outcomes;
  std::vector<MetricRecord> metrics;
};

// Trains the stream in order. Test series are normalized with each task's
// statistics when the task is trained and kept for evaluation only.
inline RunResult run_sequence(std::vector<TaskData>& tasks, const MethodConfig& cfg, std::size_t d,
                              std::uint64_t seed, const std::string& scenario, const RunHooks& hooks = {}) {
  cfg.validate();
  RunResult result{TaskRegistry(cfg.method), {}, {}};
  std::vector<std::vector<SeriesInstance>> tests;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    try {
      PreparedTask prepared = prepare_task(tasks[i], i, cfg, seed);
      result.outcomes.push_back(train_task(prepared, i, result.registry, cfg, d, seed));
      tests.push_back(std::move(prepared.test));
    } catch (const TaskFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw TaskFailure(i, e.what());
    }
    if (hooks.after_task) hooks.after_task(i, tasks);
  }
  result.metrics = backward_matrix(result.registry, tests, to_string(cfg.method), scenario, seed);
  return result;
}

}  // namespace vidreplay

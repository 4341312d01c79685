#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "vidreplay/solver.hpp"

namespace vidreplay {

enum class MetricKind { kError, kRmse };

inline std::string to_string(MetricKind k) { return k == MetricKind::kError ? "error" : "rmse"; }

inline MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "error") return MetricKind::kError;
  if (s == "rmse") return MetricKind::kRmse;
  throw InvalidInput("unknown metric kind '" + s + "'");
}

// One row of the metric log: model trained up to task i, evaluated on task j.
struct MetricRecord {
  std::string method;
  std::string scenario;
  std::size_t i = 0;  // 1-based
  std::size_t j = 0;  // 1-based
  std::uint64_t seed = 0;
  MetricKind kind = MetricKind::kError;
  double value = 0.0;
};

struct Evaluation {
  MetricKind kind = MetricKind::kError;
  double value = 0.0;
  std::size_t count = 0;  // series scored
};

// Error rate of argmax predictions, or RMSE for regression. With `classes`,
// only series labelled with one of them are scored and the argmax is taken
// over those outputs alone.
inline Evaluation evaluate(const Solver& solver, const SensorMeans& means, const std::vector<SeriesInstance>& test,
                           const std::vector<int>* classes = nullptr, std::size_t chunk = 256) {
  const auto& cfg = solver.config();
  std::vector<const SeriesInstance*> scored;
  std::vector<bool> allowed;
  if (cfg.mode == TaskMode::kClassification) {
    std::set<int> keep(cfg.classes.begin(), cfg.classes.end());
    if (classes) {
      std::set<int> other(classes->begin(), classes->end());
      std::erase_if(keep, [&](int c) { return !other.count(c); });
    }
    for (int c : cfg.classes) allowed.push_back(keep.count(c) > 0);
    for (const auto& x : test) {
      if (!x.label) throw InvalidInput("evaluate: test series without a label");
      if (keep.count(*x.label)) scored.push_back(&x);
    }
  } else {
    for (const auto& x : test) {
      if (!x.target) throw InvalidInput("evaluate: test series without a target");
      scored.push_back(&x);
    }
  }
  if (scored.empty()) throw InvalidInput("evaluate: empty test set");

  Evaluation out;
  out.kind = cfg.mode == TaskMode::kClassification ? MetricKind::kError : MetricKind::kRmse;
  out.count = scored.size();
  double acc = 0.0;
  for (std::size_t start = 0; start < scored.size(); start += chunk) {
    std::vector<const SeriesInstance*> part(scored.begin() + static_cast<long>(start),
                                            scored.begin() + static_cast<long>(std::min(scored.size(), start + chunk)));
    Tensor pred = solver.predict(make_batch(part, cfg.sensors, means));
    for (std::size_t b = 0; b < part.size(); ++b) {
      if (cfg.mode == TaskMode::kClassification) {
        acc += cfg.classes[argmax_row(pred, b, allowed)] != *part[b]->label ? 1.0 : 0.0;
      } else {
        const double e = pred(b, 0) - *part[b]->target;
        acc += e * e;
      }
    }
  }
  out.value = cfg.mode == TaskMode::kClassification ? acc / static_cast<double>(out.count)
                                                    : std::sqrt(acc / static_cast<double>(out.count));
  return out;
}

// Mean per-series loss in evaluation mode.
inline double mean_loss(const Solver& solver, const SensorMeans& means, const std::vector<SeriesInstance>& data,
                        std::size_t chunk = 256) {
  if (data.empty()) throw InvalidInput("mean_loss: empty data");
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    std::vector<const SeriesInstance*> part;
    for (std::size_t k = start; k < std::min(data.size(), start + chunk); ++k) part.push_back(&data[k]);
    Tensor pred = solver.forward(make_batch(part, solver.config().sensors, means), ForwardContext::eval());
    total += ops::sum(solver_loss(pred, solver.targets(part), solver.config().mode)).item();
  }
  return total / static_cast<double>(data.size());
}

}  // namespace vidreplay

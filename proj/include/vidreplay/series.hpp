#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vidreplay/errors.hpp"

namespace vidreplay {

// Fixed, ordered sensor identifiers s_1..s_d. The position of a sensor in the
// catalog is its index everywhere else (imputation layout, embedding rows).
class SensorCatalog {
 public:
  SensorCatalog() = default;
  explicit SensorCatalog(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(names_[i], i).second) throw InvalidInput("sensor catalog: duplicate id '" + names_[i] + "'");
    }
  }

  static SensorCatalog numbered(std::size_t d) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < d; ++i) names.push_back("s" + std::to_string(i + 1));
    return SensorCatalog(std::move(names));
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown sensor identifier '" + name + "'");
    return it->second;
  }

  bool operator==(const SensorCatalog& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

// Set of catalog indices, kept sorted and unique so equal sets compare equal
// regardless of the order they were listed in.
class SensorSet {
 public:
  SensorSet() = default;
  SensorSet(std::vector<std::size_t> indices) : indices_(std::move(indices)) {  // NOLINT
    std::sort(indices_.begin(), indices_.end());
    if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end()) {
      throw InvalidInput("sensor set: duplicate sensor index");
    }
  }
  SensorSet(std::initializer_list<std::size_t> indices) : SensorSet(std::vector<std::size_t>(indices)) {}

  static SensorSet all(std::size_t d) {
    std::vector<std::size_t> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = i;
    return SensorSet(std::move(v));
  }

  static SensorSet from_names(const SensorCatalog& catalog, const std::vector<std::string>& names) {
    std::vector<std::size_t> v;
    for (const auto& n : names) v.push_back(catalog.index_of(n));
    return SensorSet(std::move(v));
  }

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  const std::vector<std::size_t>& indices() const { return indices_; }
  std::size_t operator[](std::size_t k) const { return indices_[k]; }
  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }

  bool contains(std::size_t s) const { return std::binary_search(indices_.begin(), indices_.end(), s); }

  // Position of sensor s within this set.
  std::size_t position(std::size_t s) const {
    auto it = std::lower_bound(indices_.begin(), indices_.end(), s);
    if (it == indices_.end() || *it != s) throw InvalidInput("sensor " + std::to_string(s) + " not in set");
    return static_cast<std::size_t>(it - indices_.begin());
  }

  // "1010..." over a catalog of width d.
  std::string mask_string(std::size_t d) const {
    std::string m(d, '0');
    for (auto s : indices_) m.at(s) = '1';
    return m;
  }

  // "{0,3,4}"
  std::string describe() const {
    std::string out = "{";
    for (std::size_t k = 0; k < indices_.size(); ++k) out += (k ? "," : "") + std::to_string(indices_[k]);
    return out + "}";
  }

  auto operator<=>(const SensorSet&) const = default;

 private:
  std::vector<std::size_t> indices_;
};

// One multivariate series over a sensor subset; values are T x |sensors|,
// row-major. Every listed sensor is present at every step.
struct SeriesInstance {
  SensorSet sensors;
  std::size_t length = 0;
  std::vector<double> values;
  std::optional<int> label;      // classification target (global class id)
  std::optional<double> target;  // regression target in [0,1]

  double at(std::size_t t, std::size_t k) const { return values[t * sensors.size() + k]; }
  double& at(std::size_t t, std::size_t k) { return values[t * sensors.size() + k]; }

  void validate() const {
    if (length == 0) throw InvalidInput("series: length must be >= 1");
    if (sensors.empty()) throw InvalidInput("series: empty sensor subset");
    if (values.size() != length * sensors.size()) {
      throw InvalidInput("series: expected " + std::to_string(length * sensors.size()) + " values, got " +
                         std::to_string(values.size()));
    }
  }
};

enum class TaskMode { kClassification, kRegression };

struct TaskSpec {
  SensorSet sensors;
  std::vector<int> classes;  // sorted; empty for regression
  TaskMode mode = TaskMode::kClassification;
};

// A task's labelled series plus its held-out test series.
struct TaskData {
  TaskSpec spec;
  std::vector<SeriesInstance> instances;
  std::vector<SeriesInstance> test;
};

}  // namespace vidreplay

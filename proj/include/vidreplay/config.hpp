#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "vidreplay/eval.hpp"

namespace vidreplay {

struct ExperimentConfig {
  StreamConfig stream;
  MethodConfig method;
  std::string profile = "desk";
  std::string out = "runs";
  std::optional<std::uint64_t> seed;  // first seed; falls back to VIDREPLAY_SEED, then 1
  std::size_t seed_count = 1;
  std::vector<std::uint64_t> seeds;  // explicit list overrides seed + seed_count
  std::string data;                  // load the stream from this directory instead of synthesizing it
  AblationConfig ablation;

  std::vector<std::uint64_t> seed_list() const {
    if (!seeds.empty()) return seeds;
    std::uint64_t first = 1;
    if (seed) {
      first = *seed;
    } else if (const char* env = std::getenv("VIDREPLAY_SEED"); env && *env) {
      const std::string s(env);
      std::uint64_t v = 0;
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("VIDREPLAY_SEED", "not an integer: " + s);
      first = v;
    }
    std::vector<std::uint64_t> out;
    for (std::size_t k = 0; k < seed_count; ++k) out.push_back(first + k);
    return out;
  }

  std::string scenario_name() const { return stream.regression ? "regression" : to_string(stream.scenario); }
};

namespace detail {

using nlohmann::json;

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
}

inline void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(join_path(path, it.key()), "unknown key");
}

template <typename T>
void read(const json& j, const std::string& path, const char* key, T& dst) {
  auto it = j.find(key);
  if (it == j.end()) return;
  const std::string p = join_path(path, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw ConfigError(p, "expected a boolean");
    dst = it->template get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer() || (std::is_unsigned_v<T> && it->template get<long long>() < 0))
      throw ConfigError(p, "expected a non-negative integer");
    dst = it->template get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) throw ConfigError(p, "expected a number");
    dst = it->template get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw ConfigError(p, "expected a string");
    dst = it->template get<std::string>();
  } else {
    static_assert(sizeof(T) == 0, "unsupported config type");
  }
}

template <typename E, typename Parse>
void read_enum(const json& j, const std::string& path, const char* key, E& dst, Parse parse) {
  std::string s;
  read(j, path, key, s);
  if (!j.contains(key)) return;
  try {
    dst = parse(s);
  } catch (const InvalidInput& e) {
    throw ConfigError(join_path(path, key), e.what());
  }
}

inline void parse_stream(const json& j, StreamConfig& s) {
  const std::string p = "stream";
  require_object(j, p);
  reject_unknown(j, p,
                 {"d", "classes", "tasks", "n", "n_test", "length", "hidden", "keep", "scenario", "base_classes",
                  "replace", "regression", "obs_noise", "process_noise", "init_spread", "class_separation"});
  read(j, p, "d", s.d);
  read(j, p, "classes", s.classes);
  read(j, p, "tasks", s.tasks);
  read(j, p, "n", s.n);
  read(j, p, "n_test", s.n_test);
  read(j, p, "length", s.length);
  read(j, p, "hidden", s.hidden);
  read(j, p, "keep", s.keep);
  read_enum(j, p, "scenario", s.scenario, class_scenario_from_string);
  read(j, p, "base_classes", s.base_classes);
  read(j, p, "replace", s.replace);
  read(j, p, "regression", s.regression);
  read(j, p, "obs_noise", s.obs_noise);
  read(j, p, "process_noise", s.process_noise);
  read(j, p, "init_spread", s.init_spread);
  read(j, p, "class_separation", s.class_separation);
}

inline void parse_method(const json& j, MethodConfig& m) {
  const std::string p = "method";
  require_object(j, p);
  reject_unknown(j, p,
                 {"method", "variant", "q", "batch_size", "patience", "generator_patience", "embedding_width",
                  "dropout", "val_fraction", "norm", "cached_replay", "retry_factor", "beta", "noise"});
  read_enum(j, p, "method", m.method, method_from_string);
  read_enum(j, p, "variant", m.variant, conditioning_from_string);
  read(j, p, "q", m.q);
  read(j, p, "batch_size", m.batch_size);
  read(j, p, "patience", m.patience);
  read(j, p, "generator_patience", m.generator_patience);
  read(j, p, "embedding_width", m.embedding_width);
  read(j, p, "dropout", m.dropout);
  read(j, p, "val_fraction", m.val_fraction);
  if (j.contains("norm")) {
    NormMode n{};
    read_enum(j, p, "norm", n, norm_mode_from_string);
    m.norm = n;
  }
  read(j, p, "cached_replay", m.cached_replay);
  read(j, p, "retry_factor", m.retry_factor);
  read(j, p, "beta", m.beta);
  read_enum(j, p, "noise", m.noise, noise_scale_from_string);
}

inline void parse_profile_overrides(const json& j, ModelProfile& prof) {
  const std::string p = "profile";
  reject_unknown(j, p,
                 {"name", "solver_hidden", "solver_layers", "generator_widths", "latent", "solver_lr", "embedding_lr",
                  "generator_lr", "solver_epochs", "generator_epochs"});
  read(j, p, "solver_hidden", prof.solver_hidden);
  read(j, p, "solver_layers", prof.solver_layers);
  if (auto it = j.find("generator_widths"); it != j.end()) {
    if (!it->is_array() || it->empty()) throw ConfigError("profile.generator_widths", "expected a non-empty array");
    prof.generator_widths.clear();
    for (const auto& w : *it) {
      if (!w.is_number_integer() || w.get<long long>() <= 0)
        throw ConfigError("profile.generator_widths", "expected positive integers");
      prof.generator_widths.push_back(w.get<std::size_t>());
    }
  }
  read(j, p, "latent", prof.latent);
  read(j, p, "solver_lr", prof.solver_lr);
  read(j, p, "embedding_lr", prof.embedding_lr);
  read(j, p, "generator_lr", prof.generator_lr);
  read(j, p, "solver_epochs", prof.solver_epochs);
  read(j, p, "generator_epochs", prof.generator_epochs);
}

inline void parse_ablation(const json& j, AblationConfig& a) {
  const std::string p = "ablation";
  require_object(j, p);
  reject_unknown(j, p, {"n", "missing", "mask_count", "fine_tune", "fine_tune_epochs", "variants"});
  read(j, p, "n", a.stream.n);
  read(j, p, "missing", a.missing);
  read(j, p, "mask_count", a.mask_count);
  read(j, p, "fine_tune", a.fine_tune);
  read(j, p, "fine_tune_epochs", a.fine_tune_epochs);
  if (auto it = j.find("variants"); it != j.end()) {
    if (!it->is_array() || it->empty()) throw ConfigError("ablation.variants", "expected a non-empty array");
    a.variants.clear();
    for (const auto& v : *it) {
      if (!v.is_string()) throw ConfigError("ablation.variants", "expected strings");
      try {
        a.variants.push_back(conditioning_from_string(v.get<std::string>()));
      } catch (const InvalidInput& e) {
        throw ConfigError("ablation.variants", e.what());
      }
    }
  }
}

}  // namespace detail

// Builds a config from a JSON document. Unknown keys and type mismatches are
// reported with their dotted path.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read;
  ExperimentConfig c;
  c.ablation.stream.n = 1500;
  detail::require_object(j, "");
  detail::reject_unknown(j, "", {"stream", "method", "profile", "out", "seed", "seeds", "seed_count", "data", "ablation"});
  if (j.contains("stream")) detail::parse_stream(j.at("stream"), c.stream);
  if (j.contains("method")) detail::parse_method(j.at("method"), c.method);
  std::optional<nlohmann::json> overrides;
  if (auto it = j.find("profile"); it != j.end()) {
    if (it->is_string()) {
      c.profile = it->get<std::string>();
    } else if (it->is_object()) {
      read(*it, "profile", "name", c.profile);
      overrides = *it;
    } else {
      throw ConfigError("profile", "expected a name or an object");
    }
  }
  read(j, "", "out", c.out);
  read(j, "", "data", c.data);
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    read(j, "", "seed", s);
    c.seed = s;
  }
  read(j, "", "seed_count", c.seed_count);
  if (auto it = j.find("seeds"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("seeds", "expected an array");
    for (const auto& s : *it) {
      if (!s.is_number_unsigned()) throw ConfigError("seeds", "expected non-negative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (j.contains("ablation")) detail::parse_ablation(j.at("ablation"), c.ablation);
  try {
    c.method.profile = ModelProfile::named(c.profile, c.stream.regression ? TaskMode::kRegression : TaskMode::kClassification);
  } catch (const InvalidInput& e) {
    throw ConfigError("profile", e.what());
  }
  if (overrides) detail::parse_profile_overrides(*overrides, c.method.profile);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

// Range checks after flags are applied; fills in the embedding width.
inline void finalize(ExperimentConfig& c) {
  try {
    c.stream.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError("stream", e.what());
  }
  try {
    c.method.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("method." + e.path(), e.message());
  }
  if (c.method.embedding_width == 0) c.method.embedding_width = std::max<std::size_t>(1, c.stream.d / 2);
  if (c.seeds.empty() && c.seed_count == 0) throw ConfigError("seed_count", "must be >= 1");
  if (c.ablation.missing < 0.0 || c.ablation.missing >= 1.0) throw ConfigError("ablation.missing", "must be in [0, 1)");
  c.ablation.stream.d = c.stream.d;
  c.ablation.stream.classes = c.stream.classes;
  c.ablation.stream.length = c.stream.length;
  c.ablation.stream.hidden = c.stream.hidden;
  c.ablation.stream.obs_noise = c.stream.obs_noise;
  c.ablation.stream.process_noise = c.stream.process_noise;
  c.ablation.stream.init_spread = c.stream.init_spread;
  c.ablation.stream.class_separation = c.stream.class_separation;
  c.ablation.method = c.method;
}

inline nlohmann::json profile_json(const ModelProfile& p) {
  return {{"name", p.name},
          {"solver_hidden", p.solver_hidden},
          {"solver_layers", p.solver_layers},
          {"generator_widths", p.generator_widths},
          {"latent", p.latent},
          {"solver_lr", p.solver_lr},
          {"embedding_lr", p.embedding_lr},
          {"generator_lr", p.generator_lr},
          {"solver_epochs", p.solver_epochs},
          {"generator_epochs", p.generator_epochs}};
}

// Fully resolved config; parse_config(to_json(c)) reproduces it.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  const StreamConfig& s = c.stream;
  const MethodConfig& m = c.method;
  nlohmann::json method = {{"method", to_string(m.method)},
                           {"variant", to_string(m.variant)},
                           {"q", m.q},
                           {"batch_size", m.batch_size},
                           {"patience", m.patience},
                           {"generator_patience", m.generator_patience},
                           {"embedding_width", m.embedding_width},
                           {"dropout", m.dropout},
                           {"val_fraction", m.val_fraction},
                           {"cached_replay", m.cached_replay},
                           {"retry_factor", m.retry_factor},
                           {"beta", m.beta},
                           {"noise", to_string(m.noise)}};
  if (m.norm) method["norm"] = to_string(*m.norm);
  std::vector<std::string> variants;
  for (auto v : c.ablation.variants) variants.push_back(to_string(v));
  nlohmann::json out = {
      {"stream",
       {{"d", s.d},
        {"classes", s.classes},
        {"tasks", s.tasks},
        {"n", s.n},
        {"n_test", s.n_test},
        {"length", s.length},
        {"hidden", s.hidden},
        {"keep", s.keep},
        {"scenario", to_string(s.scenario)},
        {"base_classes", s.base_classes},
        {"replace", s.replace},
        {"regression", s.regression},
        {"obs_noise", s.obs_noise},
        {"process_noise", s.process_noise},
        {"init_spread", s.init_spread},
        {"class_separation", s.class_separation}}},
      {"method", method},
      {"profile", profile_json(m.profile)},
      {"out", c.out},
      {"seeds", c.seed_list()},
      {"ablation",
       {{"n", c.ablation.stream.n},
        {"missing", c.ablation.missing},
        {"mask_count", c.ablation.mask_count},
        {"fine_tune", c.ablation.fine_tune},
        {"fine_tune_epochs", c.ablation.fine_tune_epochs},
        {"variants", variants}}}};
  if (!c.data.empty()) out["data"] = c.data;
  return out;
}

}  // namespace vidreplay

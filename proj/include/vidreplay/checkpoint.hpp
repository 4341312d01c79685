#pragma once

#include <fstream>
#include <string>

#include "json.hpp"
#include "vidreplay/errors.hpp"
#include "vidreplay/optim.hpp"

namespace vidreplay {

inline constexpr const char* kCheckpointFormat = "vidreplay.params.v1";

// {"format": ..., "header": {...}, "params": {name: {"shape": [...], "values": [...]}}}
inline nlohmann::json params_to_json(const ParamStore& params, nlohmann::json header = nlohmann::json::object()) {
  nlohmann::json doc;
  doc["format"] = kCheckpointFormat;
  doc["header"] = std::move(header);
  auto& out = doc["params"] = nlohmann::json::object();
  for (const auto& p : params) {
    out[p.name] = {{"shape", p.tensor.shape()},
                   {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}};
  }
  return doc;
}

// Loads values into an already-built store; every stored name must be present
// in the document with a matching shape.
inline void params_from_json(const nlohmann::json& doc, ParamStore& params) {
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat) {
    throw InvalidInput("checkpoint: missing or unsupported format tag");
  }
  const auto& stored = doc.at("params");
  if (stored.size() != params.size()) throw InvalidInput("checkpoint: parameter count mismatch");
  for (const auto& p : params) {
    if (!stored.contains(p.name)) throw InvalidInput("checkpoint: missing parameter '" + p.name + "'");
    const auto& entry = stored.at(p.name);
    if (entry.at("shape").get<Shape>() != p.tensor.shape()) {
      throw ShapeError("checkpoint: shape mismatch for '" + p.name + "'");
    }
    const auto values = entry.at("values").get<std::vector<double>>();
    Tensor(p.tensor).assign(values);
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot open '" + path + "' for writing");
  out << doc.dump(1) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  return nlohmann::json::parse(in);
}

}  // namespace vidreplay

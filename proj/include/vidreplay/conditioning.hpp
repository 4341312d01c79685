#pragma once

#include <string>
#include <vector>

#include "vidreplay/layers.hpp"
#include "vidreplay/ops.hpp"
#include "vidreplay/series.hpp"

namespace vidreplay {

// Edge network f_e and node network f_n over sensor embeddings of width d'.
// Both are 2d' -> d' -> d' with a leaky rectifier and dropout between layers.
struct GnnParams {
  GnnParams() = default;
  GnnParams(ParamStore& store, const std::string& prefix, std::size_t width, double dropout)
      : edge(store, prefix + ".edge", 2 * width, width, width, dropout),
        node(store, prefix + ".node", 2 * width, width, width, dropout) {}

  void init(Rng& rng) {
    edge.init(rng);
    node.init(rng);
  }

  std::size_t width() const { return edge.second.out(); }

  FeedForward edge;
  FeedForward node;
};

struct ConditioningVector {
  Tensor value;  // [1, d']
  SensorSet sensors;
};

namespace detail {

inline void require_width(const char* op, const Tensor& v, std::size_t width) {
  if (v.rank() != 2 || v.rows() != 1 || v.cols() != width) {
    throw ShapeError(std::string(op) + ": expected [1," + std::to_string(width) + "], got " + to_string(v.shape()));
  }
}

}  // namespace detail

// Message from node l to node a: f_e([v_a, v_l]).
inline Tensor edge_message(const Tensor& v_a, const Tensor& v_l, const GnnParams& gnn, const ForwardContext& ctx) {
  detail::require_width("edge_message", v_a, gnn.width());
  detail::require_width("edge_message", v_l, gnn.width());
  return gnn.edge(ops::concat_cols({v_a, v_l}), ctx);
}

// f_n([v_a, sum of messages]); an empty message set sums to zero.
inline Tensor node_update(const Tensor& v_a, const std::vector<Tensor>& messages, const GnnParams& gnn,
                          const ForwardContext& ctx) {
  detail::require_width("node_update", v_a, gnn.width());
  Tensor aggregate = Tensor::zeros({1, gnn.width()});
  for (const auto& m : messages) {
    detail::require_width("node_update", m, gnn.width());
    aggregate = ops::add(aggregate, m);
  }
  return gnn.node(ops::concat_cols({v_a, aggregate}), ctx);
}

// One synchronous round of message passing over the fully connected graph of
// active sensors (no self loops), then the dimension-wise max over updated
// nodes. Messages are computed for all ordered pairs in one batch.
inline ConditioningVector conditioning_vector(const SensorSet& active, const Tensor& embeddings,
                                              const GnnParams& gnn, const ForwardContext& ctx) {
  if (active.empty()) throw InvalidInput("conditioning_vector: empty active sensor set");
  if (embeddings.cols() != gnn.width()) {
    throw ShapeError("conditioning_vector: embeddings " + to_string(embeddings.shape()) + " vs GNN width " +
                     std::to_string(gnn.width()));
  }
  const std::size_t n = active.size();
  const std::size_t width = gnn.width();
  Tensor nodes = ops::gather_rows(embeddings, active.indices());

  Tensor aggregate;
  if (n == 1) {
    aggregate = Tensor::zeros({1, width});
  } else {
    std::vector<std::size_t> to, from;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t l = 0; l < n; ++l) {
        if (a == l) continue;
        to.push_back(active[a]);
        from.push_back(active[l]);
      }
    }
    const std::size_t pairs = to.size();
    Tensor messages = gnn.edge(
        ops::concat_cols({ops::gather_rows(embeddings, std::move(to)), ops::gather_rows(embeddings, std::move(from))}),
        ctx);
    // Row a of the incidence matrix selects the n-1 messages addressed to a.
    std::vector<double> incidence(n * pairs, 0.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t k = 0; k < n - 1; ++k) incidence[a * pairs + a * (n - 1) + k] = 1.0;
    aggregate = ops::matmul(Tensor({n, pairs}, std::move(incidence)), messages);
  }
  Tensor updated = gnn.node(ops::concat_cols({nodes, aggregate}), ctx);
  return {ops::max_rows(updated), active};
}

// Solver-MH: 1.0 at active catalog indices.
inline Tensor multi_hot_conditioning(const SensorSet& active, std::size_t catalog_size) {
  std::vector<double> v(catalog_size, 0.0);
  for (auto s : active) {
    if (s >= catalog_size) throw InvalidInput("multi_hot_conditioning: sensor index outside catalog");
    v[s] = 1.0;
  }
  return Tensor::row(std::move(v));
}

// Solver-SE: dimension-wise max over the raw embeddings of active sensors.
inline Tensor embedding_max_conditioning(const SensorSet& active, const Tensor& embeddings) {
  if (active.empty()) throw InvalidInput("embedding_max_conditioning: empty active sensor set");
  return ops::max_rows(ops::gather_rows(embeddings, active.indices()));
}

}  // namespace vidreplay

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vidreplay/ops.hpp"
#include "vidreplay/optim.hpp"
#include "vidreplay/random.hpp"

namespace vidreplay {

// Train/eval switch plus the stream dropout masks are drawn from.
struct ForwardContext {
  bool training = false;
  Rng* dropout_rng = nullptr;

  static ForwardContext eval() { return {}; }
  static ForwardContext train(Rng& rng) { return {true, &rng}; }
};

inline Tensor apply_dropout(const Tensor& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate == 0.0) return x;
  if (!ctx.dropout_rng) throw StateError("dropout: training mode without a random stream");
  return ops::dropout(x, rate, *ctx.dropout_rng, true);
}

inline void fill_uniform(Tensor& t, Rng& rng, double bound) {
  auto v = t.mutable_values();
  for (double& x : v) x = rng.uniform(-bound, bound);
}

// Affine map x W + b with W:[in,out], b:[1,out].
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out)
      : weight(store.add(name + ".weight", {in, out})), bias(store.add(name + ".bias", {1, out})) {}

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in()));
    fill_uniform(weight, rng, bound);
    fill_uniform(bias, rng, bound);
  }

  Tensor operator()(const Tensor& x) const { return ops::add(ops::matmul(x, weight), bias); }

  std::size_t in() const { return weight.shape()[0]; }
  std::size_t out() const { return weight.shape()[1]; }

  Tensor weight;
  Tensor bias;
};

// Two affine layers: in -> hidden (leaky rectifier, dropout) -> out.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
              double dropout)
      : first(store, name + ".0", in, hidden), second(store, name + ".1", hidden, out), dropout(dropout) {}

  void init(Rng& rng) {
    first.init(rng);
    second.init(rng);
  }

  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const {
    return second(apply_dropout(ops::leaky_relu(first(x)), dropout, ctx));
  }

  Linear first;
  Linear second;
  double dropout = 0.0;
};

class GruLayer {
 public:
  GruLayer() = default;
  GruLayer(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden)
      : wx(store.add(name + ".wx", {in, 3 * hidden})),
        wh(store.add(name + ".wh", {hidden, 3 * hidden})),
        bx(store.add(name + ".bx", {1, 3 * hidden})),
        bh(store.add(name + ".bh", {1, 3 * hidden})) {}

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden()));
    for (Tensor* t : {&wx, &wh, &bx, &bh}) fill_uniform(*t, rng, bound);
  }

  Tensor step(const Tensor& x, const Tensor& h) const { return ops::gru_cell(x, h, wx, wh, bx, bh); }

  std::size_t in() const { return wx.shape()[0]; }
  std::size_t hidden() const { return wh.shape()[0]; }

  Tensor wx, wh, bx, bh;
};

// Stacked GRU; layer k consumes the hidden sequence of layer k-1.
class GruStack {
 public:
  GruStack() = default;
  GruStack(ParamStore& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& widths) {
    std::size_t width = in;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      layers.emplace_back(store, name + "." + std::to_string(k), width, widths[k]);
      width = widths[k];
    }
  }

  void init(Rng& rng) {
    for (auto& l : layers) l.init(rng);
  }

  // Returns the top layer's hidden state at every step, each [B, top width].
  std::vector<Tensor> run(const std::vector<Tensor>& inputs) const {
    if (inputs.empty()) throw InvalidInput("gru: sequence of length 0");
    std::vector<Tensor> seq = inputs;
    for (const auto& layer : layers) {
      Tensor h = Tensor::zeros({seq.front().rows(), layer.hidden()});
      for (auto& x : seq) {
        h = layer.step(x, h);
        x = h;
      }
    }
    return seq;
  }

  Tensor last(const std::vector<Tensor>& inputs) const { return run(inputs).back(); }

  std::size_t top_width() const { return layers.back().hidden(); }

  std::vector<GruLayer> layers;
};

}  // namespace vidreplay

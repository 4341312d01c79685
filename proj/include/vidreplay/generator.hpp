#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vidreplay/checkpoint.hpp"
#include "vidreplay/layers.hpp"
#include "vidreplay/optim.hpp"
#include "vidreplay/series.hpp"
#include "vidreplay/solver.hpp"

namespace vidreplay {

// Which quantity scales the noise in the reparameterization.
enum class NoiseScale {
  kVariance,  // z = mu + exp(lv) * eps
  kStddev,    // z = mu + exp(lv / 2) * eps
};

inline std::string to_string(NoiseScale s) { return s == NoiseScale::kVariance ? "variance" : "stddev"; }

inline NoiseScale noise_scale_from_string(const std::string& s) {
  if (s == "variance") return NoiseScale::kVariance;
  if (s == "stddev") return NoiseScale::kStddev;
  throw InvalidInput("unknown noise scale '" + s + "' (expected variance or stddev)");
}

struct GeneratorConfig {
  SensorSet sensors;  // modelled sensors; input and output width is |sensors|
  std::size_t length = 0;
  std::size_t latent = 8;
  std::vector<std::size_t> widths = {32, 32};  // encoder; the decoder mirrors it
  double beta = 1.0;
  NoiseScale noise = NoiseScale::kVariance;

  std::size_t width() const { return sensors.size(); }
};

struct Encoding {
  Tensor mu;      // [B, latent]
  Tensor logvar;  // [B, latent]
};

struct VaeLoss {
  Tensor total;           // [1,1], batch mean
  Tensor reconstruction;  // [1,1]
  Tensor kl;              // [1,1], before the beta / 2d' weight
};

// Time-major view of generator inputs: steps[t] is [B, |S|].
struct GeneratorBatch {
  std::vector<Tensor> steps;
};

// Recurrent VAE over a fixed sensor subset and series length.
class Generator {
 public:
  Generator() = default;

  explicit Generator(GeneratorConfig config) : config_(std::move(config)) { build(); }

  Generator(GeneratorConfig config, Rng& init) : Generator(std::move(config)) { initialize(init); }

  Generator(const Generator& other) : Generator(other.config_) { params_.copy_values_from(other.params_); }

  Generator& operator=(const Generator& other) {
    if (this != &other) {
      Generator copy(other);
      *this = std::move(copy);
    }
    return *this;
  }

  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  void initialize(Rng& rng) {
    encoder_.init(rng);
    mu_.init(rng);
    logvar_.init(rng);
    decoder_.init(rng);
    output_.init(rng);
  }

  const GeneratorConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Encoding encode(const GeneratorBatch& x) const {
    if (x.steps.empty()) throw InvalidInput("generator: series of length 0");
    for (const auto& s : x.steps) {
      if (s.cols() != config_.width()) {
        throw InvalidInput("generator: input has " + std::to_string(s.cols()) + " sensors, generator models " +
                           std::to_string(config_.width()));
      }
    }
    Tensor h = encoder_.last(x.steps);
    return {mu_(h), logvar_(h)};
  }

  Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps) const {
    Tensor scale = config_.noise == NoiseScale::kVariance ? ops::exp(logvar) : ops::exp(ops::scale(logvar, 0.5));
    return ops::add(mu, ops::mul(scale, eps));
  }

  // z is fed as the input at every step; returns `length` steps of [B, |S|].
  std::vector<Tensor> decode(const Tensor& z, std::size_t length) const {
    if (z.cols() != config_.latent) {
      throw ShapeError("decode: latent width " + std::to_string(z.cols()) + " != " + std::to_string(config_.latent));
    }
    std::vector<Tensor> hidden = decoder_.run(std::vector<Tensor>(length, z));
    std::vector<Tensor> out;
    out.reserve(length);
    for (const auto& h : hidden) out.push_back(output_(h));
    return out;
  }

  // Standard-normal noise for a batch of b rows.
  Tensor noise(std::size_t b, Rng& rng) const {
    std::vector<double> e(b * config_.latent);
    for (double& v : e) v = rng.normal();
    return Tensor({b, config_.latent}, std::move(e));
  }

  VaeLoss loss(const GeneratorBatch& x, Rng& eps_rng) const {
    Encoding enc = encode(x);
    Tensor z = reparameterize(enc.mu, enc.logvar, noise(enc.mu.rows(), eps_rng));
    return vae_loss(x.steps, decode(z, x.steps.size()), enc.mu, enc.logvar, config_.beta);
  }

  // Per-instance loss averaged over the batch:
  //   (1/2T) sum_t |x_t - xhat_t|^2 + (beta/2d') sum_j (mu^2 + s^2 - 1 - log s^2)
  static VaeLoss vae_loss(const std::vector<Tensor>& x, const std::vector<Tensor>& xhat, const Tensor& mu,
                          const Tensor& logvar, double beta) {
    if (x.size() != xhat.size() || x.empty()) throw ShapeError("vae_loss: sequence lengths differ");
    const double length = static_cast<double>(x.size());
    Tensor recon;
    for (std::size_t t = 0; t < x.size(); ++t) {
      Tensor term = ops::row_sums(ops::square(ops::sub(x[t], xhat[t])));
      recon = t == 0 ? term : ops::add(recon, term);
    }
    Tensor recon_mean = ops::mean(ops::scale(recon, 1.0 / (2.0 * length)));
    Tensor kl_mean = ops::mean(ops::gaussian_kl(mu, logvar));
    const double kl_weight = beta / (2.0 * static_cast<double>(mu.cols()));
    return {ops::add(recon_mean, ops::scale(kl_mean, kl_weight)), recon_mean, kl_mean};
  }

  nlohmann::json header_json() const {
    return {{"sensors", config_.sensors.indices()}, {"T", config_.length},          {"latent", config_.latent},
            {"widths", config_.widths},             {"beta", config_.beta},         {"noise", to_string(config_.noise)}};
  }

  static GeneratorConfig config_from_header(const nlohmann::json& h) {
    GeneratorConfig c;
    c.sensors = SensorSet(h.at("sensors").get<std::vector<std::size_t>>());
    c.length = h.at("T").get<std::size_t>();
    c.latent = h.at("latent").get<std::size_t>();
    c.widths = h.at("widths").get<std::vector<std::size_t>>();
    c.beta = h.at("beta").get<double>();
    c.noise = noise_scale_from_string(h.at("noise").get<std::string>());
    return c;
  }

 private:
  void build() {
    const auto& c = config_;
    if (c.sensors.empty()) throw InvalidInput("generator: empty sensor subset");
    if (c.latent == 0) throw InvalidInput("generator: latent width must be >= 1");
    if (c.length == 0) throw InvalidInput("generator: series length must be >= 1");
    if (c.widths.empty()) throw InvalidInput("generator: needs at least one GRU layer");
    encoder_ = GruStack(params_, "encoder", c.width(), c.widths);
    mu_ = Linear(params_, "mu", c.widths.back(), c.latent);
    logvar_ = Linear(params_, "logvar", c.widths.back(), c.latent);
    std::vector<std::size_t> mirrored(c.widths.rbegin(), c.widths.rend());
    decoder_ = GruStack(params_, "decoder", c.latent, mirrored);
    output_ = Linear(params_, "output", mirrored.back(), c.width());
  }

  GeneratorConfig config_;
  ParamStore params_;
  GruStack encoder_;
  Linear mu_;
  Linear logvar_;
  GruStack decoder_;
  Linear output_;
};

// Generator inputs from series. A series over exactly the generator's sensors
// is used as is; with `means`, series over other subsets are imputed to the
// full catalog (the common generator models every sensor).
inline GeneratorBatch generator_batch(const std::vector<const SeriesInstance*>& items, const GeneratorConfig& config,
                                      const SensorMeans* means = nullptr) {
  if (items.empty()) throw InvalidInput("generator: no series");
  const std::size_t length = items.front()->length;
  const std::size_t b = items.size(), w = config.width();
  std::vector<std::vector<double>> steps(length, std::vector<double>(b * w));
  for (std::size_t i = 0; i < b; ++i) {
    const SeriesInstance& x = *items[i];
    x.validate();
    if (x.length != length) throw InvalidInput("generator: series lengths differ within a batch");
    if (x.sensors == config.sensors) {
      for (std::size_t t = 0; t < length; ++t) std::copy_n(x.values.data() + t * w, w, steps[t].data() + i * w);
      continue;
    }
    if (!means || config.sensors != SensorSet::all(w)) {
      throw InvalidInput("generator: series sensor subset " + x.sensors.describe() + " does not match the generator's " +
                         config.sensors.describe());
    }
    Tensor dense = impute_and_index(x, w, *means);
    auto v = dense.values();
    for (std::size_t t = 0; t < length; ++t) std::copy_n(v.data() + t * w, w, steps[t].data() + i * w);
  }
  GeneratorBatch out;
  for (auto& s : steps) out.steps.emplace_back(Shape{b, w}, std::move(s));
  return out;
}

// Draws n series of the generator's length from z ~ N(0, I). Deterministic in
// `seed`; instances carry the generator's sensor subset and no labels.
inline std::vector<SeriesInstance> sample_series(const Generator& g, std::size_t n, std::uint64_t seed,
                                                 std::size_t chunk = 256) {
  std::vector<SeriesInstance> out;
  out.reserve(n);
  Rng rng(seed);
  NoGradGuard no_grad;
  const auto& c = g.config();
  const std::size_t w = c.width();
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t b = std::min(chunk, n - start);
    std::vector<Tensor> steps = g.decode(g.noise(b, rng), c.length);
    for (std::size_t i = 0; i < b; ++i) {
      SeriesInstance x;
      x.sensors = c.sensors;
      x.length = c.length;
      x.values.resize(c.length * w);
      for (std::size_t t = 0; t < c.length; ++t) {
        auto v = steps[t].values();
        std::copy_n(v.data() + i * w, w, x.values.data() + t * w);
      }
      out.push_back(std::move(x));
    }
  }
  return out;
}

enum class GeneratorMode { kIndependent, kCommon };

struct GeneratorTrainConfig {
  GeneratorMode mode = GeneratorMode::kIndependent;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;  // 0 trains for exactly max_epochs
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double q = 0.5;  // weight on real data in common mode
};

struct GeneratorTrace {
  double initial_loss = 0.0;           // full training set, before any update
  std::vector<double> epoch_loss;      // mean step loss per epoch
  std::vector<double> val_loss;        // per epoch, only while early stopping
  double min_kl = std::numeric_limits<double>::infinity();  // smallest KL term over all steps
  std::size_t best_epoch = 0;
};

// Full-data loss with a fixed noise stream, no parameter updates.
inline double generator_eval_loss(const Generator& g, const std::vector<SeriesInstance>& data, std::uint64_t seed,
                                  const SensorMeans* means = nullptr, std::size_t batch_size = 256) {
  NoGradGuard no_grad;
  Rng eps(seed);
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const SeriesInstance*> items;
    for (std::size_t i = start; i < end; ++i) items.push_back(&data[i]);
    total += g.loss(generator_batch(items, g.config(), means), eps).total.item() * static_cast<double>(items.size());
  }
  return total / static_cast<double>(data.size());
}

// Trains `g` in place with Adam. Independent mode fits the current data only.
// Common mode with a previous generator mixes each real batch with an equal
// sized batch decoded from `previous`: q * L(real) + (1 - q) * L(replayed).
// With validation data and patience > 0, training stops once validation loss
// has not improved for `patience` epochs and the best parameters are restored.
inline GeneratorTrace train_generator(Generator& g, const std::vector<SeriesInstance>& train,
                                      const std::vector<SeriesInstance>& val, const GeneratorTrainConfig& cfg,
                                      std::uint64_t seed, const Generator* previous = nullptr,
                                      const SensorMeans* means = nullptr) {
  if (train.empty()) throw InvalidInput("train_generator: empty dataset");
  if (!(cfg.q > 0.0 && cfg.q <= 1.0)) throw InvalidInput("train_generator: q must be in (0, 1]");
  if (cfg.batch_size == 0) throw InvalidInput("train_generator: batch size must be >= 1");
  const bool mix = cfg.mode == GeneratorMode::kCommon && previous != nullptr && cfg.q < 1.0;
  if (mix && previous->config().width() != g.config().width()) {
    throw InvalidInput("train_generator: previous generator models a different sensor width");
  }

  Rng shuffle_rng(derive_seed(seed, {1}));
  Rng eps_rng(derive_seed(seed, {2}));
  Rng replay_rng(derive_seed(seed, {3}));
  const std::uint64_t eval_seed = derive_seed(seed, {4});

  GeneratorTrace trace;
  trace.initial_loss = generator_eval_loss(g, train, eval_seed, means);
  ParamGroup group = make_param_group(OptimizerKind::kAdam, cfg.learning_rate,
                                      std::vector<NamedParam>(g.params().begin(), g.params().end()));
  const bool early_stop = cfg.patience > 0 && !val.empty();
  double best_val = std::numeric_limits<double>::infinity();
  std::optional<Generator> best;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const SeriesInstance*> items;
      for (std::size_t i = start; i < end; ++i) items.push_back(&train[order[i]]);
      VaeLoss real = g.loss(generator_batch(items, g.config(), means), eps_rng);
      Tensor loss = real.total;
      trace.min_kl = std::min(trace.min_kl, real.kl.item());
      if (mix) {
        std::vector<SeriesInstance> replayed = sample_series(*previous, items.size(), replay_rng.next());
        std::vector<const SeriesInstance*> rp;
        for (const auto& x : replayed) rp.push_back(&x);
        VaeLoss old = g.loss(generator_batch(rp, g.config()), eps_rng);
        trace.min_kl = std::min(trace.min_kl, old.kl.item());
        loss = ops::add(ops::scale(real.total, cfg.q), ops::scale(old.total, 1.0 - cfg.q));
      }
      epoch_total += loss.item();
      ++steps;
      adam_step(group, backward(loss, g.params()));
    }
    trace.epoch_loss.push_back(epoch_total / static_cast<double>(steps));

    if (early_stop) {
      const double v = generator_eval_loss(g, val, eval_seed, means);
      trace.val_loss.push_back(v);
      if (v < best_val) {
        best_val = v;
        best = g;
        trace.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (best) g = *best;
  if (!early_stop) trace.best_epoch = trace.epoch_loss.empty() ? 0 : trace.epoch_loss.size() - 1;
  return trace;
}

inline nlohmann::json generator_checkpoint(const Generator& g) { return params_to_json(g.params(), g.header_json()); }

inline Generator load_generator_checkpoint(const nlohmann::json& doc) {
  Generator g(Generator::config_from_header(doc.at("header")));
  params_from_json(doc, g.params());
  return g;
}

}  // namespace vidreplay

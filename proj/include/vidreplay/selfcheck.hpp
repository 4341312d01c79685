#pragma once

// Checks shared by `vidreplay check` and the acceptance suite.

#include <sstream>
#include <string>
#include <vector>

#include "vidreplay/generator.hpp"
#include "vidreplay/gradcheck.hpp"
#include "vidreplay/solver.hpp"

namespace vidreplay {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline SeriesInstance gaussian_series(Rng& rng, const SensorSet& sensors, std::size_t length) {
  SeriesInstance x;
  x.sensors = sensors;
  x.length = length;
  x.values.resize(length * sensors.size());
  for (double& v : x.values) v = rng.normal();
  return x;
}

inline SensorSet random_nonempty_subset(Rng& rng, std::size_t d) {
  std::vector<std::size_t> all(d);
  for (std::size_t i = 0; i < d; ++i) all[i] = i;
  rng.shuffle(all);
  all.resize(1 + rng.below(d));
  return SensorSet(all);
}

}  // namespace detail

// Solver with graph conditioning (T=4, d=5, d'=2, H=6) against central
// differences, one random model and batch per seed.
inline CheckResult check_solver_gradients(std::size_t seeds = 20, double tolerance = 1e-3) {
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Rng rng(derive_seed(seed, {1}));
    SolverConfig c;
    c.classes = {0, 1, 2};
    c.sensors = 5;
    c.embedding_width = 2;
    c.hidden = 6;
    c.layers = 2;
    c.conditioning = Conditioning::kGnn;
    c.dropout = 0.0;
    Solver s(c, rng);
    fill_uniform(s.params().at("embeddings"), rng, 1.0);
    std::vector<SeriesInstance> xs;
    for (int b = 0; b < 3; ++b) {
      xs.push_back(detail::gaussian_series(rng, detail::random_nonempty_subset(rng, 5), 4));
      xs.back().label = static_cast<int>(rng.below(3));
    }
    SensorMeans means(5);
    means.add(xs);
    std::vector<const SeriesInstance*> ptrs = {&xs[0], &xs[1], &xs[2]};
    SeriesBatch batch = make_batch(ptrs, 5, means);
    Targets targets = s.targets(ptrs);
    auto r = testing::grad_check(s.params(), [&] {
      return ops::mean(solver_loss(s.forward(batch, ForwardContext::eval()), targets, TaskMode::kClassification));
    });
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  std::ostringstream d;
  d << "max relative error " << worst << " over " << checked << " partials, " << seeds << " seeds";
  return {"solver-cm gradient", worst < tolerance, d.str()};
}

inline CheckResult check_vae_gradients(std::size_t seeds = 20, double tolerance = 1e-3) {
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Rng rng(derive_seed(seed, {2}));
    GeneratorConfig c;
    c.sensors = SensorSet{0, 2};
    c.length = 3;
    c.latent = 2;
    c.widths = {4, 3};
    Generator g(c, rng);
    std::vector<SeriesInstance> xs = {detail::gaussian_series(rng, c.sensors, 3),
                                      detail::gaussian_series(rng, c.sensors, 3)};
    GeneratorBatch batch = generator_batch({&xs[0], &xs[1]}, c);
    Tensor eps = g.noise(2, rng);
    auto r = testing::grad_check(g.params(), [&] {
      Encoding e = g.encode(batch);
      Tensor z = g.reparameterize(e.mu, e.logvar, eps);
      return Generator::vae_loss(batch.steps, g.decode(z, 3), e.mu, e.logvar, 1.0).total;
    });
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  std::ostringstream d;
  d << "max relative error " << worst << " over " << checked << " partials, " << seeds << " seeds";
  return {"vae gradient", worst < tolerance, d.str()};
}

// Permutation invariance and inactive-embedding locality (both exact) and the
// singleton case against the node network on a zero aggregate (1e-12).
inline std::vector<CheckResult> check_conditioning(std::size_t trials = 200) {
  const std::size_t d = 8, width = 3;
  Rng rng(derive_seed(7, {3}));
  std::size_t perm_fail = 0, local_fail = 0;
  double singleton_err = 0.0;
  const auto ctx = ForwardContext::eval();
  for (std::size_t trial = 0; trial < trials; ++trial) {
    ParamStore store;
    Tensor emb = store.add("embeddings", {d, width});
    GnnParams gnn(store, "gnn", width, 0.0);
    for (double& v : emb.mutable_values()) v = rng.normal();
    gnn.init(rng);
    SensorSet active = detail::random_nonempty_subset(rng, d);

    std::vector<std::size_t> shuffled = active.indices();
    rng.shuffle(shuffled);
    Tensor a = conditioning_vector(active, emb, gnn, ctx).value;
    Tensor b = conditioning_vector(SensorSet(shuffled), emb, gnn, ctx).value;
    for (std::size_t i = 0; i < width; ++i) perm_fail += a.values()[i] != b.values()[i];

    auto e = emb.mutable_values();
    for (std::size_t s = 0; s < d; ++s)
      if (!active.contains(s))
        for (std::size_t j = 0; j < width; ++j) e[s * width + j] += 10.0 * rng.normal();
    Tensor c = conditioning_vector(active, emb, gnn, ctx).value;
    for (std::size_t i = 0; i < width; ++i) local_fail += a.values()[i] != c.values()[i];

    const std::size_t s = rng.below(d);
    Tensor single = conditioning_vector(SensorSet{s}, emb, gnn, ctx).value;
    Tensor expected = gnn.node(ops::concat_cols({ops::gather_rows(emb, {s}), Tensor::zeros({1, width})}), ctx);
    for (std::size_t i = 0; i < width; ++i)
      singleton_err = std::max(singleton_err, std::abs(single.values()[i] - expected.values()[i]));
  }
  const std::string n = std::to_string(trials) + " random subsets";
  std::ostringstream se;
  se << "max abs error " << singleton_err << " over " << n;
  return {{"conditioning permutation invariance", perm_fail == 0, std::to_string(perm_fail) + " mismatches over " + n},
          {"conditioning inactive locality", local_fail == 0, std::to_string(local_fail) + " mismatches over " + n},
          {"conditioning singleton", singleton_err <= 1e-12, se.str()}};
}

}  // namespace vidreplay

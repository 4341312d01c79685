#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vidreplay/gradcheck.hpp"
#include "vidreplay/checkpoint.hpp"
#include "vidreplay/layers.hpp"
#include "vidreplay/ops.hpp"
#include "vidreplay/optim.hpp"

using namespace vidreplay;
using vidreplay::testing::grad_check;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true, double scale = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Reduces an arbitrary-shaped output to a scalar with fixed random weights so
// every output element carries a distinct upstream gradient.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) { return ops::sum(ops::mul(out, weights)); }

}  // namespace

TEST(Primitives, SpecExamples) {
  Tensor s = ops::softmax(Tensor::row({0, 0, 0}));
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);

  Tensor m = ops::max_over({Tensor::row({1, 5}), Tensor::row({3, 2})});
  EXPECT_EQ(m(0, 0), 3.0);
  EXPECT_EQ(m(0, 1), 5.0);

  EXPECT_EQ(ops::sigmoid(Tensor::scalar(0)).item(), 0.5);
  EXPECT_EQ(ops::tanh(Tensor::scalar(0)).item(), 0.0);
}

TEST(Backward, SquareAtThree) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(ops::mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, MaxRoutesToMaximizer) {
  Tensor a = Tensor::scalar(2.0, true);
  Tensor b = Tensor::scalar(5.0, true);
  backward(ops::max_over({a, b}));
  EXPECT_EQ(a.grad()[0], 0.0);
  EXPECT_EQ(b.grad()[0], 1.0);
}

TEST(Backward, MaxTieGoesToLowestIndex) {
  Tensor a = Tensor::row({4.0, 1.0}, true);
  Tensor b = Tensor::row({4.0, 1.0}, true);
  backward(ops::sum(ops::max_over({a, b})));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(a.grad()[1], 1.0);
  EXPECT_EQ(b.grad()[0], 0.0);
  EXPECT_EQ(b.grad()[1], 0.0);

  Tensor rows({3, 2}, {1, 7, 9, 7, 9, 0}, true);
  backward(ops::sum(ops::max_rows(rows)));
  EXPECT_EQ(std::vector<double>(rows.grad().begin(), rows.grad().end()),
            (std::vector<double>{0, 1, 1, 0, 0, 0}));
}

TEST(Backward, UnusedParametersGetZeroGradients) {
  ParamStore store;
  Tensor used = store.add("used", {1, 2});
  store.add("unused", {2, 2});
  used.assign(std::vector<double>{1.0, 2.0});
  auto grads = backward(ops::sum(ops::square(used)), store);
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads.at("used")(0, 1), 4.0);
  for (double g : grads.at("unused").values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, StateErrors) {
  EXPECT_THROW(backward(Tensor()), StateError);
  Tensor x = Tensor::scalar(1.5, true);
  Tensor loss = ops::square(x);
  backward(loss);
  EXPECT_THROW(backward(loss), StateError);
  EXPECT_THROW(backward(ops::add(Tensor::row({1, 2}, true), Tensor::row({1, 2}))), ShapeError);
}

TEST(Primitives, ShapeErrorsNameThePrimitive) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    ops::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
  EXPECT_THROW(ops::add(a, Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(ops::concat_cols({a, Tensor::zeros({1, 3})}), ShapeError);
  EXPECT_THROW(ops::slice_cols(a, 2, 2), ShapeError);
  EXPECT_THROW(ops::gather_rows(a, {5}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1.0}), ShapeError);
}

TEST(Primitives, NonFiniteRaisesNumericError) {
  EXPECT_THROW(ops::exp(Tensor::scalar(1000.0)), NumericError);
  EXPECT_THROW(ops::log(Tensor::scalar(-1.0)), NumericError);
  EXPECT_THROW(Tensor::scalar(std::nan("")), NumericError);
}

TEST(Primitives, CrossEntropyClampAndBounds) {
  Tensor p({1, 2}, {1.0, 0.0});
  std::vector<std::size_t> y{1};
  EXPECT_NEAR(ops::cross_entropy(p, y).item(), -std::log(1e-12), 1e-9);
  std::vector<std::size_t> bad{2};
  EXPECT_THROW(ops::cross_entropy(p, bad), InvalidInput);
}

TEST(Dropout, IdentityAtRateZeroAndInEval) {
  Rng rng(3);
  Tensor x = random_tensor(rng, {4, 5}, false);
  Rng stream(11);
  Tensor d0 = ops::dropout(x, 0.0, stream, true);
  Tensor de = ops::dropout(x, 0.5, stream, false);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(d0.values()[i], x.values()[i]);
    EXPECT_EQ(de.values()[i], x.values()[i]);
  }
}

TEST(Dropout, InvertedScalingKeepsExpectation) {
  Rng stream(5);
  Tensor ones = Tensor::filled({200, 50}, 1.0);
  Tensor d = ops::dropout(ones, 0.2, stream, true);
  double total = 0.0;
  for (double v : d.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.25) < 1e-15);
    total += v;
  }
  EXPECT_NEAR(total / 10000.0, 1.0, 0.03);
}

// Every primitive against central differences over 100 random seeds/shapes.
TEST(GradCheck, EveryPrimitiveAgainstFiniteDifferences) {
  struct Case {
    const char* name;
    std::function<std::vector<Tensor>(Rng&)> leaves;
    std::function<Tensor(const std::vector<Tensor>&)> apply;
  };
  auto dims = [](Rng& r) { return 1 + r.below(4); };
  const std::vector<Case> cases = {
      {"matmul",
       [&](Rng& r) {
         std::size_t m = dims(r), k = dims(r), n = dims(r);
         return std::vector<Tensor>{random_tensor(r, {m, k}), random_tensor(r, {k, n})};
       },
       [](const std::vector<Tensor>& l) { return ops::matmul(l[0], l[1]); }},
      {"add_broadcast",
       [&](Rng& r) {
         std::size_t m = dims(r), n = dims(r);
         return std::vector<Tensor>{random_tensor(r, {m, n}), random_tensor(r, {1, n})};
       },
       [](const std::vector<Tensor>& l) { return ops::add(l[0], l[1]); }},
      {"sub",
       [&](Rng& r) {
         std::size_t m = dims(r), n = dims(r);
         return std::vector<Tensor>{random_tensor(r, {m, n}), random_tensor(r, {m, n})};
       },
       [](const std::vector<Tensor>& l) { return ops::sub(l[0], l[1]); }},
      {"mul_broadcast",
       [&](Rng& r) {
         std::size_t m = dims(r), n = dims(r);
         return std::vector<Tensor>{random_tensor(r, {m, n}), random_tensor(r, {1, n})};
       },
       [](const std::vector<Tensor>& l) { return ops::mul(l[0], l[1]); }},
      {"scale_shift", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::add_scalar(ops::scale(l[0], -1.7), 0.3); }},
      {"sigmoid", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)}, true, 2.0)}; },
       [](const std::vector<Tensor>& l) { return ops::sigmoid(l[0]); }},
      {"tanh", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::tanh(l[0]); }},
      {"relu", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::relu(l[0]); }},
      {"leaky_relu", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::leaky_relu(l[0]); }},
      {"exp", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::exp(l[0]); }},
      {"log", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::log(ops::add_scalar(ops::square(l[0]), 0.5)); }},
      {"softmax", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), 1 + dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::softmax(l[0]); }},
      {"sum_mean", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::concat_cols({ops::sum(l[0]), ops::mean(l[0])}); }},
      {"row_sums", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::row_sums(l[0]); }},
      {"concat_slice",
       [&](Rng& r) {
         std::size_t m = dims(r);
         return std::vector<Tensor>{random_tensor(r, {m, 3}), random_tensor(r, {m, 2})};
       },
       [](const std::vector<Tensor>& l) {
         Tensor c = ops::concat_cols({l[0], l[1]});
         return ops::concat_rows({ops::slice_cols(c, 1, 3), ops::slice_cols(c, 0, 3)});
       }},
      {"gather_rows", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {4, dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::gather_rows(l[0], {2, 0, 2, 3}); }},
      {"max_rows", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) { return ops::max_rows(l[0]); }},
      {"max_over",
       [&](Rng& r) {
         std::size_t m = dims(r), n = dims(r);
         return std::vector<Tensor>{random_tensor(r, {m, n}), random_tensor(r, {m, n}), random_tensor(r, {m, n})};
       },
       [](const std::vector<Tensor>& l) { return ops::max_over(l); }},
      {"dropout", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {dims(r), dims(r)})}; },
       [](const std::vector<Tensor>& l) {
         Rng mask(77);  // identical mask on every evaluation
         return ops::dropout(l[0], 0.3, mask, true);
       }},
      {"cross_entropy", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
       [](const std::vector<Tensor>& l) {
         std::vector<std::size_t> y{0, 3, 1};
         return ops::cross_entropy(ops::softmax(l[0]), y);
       }},
      {"squared_error", [&](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 1})}; },
       [](const std::vector<Tensor>& l) {
         std::vector<double> t{0.2, -0.4, 1.0};
         return ops::squared_error(l[0], t);
       }},
      {"gaussian_kl",
       [&](Rng& r) {
         return std::vector<Tensor>{random_tensor(r, {2, 3}), random_tensor(r, {2, 3})};
       },
       [](const std::vector<Tensor>& l) { return ops::gaussian_kl(l[0], l[1]); }},
      {"gru_cell",
       [&](Rng& r) {
         std::size_t b = dims(r), in = dims(r), h = dims(r);
         return std::vector<Tensor>{random_tensor(r, {b, in}),
                                    random_tensor(r, {b, h}),
                                    random_tensor(r, {in, 3 * h}, true, 0.7),
                                    random_tensor(r, {h, 3 * h}, true, 0.7),
                                    random_tensor(r, {1, 3 * h}, true, 0.7),
                                    random_tensor(r, {1, 3 * h}, true, 0.7)};
       },
       [](const std::vector<Tensor>& l) { return ops::gru_cell(l[0], l[1], l[2], l[3], l[4], l[5]); }},
  };

  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(derive_seed(seed, {17}));
      std::vector<Tensor> leaves = c.leaves(rng);
      Tensor weights;
      {
        NoGradGuard no_grad;
        weights = random_tensor(rng, c.apply(leaves).shape(), false);
      }
      auto result = grad_check(leaves, [&] { return weighted_sum(c.apply(leaves), weights); });
      worst = std::max(worst, result.max_rel_error);
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(GradCheck, RandomTwoLayerNetwork) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ParamStore store;
    Linear l1(store, "l1", 4, 6);
    Linear l2(store, "l2", 6, 3);
    l1.init(rng);
    l2.init(rng);
    Tensor x = random_tensor(rng, {5, 4}, false);
    std::vector<std::size_t> y{0, 1, 2, 1, 0};
    auto loss = [&] { return ops::mean(ops::cross_entropy(ops::softmax(l2(ops::tanh(l1(x)))), y)); };
    EXPECT_LT(grad_check(store, loss).max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Optimizer, SgdExamples) {
  ParamStore store;
  Tensor p = store.add("p", {1, 1});
  p.assign(std::vector<double>{1.0});
  auto group = make_param_group(OptimizerKind::kSgd, 5e-4, {{"p", p}});
  sgd_step(group, {{"p", Tensor::scalar(2.0)}});
  EXPECT_DOUBLE_EQ(p.item(), 0.999);

  sgd_step(group, {{"p", Tensor::scalar(0.0)}});
  EXPECT_DOUBLE_EQ(p.item(), 0.999);

  group.learning_rate = 0.0;
  sgd_step(group, {{"p", Tensor::scalar(3.0)}});
  EXPECT_DOUBLE_EQ(p.item(), 0.999);

  EXPECT_THROW(sgd_step(group, {{"p", Tensor::zeros({2, 1})}}), ShapeError);
  EXPECT_THROW(adam_step(group, {}), StateError);
}

TEST(Optimizer, AdamFirstStepIsLearningRateSized) {
  ParamStore store;
  Tensor p = store.add("p", {1, 1});
  p.assign(std::vector<double>{0.5});
  auto group = make_param_group(OptimizerKind::kAdam, 1e-4, {{"p", p}});
  adam_step(group, {{"p", Tensor::scalar(1.0)}});
  // t=1: mhat = g, vhat = g^2, step = lr * 1 / (1 + 1e-8).
  EXPECT_NEAR(p.item(), 0.5 - 1e-4 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(group.adam.step, 1u);

  const double after_one = p.item();
  adam_step(group, {{"p", Tensor::scalar(1.0)}});
  EXPECT_LT(p.item(), after_one);
  EXPECT_NEAR(after_one - p.item(), 1e-4, 1e-10);
}

TEST(Optimizer, AdamZeroGradientLeavesParameter) {
  ParamStore store;
  Tensor p = store.add("p", {2, 1});
  p.assign(std::vector<double>{0.25, -3.0});
  auto group = make_param_group(OptimizerKind::kAdam, 1e-2, {{"p", p}});
  for (int i = 0; i < 5; ++i) adam_step(group, {{"p", Tensor::zeros({2, 1})}});
  EXPECT_EQ(p(0, 0), 0.25);
  EXPECT_EQ(p(1, 0), -3.0);

  ParamGroup raw{OptimizerKind::kAdam, 1e-3, {{"p", p}}, {}};
  EXPECT_THROW(adam_step(raw, {}), StateError);
}

TEST(Determinism, SeededTrainingLoopIsBitIdentical) {
  auto run = [] {
    Rng init(9);
    ParamStore store;
    Linear l1(store, "l1", 3, 5);
    Linear l2(store, "l2", 5, 2);
    l1.init(init);
    l2.init(init);
    std::vector<NamedParam> all(store.begin(), store.end());
    auto group = make_param_group(OptimizerKind::kAdam, 1e-2, all);
    Rng data(1), drop(2);
    std::vector<double> trace;
    for (int step = 0; step < 20; ++step) {
      Tensor x = random_tensor(data, {4, 3}, false);
      std::vector<std::size_t> y{0, 1, 1, 0};
      auto ctx = ForwardContext::train(drop);
      Tensor h = apply_dropout(ops::leaky_relu(l1(x)), 0.2, ctx);
      Tensor loss = ops::mean(ops::cross_entropy(ops::softmax(l2(h)), y));
      trace.push_back(loss.item());
      adam_step(group, backward(loss, store));
    }
    for (const auto& p : store) trace.insert(trace.end(), p.tensor.values().begin(), p.tensor.values().end());
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, JsonRoundTripIsExact) {
  Rng rng(4);
  ParamStore a;
  Linear la(a, "layer", 3, 2);
  la.init(rng);
  const auto doc = params_to_json(a, {{"kind", "test"}});
  EXPECT_EQ(doc.at("format"), kCheckpointFormat);

  ParamStore b;
  Linear lb(b, "layer", 3, 2);
  params_from_json(nlohmann::json::parse(doc.dump()), b);
  for (const auto& p : a) {
    auto x = p.tensor.values();
    auto y = b.at(p.name).values();
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
  }

  ParamStore wrong;
  Linear lw(wrong, "layer", 2, 2);
  EXPECT_THROW(params_from_json(doc, wrong), ShapeError);
  EXPECT_THROW(params_from_json(nlohmann::json::object(), b), InvalidInput);
}

TEST(NoGrad, RecordsNoGraph) {
  Tensor x = Tensor::scalar(2.0, true);
  NoGradGuard guard;
  Tensor y = ops::square(x);
  EXPECT_FALSE(y.requires_grad());
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "vidreplay/data.hpp"

using namespace vidreplay;

namespace {

bool same_series(const SeriesInstance& a, const SeriesInstance& b) {
  return a.sensors == b.sensors && a.length == b.length && a.values == b.values && a.label == b.label &&
         a.target == b.target;
}

SeriesInstance make(std::vector<std::size_t> s, std::size_t len, std::vector<double> v, int label) {
  SeriesInstance x;
  x.sensors = SensorSet(std::move(s));
  x.length = len;
  x.values = std::move(v);
  x.label = label;
  return x;
}

}  // namespace

TEST(SynthStream, KeepFractionAndFixedClasses) {
  StreamConfig cfg;
  cfg.n = 12;
  cfg.keep = 1.0;
  for (const auto& t : synth_stream(cfg)) {
    EXPECT_EQ(t.spec.sensors, SensorSet::all(10));
    EXPECT_EQ(t.spec.classes, (std::vector<int>{0, 1, 2, 3, 4, 5}));
  }
  cfg.keep = 0.6;
  auto tasks = synth_stream(cfg);
  ASSERT_EQ(tasks.size(), 5u);
  for (const auto& t : tasks) {
    EXPECT_EQ(t.spec.sensors.size(), 6u);
    EXPECT_EQ(t.instances.size(), 12u);
    EXPECT_EQ(t.test.size(), 12u);
    for (const auto& x : t.instances) {
      EXPECT_EQ(x.sensors, t.spec.sensors);
      EXPECT_EQ(x.length, 24u);
      ASSERT_TRUE(x.label.has_value());
    }
  }
  cfg.keep = 0.35;
  EXPECT_EQ(synth_stream(cfg)[0].spec.sensors.size(), 4u);
}

TEST(SynthStream, SameSeedSameStream) {
  StreamConfig cfg;
  cfg.n = 10;
  cfg.seed = 3;
  auto a = synth_stream(cfg), b = synth_stream(cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].spec.sensors, b[i].spec.sensors);
    for (std::size_t k = 0; k < a[i].instances.size(); ++k) EXPECT_TRUE(same_series(a[i].instances[k], b[i].instances[k]));
  }
  cfg.seed = 4;
  EXPECT_NE(synth_stream(cfg)[0].instances[0].values, a[0].instances[0].values);
}

TEST(SynthStream, StableDynamicsAndNonzeroReadout) {
  StreamConfig cfg;
  SynthSystem sys(cfg);
  for (std::size_t k = 0; k < cfg.classes; ++k) EXPECT_LT(sys.spectral_radius(k), 1.0);
  for (std::size_t s = 0; s < cfg.d; ++s) {
    double norm = 0.0;
    for (std::size_t j = 0; j < cfg.hidden; ++j) norm += std::abs(sys.readout(s, j));
    EXPECT_GT(norm, 0.0);
  }
}

TEST(SynthStream, RegressionTargetsInUnitInterval) {
  StreamConfig cfg;
  cfg.regression = true;
  cfg.n = 50;
  for (const auto& t : synth_stream(cfg)) {
    EXPECT_TRUE(t.spec.classes.empty());
    for (const auto& x : t.instances) {
      ASSERT_TRUE(x.target.has_value());
      EXPECT_GE(*x.target, 0.0);
      EXPECT_LE(*x.target, 1.0);
    }
  }
}

// Oracle: leave-one-out 1-nearest-neighbour on full-sensor noiseless series.
TEST(SynthStream, ClassesAreSeparable) {
  StreamConfig cfg;
  SynthSystem sys(cfg);
  Rng rng(99);
  const SensorSet all = SensorSet::all(cfg.d);
  std::vector<SeriesInstance> xs;
  for (int label : balanced_labels({0, 1, 2, 3, 4, 5}, 200, rng)) xs.push_back(sys.sample(label, all, rng, true));
  int wrong = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int guess = -1;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (i == j) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < xs[i].values.size(); ++k) {
        const double diff = xs[i].values[k] - xs[j].values[k];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        guess = *xs[j].label;
      }
    }
    wrong += guess != *xs[i].label;
  }
  EXPECT_LT(wrong / 200.0, 0.05);
}

TEST(ScheduleClasses, Definitions) {
  EXPECT_EQ(schedule_classes(ClassScenario::kIncremental, 6, 3, 2, 1, 0),
            (std::vector<std::vector<int>>{{0, 1}, {0, 1, 2}, {0, 1, 2, 3}}));
  auto fixed = schedule_classes(ClassScenario::kFixed, 6, 4, 0, 1, 0);
  for (const auto& y : fixed) EXPECT_EQ(y, fixed.front());
  auto partial = schedule_classes(ClassScenario::kPartial, 6, 2, 3, 1, 5);
  ASSERT_EQ(partial.size(), 2u);
  EXPECT_EQ(partial[0], (std::vector<int>{0, 1, 2}));
  ASSERT_EQ(partial[1].size(), 3u);
  EXPECT_EQ(partial[1].back(), 3);
  int kept = 0;
  for (int c : {0, 1, 2}) kept += std::count(partial[1].begin(), partial[1].end(), c) > 0;
  EXPECT_EQ(kept, 2);
}

TEST(ScheduleClasses, DefaultBasesUseEveryClass) {
  auto inc = schedule_classes(ClassScenario::kIncremental, 6, 5, 0, 1, 0);
  EXPECT_EQ(inc.front().size(), 2u);
  EXPECT_EQ(inc.back().size(), 6u);
  auto part = schedule_classes(ClassScenario::kPartial, 6, 5, 0, 1, 0);
  EXPECT_EQ(part.front().size(), 2u);
  EXPECT_EQ(part.back().back(), 5);
}

TEST(ScheduleClasses, ExhaustedK) {
  EXPECT_THROW(schedule_classes(ClassScenario::kIncremental, 4, 5, 2, 1, 0), InvalidInput);
  EXPECT_THROW(schedule_classes(ClassScenario::kPartial, 4, 5, 0, 1, 0), InvalidInput);
  EXPECT_THROW(schedule_classes(ClassScenario::kFixed, 6, 5, 7, 1, 0), InvalidInput);
}

TEST(Normalize, ZScoreOnTrainingSplit) {
  Rng rng(1);
  std::vector<SeriesInstance> xs;
  for (int i = 0; i < 20; ++i) {
    SeriesInstance x = make({1, 4}, 5, {}, 0);
    for (int k = 0; k < 10; ++k) x.values.push_back(k % 2 ? 7.0 : 3.0 + 2.0 * rng.normal());
    xs.push_back(x);
  }
  NormStats stats = normalize(xs, NormMode::kZScore);
  double sum = 0, sq = 0;
  for (const auto& x : xs)
    for (std::size_t t = 0; t < 5; ++t) {
      sum += x.at(t, 0);
      sq += x.at(t, 0) * x.at(t, 0);
      EXPECT_EQ(x.at(t, 1), 0.0);  // constant sensor
    }
  const double mean = sum / 100.0;
  EXPECT_LT(std::abs(mean), 1e-9);
  EXPECT_NEAR(std::sqrt(sq / 100.0 - mean * mean), 1.0, 1e-9);
  EXPECT_THROW(stats.apply(2, 1.0), InvalidInput);
}

TEST(Normalize, MinMaxMapsRangeToUnitInterval) {
  std::vector<SeriesInstance> xs = {make({0}, 3, {2.0, 4.0, 6.0}, 0), make({0}, 3, {10.0, 3.0, 5.0}, 0)};
  NormStats stats = normalize(xs, NormMode::kMinMax);
  EXPECT_EQ(xs[0].values, (std::vector<double>{0.0, 0.25, 0.5}));
  EXPECT_EQ(xs[1].values[0], 1.0);
  EXPECT_EQ(stats.apply(0, 14.0), 1.5);  // val/test values may leave [0,1]
}

TEST(Split, CountsStratificationAndDeterminism) {
  std::vector<SeriesInstance> xs;
  for (int i = 0; i < 100; ++i) xs.push_back(make({0}, 1, {static_cast<double>(i)}, i % 3));
  Split a = split_train_val(xs, 0.2, 7);
  EXPECT_EQ(a.train.size(), 80u);
  EXPECT_EQ(a.val.size(), 20u);
  for (int c = 0; c < 3; ++c) {
    const double global = std::count_if(xs.begin(), xs.end(), [&](auto& x) { return *x.label == c; }) / 100.0;
    const double in_val = std::count_if(a.val.begin(), a.val.end(), [&](auto& x) { return *x.label == c; });
    EXPECT_LE(std::abs(in_val - global * 20.0), 1.0);
  }
  Split b = split_train_val(xs, 0.2, 7);
  for (std::size_t i = 0; i < a.val.size(); ++i) EXPECT_EQ(a.val[i].values, b.val[i].values);
  Split c = split_train_val(xs, 0.2, 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.val.size(); ++i) differs |= a.val[i].values != c.val[i].values;
  EXPECT_TRUE(differs);
}

TEST(Split, TooFewPerClass) {
  std::vector<SeriesInstance> xs = {make({0}, 1, {1}, 0), make({0}, 1, {2}, 0), make({0}, 1, {3}, 1)};
  EXPECT_THROW(split_train_val(xs, 0.2, 1), InvalidInput);
}

TEST(Csv, RoundTripIsValueExact) {
  SensorCatalog cat = SensorCatalog::numbered(4);
  std::vector<SeriesInstance> xs = {make({1, 3}, 2, {0.1, 1.0 / 3.0, -2.5e-7, 1e300}, 2),
                                    make({1, 3}, 2, {5, 6, 7, 8}, 0)};
  std::ostringstream out;
  write_csv(out, xs, cat);
  std::istringstream in(out.str());
  auto back = read_csv(in, cat, TaskMode::kClassification);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_TRUE(same_series(xs[i], back[i]));
}

TEST(Csv, SchemaAndOrderingErrors) {
  SensorCatalog cat = SensorCatalog::numbered(3);
  auto parse = [&](const std::string& text) {
    std::istringstream in(text);
    return read_csv(in, cat, TaskMode::kClassification);
  };
  EXPECT_THROW(parse("series_id,t,s1\na,0,1\n"), ParseError);
  try {
    parse("series_id,t,label,s1\na,0,1,0.5\na,0,1,0.7\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse("series_id,t,label,s1,s9\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
  try {
    parse("series_id,t,label,s1\na,0,1,0.5\na,2,1,0.7\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse("series_id,t,label,s1\na,0,1,0.5\nb,0,1,0.7\nb,1,1,x\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  EXPECT_THROW(parse("series_id,t,label,s1\na,0,1,0.5\na,1,1,0.5\nb,0,1,0.7\n"), ParseError);

  auto sorted = parse("series_id,t,label,s3,s1\nz,1,4,1.0,2.0\nz,0,4,3.0,4.0\ny,0,0,5,6\ny,1,0,7,8\n");
  ASSERT_EQ(sorted.size(), 2u);
  EXPECT_EQ(*sorted[0].label, 4);
  EXPECT_EQ(sorted[0].sensors, (SensorSet{0, 2}));
  EXPECT_EQ(sorted[0].values, (std::vector<double>{4.0, 3.0, 2.0, 1.0}));
}

TEST(Stream, ExportAndLoad) {
  StreamConfig cfg;
  cfg.n = 6;
  cfg.tasks = 2;
  cfg.scenario = ClassScenario::kIncremental;
  cfg.classes = 3;
  auto tasks = synth_stream(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "vidreplay_test_stream";
  std::filesystem::remove_all(dir);
  export_stream(dir.string(), tasks, SensorCatalog::numbered(cfg.d), cfg);
  SensorCatalog cat;
  auto back = load_stream(dir.string(), &cat);
  EXPECT_EQ(cat, SensorCatalog::numbered(cfg.d));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].spec.sensors, tasks[i].spec.sensors);
    EXPECT_EQ(back[i].spec.classes, tasks[i].spec.classes);
    for (std::size_t k = 0; k < tasks[i].instances.size(); ++k)
      EXPECT_TRUE(same_series(back[i].instances[k], tasks[i].instances[k]));
  }
  std::filesystem::remove_all(dir);
}

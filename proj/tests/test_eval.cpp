#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "vidreplay/eval.hpp"

using namespace vidreplay;

namespace {

MetricRecord rec(std::string method, std::size_t i, std::size_t j, std::uint64_t seed, double v,
                 MetricKind kind = MetricKind::kError) {
  return {std::move(method), "fixed", i, j, seed, kind, v};
}

AblationConfig tiny_ablation() {
  AblationConfig a;
  a.stream.d = 6;
  a.stream.classes = 3;
  a.stream.n = 150;
  a.stream.length = 6;
  a.missing = 0.4;
  a.mask_count = 8;
  a.method.profile.solver_hidden = 6;
  a.method.profile.solver_layers = 1;
  a.method.profile.solver_epochs = 2;
  a.method.batch_size = 8;
  return a;
}

}  // namespace

TEST(Gain, Examples) {
  EXPECT_DOUBLE_EQ(percentage_gain(0.30, 0.15), 50.0);
  EXPECT_DOUBLE_EQ(percentage_gain(0.20, 0.25), -25.0);
  EXPECT_EQ(percentage_gain(0.2, 0.2), 0.0);
  EXPECT_TRUE(std::isnan(percentage_gain(0.0, 0.1)));
}

TEST(Gain, TableAveragesPerSeedGains) {
  std::vector<MetricRecord> r = {rec("ts", 2, 1, 1, 0.2), rec("ts", 2, 1, 2, 0.4), rec("gr-ig", 2, 1, 1, 0.1),
                                 rec("gr-ig", 2, 1, 2, 0.4)};
  auto g = gain_table(r);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].method, "gr-ig");
  EXPECT_DOUBLE_EQ(g[0].mean_gain, 25.0);
  EXPECT_EQ(g[0].seeds, 2u);
  std::vector<MetricRecord> only_ts = {rec("ts", 1, 1, 1, 0.3)};
  EXPECT_TRUE(gain_table(only_ts).empty());
}

TEST(Report, EmptyInputGivesHeaderOnly) {
  std::ostringstream csv;
  write_summary_csv(csv, summarize({}));
  EXPECT_EQ(csv.str(), std::string(kSummaryHeader) + "\n");
  std::ostringstream log;
  write_metrics_csv(log, {});
  EXPECT_EQ(log.str(), std::string(kMetricHeader) + "\n");
}

TEST(Report, MeanAndSampleStd) {
  auto rows = summarize({rec("ts", 1, 1, 1, 0.1), rec("ts", 1, 1, 2, 0.3)});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].mean, 0.2, 1e-15);
  EXPECT_NEAR(rows[0].std, 0.1 * std::sqrt(2.0), 1e-15);
  EXPECT_EQ(rows[0].seeds, 2u);
  auto single = summarize({rec("ts", 1, 1, 1, 0.1)});
  EXPECT_TRUE(std::isnan(single[0].std));
}

TEST(Report, RejectsMixedKinds) {
  EXPECT_THROW(summarize({rec("ts", 1, 1, 1, 0.1), rec("ts", 1, 1, 2, 3.0, MetricKind::kRmse)}), InvalidInput);
}

TEST(Report, StableOrderAndBytes) {
  std::vector<MetricRecord> a = {rec("ub", 2, 1, 1, 0.1), rec("ts", 2, 2, 1, 0.2), rec("ts", 1, 1, 1, 0.3),
                                 rec("gr-ig", 2, 2, 1, 0.15)};
  std::vector<MetricRecord> b(a.rbegin(), a.rend());
  EXPECT_EQ(render_report(a), render_report(b));
  auto rows = summarize(a);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].method, "gr-ig");
  EXPECT_EQ(rows[1].method, "ts");
  EXPECT_EQ(rows[1].i, 1u);
  EXPECT_NE(render_report(a).find("gain over ts"), std::string::npos);
}

TEST(MetricLog, RoundTripsExactly) {
  std::vector<MetricRecord> r = {rec("gr-ig", 3, 2, 17, 0.1 + 0.2), rec("ts", 1, 1, 4, 1.0 / 3.0, MetricKind::kError)};
  std::stringstream s;
  write_metrics_csv(s, r);
  auto back = read_metrics_csv(s);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].value, 0.1 + 0.2);
  EXPECT_EQ(back[1].value, 1.0 / 3.0);
  EXPECT_EQ(back[0].seed, 17u);
  EXPECT_EQ(back[0].j, 2u);
  std::stringstream again;
  write_metrics_csv(again, back);
  std::stringstream first;
  write_metrics_csv(first, r);
  EXPECT_EQ(again.str(), first.str());
}

TEST(MetricLog, ParseErrorsCarryLine) {
  auto fails_at = [](const std::string& text, std::size_t line) {
    std::istringstream in(text);
    try {
      read_metrics_csv(in, "m.csv");
      ADD_FAILURE() << "no error for " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), line) << e.what();
      EXPECT_NE(std::string(e.what()).find("m.csv:"), std::string::npos);
    }
  };
  const std::string h = std::string(kMetricHeader) + "\n";
  fails_at("method,i\n", 1);
  fails_at(h + "ts,fixed,1,1,1,error,0.5\nts,fixed,1,1\n", 3);
  fails_at(h + "ts,fixed,x,1,1,error,0.5\n", 2);
  fails_at(h + "ts,fixed,1,1,1,accuracy,0.5\n", 2);
  fails_at(h + "ts,fixed,1,1,1,error,abc\n", 2);
}

TEST(Unseen, MasksAreDisjointAndProportionsHold) {
  AblationConfig a = tiny_ablation();
  a.stream.n = 100;
  SynthSystem sys([&] {
    StreamConfig s = a.stream;
    s.keep = 1.0;
    return s;
  }());
  Rng rng(3);
  std::vector<SeriesInstance> full;
  for (int label : balanced_labels({0, 1, 2}, 100, rng)) full.push_back(sys.sample(label, SensorSet::all(6), rng));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    UnseenSplit s = unseen_split(full, a, seed);
    EXPECT_EQ(s.train.size(), 40u);
    EXPECT_EQ(s.val.size(), 10u);
    EXPECT_EQ(s.fine_tune.size(), 10u);
    EXPECT_EQ(s.test.size(), 40u);
    std::set<std::string> seen, unseen;
    for (const auto& x : s.train) seen.insert(x.sensors.mask_string(6));
    for (const auto& x : s.val) seen.insert(x.sensors.mask_string(6));
    for (const auto& x : s.test) unseen.insert(x.sensors.mask_string(6));
    for (const auto& m : unseen) EXPECT_FALSE(seen.count(m)) << m;
    std::set<SensorSet> test_masks(s.test_masks.begin(), s.test_masks.end());
    for (const auto& x : s.fine_tune) EXPECT_TRUE(test_masks.count(x.sensors));
    for (const auto& x : s.test) {
      EXPECT_EQ(x.sensors.size(), 4u);  // round(0.4 * 6) = 2 missing
      EXPECT_TRUE(test_masks.count(x.sensors));
    }
  }
}

TEST(Unseen, RestrictKeepsValuesOfKeptSensors) {
  SeriesInstance x;
  x.sensors = SensorSet{0, 1, 2};
  x.length = 2;
  x.values = {1, 2, 3, 4, 5, 6};
  x.label = 1;
  SeriesInstance y = restrict_sensors(x, SensorSet{0, 2});
  EXPECT_EQ(y.values, (std::vector<double>{1, 3, 4, 6}));
  EXPECT_EQ(y.label, 1);
  EXPECT_THROW(restrict_sensors(x, SensorSet{3}), InvalidInput);
}

TEST(Unseen, TooFewMasksIsAnError) {
  AblationConfig a = tiny_ablation();
  a.stream.d = 3;
  a.missing = 0.4;  // keep 2 of 3: only 3 distinct masks
  a.mask_count = 4;
  std::vector<SeriesInstance> none;
  EXPECT_THROW(unseen_split(none, a, 1), InvalidInput);
}

TEST(Unseen, ProtocolScoresEveryVariant) {
  AblationConfig a = tiny_ablation();
  auto r = unseen_combination_protocol(a, 4);
  ASSERT_EQ(r.size(), 8u);
  std::set<std::pair<Conditioning, bool>> seen;
  for (const auto& x : r) {
    seen.insert({x.variant, x.fine_tuned});
    EXPECT_GE(x.value, 0.0);
    EXPECT_LE(x.value, 1.0);
  }
  EXPECT_EQ(seen.size(), 8u);
  auto again = unseen_combination_protocol(a, 4);
  for (std::size_t k = 0; k < r.size(); ++k) EXPECT_EQ(r[k].value, again[k].value);
  EXPECT_NE(render_ablation(r).find("cm"), std::string::npos);
}

TEST(Consistency, DiagonalMatchesFreshEvaluation) {
  StreamConfig s;
  s.d = 5;
  s.classes = 3;
  s.tasks = 2;
  s.n = 30;
  s.length = 5;
  auto tasks = synth_stream(s);
  MethodConfig c;
  c.method = Method::kTaskSpecific;
  c.profile.solver_hidden = 6;
  c.profile.solver_layers = 1;
  c.profile.solver_epochs = 2;
  c.batch_size = 8;
  RunResult r = run_sequence(tasks, c, 5, 3, "fixed");
  for (const auto& m : r.metrics) {
    if (m.i != m.j) continue;
    PreparedTask p = prepare_task(tasks[m.i - 1], m.i - 1, c, 3);
    const auto& t = r.registry.at(m.i - 1);
    EXPECT_EQ(m.value, evaluate(t.solver, t.means, p.test).value);
  }
}

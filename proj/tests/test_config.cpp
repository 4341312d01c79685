#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "vidreplay/experiment.hpp"

using namespace vidreplay;
using nlohmann::json;

namespace {

std::string error_path(const json& j) {
  try {
    ExperimentConfig c = parse_config(j);
    finalize(c);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<none>";
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vidreplay_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

json tiny_run(const std::string& out) {
  return {{"stream", {{"d", 6}, {"classes", 3}, {"tasks", 2}, {"n", 40}, {"n_test", 12}, {"length", 6}}},
          {"method", {{"method", "gr-ig"}, {"batch_size", 8}}},
          {"profile",
           {{"name", "desk"},
            {"solver_epochs", 3},
            {"generator_epochs", 3},
            {"solver_hidden", 6},
            {"solver_layers", 1},
            {"generator_widths", {6}},
            {"latent", 2}}},
          {"seed_count", 2},
          {"out", out}};
}

}  // namespace

TEST(Config, EmptyDocumentGivesDeskDefaults) {
  ExperimentConfig c = parse_config(json::object());
  finalize(c);
  EXPECT_EQ(c.profile, "desk");
  EXPECT_EQ(c.method.method, Method::kIndependentGenerator);
  EXPECT_EQ(c.method.q, 0.5);
  EXPECT_EQ(c.stream.d, 10u);
  EXPECT_EQ(c.method.embedding_width, 5u);
  EXPECT_EQ(c.method.profile.generator_epochs, 500u);
}

TEST(Config, EmbeddingWidthIsHalfTheSensors) {
  ExperimentConfig c = parse_config({{"stream", {{"d", 7}}}});
  finalize(c);
  EXPECT_EQ(c.method.embedding_width, 3u);
}

TEST(Config, ErrorsNameTheOffendingKey) {
  EXPECT_EQ(error_path({{"method", {{"q", 1.5}}}}), "method.q");
  EXPECT_EQ(error_path({{"method", {{"q", 0.0}}}}), "method.q");
  EXPECT_EQ(error_path({{"stream", {{"dd", 3}}}}), "stream.dd");
  EXPECT_EQ(error_path({{"stream", {{"d", "ten"}}}}), "stream.d");
  EXPECT_EQ(error_path({{"profile", {{"latent", -1}}}}), "profile.latent");
  EXPECT_EQ(error_path({{"profile", "huge"}}), "profile");
  EXPECT_EQ(error_path({{"bogus", 1}}), "bogus");
  EXPECT_EQ(error_path({{"seed_count", 0}}), "seed_count");
  EXPECT_EQ(error_path({{"method", {{"method", "gr-ig"}, {"batch_size", 0}}}}), "method.batch_size");
}

TEST(Config, ProfileOverridesApplyOnTopOfNamedProfile) {
  ExperimentConfig c = parse_config({{"profile", {{"name", "full"}, {"latent", 12}}}});
  EXPECT_EQ(c.method.profile.latent, 12u);
  EXPECT_EQ(c.method.profile.solver_hidden, 128u);
}

TEST(Config, SeedFallsBackToEnvironment) {
  ::setenv("VIDREPLAY_SEED", "41", 1);
  ExperimentConfig c = parse_config({{"seed_count", 3}});
  EXPECT_EQ(c.seed_list(), (std::vector<std::uint64_t>{41, 42, 43}));
  ::unsetenv("VIDREPLAY_SEED");
  EXPECT_EQ(c.seed_list(), (std::vector<std::uint64_t>{1, 2, 3}));
  c.seed = 9;
  EXPECT_EQ(c.seed_list().front(), 9u);
  c.seeds = {5, 2};
  EXPECT_EQ(c.seed_list(), (std::vector<std::uint64_t>{5, 2}));
}

TEST(Config, ResolvedJsonRoundTrips) {
  ExperimentConfig c = parse_config({{"method", {{"method", "ub"}, {"q", 0.25}}}, {"stream", {{"keep", 0.6}}}});
  finalize(c);
  ExperimentConfig back = parse_config(to_json(c));
  finalize(back);
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(Experiment, RerunIsByteIdenticalAndReportReproducesSummary) {
  auto a = scratch("a"), b = scratch("b");
  ExperimentConfig ca = parse_config(tiny_run(a.string()));
  finalize(ca);
  ExperimentConfig cb = parse_config(tiny_run(b.string()));
  finalize(cb);
  std::ostringstream log;
  ExperimentResult ra = run_experiment(ca, log);
  run_experiment(cb, log);
  EXPECT_TRUE(ra.all_completed());
  EXPECT_EQ(ra.seeds.size(), 2u);
  EXPECT_EQ(detail::read_file(a / "metrics.csv"), detail::read_file(b / "metrics.csv"));
  EXPECT_EQ(report_paths({a.string()}), detail::read_file(a / "summary.txt"));
  EXPECT_TRUE(std::filesystem::exists(a / "seed-1" / "checkpoints" / "task2_generator.json"));
  json manifest = json::parse(detail::read_file(a / "manifest.json"));
  EXPECT_EQ(manifest["seeds"][1]["status"], "completed");
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Experiment, FailingSeedIsRecordedAndOthersStillRun) {
  auto dir = scratch("fail");
  ExperimentConfig c = parse_config(tiny_run(dir.string()));
  finalize(c);
  c.data = (dir / "missing").string();
  std::ostringstream log;
  ExperimentResult r = run_experiment(c, log);
  EXPECT_FALSE(r.all_completed());
  EXPECT_EQ(r.seeds.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  std::filesystem::remove_all(dir);
}

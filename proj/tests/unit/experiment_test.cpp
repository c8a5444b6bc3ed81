#include "l3ens/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdlib>

#include "../test_util.hpp"
#include "l3ens/synthetic.hpp"

namespace l3ens {
namespace {

const std::filesystem::path kDemo = std::filesystem::path(L3ENS_SOURCE_DIR) / "data/demo/demo.json";

std::string without_timings(const std::filesystem::path& run_json) {
  auto j = nlohmann::ordered_json::parse(io::read_text(run_json));
  j.erase("timings");
  return j.dump(2);
}

TEST(Experiment, DemoRunsAndWritesEveryReport) {
  testing::TempDir out;
  const auto cfg = load_config(kDemo);
  const auto run = run_experiment(cfg, cfg.seed, out.path());
  ASSERT_TRUE(run.ok()) << run.failure->message;
  for (const char* f : {"run.json", "transfer_table.csv", "transfer_table.md", "strategy_table.csv",
                        "strategy_table.md", "plot_data.json"}) {
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  }
  EXPECT_EQ(run.sequences.size(), 2u);
  EXPECT_EQ(run.ensembles.size(), 7u);
  EXPECT_EQ(run.heads.size(), 4u);
  for (const auto& h : run.heads) {
    EXPECT_EQ(load_head(out / h.checkpoint).parameter_count(), h.parameters);
  }
  std::vector<std::string> phases;
  for (const auto& [p, _] : run.timings) phases.push_back(p);
  EXPECT_EQ(phases, (std::vector<std::string>{"heads", "sequences", "ensembles", "reports"}));
}

TEST(Experiment, RunJsonIsDeterministic) {
  testing::TempDir a, b;
  const auto cfg = load_config(kDemo);
  run_experiment(cfg, cfg.seed, a.path());
  run_experiment(cfg, cfg.seed, b.path());
  EXPECT_EQ(without_timings(a / "run.json"), without_timings(b / "run.json"));
  for (const char* f : {"transfer_table.csv", "strategy_table.md", "plot_data.json"}) {
    EXPECT_EQ(io::read_text(a / f), io::read_text(b / f)) << f;
  }
}

TEST(Experiment, MissingEmbeddingFileKeepsEarlierPhases) {
  testing::TempDir out;
  auto j = nlohmann::json::parse(io::read_text(kDemo));
  j["sources"].push_back({{"name", "gone"}, {"path", "does-not-exist.l3em"}});
  for (auto& e : j["ensembles"]) {
    if (e["strategy"] == "llm") e["auxiliary_source"] = "gone";
  }
  const auto cfg = parse_config(j, kDemo.parent_path());
  const auto run = run_experiment(cfg, cfg.seed, out.path());
  ASSERT_FALSE(run.ok());
  EXPECT_EQ(run.failure->phase, "ensembles");
  EXPECT_NE(run.failure->message.find("does-not-exist.l3em"), std::string::npos);
  EXPECT_EQ(run.sequences.size(), 2u);
  const auto saved = run_result_from_json(nlohmann::json::parse(io::read_text(out / "run.json")));
  EXPECT_EQ(saved.failure->phase, "ensembles");
  EXPECT_EQ(saved.sequences.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(out / "transfer_table.md"));
}

TEST(Experiment, SeedSweepFansOut) {
  testing::TempDir out;
  auto cfg = load_config(kDemo);
  cfg.ensembles.resize(1);
  cfg.sequences.clear();
  RunOptions opts{out.path(), 3};
  const auto runs = run_experiments(cfg, opts);
  ASSERT_EQ(runs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(runs[i].seed, cfg.seed + i);
    EXPECT_TRUE(std::filesystem::exists(out / "demo" / ("seed-" + std::to_string(cfg.seed + i)) / "run.json"));
  }
  const auto sweep = nlohmann::json::parse(io::read_text(out / "demo" / "sweep.json"));
  EXPECT_EQ(sweep.at("ensembles").at(0).at("per_seed").size(), 3u);
  // A sweep member equals a single run at that seed.
  testing::TempDir single;
  const auto one = run_experiment(cfg, cfg.seed + 1, single.path());
  EXPECT_EQ(one.ensembles[0].outcome.test, runs[1].ensembles[0].outcome.test);
}

TEST(Experiment, CheckpointedMembersAreReused) {
  testing::TempDir out, again;
  const auto cfg = load_config(kDemo);
  const auto first = run_experiment(cfg, cfg.seed, out.path());
  auto j = nlohmann::json::parse(io::read_text(kDemo));
  j["ensembles"] = {{{"name", "from-ckpt"},
                     {"dataset", "sts-like"},
                     {"strategy", "naive"},
                     {"members", {"hash-a", "hash-b"}},
                     {"checkpoints",
                      {(out / "heads/sts-like__hash-a__linear.l3hd").string(),
                       (out / "heads/sts-like__hash-b__linear.l3hd").string()}}}};
  const auto second = run_experiment(parse_config(j, kDemo.parent_path()), cfg.seed, again.path());
  ASSERT_TRUE(second.ok());
  // Stored checkpoints are float32, so compare at that precision.
  EXPECT_NEAR(second.ensembles[0].outcome.test.value, first.ensembles[0].outcome.test.value, 1e-5);
}

TEST(Experiment, BundledDataMatchesGenerator) {
  const auto data = std::filesystem::path(L3ENS_SOURCE_DIR) / "data/demo";
  const auto ortho = synthetic::orthogonal_tasks(7);
  EXPECT_EQ(load_embeddings(data / "ortho.l3em"), ortho.embeddings);
  const auto sts = load_dataset(data / "sts.jsonl", {"sts-like", TaskKind::Regression});
  const auto fresh = synthetic::sts_like(4);
  ASSERT_EQ(sts.examples.size(), fresh.examples.size());
  for (std::size_t i = 0; i < sts.examples.size(); ++i) EXPECT_EQ(sts.examples[i].label, fresh.examples[i].label);
  EXPECT_EQ(sts.test, fresh.test);
}

}  // namespace
}  // namespace l3ens

#include "l3ens/config.hpp"

#include <gtest/gtest.h>

namespace l3ens {
namespace {

nlohmann::json minimal() {
  return nlohmann::json::parse(R"({
    "experiment_id": "mini",
    "seed": 1,
    "datasets": [{"name": "d", "path": "d.jsonl", "task_kind": "classification", "num_classes": 2}],
    "sources": [{"name": "h", "hash": {"dim": 8, "seed": 3}}],
    "sequences": [{"name": "s", "tasks": ["d"], "source": "h"}]
  })");
}

std::vector<ConfigViolation> violations(const nlohmann::json& j) {
  try {
    parse_config(j, "/base");
  } catch (const ConfigError& e) {
    return e.violations();
  }
  return {};
}

TEST(Config, MinimalParses) {
  const auto cfg = parse_config(minimal(), "/base");
  EXPECT_EQ(cfg.experiment_id, "mini");
  EXPECT_EQ(cfg.train.seed, 1u);
  EXPECT_EQ(cfg.datasets[0].path, std::filesystem::path("/base/d.jsonl"));
  ASSERT_TRUE(cfg.sources[0].hash);
  EXPECT_EQ(cfg.sources[0].hash->dim, 8u);
  EXPECT_EQ(cfg.sequences[0].sequence.tasks, std::vector<std::string>{"d"});
  EXPECT_TRUE(cfg.sequences[0].sequence.shared_head);
  EXPECT_EQ(cfg.output_dir, std::filesystem::path("results"));
}

TEST(Config, UnresolvedMemberHasKeyPath) {
  auto j = minimal();
  j["ensembles"] = nlohmann::json::parse(R"([{"name": "e", "dataset": "d", "strategy": "naive",
                                              "members": ["bert"]}])");
  const auto v = violations(j);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].key_path, "ensembles[0].members[0]");
  EXPECT_EQ(v[0].code, ErrorCode::UnresolvedReference);
}

TEST(Config, ReportsEveryViolation) {
  auto j = minimal();
  j["colour"] = "blue";
  j["sequences"][0]["tasks"] = {"nope"};
  j.erase("seed");
  const auto v = violations(j);
  ASSERT_EQ(v.size(), 3u);
  std::set<std::string> paths;
  for (const auto& x : v) paths.insert(x.key_path);
  EXPECT_TRUE(paths.contains("colour"));
  EXPECT_TRUE(paths.contains("seed"));
  EXPECT_TRUE(paths.contains("sequences[0].tasks[0]"));
}

TEST(Config, NestedUnknownKeysAndBadValues) {
  auto j = minimal();
  j["sources"][0]["hash"]["width"] = 3;
  j["train"] = {{"learning_rate", -1.0}, {"optimizer", "rmsprop"}};
  j["datasets"][0]["task_kind"] = "ranking";
  const auto v = violations(j);
  std::map<std::string, ErrorCode> by_path;
  for (const auto& x : v) by_path[x.key_path] = x.code;
  EXPECT_EQ(by_path.at("sources[0].hash.width"), ErrorCode::UnknownKey);
  EXPECT_EQ(by_path.at("train.learning_rate"), ErrorCode::InvalidArgument);
  EXPECT_EQ(by_path.at("train.optimizer"), ErrorCode::ParseError);
  EXPECT_EQ(by_path.at("datasets[0].task_kind"), ErrorCode::ParseError);
}

TEST(Config, SourceNeedsExactlyOneKind) {
  auto j = minimal();
  j["sources"][0]["path"] = "x.l3em";
  EXPECT_EQ(violations(j).size(), 1u);
  j["sources"][0].erase("path");
  j["sources"][0].erase("hash");
  EXPECT_EQ(violations(j).size(), 1u);
}

TEST(Config, FusionStrategiesNeedTheirInputs) {
  auto j = minimal();
  j["ensembles"] = nlohmann::json::parse(R"([
    {"name": "a", "dataset": "d", "strategy": "llm", "members": ["h"]},
    {"name": "b", "dataset": "d", "strategy": "ki", "members": ["h"]}])");
  const auto v = violations(j);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].key_path, "ensembles[0].auxiliary_source");
  EXPECT_EQ(v[1].key_path, "ensembles[1].knowledge_base");
  EXPECT_EQ(v[0].code, ErrorCode::MissingField);
}

TEST(Config, DigestIgnoresKeyOrder) {
  const auto a = nlohmann::json::parse(R"({"seed": 1, "experiment_id": "x", "train": {"a": 1, "b": 2}})");
  const auto b = nlohmann::json::parse(R"({"train": {"b": 2, "a": 1}, "experiment_id": "x", "seed": 1})");
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_NE(config_digest(a), config_digest(nlohmann::json::parse(R"({"seed": 2})")));
  EXPECT_EQ(parse_config(minimal(), "/").digest.size(), 64u);
}

TEST(Config, MalformedFileIsParseError) {
  const auto path = std::filesystem::temp_directory_path() / "l3ens_bad_config.json";
  io::write_atomic(path, std::string_view("{\"seed\": 1,"));
  try {
    load_config(path);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
  }
  std::filesystem::remove(path);
}

TEST(Config, BundledDemoValidates) {
  const auto cfg = load_config(std::filesystem::path(L3ENS_SOURCE_DIR) / "data/demo/demo.json");
  EXPECT_EQ(cfg.experiment_id, "demo");
  EXPECT_EQ(cfg.ensembles.size(), 7u);
}

}  // namespace
}  // namespace l3ens

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include "../test_util.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/io.hpp"

namespace {

const std::string kCli = L3ENS_CLI_PATH;
const std::string kDemo = std::string(L3ENS_SOURCE_DIR) + "/data/demo/demo.json";

int run(const std::string& args) {
  const int status = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ValidateDemo) { EXPECT_EQ(run("validate " + kDemo), 0); }

TEST(Cli, ConfigErrorsExitTwo) {
  l3ens::testing::TempDir dir;
  l3ens::io::write_atomic(dir / "bad.json", std::string_view(R"({"experiment_id": "x", "seed": 1, "extra": 1})"));
  EXPECT_EQ(run("validate " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(run("run " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("run"), 2);
}

TEST(Cli, RunAndReport) {
  l3ens::testing::TempDir dir;
  EXPECT_EQ(run("run " + kDemo + " --out " + dir.path().string()), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "demo/run.json"));
  EXPECT_EQ(run("report " + (dir / "demo/run.json").string() + " --out " + (dir / "rebuilt").string()), 0);
  EXPECT_EQ(l3ens::io::read_text(dir / "demo/strategy_table.md"), l3ens::io::read_text(dir / "rebuilt/strategy_table.md"));
  EXPECT_EQ(l3ens::io::read_text(dir / "demo/transfer_table.csv"), l3ens::io::read_text(dir / "rebuilt/transfer_table.csv"));
}

TEST(Cli, RuntimeFailureExitsThree) {
  l3ens::testing::TempDir dir;
  auto j = nlohmann::json::parse(l3ens::io::read_text(kDemo));
  j["sources"][0]["path"] = (std::filesystem::path(L3ENS_SOURCE_DIR) / "data/demo/missing.l3em").string();
  for (auto& d : j["datasets"]) {
    d["path"] = (std::filesystem::path(L3ENS_SOURCE_DIR) / "data/demo" / d["path"].get<std::string>()).string();
  }
  for (auto& k : j["knowledge_bases"]) {
    for (const char* key : {"labels", "vectors"}) {
      k[key] = (std::filesystem::path(L3ENS_SOURCE_DIR) / "data/demo" / k[key].get<std::string>()).string();
    }
  }
  l3ens::io::write_atomic(dir / "cfg.json", j.dump());
  EXPECT_EQ(run("run " + (dir / "cfg.json").string() + " --out " + (dir / "out").string()), 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/demo/run.json"));
  EXPECT_EQ(run("report " + (dir / "nope.json").string()), 3);
}

TEST(Cli, EncodeWritesLoadableEmbeddings) {
  l3ens::testing::TempDir dir;
  l3ens::io::write_atomic(dir / "t.jsonl",
                          std::string_view("{\"id\": \"a\", \"text\": \"hello world\"}\n"
                                           "{\"id\": \"b\", \"text_a\": \"x\", \"text_b\": \"y\"}\n"));
  EXPECT_EQ(run("encode --input " + (dir / "t.jsonl").string() + " --dim 16 --seed 5 --out " +
                (dir / "e.l3em").string()),
            0);
  const auto m = l3ens::load_embeddings(dir / "e.l3em");
  EXPECT_EQ(m.count(), 2u);
  EXPECT_EQ(m.dim(), 16u);
  const auto expected = l3ens::hash_encode_text("hello world", 16, 5);
  EXPECT_TRUE(std::equal(expected.begin(), expected.end(), m.row(0).begin()));
  EXPECT_EQ(run("encode --input " + (dir / "t.jsonl").string() + " --dim 0 --seed 5 --out x.l3em"), 2);
}

}  // namespace

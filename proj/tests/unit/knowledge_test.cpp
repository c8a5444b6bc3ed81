#include "l3ens/knowledge.hpp"
#include "l3ens/random.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "../test_util.hpp"

namespace l3ens {
namespace {

KnowledgeBase make_kb(std::vector<Entity> entities, std::size_t dim = 2) {
  std::vector<std::string> ids;
  std::vector<float> rows;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    ids.push_back(entities[i].id);
    for (std::size_t d = 0; d < dim; ++d) rows.push_back(d == i % dim ? 1.0f : 0.0f);
  }
  return KnowledgeBase(std::move(entities), EmbeddingMatrix("kb", dim, ids, rows));
}

TEST(LoadKb, ThreeEntities) {
  testing::TempDir dir;
  io::write_atomic(dir / "labels.tsv",
                   std::string("Q1\tParis\tparis|city of light\nQ2\tEiffel Tower\t\nQ3\tSeine\n"));
  store_embeddings(EmbeddingMatrix("kbv", 2, {"Q1", "Q2", "Q3"}, {1, 0, 0, 1, 1, 1}), dir / "v.l3em");
  const auto kb = load_kb(dir / "labels.tsv", dir / "v.l3em");
  EXPECT_EQ(kb.size(), 3u);
  EXPECT_EQ(kb.dim(), 2u);
  ASSERT_NE(kb.lookup("city of light"), nullptr);
  EXPECT_EQ(*kb.lookup("city of light"), "Q1");
  EXPECT_EQ(*kb.lookup("eiffel tower"), "Q2");
  EXPECT_TRUE(kb.warnings().empty());
}

TEST(LoadKb, OrphanEntityIsNamed) {
  testing::TempDir dir;
  io::write_atomic(dir / "labels.tsv", std::string("Q1\tParis\t\nQ9\tGhost\t\n"));
  store_embeddings(EmbeddingMatrix("kbv", 2, {"Q1"}, {1, 0}), dir / "v.l3em");
  try {
    load_kb(dir / "labels.tsv", dir / "v.l3em");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OrphanEntity);
    EXPECT_NE(std::string(e.what()).find("Q9"), std::string::npos);
  }
}

TEST(LoadKb, MalformedRow) {
  std::istringstream in("just-one-column\n");
  EXPECT_THROW(parse_entity_labels(in, "x.tsv"), Error);
}

TEST(KnowledgeBase, DuplicateAliasKeepsSmallerId) {
  const auto kb = make_kb({{"Q90", "Paris", {}}, {"Q167646", "Paris", {"paris hilton"}}});
  ASSERT_NE(kb.lookup("paris"), nullptr);
  EXPECT_EQ(*kb.lookup("paris"), "Q167646");  // "Q167646" < "Q90" lexicographically
  ASSERT_EQ(kb.warnings().size(), 1u);
  EXPECT_NE(kb.warnings()[0].find("paris"), std::string::npos);
  // Same result regardless of row order.
  const auto kb2 = make_kb({{"Q167646", "Paris", {"paris hilton"}}, {"Q90", "Paris", {}}});
  EXPECT_EQ(*kb2.lookup("paris"), "Q167646");
}

TEST(LinkEntities, LongestMatchWins) {
  const auto kb = make_kb({{"E1", "Eiffel Tower", {}}, {"E2", "Paris", {}}, {"E3", "Tower", {}}}, 3);
  const auto m = link_entities("the Eiffel Tower in Paris", kb);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0], (EntityMention{"E1", "eiffel tower", 1, 3}));
  EXPECT_EQ(m[1], (EntityMention{"E2", "paris", 4, 5}));
}

TEST(LinkEntities, GreedyPrefersLongerAlias) {
  const auto kb = make_kb({{"NY", "New York", {}}, {"YK", "York", {}}});
  const auto m = link_entities("New York", kb);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].entity_id, "NY");
  EXPECT_TRUE(link_entities("nothing to see here", kb).empty());
  EXPECT_TRUE(link_entities("", kb).empty());
}

TEST(LinkEntities, CaseAndPunctuationInsensitive) {
  const auto kb = make_kb({{"NY", "New York", {}}});
  const auto m = link_entities("NEW, york!", kb);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(link_entities("NEW, york!", kb), m);
}

// Adding an alias that starts earlier can consume tokens of an existing
// mention, so coverage is not monotone in the knowledge base.
TEST(LinkEntities, SupersetCanDisplaceMention) {
  const auto small = make_kb({{"BC", "b c", {}}});
  const auto large = make_kb({{"BC", "b c", {}}, {"AB", "a b", {}}});
  ASSERT_EQ(link_entities("a b c", small).size(), 1u);
  const auto m = link_entities("a b c", large);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].entity_id, "AB");
}

TEST(LinkEntities, UnrelatedEntityNeverChangesMentions) {
  Rng rng(31);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Entity> ents;
    for (int e = 0; e < 5; ++e) {
      std::string alias;
      const auto len = 1 + uniform_index(rng, 3);
      for (std::size_t t = 0; t < len; ++t) alias += (t ? " " : "") + vocab[uniform_index(rng, 4)];
      ents.push_back({"E" + std::to_string(e), alias, {}});
    }
    std::string text;
    for (int t = 0; t < 12; ++t) text += vocab[uniform_index(rng, 4)] + " ";
    const auto before = link_entities(text, make_kb(ents));
    ents.push_back({"Z", "e f", {}});  // tokens absent from every text
    EXPECT_EQ(link_entities(text, make_kb(ents)), before);
  }
}

TEST(KnowledgeVector, MeanPooling) {
  const auto kb = make_kb({{"A", "alpha", {}}, {"B", "beta", {}}});
  EXPECT_EQ(knowledge_vector({}, kb), (std::vector<double>{0, 0}));
  const std::vector<EntityMention> one = {{"A", "alpha", 0, 1}};
  EXPECT_EQ(knowledge_vector(one, kb), (std::vector<double>{1, 0}));
  const std::vector<EntityMention> two = {{"A", "alpha", 0, 1}, {"B", "beta", 1, 2}};
  EXPECT_EQ(knowledge_vector(two, kb), (std::vector<double>{0.5, 0.5}));
  const std::vector<EntityMention> copies(4, EntityMention{"B", "beta", 0, 1});
  EXPECT_EQ(knowledge_vector(copies, kb), (std::vector<double>{0, 1}));
  const std::vector<EntityMention> bad = {{"nope", "x", 0, 1}};
  try {
    knowledge_vector(bad, kb);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownEntity);
  }
}

TEST(KnowledgeMatrix, FlagsUncoveredExamples) {
  const auto kb = make_kb({{"A", "alpha", {}}, {"B", "beta", {}}});
  TaskDataset ds;
  ds.name = "d";
  ds.task_kind = TaskKind::Regression;
  ds.num_classes = 1;
  ds.examples = {{"x", "alpha and beta", {}, 0.1}, {"y", "gamma", {}, 0.2}};
  const auto kv = knowledge_matrix(ds, kb);
  EXPECT_EQ(kv.uncovered, (std::vector<std::string>{"y"}));
  EXPECT_EQ(kv.matrix.row(0)[0], 0.5f);
  EXPECT_EQ(kv.matrix.row(1)[1], 0.0f);
}

}  // namespace
}  // namespace l3ens

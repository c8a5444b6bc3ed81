// Writes the bundled demo inputs: datasets, embeddings, a toy knowledge base
// and a config tying them together.

#include <filesystem>
#include <iostream>
#include <string>

#include <nlohmann/json.hpp>

#include "l3ens/dataset.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/io.hpp"
#include "l3ens/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

ordered_json dataset_entry(const std::string& name, const std::string& path, const char* kind) {
  ordered_json d = {{"name", name}, {"path", path}, {"task_kind", kind}};
  if (std::string(kind) == "classification") d["num_classes"] = 2;
  return d;
}

ordered_json ensemble(const std::string& name, const std::string& dataset, const char* strategy) {
  return {{"name", name}, {"dataset", dataset}, {"strategy", strategy}, {"members", {"hash-a", "hash-b"}}};
}

ordered_json demo_config() {
  ordered_json c;
  c["experiment_id"] = "demo";
  c["seed"] = 7;
  c["datasets"] = {dataset_entry("ortho-a", "ortho-a.jsonl", "classification"),
                   dataset_entry("ortho-b", "ortho-b.jsonl", "classification"),
                   dataset_entry("sts-like", "sts.jsonl", "regression"),
                   dataset_entry("planted-knowledge", "planted.jsonl", "regression")};
  c["sources"] = {{{"name", "ortho-gauss"}, {"path", "ortho.l3em"}},
                  {{"name", "hash-a"}, {"hash", {{"dim", 32}, {"seed", 1000}}}},
                  {{"name", "hash-b"}, {"hash", {{"dim", 32}, {"seed", 2000}}}},
                  {{"name", "hash-wide"}, {"hash", {{"dim", 128}, {"seed", 3000}}}}};
  c["knowledge_bases"] = {{{"name", "toy-kb"}, {"labels", "toy_kb.tsv"}, {"vectors", "toy_kb.l3em"}}};
  c["sequences"] = {
      {{"name", "ortho-shared"}, {"tasks", {"ortho-a", "ortho-b"}}, {"source", "ortho-gauss"}, {"shared_head", true}},
      {{"name", "ortho-fresh"}, {"tasks", {"ortho-a", "ortho-b"}}, {"source", "ortho-gauss"}, {"shared_head", false}}};
  auto ens = ordered_json::array();
  for (const auto& [prefix, ds] : {std::pair{"sts", "sts-like"}, std::pair{"planted", "planted-knowledge"}}) {
    ens.push_back(ensemble(std::string(prefix) + "-naive", ds, "naive"));
    ens.push_back(ensemble(std::string(prefix) + "-weighted", ds, "weighted"));
    auto llm = ensemble(std::string(prefix) + "-llm", ds, "llm");
    llm["auxiliary_source"] = "hash-wide";
    ens.push_back(llm);
  }
  auto ki = ensemble("planted-ki", "planted-knowledge", "ki");
  ki["knowledge_base"] = "toy-kb";
  ens.push_back(ki);
  c["ensembles"] = std::move(ens);
  c["train"] = {{"learning_rate", 0.01}, {"batch_size", 32}, {"max_epochs", 50}, {"early_stop_patience", 5}};
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 2) {
    std::cerr << "usage: " << argv[0] << " [OUT_DIR]\n";
    return 2;
  }
  const fs::path out = argc == 2 ? argv[1] : "data/demo";
  try {
    fs::create_directories(out);
    using namespace l3ens;

    const auto ortho = synthetic::orthogonal_tasks(7);
    write_dataset(ortho.first, out / "ortho-a.jsonl");
    write_dataset(ortho.second, out / "ortho-b.jsonl");
    store_embeddings(ortho.embeddings, out / "ortho.l3em", {"ortho-a+ortho-b", "all"});

    write_dataset(synthetic::sts_like(4), out / "sts.jsonl");

    const auto toy = synthetic::toy_knowledge_base();
    write_dataset(synthetic::planted_knowledge(11, toy), out / "planted.jsonl");
    std::string tsv;
    for (const auto& e : toy.entities) {
      tsv += e.id + "\t" + e.label + "\t";
      for (std::size_t i = 0; i < e.aliases.size(); ++i) tsv += (i ? "|" : "") + e.aliases[i];
      tsv += "\n";
    }
    io::write_atomic(out / "toy_kb.tsv", tsv);
    store_embeddings(toy.vectors, out / "toy_kb.l3em", {"toy-kb", "entities"});

    io::write_atomic(out / "demo.json", demo_config().dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 3;
  }
  std::cout << "wrote demo inputs to " << out.string() << "\n";
  return 0;
}

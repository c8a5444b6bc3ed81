#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "l3ens/dataset.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/error.hpp"
#include "l3ens/text.hpp"

namespace l3ens {

struct Entity {
  std::string id;
  std::string label;
  std::vector<std::string> aliases;
};

struct EntityMention {
  std::string entity_id;
  std::string surface;  // matched tokens, lowercased, single-space joined
  std::size_t begin = 0;  // token span [begin, end)
  std::size_t end = 0;

  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

// Entity surface forms plus one vector per entity. The canonical label is
// matched like any other alias. Immutable after construction.
class KnowledgeBase {
 public:
  KnowledgeBase(std::vector<Entity> entities, EmbeddingMatrix vectors)
      : entities_(std::move(entities)), vectors_(std::move(vectors)) {
    for (std::size_t i = 0; i < entities_.size(); ++i) {
      const auto& e = entities_[i];
      if (!vectors_.find(e.id)) {
        throw Error(ErrorCode::OrphanEntity, "entity '" + e.id + "' has no vector row");
      }
      if (!by_id_.emplace(e.id, i).second) {
        throw Error(ErrorCode::InvalidArgument, "entity '" + e.id + "' listed twice");
      }
    }
    for (const auto& e : entities_) {
      std::vector<std::string> forms = e.aliases;
      forms.insert(forms.begin(), e.label);
      for (const auto& form : forms) {
        if (form.empty()) continue;
        const auto toks = tokenize(form);
        if (toks.empty()) {
          throw Error(ErrorCode::InvalidArgument,
                      "alias '" + form + "' of entity '" + e.id + "' has no tokens");
        }
        const auto key = join(toks);
        max_alias_tokens_ = std::max(max_alias_tokens_, toks.size());
        auto [it, inserted] = alias_.emplace(key, e.id);
        if (!inserted && it->second != e.id) {
          const auto winner = std::min(it->second, e.id);
          const auto loser = std::max(it->second, e.id);
          warnings_.push_back("alias '" + key + "' maps to '" + it->second + "' and '" + e.id +
                              "'; keeping '" + winner + "', dropping '" + loser + "'");
          it->second = winner;
        }
      }
    }
  }

  std::size_t size() const { return entities_.size(); }
  std::size_t dim() const { return vectors_.dim(); }
  std::size_t max_alias_tokens() const { return max_alias_tokens_; }
  const std::vector<Entity>& entities() const { return entities_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Entity for a lowercased, single-space-joined token sequence.
  const std::string* lookup(const std::string& normalized_alias) const {
    auto it = alias_.find(normalized_alias);
    return it == alias_.end() ? nullptr : &it->second;
  }

  bool contains(std::string_view entity_id) const { return by_id_.contains(std::string(entity_id)); }

  std::span<const float> vector(std::string_view entity_id) const {
    if (!contains(entity_id)) {
      throw Error(ErrorCode::UnknownEntity, "entity '" + std::string(entity_id) + "' not in knowledge base");
    }
    return vectors_.row(*vectors_.find(entity_id));
  }

 private:
  std::vector<Entity> entities_;
  EmbeddingMatrix vectors_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<std::string, std::string> alias_;
  std::size_t max_alias_tokens_ = 0;
  std::vector<std::string> warnings_;
};

// Labels TSV: entity_id <TAB> canonical_label <TAB> alias1|alias2|...
inline std::vector<Entity> parse_entity_labels(std::istream& in, const std::string& where) {
  std::vector<Entity> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 2 || cols.size() > 3 || cols[0].empty()) {
      throw Error(ErrorCode::ParseError, where + ":" + std::to_string(lineno) +
                                             ": expected entity_id<TAB>label<TAB>aliases");
    }
    Entity e{cols[0], cols[1], {}};
    if (cols.size() == 3) {
      std::stringstream ss(cols[2]);
      std::string alias;
      while (std::getline(ss, alias, '|')) {
        if (!alias.empty()) e.aliases.push_back(alias);
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline KnowledgeBase load_kb(const std::filesystem::path& labels_path,
                             const std::filesystem::path& vectors_path) {
  std::ifstream in(labels_path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + labels_path.string());
  auto entities = parse_entity_labels(in, labels_path.string());
  auto vectors = load_embeddings(vectors_path);
  try {
    return KnowledgeBase(std::move(entities), std::move(vectors));
  } catch (const Error& e) {
    throw Error(e.code(), labels_path.string() + ": " + e.what());
  }
}

// Greedy longest match over lowercased token n-grams, left to right; a
// matched span is consumed.
inline std::vector<EntityMention> link_entities(std::string_view text, const KnowledgeBase& kb) {
  const auto toks = tokenize(text);
  std::vector<EntityMention> out;
  std::size_t i = 0;
  while (i < toks.size()) {
    bool matched = false;
    const std::size_t longest = std::min(kb.max_alias_tokens(), toks.size() - i);
    for (std::size_t len = longest; len >= 1; --len) {
      auto key = join(toks, i, i + len);
      if (const auto* id = kb.lookup(key)) {
        out.push_back({*id, std::move(key), i, i + len});
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

// Mean of the mentioned entities' vectors; zero vector when nothing linked.
inline std::vector<double> knowledge_vector(std::span<const EntityMention> mentions,
                                            const KnowledgeBase& kb) {
  std::vector<double> acc(kb.dim(), 0.0);
  for (const auto& m : mentions) {
    const auto v = kb.vector(m.entity_id);
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += v[d];
  }
  if (!mentions.empty()) {
    for (double& x : acc) x /= static_cast<double>(mentions.size());
  }
  return acc;
}

struct KnowledgeVectors {
  EmbeddingMatrix matrix;               // keyed by example id
  std::vector<std::string> uncovered;  // examples with no linked entity
};

// Pooled knowledge vector for every example of a dataset.
inline KnowledgeVectors knowledge_matrix(const TaskDataset& ds, const KnowledgeBase& kb,
                                         std::string source_name = "knowledge") {
  std::vector<std::string> ids;
  std::vector<float> rows;
  std::vector<std::string> uncovered;
  for (const auto& ex : ds.examples) {
    const auto mentions = link_entities(ex.text(), kb);
    if (mentions.empty()) uncovered.push_back(ex.id);
    for (double v : knowledge_vector(mentions, kb)) rows.push_back(static_cast<float>(v));
    ids.push_back(ex.id);
  }
  return {EmbeddingMatrix(std::move(source_name), kb.dim(), std::move(ids), std::move(rows)),
          std::move(uncovered)};
}

}  // namespace l3ens

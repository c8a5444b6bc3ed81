#pragma once

// Bundled synthetic benchmarks. Every generator is a pure function of its
// seed and options.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "l3ens/dataset.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/knowledge.hpp"
#include "l3ens/random.hpp"

namespace l3ens::synthetic {

namespace detail {

inline std::string padded(std::size_t i, int width = 4) {
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << i;
  return os.str();
}

inline std::vector<double> unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0.0;
  do {
    n = 0.0;
    for (double& x : v) {
      x = normal(rng);
      n += x * x;
    }
  } while (n == 0.0);
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Assigns the first n_train ids to train, the next n_val to validation, the
// rest to test.
inline void assign_splits(TaskDataset& ds, std::size_t n_train, std::size_t n_val) {
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto& id = ds.examples[i].id;
    if (i < n_train) ds.train.push_back(id);
    else if (i < n_train + n_val) ds.validation.push_back(id);
    else ds.test.push_back(id);
  }
}

}  // namespace detail

struct SplitSizes {
  std::size_t train = 300;
  std::size_t validation = 100;
  std::size_t test = 200;
  std::size_t total() const { return train + validation + test; }
};

// ---- two binary tasks with orthogonal decision directions -----------------

struct OrthogonalTasksOptions {
  std::size_t dim = 16;
  SplitSizes sizes{};
  // Task-2 inputs carry extra variance along task 1's direction, so task 2
  // actively penalizes a head that still relies on that direction.
  double nuisance_scale = 3.0;
};

struct OrthogonalTasks {
  TaskDataset first;
  TaskDataset second;
  EmbeddingMatrix embeddings;  // rows for both tasks
  std::vector<double> direction_first;
  std::vector<double> direction_second;
};

inline OrthogonalTasks orthogonal_tasks(std::uint64_t seed, const OrthogonalTasksOptions& opts = {}) {
  Rng rng(seed);
  auto u1 = detail::unit_vector(rng, opts.dim);
  auto u2 = detail::unit_vector(rng, opts.dim);
  const double proj = detail::dot(u1, u2);
  double n = 0.0;
  for (std::size_t i = 0; i < opts.dim; ++i) {
    u2[i] -= proj * u1[i];
    n += u2[i] * u2[i];
  }
  for (double& x : u2) x /= std::sqrt(n);

  std::vector<std::string> ids;
  std::vector<float> rows;
  auto make_task = [&](const std::string& name, const std::vector<double>& dir, bool nuisance) {
    TaskDataset ds;
    ds.name = name;
    ds.task_kind = TaskKind::Classification;
    ds.num_classes = 2;
    for (std::size_t i = 0; i < opts.sizes.total(); ++i) {
      std::vector<double> x(opts.dim);
      for (double& v : x) v = normal(rng);
      if (nuisance) {
        const double z = opts.nuisance_scale * normal(rng);
        for (std::size_t d = 0; d < opts.dim; ++d) x[d] += z * u1[d];
      }
      const auto id = name + "-" + detail::padded(i);
      ds.examples.push_back({id, "", {}, detail::dot(x, dir) > 0.0 ? 1.0 : 0.0});
      ids.push_back(id);
      for (double v : x) rows.push_back(static_cast<float>(v));
    }
    detail::assign_splits(ds, opts.sizes.train, opts.sizes.validation);
    return ds;
  };
  auto first = make_task("ortho-a", u1, false);
  auto second = make_task("ortho-b", u2, true);
  return {std::move(first), std::move(second),
          EmbeddingMatrix("ortho-gauss", opts.dim, std::move(ids), std::move(rows)), std::move(u1),
          std::move(u2)};
}

// ---- STS-like sentence-pair regression -----------------------------------

struct StsLikeOptions {
  std::size_t vocabulary = 64;
  std::size_t words_per_side = 4;
  double signal_scale = 0.15;
  double noise = 0.02;
  SplitSizes sizes{};
};

inline std::string vocabulary_word(std::size_t i) { return "w" + detail::padded(i, 3); }

// Each word carries a latent score; the label is 0.5 plus the scaled mean
// score of the pair's words, clipped to [0,1]. Under a hashing encoder the
// label is linear in the bag of words up to hash collisions.
inline TaskDataset sts_like(std::uint64_t seed, const StsLikeOptions& opts = {}) {
  Rng rng(seed);
  std::vector<double> score(opts.vocabulary);
  for (double& s : score) s = normal(rng);
  TaskDataset ds;
  ds.name = "sts-like";
  ds.task_kind = TaskKind::Regression;
  ds.num_classes = 1;
  const std::size_t words = 2 * opts.words_per_side;
  for (std::size_t i = 0; i < opts.sizes.total(); ++i) {
    std::vector<std::size_t> picked;
    while (picked.size() < words) {
      const auto w = uniform_index(rng, opts.vocabulary);
      if (std::find(picked.begin(), picked.end(), w) == picked.end()) picked.push_back(w);
    }
    double s = 0.0;
    std::string a, b;
    for (std::size_t k = 0; k < words; ++k) {
      s += score[picked[k]];
      auto& side = k < opts.words_per_side ? a : b;
      if (!side.empty()) side += ' ';
      side += vocabulary_word(picked[k]);
    }
    const double z = s / std::sqrt(static_cast<double>(words));
    const double label = std::clamp(0.5 + opts.signal_scale * z + opts.noise * normal(rng), 0.0, 1.0);
    ds.examples.push_back({"sts-" + detail::padded(i), a, b, label});
  }
  detail::assign_splits(ds, opts.sizes.train, opts.sizes.validation);
  return ds;
}

// ---- toy knowledge base ---------------------------------------------------

inline const std::array<const char*, 50>& toy_entity_names() {
  static const std::array<const char*, 50> names = {
      "Paris",          "Eiffel Tower",    "Louvre",          "Seine",
      "London",         "Big Ben",         "Thames",          "Tower Bridge",
      "New York",       "Central Park",    "Hudson River",    "Statue of Liberty",
      "Rome",           "Colosseum",       "Tiber",           "Vatican City",
      "Berlin",         "Brandenburg Gate", "Spree",          "Tokyo",
      "Mount Fuji",     "Kyoto",           "Osaka",           "Beijing",
      "Great Wall",     "Forbidden City",  "Shanghai",        "Sydney",
      "Opera House",    "Melbourne",       "Cairo",           "Nile",
      "Giza Pyramids",  "Moscow",          "Red Square",      "Kremlin",
      "Madrid",         "Prado",           "Barcelona",       "Sagrada Familia",
      "Amsterdam",      "Rijksmuseum",     "Vienna",          "Danube",
      "Prague",         "Budapest",        "Istanbul",        "Hagia Sophia",
      "Athens",         "Acropolis"};
  return names;
}

struct ToyKnowledgeBase {
  std::vector<Entity> entities;
  EmbeddingMatrix vectors;

  KnowledgeBase build() const { return KnowledgeBase(entities, vectors); }
};

// 50 entities with unit-norm random vectors; ids "Q001".."Q050".
inline ToyKnowledgeBase toy_knowledge_base(std::uint64_t seed = 50, std::size_t dim = 16) {
  Rng rng(seed);
  ToyKnowledgeBase kb;
  std::vector<std::string> ids;
  std::vector<float> rows;
  const auto& names = toy_entity_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto id = "Q" + detail::padded(i + 1, 3);
    kb.entities.push_back({id, names[i], {}});
    ids.push_back(id);
    for (double v : detail::unit_vector(rng, dim)) rows.push_back(static_cast<float>(v));
  }
  kb.entities[0].aliases = {"City of Light"};
  kb.entities[8].aliases = {"NYC", "Big Apple"};
  kb.entities[31].aliases = {"Nile River"};
  kb.vectors = EmbeddingMatrix("toy-kb", dim, std::move(ids), std::move(rows));
  return kb;
}

// ---- regression task whose signal lives in the knowledge vector ----------

struct PlantedKnowledgeOptions {
  std::size_t filler_vocabulary = 300;
  std::size_t filler_words = 8;
  std::size_t max_mentions = 2;
  double signal_scale = 0.4;
  SplitSizes sizes{};
};

// Texts mix filler words with 1..max_mentions toy-KB entity names. The label
// is 0.5 + scale * <u, k/|k|> where k is the mean entity vector of the
// mentioned entities and u a seeded unit direction.
inline TaskDataset planted_knowledge(std::uint64_t seed, const ToyKnowledgeBase& toy,
                                     const PlantedKnowledgeOptions& opts = {}) {
  Rng rng(seed);
  const auto dim = toy.vectors.dim();
  const auto u = detail::unit_vector(rng, dim);
  TaskDataset ds;
  ds.name = "planted-knowledge";
  ds.task_kind = TaskKind::Regression;
  ds.num_classes = 1;
  for (std::size_t i = 0; i < opts.sizes.total(); ++i) {
    std::vector<std::string> words;
    for (std::size_t w = 0; w < opts.filler_words; ++w) {
      words.push_back("f" + detail::padded(uniform_index(rng, opts.filler_vocabulary), 3));
    }
    const std::size_t mentions = 1 + uniform_index(rng, opts.max_mentions);
    std::vector<double> k(dim, 0.0);
    std::vector<std::size_t> used;
    while (used.size() < mentions) {
      const auto e = uniform_index(rng, toy.entities.size());
      if (std::find(used.begin(), used.end(), e) != used.end()) continue;
      used.push_back(e);
      const auto row = toy.vectors.row(e);
      for (std::size_t d = 0; d < dim; ++d) k[d] += row[d];
      const auto pos = uniform_index(rng, words.size() + 1);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), toy.entities[e].label);
    }
    double n = 0.0;
    for (double v : k) n += v * v;
    double proj = 0.0;
    for (std::size_t d = 0; d < dim; ++d) proj += u[d] * k[d] / std::sqrt(n);
    const double label = std::clamp(0.5 + opts.signal_scale * proj, 0.0, 1.0);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    ds.examples.push_back({"pk-" + detail::padded(i), text, {}, label});
  }
  detail::assign_splits(ds, opts.sizes.train, opts.sizes.validation);
  return ds;
}

}  // namespace l3ens::synthetic

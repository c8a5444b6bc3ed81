#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "l3ens/error.hpp"
#include "l3ens/text.hpp"

namespace l3ens {

enum class TaskKind { Classification, Regression };

constexpr std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::Classification ? "classification" : "regression";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "classification") return TaskKind::Classification;
  if (s == "regression") return TaskKind::Regression;
  throw Error(ErrorCode::InvalidArgument,
              "unknown task kind '" + std::string(s) + "'");
}

enum class Split { Train, Validation, Test };

constexpr std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

struct Example {
  std::string id;
  std::string text_a;
  std::optional<std::string> text_b;
  double label = 0.0;

  // Text handed to encoders and the entity linker.
  std::string text() const {
    return text_b ? text_a + " " + *text_b : text_a;
  }
};

struct TaskDataset {
  std::string name;
  TaskKind task_kind = TaskKind::Classification;
  std::size_t num_classes = 2;  // 1 for regression
  std::vector<Example> examples;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  const std::vector<std::string>& split(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Validation: return validation;
      case Split::Test: return test;
    }
    return train;
  }

  std::size_t out_dim() const {
    return task_kind == TaskKind::Classification ? num_classes : 1;
  }

  const Example* find(std::string_view id) const {
    for (const auto& ex : examples) {
      if (ex.id == id) return &ex;
    }
    return nullptr;
  }

  std::unordered_map<std::string, std::size_t> index() const {
    std::unordered_map<std::string, std::size_t> out;
    out.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) out.emplace(examples[i].id, i);
    return out;
  }

  // Splits disjoint and drawn from existing ids; labels in range.
  void validate() const {
    const auto idx = index();
    if (idx.size() != examples.size()) {
      throw Error(ErrorCode::InvalidDataset, name + ": duplicate example id");
    }
    if (task_kind == TaskKind::Classification && num_classes < 2) {
      throw Error(ErrorCode::InvalidDataset, name + ": num_classes must be >= 2");
    }
    std::unordered_set<std::string> seen;
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      for (const auto& id : split(s)) {
        if (!idx.contains(id)) {
          throw Error(ErrorCode::InvalidDataset,
                      name + ": " + std::string(to_string(s)) +
                          " split references unknown id '" + id + "'");
        }
        if (!seen.insert(id).second) {
          throw Error(ErrorCode::InvalidDataset,
                      name + ": id '" + id + "' appears in more than one split");
        }
      }
    }
    for (const auto& ex : examples) {
      if (!std::isfinite(ex.label)) {
        throw Error(ErrorCode::InvalidDataset,
                    name + ": non-finite label for id '" + ex.id + "'");
      }
      if (task_kind == TaskKind::Classification) {
        if (ex.label < 0 || ex.label >= static_cast<double>(num_classes) ||
            ex.label != std::floor(ex.label)) {
          throw Error(ErrorCode::InvalidDataset,
                      name + ": class label out of range for id '" + ex.id + "'");
        }
      } else if (ex.label < 0.0 || ex.label > 1.0) {
        throw Error(ErrorCode::InvalidDataset,
                    name + ": regression label outside [0,1] after normalization for id '" +
                        ex.id + "'");
      }
    }
  }
};

// Records without an explicit "split" are bucketed by id hash: 70% train,
// 15% validation, 15% test.
inline Split default_split_for(std::string_view id) {
  const auto bucket = seeded_hash(id, 0x5b1e) % 100;
  if (bucket < 70) return Split::Train;
  if (bucket < 85) return Split::Validation;
  return Split::Test;
}

struct DatasetOptions {
  std::string name;
  TaskKind task_kind = TaskKind::Classification;
  std::size_t num_classes = 2;
  double label_scale = 1.0;  // regression labels are divided by this
};

// JSON Lines: {"id", "text" | "text_a"+"text_b", "label", optional "split"}.
inline TaskDataset load_dataset(const std::filesystem::path& path,
                                const DatasetOptions& opts) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open dataset " + path.string());
  }
  TaskDataset ds;
  ds.name = opts.name;
  ds.task_kind = opts.task_kind;
  ds.num_classes = opts.task_kind == TaskKind::Classification ? opts.num_classes : 1;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    Example ex;
    try {
      ex.id = rec.at("id").get<std::string>();
      if (rec.contains("text")) {
        ex.text_a = rec.at("text").get<std::string>();
      } else {
        ex.text_a = rec.at("text_a").get<std::string>();
        ex.text_b = rec.at("text_b").get<std::string>();
      }
      ex.label = rec.at("label").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    if (ds.task_kind == TaskKind::Regression) ex.label /= opts.label_scale;

    Split split = default_split_for(ex.id);
    if (auto it = rec.find("split"); it != rec.end()) {
      const auto s = it->get<std::string>();
      if (s == "train") split = Split::Train;
      else if (s == "validation" || s == "dev") split = Split::Validation;
      else if (s == "test") split = Split::Test;
      else throw Error(ErrorCode::ParseError, where + ": unknown split '" + s + "'");
    }
    switch (split) {
      case Split::Train: ds.train.push_back(ex.id); break;
      case Split::Validation: ds.validation.push_back(ex.id); break;
      case Split::Test: ds.test.push_back(ex.id); break;
    }
    ds.examples.push_back(std::move(ex));
  }
  ds.validate();
  return ds;
}

inline void write_dataset(const TaskDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  const auto idx = ds.index();
  std::vector<std::string> split_of(ds.examples.size(), "train");
  for (Split s : {Split::Train, Split::Validation, Split::Test}) {
    for (const auto& id : ds.split(s)) split_of[idx.at(id)] = std::string(to_string(s));
  }
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto& ex = ds.examples[i];
    nlohmann::ordered_json rec;
    rec["id"] = ex.id;
    if (ex.text_b) {
      rec["text_a"] = ex.text_a;
      rec["text_b"] = *ex.text_b;
    } else {
      rec["text"] = ex.text_a;
    }
    if (ds.task_kind == TaskKind::Classification) {
      rec["label"] = static_cast<int>(ex.label);
    } else {
      rec["label"] = ex.label;
    }
    rec["split"] = split_of[i];
    out << rec.dump() << '\n';
  }
}

}  // namespace l3ens

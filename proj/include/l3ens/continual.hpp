#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "l3ens/dataset.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/error.hpp"
#include "l3ens/heads.hpp"

namespace l3ens {

struct TaskSequence {
  std::string name;
  std::vector<std::string> tasks;
  bool shared_head = true;
  HeadKind head_kind = HeadKind::Linear;
  std::size_t hidden_dim = kDefaultHiddenDim;
};

// A sequence task resolved to its data and embedding source.
struct SequenceTask {
  const TaskDataset* dataset = nullptr;
  const EmbeddingMatrix* embeddings = nullptr;
};

// Row k = after training step k (row 0: untrained head); column j = task j
// of the sequence, scored on its test split.
struct EvalMatrix {
  std::vector<std::string> tasks;
  std::vector<std::string> models;  // row labels, e.g. "base", "base→QQP"
  std::vector<std::vector<Metric>> cells;

  std::size_t steps() const { return cells.empty() ? 0 : cells.size() - 1; }
  const Metric& at(std::size_t step, std::size_t task) const { return cells.at(step).at(task); }

  friend bool operator==(const EvalMatrix&, const EvalMatrix&) = default;
};

inline constexpr std::string_view kArrow = "→";

// Name of the model after step k: "base→T1→…→Tk" when the head is shared,
// "base→Tk" for a fresh head.
inline std::string model_name(const TaskSequence& seq, std::size_t step) {
  std::string name = "base";
  if (step == 0) return name;
  const std::size_t first = seq.shared_head ? 0 : step - 1;
  for (std::size_t i = first; i < step; ++i) name += std::string(kArrow) + seq.tasks[i];
  return name;
}

// Sequential protocol. Shared head: one set of parameters carried from step
// to step. When an mlp1 shared head meets tasks with different output
// shapes, the hidden layer is shared and each task keeps its own output
// layer. Fresh heads: every task trains its own head from the same init.
inline EvalMatrix run_sequence(const TaskSequence& seq, const std::vector<SequenceTask>& tasks,
                               const TrainConfig& config) {
  if (seq.tasks.empty()) throw Error(ErrorCode::InvalidArgument, "sequence '" + seq.name + "' has no tasks");
  if (tasks.size() != seq.tasks.size()) {
    throw Error(ErrorCode::InvalidArgument, "sequence '" + seq.name + "': tasks not resolved");
  }
  std::unordered_set<std::string> seen;
  for (const auto& t : seq.tasks) {
    if (!seen.insert(t).second) {
      throw Error(ErrorCode::InvalidArgument, "sequence '" + seq.name + "' repeats task '" + t + "'");
    }
  }
  const std::size_t k_tasks = tasks.size();

  // Splits are aligned once; MissingEmbedding propagates from here.
  struct Prepared {
    AlignedSet train, validation, test;
  };
  std::vector<Prepared> data;
  for (const auto& t : tasks) {
    data.push_back({align(*t.dataset, Split::Train, *t.embeddings),
                    align(*t.dataset, Split::Validation, *t.embeddings),
                    align(*t.dataset, Split::Test, *t.embeddings)});
  }

  const auto& first = *tasks.front().dataset;
  const std::size_t in_dim = tasks.front().embeddings->dim();
  bool uniform_shape = true;
  for (const auto& t : tasks) {
    if (t.dataset->task_kind != first.task_kind || t.dataset->out_dim() != first.out_dim()) {
      uniform_shape = false;
    }
  }
  if (seq.shared_head) {
    for (const auto& t : tasks) {
      if (t.embeddings->dim() != in_dim) {
        throw Error(ErrorCode::SharedHeadShapeMismatch,
                    "sequence '" + seq.name + "': task '" + t.dataset->name + "' has embedding dim " +
                        std::to_string(t.embeddings->dim()) + ", expected " + std::to_string(in_dim));
      }
    }
    if (!uniform_shape && seq.head_kind == HeadKind::Linear) {
      throw Error(ErrorCode::SharedHeadShapeMismatch,
                  "sequence '" + seq.name + "': tasks differ in label space; a shared linear head "
                  "needs equal num_classes and task kind (use mlp1 for per-task outputs)");
    }
  }

  // Initial head per task; all draws use config.seed, so the untrained row
  // does not depend on task order.
  std::vector<Head> heads;
  for (const auto& t : tasks) {
    heads.push_back(init_head(seq.head_kind, t.embeddings->dim(), t.dataset->out_dim(),
                              t.dataset->task_kind, config.seed, seq.hidden_dim));
  }
  const bool per_task_outputs = seq.shared_head && !uniform_shape;

  EvalMatrix matrix;
  matrix.tasks = seq.tasks;
  auto evaluate_row = [&](std::size_t step) {
    std::vector<Metric> row;
    for (std::size_t j = 0; j < k_tasks; ++j) row.push_back(evaluate(heads[j], data[j].test));
    matrix.cells.push_back(std::move(row));
    matrix.models.push_back(model_name(seq, step));
  };
  evaluate_row(0);

  for (std::size_t k = 0; k < k_tasks; ++k) {
    TrainConfig step_config = config;
    step_config.seed = config.seed + k + 1;
    auto trained = train_head(heads[k], data[k].train, data[k].validation, step_config);
    if (!seq.shared_head) {
      heads[k] = std::move(trained.head);
    } else if (per_task_outputs) {
      const std::size_t trunk = trained.head.trunk_size();
      heads[k] = std::move(trained.head);
      for (std::size_t j = 0; j < k_tasks; ++j) {
        if (j == k) continue;
        std::copy_n(heads[k].params.begin(), trunk, heads[j].params.begin());
      }
    } else {
      for (auto& h : heads) h = trained.head;
    }
    evaluate_row(k + 1);
  }
  return matrix;
}

enum class TransferRelation { Learning, Forward, Backward };

constexpr std::string_view to_string(TransferRelation r) {
  switch (r) {
    case TransferRelation::Learning: return "learning";
    case TransferRelation::Forward: return "forward";
    case TransferRelation::Backward: return "backward";
  }
  return "learning";
}

struct TransferRecord {
  std::string task;   // evaluation task
  std::size_t step = 0;
  std::string model;  // model under test
  std::string cb_model;
  double a = 0.0;
  double cb = 0.0;
  double kt = 0.0;
  bool is_forgetting = false;
  TransferRelation relation = TransferRelation::Learning;

  friend bool operator==(const TransferRecord&, const TransferRecord&) = default;
};

inline constexpr double kForgettingEpsilon = 1e-9;

// A - CB as a signed fraction. Accuracy only.
inline double knowledge_transfer(const Metric& a, const Metric& cb) {
  if (a.kind != cb.kind) {
    throw Error(ErrorCode::MetricKindMismatch, "cannot difference " + std::string(to_string(a.kind)) +
                                                   " and " + std::string(to_string(cb.kind)));
  }
  if (a.kind != MetricKind::Accuracy) {
    throw Error(ErrorCode::MetricKindMismatch, "knowledge transfer is defined on accuracy only");
  }
  return a.value - cb.value;
}

namespace detail {
inline TransferRecord make_record(const EvalMatrix& m, std::size_t step, std::size_t task,
                                  std::size_t cb_step, TransferRelation rel) {
  TransferRecord r;
  r.task = m.tasks[task];
  r.step = step;
  r.model = m.models[step];
  r.cb_model = m.models[cb_step];
  r.a = m.at(step, task).value;
  r.cb = m.at(cb_step, task).value;
  r.kt = knowledge_transfer(m.at(step, task), m.at(cb_step, task));
  r.relation = rel;
  r.is_forgetting = rel == TransferRelation::Backward && r.kt < -kForgettingEpsilon;
  return r;
}
}  // namespace detail

// Every (step k, earlier task j < k): A = cell(k, j), CB = cell(j, j).
inline std::vector<TransferRecord> detect_forgetting(const EvalMatrix& matrix, const TaskSequence& seq) {
  if (matrix.tasks != seq.tasks) {
    throw Error(ErrorCode::InvalidArgument, "matrix does not belong to sequence '" + seq.name + "'");
  }
  std::vector<TransferRecord> out;
  for (std::size_t k = 2; k <= matrix.steps(); ++k) {
    for (std::size_t j = 0; j + 1 < k; ++j) {
      if (matrix.at(k, j).kind != MetricKind::Accuracy) continue;
      out.push_back(detail::make_record(matrix, k, j, j + 1, TransferRelation::Backward));
    }
  }
  return out;
}

// Transfer ledger in step order. For each step k: the task just learned
// (CB = the same task one step earlier), forward transfer onto later tasks
// (CB = untrained), then backward records on earlier tasks (CB = right after
// that task was learned). Regression columns are skipped.
inline std::vector<TransferRecord> transfer_ledger(const EvalMatrix& matrix) {
  std::vector<TransferRecord> out;
  const std::size_t n = matrix.tasks.size();
  for (std::size_t k = 1; k <= matrix.steps(); ++k) {
    const std::size_t learned = k - 1;
    auto accuracy = [&](std::size_t j) { return matrix.at(k, j).kind == MetricKind::Accuracy; };
    if (accuracy(learned)) {
      out.push_back(detail::make_record(matrix, k, learned, k - 1, TransferRelation::Learning));
    }
    for (std::size_t j = learned + 1; j < n; ++j) {
      if (accuracy(j)) out.push_back(detail::make_record(matrix, k, j, 0, TransferRelation::Forward));
    }
    for (std::size_t j = 0; j < learned; ++j) {
      if (accuracy(j)) out.push_back(detail::make_record(matrix, k, j, j + 1, TransferRelation::Backward));
    }
  }
  return out;
}

inline nlohmann::ordered_json to_json(const TransferRecord& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["step"] = r.step;
  j["model"] = r.model;
  j["cb_model"] = r.cb_model;
  j["relation"] = to_string(r.relation);
  j["A"] = r.a;
  j["CB"] = r.cb;
  j["kt"] = r.kt;
  j["is_forgetting"] = r.is_forgetting;
  return j;
}

inline TransferRecord transfer_record_from_json(const nlohmann::json& j) {
  TransferRecord r;
  r.task = j.at("task").get<std::string>();
  r.step = j.value("step", std::size_t{0});
  r.model = j.value("model", "");
  r.cb_model = j.value("cb_model", "");
  const auto rel = j.value("relation", "learning");
  r.relation = rel == "forward"    ? TransferRelation::Forward
               : rel == "backward" ? TransferRelation::Backward
                                   : TransferRelation::Learning;
  r.a = j.at("A").get<double>();
  r.cb = j.at("CB").get<double>();
  r.kt = j.at("kt").get<double>();
  r.is_forgetting = j.at("is_forgetting").get<bool>();
  return r;
}

// {"sequence", "metric_kind", "models", "rows", "transfers"}
inline nlohmann::ordered_json to_json(const EvalMatrix& m, const std::vector<TransferRecord>& transfers) {
  nlohmann::ordered_json j;
  j["sequence"] = m.tasks;
  std::vector<std::string> kinds;
  for (const auto& c : m.cells.front()) kinds.emplace_back(to_string(c.kind));
  const bool mixed = std::any_of(kinds.begin(), kinds.end(), [&](const auto& k) { return k != kinds.front(); });
  j["metric_kind"] = mixed ? "mixed" : kinds.front();
  if (mixed) j["column_kinds"] = kinds;
  j["models"] = m.models;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : m.cells) {
    auto r = nlohmann::ordered_json::array();
    for (const auto& c : row) r.push_back(c.value);
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  auto tr = nlohmann::ordered_json::array();
  for (const auto& t : transfers) tr.push_back(to_json(t));
  j["transfers"] = std::move(tr);
  return j;
}

inline EvalMatrix eval_matrix_from_json(const nlohmann::json& j) {
  EvalMatrix m;
  m.tasks = j.at("sequence").get<std::vector<std::string>>();
  m.models = j.at("models").get<std::vector<std::string>>();
  std::vector<MetricKind> kinds;
  if (j.contains("column_kinds")) {
    for (const auto& k : j.at("column_kinds")) kinds.push_back(k == "mse" ? MetricKind::Mse : MetricKind::Accuracy);
  } else {
    kinds.assign(m.tasks.size(), j.at("metric_kind") == "mse" ? MetricKind::Mse : MetricKind::Accuracy);
  }
  for (const auto& row : j.at("rows")) {
    std::vector<Metric> r;
    for (std::size_t c = 0; c < row.size(); ++c) r.push_back({kinds.at(c), row[c].get<double>()});
    m.cells.push_back(std::move(r));
  }
  return m;
}

}  // namespace l3ens

#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l3ens/continual.hpp"
#include "l3ens/ensemble.hpp"
#include "l3ens/error.hpp"
#include "l3ens/heads.hpp"
#include "l3ens/io.hpp"

namespace l3ens {

// ---- run results ----------------------------------------------------------

struct HeadResult {
  std::string dataset;
  std::string source;
  HeadKind head_kind = HeadKind::Linear;
  std::size_t parameters = 0;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  Metric validation;
  Metric test;
  std::string checkpoint;  // relative to the run directory
};

struct SequenceResult {
  std::string name;
  std::string source;
  bool shared_head = true;
  HeadKind head_kind = HeadKind::Linear;
  std::size_t parameters = 0;
  EvalMatrix matrix;
  std::vector<TransferRecord> transfers;
};

struct MemberResult {
  std::string source;
  std::size_t parameters = 0;
  Metric test;
};

struct EnsembleResult {
  std::string name;
  std::string dataset;
  WeightConstraint constraint = WeightConstraint::Simplex;
  std::vector<MemberResult> members;
  EnsembleOutcome outcome;
};

struct PhaseFailure {
  std::string phase;
  std::string code;
  std::string message;
};

struct RunResult {
  std::string experiment_id;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<HeadResult> heads;
  std::vector<SequenceResult> sequences;
  std::vector<EnsembleResult> ensembles;
  std::optional<PhaseFailure> failure;
  std::vector<std::pair<std::string, double>> timings;  // wall-clock seconds per phase

  bool ok() const { return !failure.has_value(); }
};

inline std::string_view to_string(WeightConstraint c) {
  return c == WeightConstraint::Simplex ? "simplex" : "unconstrained";
}

inline WeightConstraint parse_weight_constraint(std::string_view s) {
  if (s == "simplex") return WeightConstraint::Simplex;
  if (s == "unconstrained") return WeightConstraint::Unconstrained;
  throw Error(ErrorCode::InvalidArgument, "unknown weight constraint '" + std::string(s) + "'");
}

namespace detail {

inline nlohmann::ordered_json metric_json(const Metric& m) {
  return {{"kind", to_string(m.kind)}, {"value", m.value}};
}

inline Metric metric_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  return {kind == "mse" ? MetricKind::Mse : MetricKind::Accuracy, j.at("value").get<double>()};
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunResult& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["experiment_id"] = r.experiment_id;
  j["seed"] = r.seed;
  j["config_digest"] = r.config_digest;
  j["status"] = r.ok() ? "ok" : "failed";
  if (r.failure) {
    j["failure"] = {{"phase", r.failure->phase}, {"code", r.failure->code}, {"message", r.failure->message}};
  }
  auto heads = ordered_json::array();
  for (const auto& h : r.heads) {
    heads.push_back({{"dataset", h.dataset},
                     {"source", h.source},
                     {"head_kind", to_string(h.head_kind)},
                     {"parameters", h.parameters},
                     {"best_epoch", h.best_epoch},
                     {"stopped_epoch", h.stopped_epoch},
                     {"validation", detail::metric_json(h.validation)},
                     {"test", detail::metric_json(h.test)},
                     {"checkpoint", h.checkpoint}});
  }
  j["heads"] = std::move(heads);
  auto seqs = ordered_json::array();
  for (const auto& s : r.sequences) {
    seqs.push_back({{"name", s.name},
                    {"source", s.source},
                    {"shared_head", s.shared_head},
                    {"head_kind", to_string(s.head_kind)},
                    {"parameters", s.parameters},
                    {"matrix", to_json(s.matrix, s.transfers)}});
  }
  j["sequences"] = std::move(seqs);
  auto ens = ordered_json::array();
  for (const auto& e : r.ensembles) {
    auto members = ordered_json::array();
    for (const auto& m : e.members) {
      members.push_back({{"source", m.source}, {"parameters", m.parameters}, {"test", detail::metric_json(m.test)}});
    }
    const auto& o = e.outcome;
    ens.push_back({{"name", e.name},
                   {"dataset", e.dataset},
                   {"strategy", to_string(o.strategy)},
                   {"constraint", to_string(e.constraint)},
                   {"members", std::move(members)},
                   {"weights", o.weights},
                   {"degenerate_weights", o.degenerate_weights},
                   {"member_parameters", o.member_parameters},
                   {"fusion_parameters", o.fusion_parameters},
                   {"knowledge_missing", o.knowledge_missing},
                   {"validation", detail::metric_json(o.validation)},
                   {"test", detail::metric_json(o.test)}});
  }
  j["ensembles"] = std::move(ens);
  ordered_json timings = ordered_json::object();
  for (const auto& [phase, secs] : r.timings) timings[phase] = secs;
  j["timings"] = std::move(timings);
  return j;
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  try {
    r.experiment_id = j.at("experiment_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_digest = j.value("config_digest", "");
    if (j.contains("failure")) {
      const auto& f = j.at("failure");
      r.failure = PhaseFailure{f.at("phase"), f.at("code"), f.at("message")};
    }
    for (const auto& h : j.at("heads")) {
      r.heads.push_back({h.at("dataset"), h.at("source"), parse_head_kind(h.at("head_kind").get<std::string>()),
                         h.at("parameters"), h.at("best_epoch"), h.at("stopped_epoch"),
                         detail::metric_from_json(h.at("validation")), detail::metric_from_json(h.at("test")),
                         h.value("checkpoint", "")});
    }
    for (const auto& s : j.at("sequences")) {
      SequenceResult sr;
      sr.name = s.at("name");
      sr.source = s.at("source");
      sr.shared_head = s.at("shared_head");
      sr.head_kind = parse_head_kind(s.at("head_kind").get<std::string>());
      sr.parameters = s.at("parameters");
      sr.matrix = eval_matrix_from_json(s.at("matrix"));
      for (const auto& t : s.at("matrix").at("transfers")) sr.transfers.push_back(transfer_record_from_json(t));
      r.sequences.push_back(std::move(sr));
    }
    for (const auto& e : j.at("ensembles")) {
      EnsembleResult er;
      er.name = e.at("name");
      er.dataset = e.at("dataset");
      er.constraint = parse_weight_constraint(e.at("constraint").get<std::string>());
      for (const auto& m : e.at("members")) {
        er.members.push_back({m.at("source"), m.at("parameters"), detail::metric_from_json(m.at("test"))});
      }
      auto& o = er.outcome;
      o.strategy = parse_strategy(e.at("strategy").get<std::string>());
      o.weights = e.at("weights").get<std::vector<double>>();
      o.degenerate_weights = e.at("degenerate_weights");
      o.member_parameters = e.at("member_parameters");
      o.fusion_parameters = e.at("fusion_parameters");
      o.knowledge_missing = e.at("knowledge_missing");
      o.validation = detail::metric_from_json(e.at("validation"));
      o.test = detail::metric_from_json(e.at("test"));
      r.ensembles.push_back(std::move(er));
    }
    if (j.contains("timings")) {
      for (const auto& [k, v] : j.at("timings").items()) r.timings.emplace_back(k, v.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MissingField, std::string("run result: ") + e.what());
  }
  return r;
}

// ---- tables ---------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::vector<bool>> bold;  // parallel to rows; markdown only
};

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  // No "-0.0"-style output.
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

inline std::string format_percent(double fraction) { return format_fixed(fraction * 100.0, 1) + "%"; }

// "28.8% (+)", "28.9% (-)", "CF: 6.9% (-)", or "0.0%" when the magnitude
// prints as zero.
inline std::string format_transfer(double kt, bool is_forgetting) {
  const auto mag = format_fixed(std::fabs(kt) * 100.0, 1);
  if (mag == "0.0") return "0.0%";
  if (is_forgetting) return "CF: " + mag + "% (-)";
  return mag + (kt > 0.0 ? "% (+)" : "% (-)");
}

struct TransferGroup {
  std::string name;
  std::vector<TransferRecord> records;
};

inline Table transfer_table(const std::vector<TransferGroup>& groups) {
  Table t;
  t.header = {"Task", "Step", "FineTuned Model", "Evaluation Task", "Accuracy (A)", "Comparison Baseline (CB)",
              "Knowledge Transfer (A−CB)"};
  for (const auto& g : groups) {
    std::size_t ordinal = 0;
    for (const auto& r : g.records) {
      t.rows.push_back({g.name, std::to_string(++ordinal), r.model, r.task, format_percent(r.a),
                        r.cb_model + ": " + format_percent(r.cb), format_transfer(r.kt, r.is_forgetting)});
      t.bold.emplace_back(t.header.size(), false);
      t.bold.back().back() = r.is_forgetting;
    }
  }
  return t;
}

inline Table emit_transfer_table(const RunResult& run) {
  std::vector<TransferGroup> groups;
  for (const auto& s : run.sequences) groups.push_back({s.name, s.transfers});
  return transfer_table(groups);
}

inline constexpr const char* kStrategyColumns[] = {"Naïve", "Weighted", "LLM", "KI"};

inline std::size_t strategy_column(Strategy s) {
  switch (s) {
    case Strategy::Naive: return 0;
    case Strategy::Weighted: return 1;
    case Strategy::Llm: return 2;
    case Strategy::Ki: return 3;
  }
  return 0;
}

struct StrategyRow {
  std::string label;  // "a & b (dataset)"
  std::size_t member_parameters = 0;
  MetricKind kind = MetricKind::Mse;
  std::array<std::optional<double>, 4> values{};
  std::array<std::optional<std::size_t>, 4> fusion_parameters{};
};

// Best cell per row: minimum for MSE, maximum for accuracy, compared at the
// printed precision; ties go to the leftmost column and are noted.
inline Table strategy_table(const std::vector<StrategyRow>& rows) {
  Table t;
  t.header = {"Ensemble", "Size", "Naïve", "Weighted", "LLM", "KI", "Fusion Head (LLM)", "Fusion Head (KI)",
              "Note"};
  for (const auto& r : rows) {
    std::vector<std::string> cells = {r.label, std::to_string(r.member_parameters)};
    std::vector<bool> bold(t.header.size(), false);
    std::optional<std::size_t> best;
    std::string best_text;
    for (std::size_t c = 0; c < 4; ++c) {
      if (!r.values[c]) {
        cells.emplace_back("");
        continue;
      }
      cells.push_back(format_fixed(*r.values[c], 4));
      const double v = std::stod(cells.back());
      const double b = best ? std::stod(best_text) : 0.0;
      if (!best || (r.kind == MetricKind::Mse ? v < b : v > b)) {
        best = c;
        best_text = cells.back();
      }
    }
    std::vector<std::string> tied;
    if (best) {
      bold[2 + *best] = true;
      for (std::size_t c = 0; c < 4; ++c) {
        if (r.values[c] && cells[2 + c] == best_text) tied.emplace_back(kStrategyColumns[c]);
      }
    }
    for (std::size_t c : {2u, 3u}) {
      cells.push_back(r.fusion_parameters[c] ? std::to_string(*r.fusion_parameters[c]) : "");
    }
    std::string note;
    if (tied.size() > 1) {
      note = "tie: ";
      for (std::size_t i = 0; i < tied.size(); ++i) note += (i ? ", " : "") + tied[i];
    }
    cells.push_back(note);
    t.rows.push_back(std::move(cells));
    t.bold.push_back(std::move(bold));
  }
  return t;
}

// One row per (dataset, member list); a strategy seen twice for the same key
// starts a new row.
inline std::vector<StrategyRow> strategy_rows(const RunResult& run) {
  std::vector<StrategyRow> rows;
  std::map<std::string, std::size_t> open;
  for (const auto& e : run.ensembles) {
    std::string label;
    for (const auto& m : e.members) label += (label.empty() ? "" : " & ") + m.source;
    label += " (" + e.dataset + ")";
    const auto col = strategy_column(e.outcome.strategy);
    auto it = open.find(label);
    if (it == open.end() || rows[it->second].values[col]) {
      rows.push_back({label, e.outcome.member_parameters, e.outcome.test.kind, {}, {}});
      it = open.insert_or_assign(label, rows.size() - 1).first;
    }
    auto& row = rows[it->second];
    row.values[col] = e.outcome.test.value;
    if (e.outcome.fusion_parameters) row.fusion_parameters[col] = e.outcome.fusion_parameters;
  }
  return rows;
}

inline Table emit_strategy_table(const RunResult& run) { return strategy_table(strategy_rows(run)); }

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string render_csv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_cell(cells[i]);
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

inline std::string render_markdown(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells, const std::vector<bool>* bold) {
    out += "|";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      std::string c;
      for (char ch : cells[i]) {
        if (ch == '|') c += '\\';
        c += ch;
      }
      if (bold && (*bold)[i] && !c.empty()) c = "**" + c + "**";
      out += " " + c + " |";
    }
    out += '\n';
  };
  line(t.header, nullptr);
  out += "|";
  for (std::size_t i = 0; i < t.header.size(); ++i) out += " --- |";
  out += '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) line(t.rows[r], &t.bold[r]);
  return out;
}

// ---- plot data ------------------------------------------------------------

inline std::string spaced_arrows(const std::string& model) {
  std::string out;
  const std::string arrow(kArrow);
  std::size_t start = 0;
  while (true) {
    const auto pos = model.find(arrow, start);
    out += model.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    if (pos == std::string::npos) break;
    out += " " + arrow + " ";
    start = pos + arrow.size();
  }
  return out;
}

// Metric-vs-step series per evaluation task, one block per sequence.
inline nlohmann::ordered_json emit_plot_data(const RunResult& run) {
  using nlohmann::ordered_json;
  auto seqs = ordered_json::array();
  for (const auto& s : run.sequences) {
    const auto& m = s.matrix;
    std::vector<std::string> labels;
    for (const auto& model : m.models) labels.push_back(spaced_arrows(model));
    auto series = ordered_json::array();
    for (std::size_t j = 0; j < m.tasks.size(); ++j) {
      std::vector<double> values;
      for (const auto& row : m.cells) values.push_back(row[j].value);
      series.push_back({{"task", m.tasks[j]},
                        {"metric_kind", to_string(m.cells.front()[j].kind)},
                        {"values", values}});
    }
    seqs.push_back({{"sequence", s.name}, {"steps", labels}, {"series", std::move(series)}});
  }
  return {{"experiment_id", run.experiment_id}, {"sequences", std::move(seqs)}};
}

// run.json plus every table, written atomically into `dir`.
inline void write_reports(const RunResult& run, const std::filesystem::path& dir) {
  io::write_atomic(dir / "run.json", to_json(run).dump(2) + "\n");
  const auto transfer = emit_transfer_table(run);
  io::write_atomic(dir / "transfer_table.csv", render_csv(transfer));
  io::write_atomic(dir / "transfer_table.md", render_markdown(transfer));
  const auto strategy = emit_strategy_table(run);
  io::write_atomic(dir / "strategy_table.csv", render_csv(strategy));
  io::write_atomic(dir / "strategy_table.md", render_markdown(strategy));
  io::write_atomic(dir / "plot_data.json", emit_plot_data(run).dump(2) + "\n");
}

}  // namespace l3ens

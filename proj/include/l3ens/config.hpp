#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l3ens/dataset.hpp"
#include "l3ens/digest.hpp"
#include "l3ens/ensemble.hpp"
#include "l3ens/error.hpp"
#include "l3ens/heads.hpp"
#include "l3ens/io.hpp"
#include "l3ens/reporting.hpp"

namespace l3ens {

struct DatasetConfig {
  std::string name;
  std::filesystem::path path;
  TaskKind task_kind = TaskKind::Classification;
  std::size_t num_classes = 2;
  double label_scale = 1.0;
};

struct HashSpec {
  std::size_t dim = 0;
  std::uint64_t seed = 0;
};

struct SourceConfig {
  std::string name;
  std::optional<std::filesystem::path> path;
  std::optional<HashSpec> hash;
};

struct KnowledgeBaseConfig {
  std::string name;
  std::filesystem::path labels;
  std::filesystem::path vectors;
};

struct HeadConfig {
  std::string dataset;
  std::string source;
  HeadKind head_kind = HeadKind::Linear;
  std::size_t hidden_dim = kDefaultHiddenDim;
};

struct SequenceConfig {
  TaskSequence sequence;
  std::string source;
};

struct EnsembleConfig {
  EnsembleSpec spec;
  HeadKind member_head = HeadKind::Linear;
  std::size_t member_hidden_dim = kDefaultHiddenDim;
};

struct ExperimentConfig {
  std::string experiment_id;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "results";
  std::vector<DatasetConfig> datasets;
  std::vector<SourceConfig> sources;
  std::vector<KnowledgeBaseConfig> knowledge_bases;
  std::vector<HeadConfig> heads;
  std::vector<SequenceConfig> sequences;
  std::vector<EnsembleConfig> ensembles;
  TrainConfig train;
  std::string digest;
};

struct ConfigViolation {
  std::string key_path;
  ErrorCode code;
  std::string message;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string where, std::vector<ConfigViolation> violations)
      : Error(violations.front().code, summarize(where, violations)), violations_(std::move(violations)) {}

  const std::vector<ConfigViolation>& violations() const { return violations_; }

 private:
  static std::string summarize(const std::string& where, const std::vector<ConfigViolation>& v) {
    std::string s = where + ": " + std::to_string(v.size()) + " config violation(s)";
    for (const auto& x : v) {
      s += "\n  " + x.key_path + ": " + std::string(to_string(x.code)) + ": " + x.message;
    }
    return s;
  }

  std::vector<ConfigViolation> violations_;
};

// SHA-256 of the config with keys sorted, so key order does not matter.
inline std::string config_digest(const nlohmann::json& config) { return sha256_hex(config.dump()); }

namespace detail {

// Reads one JSON object, recording every problem instead of stopping at the
// first. Keys never read are reported as unknown by finish().
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path, std::vector<ConfigViolation>& out)
      : j_(j), path_(std::move(path)), out_(out) {
    if (!j_.is_object()) {
      fail(path_, ErrorCode::ParseError, "expected an object");
      valid_ = false;
    }
  }

  bool valid() const { return valid_; }
  const std::string& path() const { return path_; }
  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json* get(const std::string& key, bool required) {
    if (!valid_) return nullptr;
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) {
      if (required) fail(key_path(key), ErrorCode::MissingField, "required key missing");
      return nullptr;
    }
    return &*it;
  }

  std::optional<std::string> string(const std::string& key, bool required = true) {
    const auto* v = get(key, required);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      fail(key_path(key), ErrorCode::ParseError, "expected a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  std::optional<std::uint64_t> unsigned_int(const std::string& key, bool required = true) {
    const auto* v = get(key, required);
    if (!v) return std::nullopt;
    if (!v->is_number_unsigned()) {
      fail(key_path(key), ErrorCode::ParseError, "expected a non-negative integer");
      return std::nullopt;
    }
    return v->get<std::uint64_t>();
  }

  std::optional<double> number(const std::string& key, bool required = true) {
    const auto* v = get(key, required);
    if (!v) return std::nullopt;
    if (!v->is_number()) {
      fail(key_path(key), ErrorCode::ParseError, "expected a number");
      return std::nullopt;
    }
    return v->get<double>();
  }

  std::optional<bool> boolean(const std::string& key, bool required = true) {
    const auto* v = get(key, required);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) {
      fail(key_path(key), ErrorCode::ParseError, "expected true or false");
      return std::nullopt;
    }
    return v->get<bool>();
  }

  const nlohmann::json* array(const std::string& key, bool required = true) {
    const auto* v = get(key, required);
    if (v && !v->is_array()) {
      fail(key_path(key), ErrorCode::ParseError, "expected an array");
      return nullptr;
    }
    return v;
  }

  std::optional<std::vector<std::string>> strings(const std::string& key, bool required = true) {
    const auto* v = array(key, required);
    if (!v) return std::nullopt;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_string()) {
        fail(key_path(key) + "[" + std::to_string(i) + "]", ErrorCode::ParseError, "expected a string");
        return std::nullopt;
      }
      out.push_back((*v)[i].get<std::string>());
    }
    return out;
  }

  // Parses an enum-like string; reports the accepted values on failure.
  template <typename F>
  auto parsed(const std::string& key, F parse, const char* accepted, bool required = false)
      -> std::optional<decltype(parse(""))> {
    const auto s = string(key, required);
    if (!s) return std::nullopt;
    try {
      return parse(*s);
    } catch (const Error&) {
      fail(key_path(key), ErrorCode::ParseError, "'" + *s + "' is not one of " + accepted);
      return std::nullopt;
    }
  }

  void fail(const std::string& path, ErrorCode code, const std::string& message) {
    out_.push_back({path, code, message});
  }

  void finish() {
    if (!valid_) return;
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) fail(key_path(k), ErrorCode::UnknownKey, "unknown key '" + k + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::vector<ConfigViolation>& out_;
  std::set<std::string> seen_;
  bool valid_ = true;
};

inline std::string indexed(const std::string& key, std::size_t i) { return key + "[" + std::to_string(i) + "]"; }

}  // namespace detail

// Validates and resolves a parsed config. Relative paths resolve against
// `base_dir`. Throws ConfigError listing every violation found.
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                     const std::string& where = "config") {
  std::vector<ConfigViolation> errs;
  ExperimentConfig cfg;
  detail::ObjectReader top(j, "", errs);
  if (!top.valid()) throw ConfigError(where, errs);
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  if (auto id = top.string("experiment_id")) {
    if (id->empty() || id->find_first_of("/\\") != std::string::npos || *id == "." || *id == "..") {
      top.fail("experiment_id", ErrorCode::InvalidArgument, "must be a non-empty plain directory name");
    }
    cfg.experiment_id = *id;
  }
  if (auto seed = top.unsigned_int("seed")) cfg.seed = *seed;
  if (auto out = top.string("output_dir", false)) cfg.output_dir = *out;

  std::set<std::string> dataset_names, source_names, kb_names;
  auto check_unique = [&](std::set<std::string>& names, const std::string& name, const std::string& path) {
    if (!names.insert(name).second) top.fail(path, ErrorCode::InvalidArgument, "duplicate name '" + name + "'");
  };

  if (const auto* arr = top.array("datasets")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      detail::ObjectReader r((*arr)[i], detail::indexed("datasets", i), errs);
      DatasetConfig d;
      if (auto v = r.string("name")) d.name = *v;
      if (auto v = r.string("path")) d.path = resolve(*v);
      if (auto v = r.parsed("task_kind", parse_task_kind, "classification, regression", true)) d.task_kind = *v;
      if (auto v = r.unsigned_int("num_classes", false)) d.num_classes = *v;
      if (d.task_kind == TaskKind::Regression) d.num_classes = 1;
      else if (d.num_classes < 2) r.fail(r.key_path("num_classes"), ErrorCode::InvalidArgument, "must be >= 2");
      if (auto v = r.number("label_scale", false)) {
        if (!(*v > 0.0)) r.fail(r.key_path("label_scale"), ErrorCode::InvalidArgument, "must be > 0");
        d.label_scale = *v;
      }
      r.finish();
      if (r.valid()) {
        check_unique(dataset_names, d.name, r.key_path("name"));
        cfg.datasets.push_back(std::move(d));
      }
    }
  }

  if (const auto* arr = top.array("sources")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      detail::ObjectReader r((*arr)[i], detail::indexed("sources", i), errs);
      SourceConfig s;
      if (auto v = r.string("name")) s.name = *v;
      if (auto v = r.string("path", false)) s.path = resolve(*v);
      if (const auto* h = r.get("hash", false)) {
        detail::ObjectReader hr(*h, r.key_path("hash"), errs);
        HashSpec spec;
        if (auto d = hr.unsigned_int("dim")) {
          if (*d == 0) hr.fail(hr.key_path("dim"), ErrorCode::DimZero, "must be >= 1");
          spec.dim = *d;
        }
        if (auto sd = hr.unsigned_int("seed")) spec.seed = *sd;
        hr.finish();
        s.hash = spec;
      }
      if (r.valid() && s.path.has_value() == s.hash.has_value()) {
        r.fail(r.path(), ErrorCode::InvalidArgument, "needs exactly one of 'path' or 'hash'");
      }
      r.finish();
      if (r.valid()) {
        check_unique(source_names, s.name, r.key_path("name"));
        cfg.sources.push_back(std::move(s));
      }
    }
  }

  if (const auto* arr = top.array("knowledge_bases", false)) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      detail::ObjectReader r((*arr)[i], detail::indexed("knowledge_bases", i), errs);
      KnowledgeBaseConfig k;
      if (auto v = r.string("name")) k.name = *v;
      if (auto v = r.string("labels")) k.labels = resolve(*v);
      if (auto v = r.string("vectors")) k.vectors = resolve(*v);
      r.finish();
      if (r.valid()) {
        check_unique(kb_names, k.name, r.key_path("name"));
        cfg.knowledge_bases.push_back(std::move(k));
      }
    }
  }

  auto ref = [&](const std::set<std::string>& names, const std::string& value, const std::string& path,
                 const char* what) {
    if (!names.contains(value)) {
      top.fail(path, ErrorCode::UnresolvedReference, std::string(what) + " '" + value + "' is not defined");
    }
  };

  if (const auto* arr = top.array("heads", false)) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      detail::ObjectReader r((*arr)[i], detail::indexed("heads", i), errs);
      HeadConfig h;
      if (auto v = r.string("dataset")) {
        h.dataset = *v;
        ref(dataset_names, *v, r.key_path("dataset"), "dataset");
      }
      if (auto v = r.string("source")) {
        h.source = *v;
        ref(source_names, *v, r.key_path("source"), "source");
      }
      if (auto v = r.parsed("head_kind", parse_head_kind, "linear, mlp1")) h.head_kind = *v;
      if (auto v = r.unsigned_int("hidden_dim", false)) h.hidden_dim = *v;
      r.finish();
      if (r.valid()) cfg.heads.push_back(std::move(h));
    }
  }

  if (const auto* arr = top.array("sequences", false)) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      detail::ObjectReader r((*arr)[i], detail::indexed("sequences", i), errs);
      SequenceConfig s;
      if (auto v = r.string("name")) s.sequence.name = *v;
      if (auto v = r.strings("tasks")) {
        if (v->empty()) r.fail(r.key_path("tasks"), ErrorCode::InvalidArgument, "needs at least one task");
        for (std::size_t t = 0; t < v->size(); ++t) {
          ref(dataset_names, (*v)[t], detail::indexed(r.key_path("tasks"), t), "dataset");
        }
        s.sequence.tasks = *v;
      }
      if (auto v = r.string("source")) {
        s.source = *v;
        ref(source_names, *v, r.key_path("source"), "source");
      }
      if (auto v = r.boolean("shared_head", false)) s.sequence.shared_head = *v;
      if (auto v = r.parsed("head_kind", parse_head_kind, "linear, mlp1")) s.sequence.head_kind = *v;
      if (auto v = r.unsigned_int("hidden_dim", false)) s.sequence.hidden_dim = *v;
      r.finish();
      if (r.valid()) cfg.sequences.push_back(std::move(s));
    }
  }

  if (const auto* arr = top.array("ensembles", false)) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      detail::ObjectReader r((*arr)[i], detail::indexed("ensembles", i), errs);
      EnsembleConfig e;
      auto& spec = e.spec;
      if (auto v = r.string("name")) spec.name = *v;
      if (auto v = r.string("dataset")) {
        spec.dataset = *v;
        ref(dataset_names, *v, r.key_path("dataset"), "dataset");
      }
      if (auto v = r.parsed("strategy", parse_strategy, "naive, weighted, llm, ki", true)) spec.strategy = *v;
      if (auto v = r.strings("members")) {
        if (v->empty()) r.fail(r.key_path("members"), ErrorCode::EmptyMemberList, "needs at least one member");
        for (std::size_t m = 0; m < v->size(); ++m) {
          ref(source_names, (*v)[m], detail::indexed(r.key_path("members"), m), "source");
        }
        spec.members = *v;
      }
      if (auto v = r.strings("checkpoints", false)) {
        if (v->size() != spec.members.size()) {
          r.fail(r.key_path("checkpoints"), ErrorCode::ShapeMismatch, "must list one checkpoint per member");
        }
        for (const auto& c : *v) spec.checkpoints.push_back(resolve(c).string());
      }
      if (auto v = r.string("auxiliary_source", false)) {
        spec.auxiliary_source = *v;
        ref(source_names, *v, r.key_path("auxiliary_source"), "source");
      }
      if (auto v = r.string("knowledge_base", false)) {
        spec.knowledge_base = *v;
        ref(kb_names, *v, r.key_path("knowledge_base"), "knowledge base");
      }
      if (auto v = r.parsed("fusion_head", parse_head_kind, "linear, mlp1")) spec.fusion_head = *v;
      if (auto v = r.unsigned_int("fusion_hidden_dim", false)) spec.fusion_hidden_dim = *v;
      if (auto v = r.parsed("member_head", parse_head_kind, "linear, mlp1")) e.member_head = *v;
      if (auto v = r.unsigned_int("member_hidden_dim", false)) e.member_hidden_dim = *v;
      if (auto v = r.parsed("constraint", parse_weight_constraint, "simplex, unconstrained")) spec.constraint = *v;
      if (r.valid()) {
        if (spec.strategy == Strategy::Llm && !spec.auxiliary_source) {
          r.fail(r.key_path("auxiliary_source"), ErrorCode::MissingField, "required by strategy 'llm'");
        }
        if (spec.strategy == Strategy::Ki && !spec.knowledge_base) {
          r.fail(r.key_path("knowledge_base"), ErrorCode::MissingField, "required by strategy 'ki'");
        }
      }
      r.finish();
      if (r.valid()) cfg.ensembles.push_back(std::move(e));
    }
  }

  if (const auto* t = top.get("train", false)) {
    detail::ObjectReader r(*t, "train", errs);
    auto& tc = cfg.train;
    auto positive = [&](const char* key, double& field) {
      if (auto v = r.number(key, false)) {
        if (!(*v > 0.0)) r.fail(r.key_path(key), ErrorCode::InvalidArgument, "must be > 0");
        field = *v;
      }
    };
    auto count = [&](const char* key, std::size_t& field, std::size_t min) {
      if (auto v = r.unsigned_int(key, false)) {
        if (*v < min) r.fail(r.key_path(key), ErrorCode::InvalidArgument, "must be >= " + std::to_string(min));
        field = *v;
      }
    };
    positive("learning_rate", tc.learning_rate);
    positive("beta1", tc.beta1);
    positive("beta2", tc.beta2);
    positive("epsilon", tc.epsilon);
    count("batch_size", tc.batch_size, 1);
    count("max_epochs", tc.max_epochs, 1);
    count("early_stop_patience", tc.early_stop_patience, 0);
    if (auto v = r.number("l2_penalty", false)) {
      if (*v < 0.0) r.fail(r.key_path("l2_penalty"), ErrorCode::InvalidArgument, "must be >= 0");
      tc.l2_penalty = *v;
    }
    if (auto v = r.parsed(
            "optimizer",
            [](std::string_view s) {
              if (s == "adam") return OptimizerKind::Adam;
              if (s == "sgd") return OptimizerKind::Sgd;
              throw Error(ErrorCode::InvalidArgument, std::string(s));
            },
            "adam, sgd")) {
      tc.optimizer = *v;
    }
    r.finish();
  }
  top.finish();

  if (!errs.empty()) throw ConfigError(where, std::move(errs));
  cfg.train.seed = cfg.seed;
  cfg.digest = config_digest(j);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto text = io::read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string(), {{"", ErrorCode::ParseError, e.what()}});
  }
  return parse_config(j, path.parent_path(), path.string());
}

}  // namespace l3ens

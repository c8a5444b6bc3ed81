#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "l3ens/config.hpp"
#include "l3ens/continual.hpp"
#include "l3ens/dataset.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/ensemble.hpp"
#include "l3ens/heads.hpp"
#include "l3ens/knowledge.hpp"
#include "l3ens/reporting.hpp"

namespace l3ens {

using LogFn = std::function<void(const std::string&)>;

// Lazily loads and caches every input an experiment touches.
class Workspace {
 public:
  explicit Workspace(const ExperimentConfig& cfg) : cfg_(cfg) {}

  const TaskDataset& dataset(const std::string& name) {
    auto it = datasets_.find(name);
    if (it != datasets_.end()) return *it->second;
    const auto& dc = find(cfg_.datasets, name);
    auto ds = std::make_unique<TaskDataset>(
        load_dataset(dc.path, {dc.name, dc.task_kind, dc.num_classes, dc.label_scale}));
    return *datasets_.emplace(name, std::move(ds)).first->second;
  }

  // Embeddings of `source` covering the examples of `dataset_name`.
  const EmbeddingMatrix& embeddings(const std::string& source, const std::string& dataset_name) {
    const auto& sc = find(cfg_.sources, source);
    const auto key = sc.path ? source : source + "\n" + dataset_name;
    auto it = embeddings_.find(key);
    if (it != embeddings_.end()) return *it->second;
    std::unique_ptr<EmbeddingMatrix> m;
    if (sc.path) {
      m = std::make_unique<EmbeddingMatrix>(load_embeddings(*sc.path));
    } else {
      m = std::make_unique<EmbeddingMatrix>(hash_encode(dataset(dataset_name), sc.hash->dim, sc.hash->seed, source));
    }
    return *embeddings_.emplace(key, std::move(m)).first->second;
  }

  const KnowledgeVectors& knowledge(const std::string& kb_name, const std::string& dataset_name) {
    const auto key = kb_name + "\n" + dataset_name;
    auto it = knowledge_.find(key);
    if (it != knowledge_.end()) return *it->second;
    auto kb = kbs_.find(kb_name);
    if (kb == kbs_.end()) {
      const auto& kc = find(cfg_.knowledge_bases, kb_name);
      kb = kbs_.emplace(kb_name, std::make_unique<KnowledgeBase>(load_kb(kc.labels, kc.vectors))).first;
    }
    auto kv = std::make_unique<KnowledgeVectors>(knowledge_matrix(dataset(dataset_name), *kb->second, kb_name));
    return *knowledge_.emplace(key, std::move(kv)).first->second;
  }

  const KnowledgeBase* loaded_kb(const std::string& name) const {
    auto it = kbs_.find(name);
    return it == kbs_.end() ? nullptr : it->second.get();
  }

 private:
  template <typename T>
  static const T& find(const std::vector<T>& items, const std::string& name) {
    for (const auto& x : items) {
      if (x.name == name) return x;
    }
    throw Error(ErrorCode::UnresolvedReference, "'" + name + "' is not defined");
  }

  const ExperimentConfig& cfg_;
  std::map<std::string, std::unique_ptr<TaskDataset>> datasets_;
  std::map<std::string, std::unique_ptr<EmbeddingMatrix>> embeddings_;
  std::map<std::string, std::unique_ptr<KnowledgeBase>> kbs_;
  std::map<std::string, std::unique_ptr<KnowledgeVectors>> knowledge_;
};

namespace detail {

struct HeadKey {
  std::string dataset, source;
  HeadKind kind;
  std::size_t hidden;
  auto operator<=>(const HeadKey&) const = default;
};

inline std::string checkpoint_name(const HeadKey& k) {
  return "heads/" + k.dataset + "__" + k.source + "__" + std::string(to_string(k.kind)) + ".l3hd";
}

}  // namespace detail

// Runs every phase for one seed and writes results into `run_dir`. A failing
// phase stops the run; what finished is still written, and the failure is
// recorded in the result.
inline RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                const std::filesystem::path& run_dir, const LogFn& log = {}) {
  auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };
  RunResult run;
  run.experiment_id = config.experiment_id;
  run.seed = seed;
  run.config_digest = config.digest;
  TrainConfig train = config.train;
  train.seed = seed;
  Workspace ws(config);
  std::map<detail::HeadKey, Head> heads;

  auto train_member = [&](const detail::HeadKey& key) -> const Head& {
    auto it = heads.find(key);
    if (it != heads.end()) return it->second;
    const auto& ds = ws.dataset(key.dataset);
    const auto& emb = ws.embeddings(key.source, key.dataset);
    const auto tr = align(ds, Split::Train, emb);
    const auto va = align(ds, Split::Validation, emb);
    say("training " + std::string(to_string(key.kind)) + " head on " + key.dataset + " / " + key.source);
    auto trained = train_head(init_head(key.kind, emb.dim(), ds.out_dim(), ds.task_kind, seed, key.hidden), tr, va,
                              train);
    HeadResult hr{key.dataset,
                  key.source,
                  key.kind,
                  trained.head.parameter_count(),
                  trained.history.best_epoch,
                  trained.history.stopped_epoch,
                  evaluate(trained.head, va),
                  evaluate(trained.head, align(ds, Split::Test, emb)),
                  detail::checkpoint_name(key)};
    save_head(trained.head, run_dir / hr.checkpoint);
    run.heads.push_back(std::move(hr));
    return heads.emplace(key, std::move(trained.head)).first->second;
  };

  auto phase = [&](const std::string& name, const std::function<void()>& body) {
    if (run.failure) return;
    say("phase " + name);
    const auto start = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const Error& e) {
      run.failure = PhaseFailure{name, std::string(to_string(e.code())), "phase " + name + ": " + e.what()};
    } catch (const std::exception& e) {
      run.failure = PhaseFailure{name, "Internal", "phase " + name + ": " + e.what()};
    }
    run.timings.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  };

  phase("heads", [&] {
    for (const auto& h : config.heads) train_member({h.dataset, h.source, h.head_kind, h.hidden_dim});
    for (const auto& e : config.ensembles) {
      if (!e.spec.checkpoints.empty()) continue;
      for (const auto& m : e.spec.members) train_member({e.spec.dataset, m, e.member_head, e.member_hidden_dim});
    }
  });

  phase("sequences", [&] {
    for (const auto& sc : config.sequences) {
      say("sequence " + sc.sequence.name);
      std::vector<SequenceTask> tasks;
      for (const auto& t : sc.sequence.tasks) tasks.push_back({&ws.dataset(t), &ws.embeddings(sc.source, t)});
      SequenceResult sr;
      sr.name = sc.sequence.name;
      sr.source = sc.source;
      sr.shared_head = sc.sequence.shared_head;
      sr.head_kind = sc.sequence.head_kind;
      sr.parameters = parameter_count(sc.sequence.head_kind, tasks.front().embeddings->dim(),
                                      tasks.front().dataset->out_dim(), sc.sequence.hidden_dim);
      sr.matrix = run_sequence(sc.sequence, tasks, train);
      sr.transfers = transfer_ledger(sr.matrix);
      run.sequences.push_back(std::move(sr));
    }
  });

  phase("ensembles", [&] {
    for (const auto& ec : config.ensembles) {
      const auto& spec = ec.spec;
      say("ensemble " + spec.name + " (" + std::string(to_string(spec.strategy)) + ")");
      const auto& ds = ws.dataset(spec.dataset);
      EnsembleContext ctx;
      ctx.dataset = &ds;
      ctx.config = train;
      EnsembleResult er;
      er.name = spec.name;
      er.dataset = spec.dataset;
      er.constraint = spec.constraint;
      for (std::size_t i = 0; i < spec.members.size(); ++i) {
        const auto& source = spec.members[i];
        const auto& emb = ws.embeddings(source, spec.dataset);
        Head head = spec.checkpoints.empty()
                        ? train_member({spec.dataset, source, ec.member_head, ec.member_hidden_dim})
                        : load_head(spec.checkpoints[i]);
        er.members.push_back({source, head.parameter_count(), evaluate(head, align(ds, Split::Test, emb))});
        ctx.members.push_back({source, std::move(head), &emb});
      }
      if (spec.auxiliary_source) ctx.auxiliary = &ws.embeddings(*spec.auxiliary_source, spec.dataset);
      if (spec.knowledge_base) {
        const auto& kv = ws.knowledge(*spec.knowledge_base, spec.dataset);
        ctx.knowledge = &kv.matrix;
        if (const auto* kb = ws.loaded_kb(*spec.knowledge_base)) {
          for (const auto& w : kb->warnings()) say("knowledge base " + *spec.knowledge_base + ": " + w);
        }
      }
      er.outcome = evaluate_ensemble(spec, ctx);
      run.ensembles.push_back(std::move(er));
    }
  });

  const auto start = std::chrono::steady_clock::now();
  write_reports(run, run_dir);
  // Rewrite once so the reports phase carries its own timing.
  run.timings.emplace_back("reports", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  io::write_atomic(run_dir / "run.json", to_json(run).dump(2) + "\n");
  return run;
}

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // overrides the config's
  std::size_t seeds = 1;
};

// Directory holding one seed's outputs.
inline std::filesystem::path run_directory(const ExperimentConfig& config, const RunOptions& opts,
                                           std::uint64_t seed) {
  const auto root = opts.output_dir.value_or(config.output_dir) / config.experiment_id;
  return opts.seeds > 1 ? root / ("seed-" + std::to_string(seed)) : root;
}

// Mean and sample standard deviation of each ensemble's test metric across
// seeds, plus the per-seed values.
inline nlohmann::ordered_json sweep_summary(const std::vector<RunResult>& runs) {
  using nlohmann::ordered_json;
  std::vector<std::tuple<std::string, std::string, Metric>> keys;
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : runs) {
    for (const auto& e : r.ensembles) {
      if (!values.contains(e.name)) keys.emplace_back(e.name, std::string(to_string(e.outcome.strategy)), e.outcome.test);
      values[e.name].push_back(e.outcome.test.value);
    }
  }
  auto ensembles = ordered_json::array();
  for (const auto& [name, strategy, metric] : keys) {
    const auto& v = values[name];
    double mean = 0.0, var = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    ensembles.push_back({{"name", name},
                         {"strategy", strategy},
                         {"metric_kind", to_string(metric.kind)},
                         {"per_seed", v},
                         {"mean", mean},
                         {"stddev", sd}});
  }
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> failed;
  for (const auto& r : runs) {
    seeds.push_back(r.seed);
    if (!r.ok()) failed.push_back(std::to_string(r.seed));
  }
  return {{"experiment_id", runs.empty() ? "" : runs.front().experiment_id},
          {"seeds", seeds},
          {"failed_seeds", failed},
          {"ensembles", std::move(ensembles)}};
}

// Runs seed, seed+1, ..., seed+N-1. With N > 1 each seed writes into
// seed-<s>/ and a sweep.json summary sits next to them.
inline std::vector<RunResult> run_experiments(const ExperimentConfig& config, const RunOptions& opts,
                                              const LogFn& log = {}) {
  if (opts.seeds < 1) throw Error(ErrorCode::InvalidArgument, "--seeds must be >= 1");
  std::vector<RunResult> runs;
  for (std::size_t i = 0; i < opts.seeds; ++i) {
    const auto seed = config.seed + i;
    if (log && opts.seeds > 1) log("seed " + std::to_string(seed));
    runs.push_back(run_experiment(config, seed, run_directory(config, opts, seed), log));
  }
  if (opts.seeds > 1) {
    const auto root = opts.output_dir.value_or(config.output_dir) / config.experiment_id;
    io::write_atomic(root / "sweep.json", sweep_summary(runs).dump(2) + "\n");
  }
  return runs;
}

}  // namespace l3ens

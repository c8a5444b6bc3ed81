#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "l3ens/dataset.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/error.hpp"
#include "l3ens/heads.hpp"

namespace l3ens {

enum class Strategy { Naive, Weighted, Llm, Ki };

constexpr std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Naive: return "naive";
    case Strategy::Weighted: return "weighted";
    case Strategy::Llm: return "llm";
    case Strategy::Ki: return "ki";
  }
  return "naive";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "naive") return Strategy::Naive;
  if (s == "weighted") return Strategy::Weighted;
  if (s == "llm") return Strategy::Llm;
  if (s == "ki") return Strategy::Ki;
  throw Error(ErrorCode::InvalidArgument, "unknown ensemble strategy '" + std::string(s) + "'");
}

enum class WeightConstraint { Simplex, Unconstrained };

// Predictions of one member over n examples, row-major n x out_dim.
using MemberPredictions = std::vector<double>;

struct EnsembleWeights {
  std::vector<double> weights;
  bool degenerate = false;  // members indistinguishable; uniform weights returned
  double fit_loss = 0.0;    // loss on the fitting split at the returned weights
};

namespace detail {

inline std::size_t check_members(std::span<const MemberPredictions> members, std::size_t out_dim) {
  if (members.empty()) throw Error(ErrorCode::EmptyMemberList, "ensemble has no members");
  if (out_dim == 0) throw Error(ErrorCode::ShapeMismatch, "out_dim must be >= 1");
  const std::size_t size = members.front().size();
  if (size % out_dim != 0) {
    throw Error(ErrorCode::ShapeMismatch, "prediction length not a multiple of out_dim");
  }
  for (std::size_t m = 1; m < members.size(); ++m) {
    if (members[m].size() != size) {
      throw Error(ErrorCode::ShapeMismatch, "member " + std::to_string(m) + " has " +
                                                std::to_string(members[m].size()) +
                                                " prediction values, member 0 has " +
                                                std::to_string(size));
    }
  }
  return size / out_dim;
}

inline void renormalize_rows(std::vector<double>& p, std::size_t out_dim) {
  for (std::size_t r = 0; r < p.size(); r += out_dim) {
    double s = 0.0;
    for (std::size_t c = 0; c < out_dim; ++c) s += p[r + c];
    if (s > 0.0) {
      for (std::size_t c = 0; c < out_dim; ++c) p[r + c] /= s;
    }
  }
}

}  // namespace detail

// Fold in member-index order: sum_m w_m * p_m, rows renormalized for
// classification.
inline std::vector<double> weighted_combine(std::span<const MemberPredictions> members,
                                            std::span<const double> weights, std::size_t out_dim,
                                            TaskKind task) {
  detail::check_members(members, out_dim);
  if (weights.size() != members.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(weights.size()) + " weights for " +
                                              std::to_string(members.size()) + " members");
  }
  std::vector<double> out(members.front().size(), 0.0);
  for (std::size_t m = 0; m < members.size(); ++m) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[m] * members[m][i];
  }
  if (task == TaskKind::Classification) detail::renormalize_rows(out, out_dim);
  return out;
}

inline std::vector<double> naive_combine(std::span<const MemberPredictions> members,
                                         std::size_t out_dim, TaskKind task) {
  detail::check_members(members, out_dim);
  if (members.size() == 1) return members.front();
  std::vector<double> out(members.front().size(), 0.0);
  for (const auto& p : members) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : out) v *= inv;
  if (task == TaskKind::Classification) detail::renormalize_rows(out, out_dim);
  return out;
}

// Metric of evaluation-time predictions against targets.
inline Metric score_predictions(std::span<const double> preds, std::span<const double> targets,
                                std::size_t out_dim, TaskKind task) {
  if (targets.empty()) throw Error(ErrorCode::EmptyBatch, "no targets to score");
  if (preds.size() != targets.size() * out_dim) {
    throw Error(ErrorCode::ShapeMismatch, "predictions do not match targets");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (task == TaskKind::Classification) {
      const auto row = preds.subspan(i * out_dim, out_dim);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      acc += best == static_cast<std::size_t>(targets[i]) ? 1.0 : 0.0;
    } else {
      const double r = preds[i] - targets[i];
      acc += r * r;
    }
  }
  return {metric_kind_for(task), acc / static_cast<double>(targets.size())};
}

// MSE (regression) or clamped-log cross-entropy (classification) of
// already-combined predictions.
inline double prediction_loss(std::span<const double> preds, std::span<const double> targets,
                              std::size_t out_dim, TaskKind task) {
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (task == TaskKind::Classification) {
      const double p = preds[i * out_dim + static_cast<std::size_t>(targets[i])];
      total += -std::max(p > 0.0 ? std::log(p) : kLogClamp, kLogClamp);
    } else {
      const double r = preds[i] - targets[i];
      total += r * r;
    }
  }
  return total / static_cast<double>(targets.size());
}

// Euclidean projection onto the probability simplex (sort-based).
inline std::vector<double> project_to_simplex(std::span<const double> v) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  std::vector<double> w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::max(v[i] - theta, 0.0);
  return w;
}

namespace detail {

// Largest eigenvalue of a small symmetric PSD matrix by power iteration.
inline double max_eigenvalue(const std::vector<double>& g, std::size_t m) {
  std::vector<double> x(m, 1.0 / std::sqrt(static_cast<double>(m))), y(m);
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    for (std::size_t r = 0; r < m; ++r) {
      y[r] = 0.0;
      for (std::size_t c = 0; c < m; ++c) y[r] += g[r * m + c] * x[c];
    }
    double norm = 0.0;
    for (double v : y) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    lambda = norm;
    for (std::size_t r = 0; r < m; ++r) x[r] = y[r] / norm;
  }
  return lambda;
}

// Solves the symmetric system a x = b in place (Gaussian elimination with
// partial pivoting). Returns false when a pivot vanishes.
inline bool solve(std::vector<double> a, std::vector<double> b, std::size_t m, std::vector<double>& x) {
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r * m + col]) > std::abs(a[piv * m + col])) piv = r;
    }
    if (std::abs(a[piv * m + col]) < 1e-300) return false;
    if (piv != col) {
      for (std::size_t c = 0; c < m; ++c) std::swap(a[col * m + c], a[piv * m + c]);
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < m; ++r) {
      const double f = a[r * m + col] / a[col * m + col];
      for (std::size_t c = col; c < m; ++c) a[r * m + c] -= f * a[col * m + c];
      b[r] -= f * b[col];
    }
  }
  x.assign(m, 0.0);
  for (std::size_t r = m; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < m; ++c) s -= a[r * m + c] * x[c];
    x[r] = s / a[r * m + r];
  }
  return true;
}

inline bool members_identical(std::span<const MemberPredictions> members) {
  for (std::size_t m = 1; m < members.size(); ++m) {
    for (std::size_t i = 0; i < members[m].size(); ++i) {
      if (std::abs(members[m][i] - members[0][i]) > 1e-12) return false;
    }
  }
  return true;
}

}  // namespace detail

inline constexpr std::size_t kSimplexIterations = 1000;
inline constexpr double kNormalEquationRidge = 1e-8;

// Weights minimizing the fitting-split loss. Simplex: projected gradient
// descent from the best single member, step 0.1/L, steps that would raise
// the loss are halved and retried. Unconstrained (regression only): ridge
// normal equations.
inline EnsembleWeights fit_weights(std::span<const MemberPredictions> members,
                                   std::span<const double> targets, std::size_t out_dim,
                                   TaskKind task,
                                   WeightConstraint constraint = WeightConstraint::Simplex) {
  const std::size_t n = detail::check_members(members, out_dim);
  if (n == 0 || targets.size() != n) {
    throw Error(n == 0 ? ErrorCode::EmptyBatch : ErrorCode::ShapeMismatch,
                "fit_weights needs one target per example");
  }
  const std::size_t m = members.size();
  auto loss_at = [&](std::span<const double> w) {
    return prediction_loss(weighted_combine(members, w, out_dim, task), targets, out_dim, task);
  };
  auto uniform = [&](bool degenerate) {
    EnsembleWeights out{std::vector<double>(m, 1.0 / static_cast<double>(m)), degenerate, 0.0};
    out.fit_loss = loss_at(out.weights);
    return out;
  };
  if (m == 1) return {{1.0}, false, loss_at(std::vector<double>{1.0})};
  if (detail::members_identical(members)) return uniform(true);

  // Column q_m(i) entering the objective: the prediction itself for
  // regression, the true-class probability for classification.
  std::vector<double> q(m * n);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      q[k * n + i] = task == TaskKind::Regression
                         ? members[k][i]
                         : members[k][i * out_dim + static_cast<std::size_t>(targets[i])];
    }
  }
  std::vector<double> gram(m * m, 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += q[a * n + i] * q[b * n + i];
      gram[a * m + b] = s;
    }
  }

  if (constraint == WeightConstraint::Unconstrained) {
    if (task != TaskKind::Regression) {
      throw Error(ErrorCode::InvalidArgument, "unconstrained weights are defined for regression only");
    }
    auto a = gram;
    for (std::size_t k = 0; k < m; ++k) a[k * m + k] += kNormalEquationRidge;
    std::vector<double> b(m, 0.0), w;
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t i = 0; i < n; ++i) b[k] += q[k * n + i] * targets[i];
    }
    if (!detail::solve(a, b, m, w)) return uniform(true);
    double s = 0.0;
    for (double v : w) s += std::abs(v);
    if (!std::isfinite(s)) return uniform(true);
    return {w, false, loss_at(w)};
  }

  // Start at the best vertex; ties go to the lowest member index.
  std::vector<double> w(m, 0.0);
  std::size_t best_member = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m; ++k) {
    std::vector<double> e(m, 0.0);
    e[k] = 1.0;
    const double l = loss_at(e);
    if (l < best_loss) {
      best_loss = l;
      best_member = k;
    }
  }
  w[best_member] = 1.0;
  double current = best_loss;

  const double inv_n = 1.0 / static_cast<double>(n);
  double lipschitz = detail::max_eigenvalue(gram, m) * inv_n;
  if (task == TaskKind::Regression) {
    lipschitz *= 2.0;
  } else {
    // Hessian of -mean log(q.w) scales with 1/(q.w)^2; use the start point.
    double floor = 1.0;
    for (std::size_t i = 0; i < n; ++i) floor = std::min(floor, q[best_member * n + i]);
    floor = std::max(floor, 1e-3);
    lipschitz /= floor * floor;
  }
  if (!(lipschitz > 0.0)) return {w, false, current};
  double step = 0.1 / lipschitz;

  std::vector<double> grad(m), trial(m);
  for (std::size_t it = 0; it < kSimplexIterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double mix = 0.0;
      for (std::size_t k = 0; k < m; ++k) mix += w[k] * q[k * n + i];
      if (task == TaskKind::Regression) {
        const double r = mix - targets[i];
        for (std::size_t k = 0; k < m; ++k) grad[k] += 2.0 * r * q[k * n + i] * inv_n;
      } else if (mix > 0.0 && std::log(mix) > kLogClamp) {
        for (std::size_t k = 0; k < m; ++k) grad[k] -= q[k * n + i] / mix * inv_n;
      }
    }
    for (std::size_t k = 0; k < m; ++k) trial[k] = w[k] - step * grad[k];
    auto next = project_to_simplex(trial);
    const double l = loss_at(next);
    if (l <= current) {
      w = std::move(next);
      current = l;
    } else {
      step *= 0.5;
    }
  }
  return {w, false, current};
}

// ---- representation-level fusion (llm / ki) --------------------------------

struct FusedVector {
  std::vector<double> values;
  bool knowledge_missing = false;  // ki segment was all zero
};

namespace detail {
inline void append_normalized(std::vector<double>& out, std::span<const float> segment) {
  double norm2 = 0.0;
  for (float v : segment) norm2 += static_cast<double>(v) * v;
  const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
  for (float v : segment) out.push_back(static_cast<double>(v) * inv);
}
}  // namespace detail

// [member_1 | ... | member_m | extra], each segment L2-normalized on its own.
inline FusedVector build_fused_representation(std::span<const std::span<const float>> member_rows,
                                              std::optional<std::span<const float>> auxiliary_row = {},
                                              std::optional<std::span<const float>> knowledge_row = {}) {
  if (member_rows.empty()) throw Error(ErrorCode::EmptyMemberList, "fusion needs at least one member row");
  FusedVector out;
  for (const auto& r : member_rows) detail::append_normalized(out.values, r);
  if (auxiliary_row) detail::append_normalized(out.values, *auxiliary_row);
  if (knowledge_row) {
    out.knowledge_missing = std::all_of(knowledge_row->begin(), knowledge_row->end(),
                                        [](float v) { return v == 0.0f; });
    detail::append_normalized(out.values, *knowledge_row);
  }
  return out;
}

struct FusionInputs {
  std::vector<const EmbeddingMatrix*> members;
  const EmbeddingMatrix* auxiliary = nullptr;  // llm
  const EmbeddingMatrix* knowledge = nullptr;  // ki, keyed by example id
};

struct FusedSet {
  AlignedSet set;
  std::size_t knowledge_missing = 0;
};

// Fused rows for `ids` of `dataset`; every id must be present in every source.
inline FusedSet build_fused_set(const TaskDataset& dataset, std::span<const std::string> ids,
                                const FusionInputs& inputs) {
  if (inputs.members.empty()) throw Error(ErrorCode::EmptyMemberList, "fusion needs members");
  std::vector<const EmbeddingMatrix*> sources = inputs.members;
  if (inputs.auxiliary) sources.push_back(inputs.auxiliary);
  if (inputs.knowledge) sources.push_back(inputs.knowledge);
  // align() reports every missing id per source.
  for (const auto* src : sources) align(dataset, ids, *src);

  FusedSet out;
  const auto ex_index = dataset.index();
  std::vector<std::span<const float>> rows(inputs.members.size());
  for (const auto& id : ids) {
    for (std::size_t k = 0; k < inputs.members.size(); ++k) {
      rows[k] = inputs.members[k]->row(*inputs.members[k]->find(id));
    }
    std::optional<std::span<const float>> aux, kn;
    if (inputs.auxiliary) aux = inputs.auxiliary->row(*inputs.auxiliary->find(id));
    if (inputs.knowledge) kn = inputs.knowledge->row(*inputs.knowledge->find(id));
    auto fused = build_fused_representation(rows, aux, kn);
    if (fused.knowledge_missing) ++out.knowledge_missing;
    if (out.set.dim == 0) out.set.dim = fused.values.size();
    out.set.ids.push_back(id);
    out.set.features.insert(out.set.features.end(), fused.values.begin(), fused.values.end());
    out.set.targets.push_back(dataset.examples[ex_index.at(id)].label);
  }
  if (out.set.dim == 0) {
    for (const auto* src : sources) out.set.dim += src->dim();
  }
  return out;
}

struct FusionResult {
  TrainedHead trained;
  Metric validation;
  Metric test;
  std::size_t fused_dim = 0;
  std::size_t knowledge_missing = 0;  // across train/validation/test
};

// Trains a fresh head on fused vectors and scores it on the test split.
inline FusionResult train_fusion_ensemble(const TaskDataset& dataset, const FusionInputs& inputs,
                                          HeadKind head_kind, const TrainConfig& config,
                                          std::size_t hidden_dim = kDefaultHiddenDim) {
  const auto train = build_fused_set(dataset, dataset.train, inputs);
  const auto val = build_fused_set(dataset, dataset.validation, inputs);
  const auto test = build_fused_set(dataset, dataset.test, inputs);
  const auto dim = train.set.dim;
  auto init = init_head(head_kind, dim, dataset.out_dim(), dataset.task_kind, config.seed, hidden_dim);
  FusionResult out{train_head(std::move(init), train.set, val.set, config), {}, {}, dim,
                   train.knowledge_missing + val.knowledge_missing + test.knowledge_missing};
  out.validation = evaluate(out.trained.head, val.set);
  out.test = evaluate(out.trained.head, test.set);
  return out;
}

// ---- one harness over all four strategies ---------------------------------

struct EnsembleMember {
  std::string source_name;
  Head head;
  const EmbeddingMatrix* embeddings = nullptr;
};

struct EnsembleSpec {
  std::string name;
  std::string dataset;
  Strategy strategy = Strategy::Naive;
  std::vector<std::string> members;  // source names
  std::vector<std::string> checkpoints;  // optional, parallel to members
  std::optional<std::string> auxiliary_source;
  std::optional<std::string> knowledge_base;
  HeadKind fusion_head = HeadKind::Linear;
  std::size_t fusion_hidden_dim = kDefaultHiddenDim;
  WeightConstraint constraint = WeightConstraint::Simplex;
};

struct EnsembleOutcome {
  Strategy strategy = Strategy::Naive;
  Metric test;
  Metric validation;
  std::vector<double> weights;  // weighted: fitted; naive: uniform
  bool degenerate_weights = false;
  std::size_t member_parameters = 0;
  std::size_t fusion_parameters = 0;
  std::size_t knowledge_missing = 0;
};

struct EnsembleContext {
  const TaskDataset* dataset = nullptr;
  std::vector<EnsembleMember> members;
  const EmbeddingMatrix* auxiliary = nullptr;
  const EmbeddingMatrix* knowledge = nullptr;
  TrainConfig config;
};

inline std::vector<MemberPredictions> member_predictions(const EnsembleContext& ctx, Split split) {
  std::vector<MemberPredictions> out;
  for (const auto& m : ctx.members) {
    out.push_back(predict_set(m.head, align(*ctx.dataset, split, *m.embeddings)));
  }
  return out;
}

inline std::vector<double> split_targets(const TaskDataset& ds, Split split) {
  const auto idx = ds.index();
  std::vector<double> t;
  for (const auto& id : ds.split(split)) t.push_back(ds.examples[idx.at(id)].label);
  return t;
}

// Prediction space for naive/weighted (weights fitted on validation only),
// representation space for llm/ki.
inline EnsembleOutcome evaluate_ensemble(const EnsembleSpec& spec, const EnsembleContext& ctx) {
  if (ctx.members.empty()) throw Error(ErrorCode::EmptyMemberList, "ensemble '" + spec.name + "' has no members");
  const auto& ds = *ctx.dataset;
  const std::size_t out_dim = ds.out_dim();
  EnsembleOutcome out;
  out.strategy = spec.strategy;
  for (const auto& m : ctx.members) {
    if (m.head.task_kind != ds.task_kind || m.head.out_dim != out_dim) {
      throw Error(ErrorCode::ShapeMismatch, "member '" + m.source_name + "' does not match task " + ds.name);
    }
    out.member_parameters += m.head.parameter_count();
  }

  if (spec.strategy == Strategy::Naive || spec.strategy == Strategy::Weighted) {
    const auto val_preds = member_predictions(ctx, Split::Validation);
    const auto test_preds = member_predictions(ctx, Split::Test);
    const auto val_t = split_targets(ds, Split::Validation);
    const auto test_t = split_targets(ds, Split::Test);
    if (spec.strategy == Strategy::Naive) {
      out.weights.assign(ctx.members.size(), 1.0 / static_cast<double>(ctx.members.size()));
      out.validation = score_predictions(naive_combine(val_preds, out_dim, ds.task_kind), val_t, out_dim, ds.task_kind);
      out.test = score_predictions(naive_combine(test_preds, out_dim, ds.task_kind), test_t, out_dim, ds.task_kind);
    } else {
      const auto w = fit_weights(val_preds, val_t, out_dim, ds.task_kind, spec.constraint);
      out.weights = w.weights;
      out.degenerate_weights = w.degenerate;
      auto combined_val = weighted_combine(val_preds, w.weights, out_dim, ds.task_kind);
      auto combined_test = weighted_combine(test_preds, w.weights, out_dim, ds.task_kind);
      if (ds.task_kind == TaskKind::Regression) {
        for (double& v : combined_val) v = std::clamp(v, 0.0, 1.0);
        for (double& v : combined_test) v = std::clamp(v, 0.0, 1.0);
      }
      out.validation = score_predictions(combined_val, val_t, out_dim, ds.task_kind);
      out.test = score_predictions(combined_test, test_t, out_dim, ds.task_kind);
    }
    return out;
  }

  FusionInputs inputs;
  for (const auto& m : ctx.members) inputs.members.push_back(m.embeddings);
  if (spec.strategy == Strategy::Llm) {
    if (!ctx.auxiliary) throw Error(ErrorCode::MissingField, "ensemble '" + spec.name + "': llm strategy needs auxiliary_source");
    inputs.auxiliary = ctx.auxiliary;
  } else {
    if (!ctx.knowledge) throw Error(ErrorCode::MissingField, "ensemble '" + spec.name + "': ki strategy needs knowledge_base");
    inputs.knowledge = ctx.knowledge;
  }
  const auto fused = train_fusion_ensemble(ds, inputs, spec.fusion_head, ctx.config, spec.fusion_hidden_dim);
  out.validation = fused.validation;
  out.test = fused.test;
  out.fusion_parameters = fused.trained.head.parameter_count();
  out.knowledge_missing = fused.knowledge_missing;
  return out;
}

}  // namespace l3ens

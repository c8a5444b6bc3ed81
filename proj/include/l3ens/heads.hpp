#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "l3ens/dataset.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/error.hpp"
#include "l3ens/io.hpp"
#include "l3ens/random.hpp"

namespace l3ens {

enum class HeadKind { Linear, Mlp1 };

constexpr std::string_view to_string(HeadKind kind) {
  return kind == HeadKind::Linear ? "linear" : "mlp1";
}

inline HeadKind parse_head_kind(std::string_view s) {
  if (s == "linear") return HeadKind::Linear;
  if (s == "mlp1") return HeadKind::Mlp1;
  throw Error(ErrorCode::InvalidArgument, "unknown head kind '" + std::string(s) + "'");
}

enum class MetricKind { Accuracy, Mse };

constexpr std::string_view to_string(MetricKind kind) {
  return kind == MetricKind::Accuracy ? "accuracy" : "mse";
}

inline MetricKind metric_kind_for(TaskKind task) {
  return task == TaskKind::Classification ? MetricKind::Accuracy : MetricKind::Mse;
}

struct Metric {
  MetricKind kind = MetricKind::Accuracy;
  double value = 0.0;

  friend bool operator==(const Metric&, const Metric&) = default;
};

inline constexpr std::size_t kDefaultHiddenDim = 32;

// Parameters live in one flat vector. Layout per layer: weight (out x in,
// row-major) followed by bias (out). Linear heads have one layer; mlp1 heads
// have a tanh hidden layer then the output layer.
struct Head {
  HeadKind kind = HeadKind::Linear;
  TaskKind task_kind = TaskKind::Classification;
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> params;

  struct LayerShape {
    std::size_t in, out, offset;
    std::size_t weight_size() const { return in * out; }
    std::size_t size() const { return in * out + out; }
  };

  std::vector<LayerShape> layers() const {
    if (kind == HeadKind::Linear) return {{in_dim, out_dim, 0}};
    const std::size_t first = hidden_dim * in_dim + hidden_dim;
    return {{in_dim, hidden_dim, 0}, {hidden_dim, out_dim, first}};
  }

  std::size_t parameter_count() const { return params.size(); }

  // Hidden-layer block of an mlp1 head; empty for linear heads.
  std::size_t trunk_size() const {
    return kind == HeadKind::Mlp1 ? hidden_dim * in_dim + hidden_dim : 0;
  }

  friend bool operator==(const Head&, const Head&) = default;
};

inline std::size_t parameter_count(HeadKind kind, std::size_t in_dim, std::size_t out_dim,
                                   std::size_t hidden_dim = kDefaultHiddenDim) {
  if (kind == HeadKind::Linear) return in_dim * out_dim + out_dim;
  return hidden_dim * in_dim + hidden_dim + out_dim * hidden_dim + out_dim;
}

// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases.
inline Head init_head(HeadKind kind, std::size_t in_dim, std::size_t out_dim, TaskKind task_kind,
                      std::uint64_t seed, std::size_t hidden_dim = kDefaultHiddenDim) {
  if (in_dim == 0 || out_dim == 0 || (kind == HeadKind::Mlp1 && hidden_dim == 0)) {
    throw Error(ErrorCode::InvalidArgument, "init_head: dimensions must be >= 1");
  }
  if (task_kind == TaskKind::Regression && out_dim != 1) {
    throw Error(ErrorCode::InvalidArgument, "init_head: regression heads have out_dim 1");
  }
  if (task_kind == TaskKind::Classification && out_dim < 2) {
    throw Error(ErrorCode::InvalidArgument, "init_head: classification needs out_dim >= 2");
  }
  Head h;
  h.kind = kind;
  h.task_kind = task_kind;
  h.in_dim = in_dim;
  h.out_dim = out_dim;
  h.hidden_dim = kind == HeadKind::Mlp1 ? hidden_dim : 0;
  h.params.assign(parameter_count(kind, in_dim, out_dim, hidden_dim), 0.0);
  Rng rng(seed);
  for (const auto& layer : h.layers()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (std::size_t i = 0; i < layer.weight_size(); ++i) {
      h.params[layer.offset + i] = uniform(rng, -limit, limit);
    }
  }
  return h;
}

namespace detail {

inline void affine(std::span<const double> params, const Head::LayerShape& layer,
                   std::span<const double> x, std::span<double> out) {
  const double* w = params.data() + layer.offset;
  const double* b = w + layer.weight_size();
  for (std::size_t o = 0; o < layer.out; ++o) {
    double acc = b[o];
    const double* wr = w + o * layer.in;
    for (std::size_t i = 0; i < layer.in; ++i) acc += wr[i] * x[i];
    out[o] = acc;
  }
}

inline void softmax_inplace(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

inline double log_softmax_at(std::span<const double> z, std::size_t k) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  return z[k] - m - std::log(sum);
}

inline void check_dim(const Head& head, std::size_t dim) {
  if (dim != head.in_dim) {
    throw Error(ErrorCode::DimMismatch, "input dim " + std::to_string(dim) +
                                            " does not match head in_dim " +
                                            std::to_string(head.in_dim));
  }
}

// Pre-softmax outputs; `hidden` receives tanh activations for mlp1.
inline void logits(const Head& head, std::span<const double> x, std::vector<double>& hidden,
                   std::span<double> z) {
  const auto layers = head.layers();
  if (head.kind == HeadKind::Linear) {
    affine(head.params, layers[0], x, z);
    return;
  }
  hidden.resize(head.hidden_dim);
  affine(head.params, layers[0], x, hidden);
  for (double& v : hidden) v = std::tanh(v);
  affine(head.params, layers[1], hidden, z);
}

inline std::size_t class_of(double label) { return static_cast<std::size_t>(label); }

}  // namespace detail

// Classification: softmax probabilities. Regression: the raw (unclamped) value.
inline std::vector<double> forward(const Head& head, std::span<const double> x) {
  detail::check_dim(head, x.size());
  std::vector<double> hidden;
  std::vector<double> z(head.out_dim);
  detail::logits(head, x, hidden, z);
  if (head.task_kind == TaskKind::Classification) detail::softmax_inplace(z);
  return z;
}

// Evaluation-time prediction: regression outputs clamped to [0,1].
inline std::vector<double> predict(const Head& head, std::span<const double> x) {
  auto out = forward(head, x);
  if (head.task_kind == TaskKind::Regression) out[0] = std::clamp(out[0], 0.0, 1.0);
  return out;
}

// Row-major n x out_dim predictions for a whole set.
inline std::vector<double> predict_set(const Head& head, const AlignedSet& set) {
  detail::check_dim(head, set.dim);
  std::vector<double> out;
  out.reserve(set.size() * head.out_dim);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto p = predict(head, set.row(i));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline constexpr double kLogClamp = -30.0;

inline double weight_norm2(const Head& head) {
  double s = 0.0;
  for (const auto& layer : head.layers()) {
    for (std::size_t i = 0; i < layer.weight_size(); ++i) {
      const double w = head.params[layer.offset + i];
      s += w * w;
    }
  }
  return s;
}

// Mean loss over `batch` (indices into `set`) plus l2_penalty*||W||^2. When
// `grad` is non-null it receives the analytic gradient in Head::params layout.
inline double loss_and_gradient(const Head& head, const AlignedSet& set,
                                std::span<const std::size_t> batch, double l2_penalty,
                                std::vector<double>* grad) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "loss over an empty batch");
  detail::check_dim(head, set.dim);
  const auto layers = head.layers();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  if (grad) grad->assign(head.params.size(), 0.0);

  std::vector<double> hidden, z(head.out_dim), dz(head.out_dim), dh;
  double total = 0.0;
  for (std::size_t idx : batch) {
    const auto x = set.row(idx);
    const double y = set.targets[idx];
    detail::logits(head, x, hidden, z);

    if (head.task_kind == TaskKind::Classification) {
      const auto k = detail::class_of(y);
      const double logp = detail::log_softmax_at(z, k);
      const bool clamped = logp < kLogClamp;
      total += -std::max(logp, kLogClamp);
      if (!grad) continue;
      if (clamped) {
        std::fill(dz.begin(), dz.end(), 0.0);
      } else {
        std::copy(z.begin(), z.end(), dz.begin());
        detail::softmax_inplace(dz);
        dz[k] -= 1.0;
        for (double& v : dz) v *= inv_n;
      }
    } else {
      const double r = z[0] - y;
      total += r * r;
      if (!grad) continue;
      dz[0] = 2.0 * r * inv_n;
    }

    auto& g = *grad;
    const auto& out_layer = layers.back();
    const std::span<const double> out_in =
        head.kind == HeadKind::Linear ? x : std::span<const double>(hidden);
    for (std::size_t o = 0; o < out_layer.out; ++o) {
      double* gw = g.data() + out_layer.offset + o * out_layer.in;
      for (std::size_t i = 0; i < out_layer.in; ++i) gw[i] += dz[o] * out_in[i];
      g[out_layer.offset + out_layer.weight_size() + o] += dz[o];
    }
    if (head.kind == HeadKind::Mlp1) {
      const auto& hid = layers[0];
      const double* w2 = head.params.data() + out_layer.offset;
      dh.assign(head.hidden_dim, 0.0);
      for (std::size_t o = 0; o < out_layer.out; ++o) {
        for (std::size_t j = 0; j < head.hidden_dim; ++j) dh[j] += w2[o * head.hidden_dim + j] * dz[o];
      }
      for (std::size_t j = 0; j < head.hidden_dim; ++j) {
        const double da = dh[j] * (1.0 - hidden[j] * hidden[j]);
        double* gw = g.data() + hid.offset + j * hid.in;
        for (std::size_t i = 0; i < hid.in; ++i) gw[i] += da * x[i];
        g[hid.offset + hid.weight_size() + j] += da;
      }
    }
  }

  double loss = total * inv_n;
  if (l2_penalty != 0.0) {
    loss += l2_penalty * weight_norm2(head);
    if (grad) {
      for (const auto& layer : layers) {
        for (std::size_t i = 0; i < layer.weight_size(); ++i) {
          (*grad)[layer.offset + i] += 2.0 * l2_penalty * head.params[layer.offset + i];
        }
      }
    }
  }
  return loss;
}

inline std::vector<std::size_t> all_indices(const AlignedSet& set) {
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

inline double loss(const Head& head, const AlignedSet& set, double l2_penalty = 0.0) {
  return loss_and_gradient(head, set, all_indices(set), l2_penalty, nullptr);
}

inline std::vector<double> gradient(const Head& head, const AlignedSet& set,
                                    double l2_penalty = 0.0) {
  std::vector<double> g;
  loss_and_gradient(head, set, all_indices(set), l2_penalty, &g);
  return g;
}

// Accuracy (argmax, ties to the lowest class) or MSE on clamped predictions.
inline Metric evaluate(const Head& head, const AlignedSet& set) {
  if (set.empty()) throw Error(ErrorCode::EmptyBatch, "evaluate on an empty split");
  detail::check_dim(head, set.dim);
  std::vector<double> hidden, z(head.out_dim);
  double acc = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    detail::logits(head, set.row(i), hidden, z);
    if (head.task_kind == TaskKind::Classification) {
      const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      acc += best == detail::class_of(set.targets[i]) ? 1.0 : 0.0;
    } else {
      const double r = std::clamp(z[0], 0.0, 1.0) - set.targets[i];
      acc += r * r;
    }
  }
  return {metric_kind_for(head.task_kind), acc / static_cast<double>(set.size())};
}

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t early_stop_patience = 5;
  std::uint64_t seed = 0;
  double l2_penalty = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be > 0");
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    if (max_epochs < 1) throw Error(ErrorCode::InvalidArgument, "max_epochs must be >= 1");
    if (l2_penalty < 0.0) throw Error(ErrorCode::InvalidArgument, "l2_penalty must be >= 0");
  }
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::vector<Metric> validation_metric;
  std::vector<double> best_validation_loss;  // running minimum, non-increasing
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
};

struct TrainedHead {
  Head head;
  TrainHistory history;
};

// Minibatch training with per-epoch seeded shuffling and early stopping on
// validation loss. Returns the parameters of the best validation epoch.
inline TrainedHead train_head(Head head, const AlignedSet& train, const AlignedSet& validation,
                              const TrainConfig& config) {
  config.validate();
  if (train.empty() || validation.empty()) {
    throw Error(ErrorCode::EmptyBatch, "train_head needs non-empty train and validation splits");
  }
  detail::check_dim(head, train.dim);
  detail::check_dim(head, validation.dim);

  const std::size_t n_params = head.params.size();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0), grad;
  std::size_t step = 0;

  Rng rng(config.seed);
  auto order = all_indices(train);
  TrainHistory hist;
  double best = std::numeric_limits<double>::infinity();
  double patience_ref = best;
  std::vector<double> best_params = head.params;
  std::size_t since_improvement = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(std::span(order), rng);
    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const double l = loss_and_gradient(head, train, batch, config.l2_penalty, &grad);
      if (!std::isfinite(l)) {
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " batch " +
                                                  std::to_string(batch_no));
      }
      epoch_loss += l * static_cast<double>(batch.size());

      ++step;
      if (config.optimizer == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < n_params; ++i) head.params[i] -= config.learning_rate * grad[i];
      } else {
        const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < n_params; ++i) {
          m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
          v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
          head.params[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
        }
      }
      for (double p : head.params) {
        if (!std::isfinite(p)) {
          throw Error(ErrorCode::NonFiniteLoss, "non-finite parameter after epoch " +
                                                    std::to_string(epoch) + " batch " +
                                                    std::to_string(batch_no));
        }
      }
    }

    const double val_loss = loss(head, validation);
    if (!std::isfinite(val_loss)) {
      throw Error(ErrorCode::NonFiniteLoss, "validation loss at epoch " + std::to_string(epoch));
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    hist.validation_loss.push_back(val_loss);
    hist.validation_metric.push_back(evaluate(head, validation));
    hist.stopped_epoch = epoch;

    // Patience counts epochs without a >= 1e-6 gain; the returned parameters
    // are those of the lowest validation loss seen.
    if (val_loss < patience_ref - 1e-6) {
      patience_ref = val_loss;
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
    if (val_loss < best) {
      best = val_loss;
      best_params = head.params;
      hist.best_epoch = epoch;
    }
    hist.best_validation_loss.push_back(best);
    if (config.early_stop_patience > 0 && since_improvement >= config.early_stop_patience) break;
  }

  head.params = std::move(best_params);
  return {std::move(head), std::move(hist)};
}

// ---- checkpoint: "L3HD" binary ------------------------------------------

namespace l3hd {
inline constexpr char kMagic[4] = {'L', '3', 'H', 'D'};
inline constexpr std::uint32_t kVersion = 1;

inline std::vector<std::byte> encode(const Head& head) {
  std::vector<std::byte> out;
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  io::put_u32(out, kVersion);
  io::put_u32(out, head.kind == HeadKind::Linear ? 0u : 1u);
  io::put_u32(out, head.task_kind == TaskKind::Classification ? 0u : 1u);
  io::put_u32(out, static_cast<std::uint32_t>(head.in_dim));
  io::put_u32(out, static_cast<std::uint32_t>(head.hidden_dim));
  io::put_u32(out, static_cast<std::uint32_t>(head.out_dim));
  io::put_u64(out, head.params.size());
  for (double p : head.params) io::put_f32(out, static_cast<float>(p));
  return out;
}

inline Head decode(std::span<const std::byte> buf, const std::string& where) {
  constexpr std::size_t kHeader = 4 + 4 * 6 + 8;
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, where + " at byte 0: expected \"L3HD\"");
  }
  if (buf.size() < kHeader) throw Error(ErrorCode::Truncated, where + ": header truncated");
  if (io::get_u32(buf, 4) != kVersion) {
    throw Error(ErrorCode::VersionMismatch, where + " at byte 4: unsupported version " +
                                                std::to_string(io::get_u32(buf, 4)));
  }
  Head h;
  const auto kind = io::get_u32(buf, 8);
  const auto task = io::get_u32(buf, 12);
  if (kind > 1 || task > 1) throw Error(ErrorCode::ParseError, where + ": bad kind tag");
  h.kind = kind == 0 ? HeadKind::Linear : HeadKind::Mlp1;
  h.task_kind = task == 0 ? TaskKind::Classification : TaskKind::Regression;
  h.in_dim = io::get_u32(buf, 16);
  h.hidden_dim = io::get_u32(buf, 20);
  h.out_dim = io::get_u32(buf, 24);
  const auto n = io::get_u64(buf, 28);
  if (n != parameter_count(h.kind, h.in_dim, h.out_dim, h.hidden_dim)) {
    throw Error(ErrorCode::ShapeMismatch, where + ": parameter count disagrees with dims");
  }
  if (buf.size() != kHeader + 4 * n) throw Error(ErrorCode::Truncated, where + ": payload size mismatch");
  h.params.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float f = io::get_f32(buf, kHeader + 4 * i);
    if (!std::isfinite(f)) {
      throw Error(ErrorCode::NonFiniteValue, where + ": non-finite parameter at byte " +
                                                 std::to_string(kHeader + 4 * i));
    }
    h.params[i] = f;
  }
  return h;
}
}  // namespace l3hd

// Parameters are written as 32-bit reals, so a trained head is quantized on
// save; save(load(file)) reproduces the file byte for byte.
inline void save_head(const Head& head, const std::filesystem::path& path) {
  io::write_atomic(path, l3hd::encode(head));
}

inline Head load_head(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return l3hd::decode(bytes, path.string());
}

inline Head quantized(Head head) {
  for (double& p : head.params) p = static_cast<double>(static_cast<float>(p));
  return head;
}

}  // namespace l3ens

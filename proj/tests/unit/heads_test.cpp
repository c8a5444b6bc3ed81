#include "l3ens/heads.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "../test_util.hpp"

namespace l3ens {
namespace {

AlignedSet make_set(std::size_t dim, std::vector<std::vector<double>> rows, std::vector<double> y) {
  AlignedSet s;
  s.dim = dim;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s.ids.push_back(std::to_string(i));
    s.features.insert(s.features.end(), rows[i].begin(), rows[i].end());
  }
  s.targets = std::move(y);
  return s;
}

AlignedSet random_set(Rng& rng, std::size_t n, std::size_t dim, TaskKind kind, std::size_t classes) {
  AlignedSet s;
  s.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    s.ids.push_back(std::to_string(i));
    for (std::size_t d = 0; d < dim; ++d) s.features.push_back(uniform(rng, -1.0, 1.0));
    s.targets.push_back(kind == TaskKind::Classification
                            ? static_cast<double>(uniform_index(rng, classes))
                            : uniform01(rng));
  }
  return s;
}

// Central differences on the loss; independent of the backprop code path.
std::vector<double> finite_difference(Head head, const AlignedSet& set, double l2, double h = 1e-4) {
  std::vector<double> g(head.params.size());
  for (std::size_t i = 0; i < head.params.size(); ++i) {
    const double orig = head.params[i];
    head.params[i] = orig + h;
    const double up = loss(head, set, l2);
    head.params[i] = orig - h;
    const double down = loss(head, set, l2);
    head.params[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

bool gradients_agree(const std::vector<double>& a, const std::vector<double>& n, double rel) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(n[i]), 1e-2});
    if (std::abs(a[i] - n[i]) > rel * scale) return false;
  }
  return true;
}

TEST(InitHead, DeterministicZeroBiasAndBounded) {
  const auto a = init_head(HeadKind::Linear, 5, 3, TaskKind::Classification, 11);
  const auto b = init_head(HeadKind::Linear, 5, 3, TaskKind::Classification, 11);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.parameter_count(), 5u * 3u + 3u);
  const double limit = std::sqrt(6.0 / 8.0);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_LE(std::abs(a.params[i]), limit);
  for (std::size_t i = 15; i < 18; ++i) EXPECT_EQ(a.params[i], 0.0);
  EXPECT_NE(a, init_head(HeadKind::Linear, 5, 3, TaskKind::Classification, 12));

  const auto m = init_head(HeadKind::Mlp1, 4, 1, TaskKind::Regression, 1, 6);
  EXPECT_EQ(m.parameter_count(), 4u * 6 + 6 + 6 + 1);
  const auto layers = m.layers();
  for (const auto& l : layers) {
    for (std::size_t i = 0; i < l.out; ++i) EXPECT_EQ(m.params[l.offset + l.weight_size() + i], 0.0);
  }
}

TEST(InitHead, RejectsBadShapes) {
  EXPECT_THROW(init_head(HeadKind::Linear, 0, 2, TaskKind::Classification, 0), Error);
  EXPECT_THROW(init_head(HeadKind::Linear, 2, 2, TaskKind::Regression, 0), Error);
  EXPECT_THROW(init_head(HeadKind::Linear, 2, 1, TaskKind::Classification, 0), Error);
}

TEST(Forward, ZeroHeadIsUniform) {
  Head h = init_head(HeadKind::Linear, 3, 2, TaskKind::Classification, 0);
  std::fill(h.params.begin(), h.params.end(), 0.0);
  const std::vector<double> x = {1, 2, 3};
  const auto p = forward(h, x);
  EXPECT_EQ(p, (std::vector<double>{0.5, 0.5}));
}

TEST(Forward, LinearRegressionDotProduct) {
  Head h = init_head(HeadKind::Linear, 2, 1, TaskKind::Regression, 0);
  h.params = {1.0, 0.0, 0.0};
  const std::vector<double> x = {0.3, 9.9};
  EXPECT_DOUBLE_EQ(forward(h, x)[0], 0.3);
  const std::vector<double> big = {4.0, 0.0};
  EXPECT_DOUBLE_EQ(forward(h, big)[0], 4.0);  // training path unclamped
  EXPECT_DOUBLE_EQ(predict(h, big)[0], 1.0);  // evaluation path clamped
  const std::vector<double> bad = {1.0};
  EXPECT_THROW(forward(h, bad), Error);
}

TEST(Forward, SoftmaxIsADistribution) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto kind = trial % 2 ? HeadKind::Mlp1 : HeadKind::Linear;
    const std::size_t classes = 2 + trial % 4;
    Head h = init_head(kind, 6, classes, TaskKind::Classification, trial, 5);
    for (double& p : h.params) p *= 3.0;
    std::vector<double> x(6);
    for (double& v : x) v = uniform(rng, -3, 3);
    const auto p = forward(h, x);
    double s = 0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Loss, Arithmetic) {
  Head h = init_head(HeadKind::Linear, 1, 1, TaskKind::Regression, 0);
  // Predictions equal x: w=1, b=0.
  h.params = {1.0, 0.0};
  EXPECT_DOUBLE_EQ(loss(h, make_set(1, {{0.2}, {0.7}}, {0.2, 0.7})), 0.0);
  EXPECT_DOUBLE_EQ(loss(h, make_set(1, {{0.0}, {1.0}}, {1.0, 0.0})), 1.0);
  // l2 penalty on weights only.
  h.params = {2.0, 5.0};
  const auto s = make_set(1, {{0.0}}, {5.0});
  EXPECT_DOUBLE_EQ(loss(h, s, 0.5), 0.5 * 4.0);

  Head c = init_head(HeadKind::Linear, 2, 2, TaskKind::Classification, 0);
  std::fill(c.params.begin(), c.params.end(), 0.0);
  EXPECT_NEAR(loss(c, make_set(2, {{1, 2}, {3, -1}}, {0, 1})), std::numbers::ln2, 1e-12);

  const AlignedSet empty{2, {}, {}, {}};
  EXPECT_THROW(loss(c, empty), Error);
  EXPECT_THROW(gradient(c, empty), Error);
  EXPECT_THROW(evaluate(c, empty), Error);
}

TEST(Loss, LogIsClamped) {
  Head c = init_head(HeadKind::Linear, 1, 2, TaskKind::Classification, 0);
  c.params = {500.0, -500.0, 0.0, 0.0};
  const auto s = make_set(1, {{1.0}}, {1});
  EXPECT_DOUBLE_EQ(loss(c, s), 30.0);
  for (double g : gradient(c, s)) EXPECT_EQ(g, 0.0);
}

TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto kind = trial % 2 ? HeadKind::Mlp1 : HeadKind::Linear;
    const auto task = (trial / 2) % 2 ? TaskKind::Regression : TaskKind::Classification;
    const std::size_t dim = 1 + uniform_index(rng, 16);
    const std::size_t classes = task == TaskKind::Regression ? 1 : 2 + uniform_index(rng, 4);
    const std::size_t n = 1 + uniform_index(rng, 8);
    const double l2 = trial % 3 == 0 ? 0.01 : 0.0;
    const auto head = init_head(kind, dim, classes, task, rng(), 1 + uniform_index(rng, 8));
    const auto set = random_set(rng, n, dim, task, classes);
    const auto analytic = gradient(head, set, l2);
    const auto numeric = finite_difference(head, set, l2);
    ASSERT_TRUE(gradients_agree(analytic, numeric, 1e-4)) << "trial " << trial;
  }
}

TEST(Gradient, VanishesAtLeastSquaresOptimum) {
  // y = 2x + 1 exactly; the optimum of the convex MSE is w=2, b=1.
  Head h = init_head(HeadKind::Linear, 1, 1, TaskKind::Regression, 0);
  h.params = {2.0, 1.0};
  const auto s = make_set(1, {{0.0}, {0.25}, {-0.5}, {1.0}}, {1.0, 1.5, 0.0, 3.0});
  double norm = 0;
  for (double g : gradient(h, s)) norm += g * g;
  EXPECT_LT(std::sqrt(norm), 1e-8);
}

TEST(Gradient, DoublingResidualsDoublesOutputGradient) {
  Rng rng(9);
  for (const auto kind : {HeadKind::Linear, HeadKind::Mlp1}) {
    const auto head = init_head(kind, 4, 1, TaskKind::Regression, 3, 5);
    auto set = random_set(rng, 6, 4, TaskKind::Regression, 1);
    const auto g1 = gradient(head, set);
    // Shift each target so its residual doubles: y' = 2y - pred.
    auto doubled = set;
    for (std::size_t i = 0; i < set.size(); ++i) {
      doubled.targets[i] = 2 * set.targets[i] - forward(head, set.row(i))[0];
    }
    const auto g2 = gradient(head, doubled);
    const auto fd2 = finite_difference(head, doubled, 0.0);
    const auto out = head.layers().back();
    for (std::size_t i = out.offset; i < out.offset + out.size(); ++i) {
      EXPECT_NEAR(g2[i], 2 * g1[i], 1e-12 + 1e-9 * std::abs(g1[i]));
      EXPECT_NEAR(fd2[i], 2 * g1[i], 1e-6 * std::max(1.0, std::abs(g1[i])));
    }
  }
}

// Exhaustive search over line directions and thresholds.
bool separable_by_line(const AlignedSet& s) {
  for (int a = 0; a < 3600; ++a) {
    const double th = a * std::numbers::pi / 1800;
    const double ux = std::cos(th), uy = std::sin(th);
    std::vector<std::pair<double, double>> proj;
    for (std::size_t i = 0; i < s.size(); ++i) {
      proj.emplace_back(ux * s.row(i)[0] + uy * s.row(i)[1], s.targets[i]);
    }
    std::sort(proj.begin(), proj.end());
    for (std::size_t cut = 0; cut <= proj.size(); ++cut) {
      bool ok = true;
      for (std::size_t i = 0; i < proj.size(); ++i) {
        if ((i < cut) != (proj[i].second == 0)) ok = false;
      }
      if (ok) return true;
    }
  }
  return false;
}

TEST(TrainHead, SeparableToySetReachesFullAccuracy) {
  const auto s = make_set(2,
                          {{0.1, 0.9}, {0.3, 0.8}, {-0.2, 0.6}, {0.5, 1.2},
                           {0.9, 0.1}, {1.1, -0.3}, {0.7, 0.2}, {1.4, 0.5}},
                          {0, 0, 0, 0, 1, 1, 1, 1});
  ASSERT_TRUE(separable_by_line(s));
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.max_epochs = 50;
  cfg.early_stop_patience = 50;
  cfg.seed = 1;
  const auto trained = train_head(init_head(HeadKind::Linear, 2, 2, TaskKind::Classification, 1), s, s, cfg);
  EXPECT_LE(trained.history.stopped_epoch, 50u);
  EXPECT_DOUBLE_EQ(evaluate(trained.head, s).value, 1.0);
}

TEST(TrainHead, BitIdenticalAcrossRuns) {
  Rng rng(4);
  const auto train = random_set(rng, 100, 8, TaskKind::Classification, 3);
  const auto val = random_set(rng, 30, 8, TaskKind::Classification, 3);
  TrainConfig cfg;
  cfg.seed = 77;
  for (const auto kind : {HeadKind::Linear, HeadKind::Mlp1}) {
    const auto init = init_head(kind, 8, 3, TaskKind::Classification, 5, 8);
    const auto a = train_head(init, train, val, cfg);
    const auto b = train_head(init, train, val, cfg);
    EXPECT_EQ(a.head, b.head);
    EXPECT_EQ(a.history.validation_loss, b.history.validation_loss);
  }
}

TEST(TrainHead, ConstantTargetIsFit) {
  Rng rng(8);
  auto train = random_set(rng, 256, 1, TaskKind::Regression, 1);
  for (double& y : train.targets) y = 0.5;
  auto val = random_set(rng, 64, 1, TaskKind::Regression, 1);
  for (double& y : val.targets) y = 0.5;
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.max_epochs = 200;
  cfg.early_stop_patience = 200;
  const auto trained = train_head(init_head(HeadKind::Linear, 1, 1, TaskKind::Regression, 2), train, val, cfg);
  for (std::size_t i = 0; i < val.size(); ++i) {
    EXPECT_NEAR(forward(trained.head, val.row(i))[0], 0.5, 1e-3);
  }
}

TEST(TrainHead, HistoryInvariants) {
  Rng rng(12);
  const auto train = random_set(rng, 64, 4, TaskKind::Regression, 1);
  const auto val = random_set(rng, 16, 4, TaskKind::Regression, 1);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.early_stop_patience = 3;
  const auto t = train_head(init_head(HeadKind::Mlp1, 4, 1, TaskKind::Regression, 1, 4), train, val, cfg);
  const auto& h = t.history;
  EXPECT_EQ(h.train_loss.size(), h.stopped_epoch);
  EXPECT_EQ(h.validation_loss.size(), h.stopped_epoch);
  EXPECT_EQ(h.validation_metric.size(), h.stopped_epoch);
  EXPECT_LE(h.stopped_epoch, cfg.max_epochs);
  for (std::size_t i = 1; i < h.best_validation_loss.size(); ++i) {
    EXPECT_LE(h.best_validation_loss[i], h.best_validation_loss[i - 1]);
  }
  // Returned parameters are those of the best epoch.
  ASSERT_GE(h.best_epoch, 1u);
  EXPECT_DOUBLE_EQ(loss(t.head, val), h.validation_loss[h.best_epoch - 1]);
}

TEST(TrainHead, RidgeConvergesToUniqueOptimum) {
  Rng rng(21);
  auto train = random_set(rng, 200, 3, TaskKind::Regression, 1);
  for (std::size_t i = 0; i < train.size(); ++i) {
    train.targets[i] = 0.5 + 0.2 * train.row(i)[0] - 0.1 * train.row(i)[2];
  }
  TrainConfig cfg;
  cfg.l2_penalty = 0.01;
  cfg.max_epochs = 3000;
  cfg.early_stop_patience = 3000;
  cfg.batch_size = 200;
  const auto a = train_head(init_head(HeadKind::Linear, 3, 1, TaskKind::Regression, 1), train, train, cfg);
  cfg.seed = 99;
  const auto b = train_head(init_head(HeadKind::Linear, 3, 1, TaskKind::Regression, 2), train, train, cfg);
  for (std::size_t i = 0; i < a.head.params.size(); ++i) {
    EXPECT_NEAR(a.head.params[i], b.head.params[i], 1e-3);
  }
}

TEST(TrainHead, NonFiniteLossAborts) {
  const auto s = make_set(1, {{1e200}, {-1e200}}, {0.5, 0.5});
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.learning_rate = 1.0;
  try {
    train_head(init_head(HeadKind::Linear, 1, 1, TaskKind::Regression, 1), s, s, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(TrainHead, RejectsBadConfigAndShapes) {
  const auto s = make_set(2, {{1, 2}}, {0.5});
  TrainConfig cfg;
  cfg.learning_rate = 0;
  EXPECT_THROW(train_head(init_head(HeadKind::Linear, 2, 1, TaskKind::Regression, 1), s, s, cfg), Error);
  try {
    train_head(init_head(HeadKind::Linear, 3, 1, TaskKind::Regression, 1), s, s, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
}

TEST(Evaluate, AccuracyTieBreakAndMse) {
  Head c = init_head(HeadKind::Linear, 1, 2, TaskKind::Classification, 0);
  std::fill(c.params.begin(), c.params.end(), 0.0);
  const auto s = make_set(1, {{1}, {2}, {3}, {4}, {5}}, {0, 1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(evaluate(c, s).value, 3.0 / 5.0);
  EXPECT_EQ(evaluate(c, s).kind, MetricKind::Accuracy);

  c.params = {-1.0, 1.0, 2.5, -2.5};  // class 1 iff x > 2.5
  const auto perfect = make_set(1, {{1}, {2}, {3}, {4}}, {0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(evaluate(c, perfect).value, 1.0);

  Head r = init_head(HeadKind::Linear, 1, 1, TaskKind::Regression, 0);
  r.params = {0.0, 0.5};
  const auto m = evaluate(r, make_set(1, {{0}, {0}, {0}, {0}}, {0, 1, 0, 1}));
  EXPECT_EQ(m.kind, MetricKind::Mse);
  EXPECT_DOUBLE_EQ(m.value, 0.25);
}

TEST(Checkpoint, RoundTrip) {
  testing::TempDir dir;
  for (const auto kind : {HeadKind::Linear, HeadKind::Mlp1}) {
    const auto h = quantized(init_head(kind, 5, 3, TaskKind::Classification, 4, 7));
    save_head(h, dir / "h.l3hd");
    const auto loaded = load_head(dir / "h.l3hd");
    EXPECT_EQ(loaded, h);
    save_head(loaded, dir / "h2.l3hd");
    EXPECT_EQ(io::read_file(dir / "h.l3hd"), io::read_file(dir / "h2.l3hd"));
  }
  io::write_atomic(dir / "bad.l3hd", std::string("XXXX"));
  EXPECT_THROW(load_head(dir / "bad.l3hd"), Error);
}

}  // namespace
}  // namespace l3ens

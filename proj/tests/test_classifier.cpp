#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "slideprog/classifier.hpp"
#include "test_support.hpp"

using namespace slideprog;
using slideprog::testing::TempDir;

namespace {

/// Two Gaussian clusters in 20 dimensions, lifted to 512 by a fixed random map.
LabeledFeatures<float> toy_set(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<double> lift(512, 20);
  for (Eigen::Index i = 0; i < lift.size(); ++i) lift.data()[i] = rng.normal() / std::sqrt(20.0);
  Vector<double> center(20);
  for (Eigen::Index i = 0; i < 20; ++i) center(i) = rng.normal();
  LabeledFeatures<float> out;
  out.features.resize(512, static_cast<Eigen::Index>(n));
  Rng noise(seed + 1);
  for (std::size_t j = 0; j < n; ++j) {
    const int y = static_cast<int>(j % 2);
    Vector<double> z(20);
    for (Eigen::Index i = 0; i < 20; ++i) z(i) = (y ? 1.0 : -1.0) * center(i) + 0.3 * noise.normal();
    out.features.col(static_cast<Eigen::Index>(j)) = (lift * z).cast<float>();
    out.labels.push_back(y);
  }
  return out;
}

}  // namespace

TEST_CASE("classifier shapes follow the scale count") {
  const auto mono = init_classifier<float>(1, 3);
  CHECK(mono.W1.rows() == 512);
  CHECK(mono.W1.cols() == 4096);
  CHECK(mono.W2.rows() == 4096);
  CHECK(mono.W2.cols() == 4096);
  CHECK(mono.W3.rows() == 4096);
  CHECK(mono.W3.cols() == 2);
  const auto tri = init_classifier<float>(3, 3, 64);
  CHECK(tri.input_dim() == 1536);
  CHECK(tri.output_dim() == 2);
  CHECK(init_classifier<float>(2, 3, 64).input_dim() == 1024);
  CHECK(init_classifier<float>(1, 3, 64) == init_classifier<float>(1, 3, 64));
  CHECK_FALSE(init_classifier<float>(1, 3, 64) == init_classifier<float>(1, 4, 64));
  CHECK_THROWS_AS(init_classifier<float>(4, 3), ValidationError);
  CHECK_THROWS_AS(init_classifier<float>(0, 3), ValidationError);
}

TEST_CASE("probabilities and patch decisions") {
  const auto zero = ClassifierParams<float>::zeros(512, 8, 8);
  const std::vector<float> x(512, 1.5f);
  const auto p = predict_probabilities(zero, x);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
  CHECK(predict_patch(zero, x) == 1);
  CHECK(decide({0.9, 0.1}) == 0);
  CHECK(decide({0.1, 0.9}) == 1);
  CHECK(decide({0.5, 0.5}) == 1);
  CHECK_THROWS_AS(predict_probabilities(zero, std::vector<float>(511)), ValidationError);

  const auto net = init_classifier<double>(1, 9, 32);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    std::vector<float> f(512);
    for (float& v : f) v = static_cast<float>(3.0 * rng.normal());
    const auto q = predict_probabilities(net, f);
    REQUIRE(std::abs(q[0] + q[1] - 1.0) < 1e-9);
  }
}

TEST_CASE("analytic gradients match central differences") {
  auto p = init_mlp<double>(8, 16, 16, 5);
  Rng rng(6);
  for (auto* b : {&p.b1, &p.b2, &p.b3})
    for (Eigen::Index i = 0; i < b->size(); ++i) (*b)(i) = 0.1 * rng.normal();
  Matrix<double> X(8, 6);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
  const std::vector<int> y{0, 1, 1, 0, 1, 0};
  ForwardCache<double> cache;
  const auto loss = [&](const ClassifierParams<double>& q) {
    ForwardCache<double> c;
    forward<double>(q, X, Mode::eval, 0.0, nullptr, c);
    return cross_entropy(c, y);
  };
  forward<double>(p, X, Mode::eval, 0.0, nullptr, cache);
  auto grad = p;
  backward<double>(p, cache, y, grad);

  const double h = 1e-4;
  double worst = 0.0;
  const auto check = [&](auto& param, const auto& analytic) {
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const double saved = param.data()[i];
      param.data()[i] = saved + h;
      const double up = loss(p);
      param.data()[i] = saved - h;
      const double down = loss(p);
      param.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
    }
  };
  check(p.W1, grad.W1);
  check(p.b1, grad.b1);
  check(p.W2, grad.W2);
  check(p.b2, grad.b2);
  check(p.W3, grad.W3);
  check(p.b3, grad.b3);
  CHECK(worst < 1e-4);
}

TEST_CASE("inverted dropout preserves expected activations") {
  const auto p = init_mlp<double>(16, 32, 32, 8);
  Matrix<double> X(16, 1);
  Rng rng(3);
  for (Eigen::Index i = 0; i < 16; ++i) X(i, 0) = rng.normal();
  ForwardCache<double> eval;
  forward<double>(p, X, Mode::eval, 0.0, nullptr, eval);
  const int draws = 10000;
  Vector<double> sum = Vector<double>::Zero(32), sq = Vector<double>::Zero(32);
  ForwardCache<double> cache;
  Rng noise(4);
  for (int d = 0; d < draws; ++d) {
    forward<double>(p, X, Mode::train, 0.5, &noise, cache);
    sum += cache.H1.col(0);
    sq += cache.H1.col(0).cwiseProduct(cache.H1.col(0));
  }
  int active = 0;
  for (Eigen::Index i = 0; i < 32; ++i) {
    const double expected = eval.H1(i, 0);
    if (expected == 0.0) {
      CHECK(sum(i) == 0.0);
      continue;
    }
    ++active;
    const double mean = sum(i) / draws;
    const double var = sq(i) / draws - mean * mean;
    const double se = std::sqrt(var / draws);
    INFO("unit " << i);
    CHECK(std::abs(mean - expected) <= 3 * se);
  }
  CHECK(active > 0);
  CHECK_THROWS_AS(forward<double>(p, X, Mode::train, 0.5, nullptr, cache), ValidationError);
}

TEST_CASE("momentum update rules") {
  auto p = init_mlp<float>(8, 16, 16, 1);
  auto grad = init_mlp<float>(8, 16, 16, 2);
  auto velocity = init_mlp<float>(8, 16, 16, 3);
  const auto before = p;
  auto plain = p;
  momentum_step(p, velocity, grad, 0.01, 0.0);
  const auto descend = [](auto& theta, const auto& g) {
    const auto step = (-(0.01f * g)).eval();
    theta += step;
  };
  descend(plain.W1, grad.W1);
  descend(plain.W2, grad.W2);
  descend(plain.W3, grad.W3);
  descend(plain.b1, grad.b1);
  descend(plain.b2, grad.b2);
  descend(plain.b3, grad.b3);
  CHECK(p == plain);

  auto q = before;
  auto v = ClassifierParams<float>::zeros(8, 16, 16);
  momentum_step(q, v, grad, 0.1, 0.9);
  momentum_step(q, v, grad, 0.1, 0.9);
  // Two steps with a constant gradient: v1 = -lr g, v2 = -lr g (1 + mu).
  const Matrix<float> expected = before.W3 - 0.1f * grad.W3 - (0.9f * 0.1f + 0.1f) * grad.W3;
  CHECK(q.W3.isApprox(expected, 1e-5f));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto data = toy_set(64, 1);
  const auto init = init_classifier<float>(1, 11, 32);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 5;
  cfg.patience = 10;
  cfg.seed = 2;
  const auto result = train(init, data, data, cfg);
  CHECK(result.params == init);
  CHECK(result.history.train_loss.size() == 5);
  CHECK(result.history.stop_reason == StopReason::max_epochs);
}

TEST_CASE("separable toy set is learned within 20 epochs") {
  const auto train_set = toy_set(200, 21);
  const auto val_set = toy_set(100, 21);
  TrainConfig cfg;
  cfg.seed = 5;
  const auto result = train(init_classifier<float>(1, 5), train_set, val_set, cfg);
  CHECK(result.history.stopped_epoch < 20);
  CHECK(evaluate(result.params, train_set).accuracy == 1.0);
  CHECK(result.history.val_loss.front() > result.history.val_loss[static_cast<std::size_t>(result.history.best_epoch)]);
}

TEST_CASE("early stopping rule trace") {
  EarlyStopping stopper(2, 1e-4);
  CHECK_FALSE(stopper.update(1.0));
  CHECK_FALSE(stopper.update(0.9));
  CHECK_FALSE(stopper.update(0.9));
  CHECK(stopper.update(0.9));
  CHECK(stopper.best_epoch() == 1);
  CHECK(stopper.best() == 0.9);

  EarlyStopping small_gain(1, 0.1);
  CHECK_FALSE(small_gain.update(1.0));
  CHECK(small_gain.update(0.95));  // improvement below min_delta
}

TEST_CASE("training restores the best epoch and reports stopping") {
  const auto train_set = toy_set(64, 3);
  auto val_set = toy_set(64, 4);
  for (auto& y : val_set.labels) y = 1 - y;  // anti-correlated validation: loss rises as training fits
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.patience = 2;
  cfg.seed = 9;
  const auto init = init_classifier<float>(1, 8, 64);
  const auto result = train(init, train_set, val_set, cfg);
  CHECK(result.history.stop_reason == StopReason::early_stopped);
  CHECK(result.history.stopped_epoch == result.history.best_epoch + 2);
  const auto best_loss = result.history.val_loss[static_cast<std::size_t>(result.history.best_epoch)];
  CHECK(evaluate(result.params, val_set).loss == Catch::Approx(best_loss).epsilon(1e-6));
}

TEST_CASE("training is deterministic") {
  const auto data = toy_set(96, 7);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 13;
  const auto init = init_classifier<float>(1, 2, 64);
  const auto a = train(init, data, data, cfg);
  const auto b = train(init, data, data, cfg);
  CHECK(a.history == b.history);
  CHECK(a.params == b.params);
  cfg.seed = 14;
  CHECK_FALSE(train(init, data, data, cfg).history == a.history);
}

TEST_CASE("augmenter supplies per-epoch features") {
  const auto data = toy_set(32, 5);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 5;
  std::vector<int> epochs;
  const Augmenter<float> augment = [&](int epoch) {
    epochs.push_back(epoch);
    return data.features;
  };
  const auto init = init_classifier<float>(1, 2, 16);
  const auto with = train(init, data, data, cfg, augment);
  CHECK(epochs == std::vector<int>{0, 1, 2});
  CHECK(with.history == train(init, data, data, cfg).history);
  cfg.augmentation_enabled = false;
  epochs.clear();
  train(init, data, data, cfg, augment);
  CHECK(epochs.empty());
  const Augmenter<float> wrong = [&](int) { return Matrix<float>(512, 3); };
  cfg.augmentation_enabled = true;
  CHECK_THROWS_AS(train(init, data, data, cfg, wrong), StageError);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto data = toy_set(32, 8);
  data.features(0, 0) = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  CHECK_THROWS_WITH(train(init_classifier<float>(1, 2, 16), data, toy_set(8, 9), cfg),
                    Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("training input validation") {
  const auto data = toy_set(16, 1);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(init_classifier<float>(2, 2, 16), data, data, cfg), ValidationError);
  CHECK_THROWS_AS(train(init_classifier<float>(1, 2, 16), data, LabeledFeatures<float>{}, cfg), ValidationError);
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(TrainConfig::default_learning_rate(1) == 1e-4);
  CHECK(TrainConfig::default_learning_rate(3) == 1e-3);
}

TEST_CASE("checkpoint round trip is exact") {
  TempDir dir("ckpt");
  const auto p = init_classifier<float>(2, 17, 48);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.seed = 99;
  cfg.augmentation_enabled = false;
  write_checkpoint(dir / "c.ckpt", p, cfg);
  const auto back = read_checkpoint<float>(dir / "c.ckpt");
  CHECK(back.params == p);
  CHECK(back.config.learning_rate == 1e-3);
  CHECK(back.config.seed == 99);
  CHECK_FALSE(back.config.augmentation_enabled);
  CHECK_THROWS_AS(read_checkpoint<double>(dir / "c.ckpt"), StageError);
  CHECK_THROWS_AS(read_checkpoint<float>(dir / "none.ckpt"), StageError);
}

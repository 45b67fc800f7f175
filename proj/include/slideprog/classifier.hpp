#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "slideprog/core.hpp"
#include "slideprog/embedding.hpp"

namespace slideprog {

inline constexpr std::int64_t kDefaultHiddenWidth = 4096;
inline constexpr std::int64_t kClassCount = 2;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// input -> hidden1 -> hidden2 -> 2. Weight matrices are stored (fan_in x fan_out).
template <typename Scalar>
struct ClassifierParams {
  Matrix<Scalar> W1, W2, W3;
  Vector<Scalar> b1, b2, b3;

  std::int64_t input_dim() const { return W1.rows(); }
  std::int64_t hidden1() const { return W1.cols(); }
  std::int64_t hidden2() const { return W2.cols(); }
  std::int64_t output_dim() const { return W3.cols(); }

  static ClassifierParams zeros(std::int64_t in, std::int64_t h1, std::int64_t h2, std::int64_t out = kClassCount) {
    ClassifierParams p;
    p.W1 = Matrix<Scalar>::Zero(in, h1);
    p.W2 = Matrix<Scalar>::Zero(h1, h2);
    p.W3 = Matrix<Scalar>::Zero(h2, out);
    p.b1 = Vector<Scalar>::Zero(h1);
    p.b2 = Vector<Scalar>::Zero(h2);
    p.b3 = Vector<Scalar>::Zero(out);
    return p;
  }

  bool all_finite() const {
    return W1.allFinite() && W2.allFinite() && W3.allFinite() && b1.allFinite() && b2.allFinite() &&
           b3.allFinite();
  }

  friend bool operator==(const ClassifierParams& a, const ClassifierParams& b) {
    const auto same = [](const auto& x, const auto& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return same(a.W1, b.W1) && same(a.W2, b.W2) && same(a.W3, b.W3) && same(a.b1, b.b1) &&
           same(a.b2, b.b2) && same(a.b3, b.b3);
  }
};

/// N(0, 1/fan_in) weights, zero biases.
template <typename Scalar = float>
ClassifierParams<Scalar> init_mlp(std::int64_t in, std::int64_t h1, std::int64_t h2, std::uint64_t seed,
                                  std::int64_t out = kClassCount) {
  auto p = ClassifierParams<Scalar>::zeros(in, h1, h2, out);
  Rng rng(derive_seed(seed, "classifier-init"));
  const auto fill = [&rng](Matrix<Scalar>& w) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(rng.normal() * sd);
  };
  fill(p.W1);
  fill(p.W2);
  fill(p.W3);
  return p;
}

/// Classifier for 1, 2 or 3 concatenated 512-d embeddings.
template <typename Scalar = float>
ClassifierParams<Scalar> init_classifier(int scale_count, std::uint64_t seed,
                                         std::int64_t hidden_width = kDefaultHiddenWidth) {
  if (scale_count < 1 || scale_count > 3) throw ValidationError("classifier supports 1 to 3 scales");
  if (hidden_width < 1) throw ValidationError("hidden width must be positive");
  return init_mlp<Scalar>(static_cast<std::int64_t>(kFeatureDim) * scale_count, hidden_width, hidden_width, seed);
}

enum class Mode : std::uint8_t { train, eval };

template <typename Scalar>
struct ForwardCache {
  Matrix<Scalar> X;       // in x B
  Matrix<Scalar> Z1, H1;  // pre-activation, post ReLU and dropout
  Matrix<Scalar> Z2, H2;
  Matrix<Scalar> D1, D2;  // inverted-dropout multipliers (empty in eval mode)
  Matrix<Scalar> logits;  // 2 x B
  Matrix<Scalar> probs;   // 2 x B
};

namespace detail {

template <typename Scalar>
void dropout_mask(Matrix<Scalar>& mask, Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  const double keep = 1.0 - rate;
  const auto scale = static_cast<Scalar>(1.0 / keep);
  mask.resize(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = rng.uniform() < keep ? scale : Scalar(0);
}

template <typename Scalar>
void softmax_columns(const Matrix<Scalar>& logits, Matrix<Scalar>& probs) {
  probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Scalar mx = logits.col(j).maxCoeff();
    Scalar total = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) total += probs(i, j) = std::exp(logits(i, j) - mx);
    probs.col(j) /= total;
  }
}

}  // namespace detail

/// Batch forward pass. Columns of X are samples. In train mode inverted dropout
/// (scaled by 1/keep) is applied to both hidden activations using `rng`.
template <typename Scalar>
void forward(const ClassifierParams<Scalar>& p, const Eigen::Ref<const Matrix<Scalar>>& X, Mode mode,
             double dropout_rate, Rng* rng, ForwardCache<Scalar>& cache) {
  if (X.rows() != p.input_dim())
    throw ValidationError("feature length " + std::to_string(X.rows()) + " does not match classifier input " +
                          std::to_string(p.input_dim()));
  const bool drop = mode == Mode::train && dropout_rate > 0.0;
  if (drop && rng == nullptr) throw ValidationError("train-mode dropout needs a noise source");
  cache.X = X;
  cache.Z1.noalias() = p.W1.transpose() * X;
  cache.Z1.colwise() += p.b1;
  cache.H1 = cache.Z1.cwiseMax(Scalar(0));
  if (drop) {
    detail::dropout_mask(cache.D1, cache.H1.rows(), cache.H1.cols(), dropout_rate, *rng);
    cache.H1.array() *= cache.D1.array();
  } else {
    cache.D1.resize(0, 0);
  }
  cache.Z2.noalias() = p.W2.transpose() * cache.H1;
  cache.Z2.colwise() += p.b2;
  cache.H2 = cache.Z2.cwiseMax(Scalar(0));
  if (drop) {
    detail::dropout_mask(cache.D2, cache.H2.rows(), cache.H2.cols(), dropout_rate, *rng);
    cache.H2.array() *= cache.D2.array();
  } else {
    cache.D2.resize(0, 0);
  }
  cache.logits.noalias() = p.W3.transpose() * cache.H2;
  cache.logits.colwise() += p.b3;
  detail::softmax_columns(cache.logits, cache.probs);
}

/// Eval-mode class probabilities for one feature vector.
template <typename Scalar>
std::array<double, 2> predict_probabilities(const ClassifierParams<Scalar>& p, std::span<const float> feature) {
  Matrix<Scalar> x(static_cast<Eigen::Index>(feature.size()), 1);
  for (std::size_t i = 0; i < feature.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<Scalar>(feature[i]);
  ForwardCache<Scalar> cache;
  forward<Scalar>(p, x, Mode::eval, 0.0, nullptr, cache);
  return {static_cast<double>(cache.probs(0, 0)), static_cast<double>(cache.probs(1, 0))};
}

/// y_p: 1 (bad) when P(bad) >= P(good), ties going to bad.
inline int decide(const std::array<double, 2>& probs) { return probs[1] >= probs[0] ? 1 : 0; }

template <typename Scalar>
int predict_patch(const ClassifierParams<Scalar>& p, std::span<const float> feature) {
  return decide(predict_probabilities(p, feature));
}

/// Mean softmax cross-entropy of a forward pass against integer labels.
template <typename Scalar>
double cross_entropy(const ForwardCache<Scalar>& cache, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < cache.logits.cols(); ++j) {
    const double mx = static_cast<double>(cache.logits.col(j).maxCoeff());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < cache.logits.rows(); ++i) sum += std::exp(static_cast<double>(cache.logits(i, j)) - mx);
    total += mx + std::log(sum) - static_cast<double>(cache.logits(labels[static_cast<std::size_t>(j)], j));
  }
  return total / static_cast<double>(cache.logits.cols());
}

/// Gradient of the mean cross-entropy with respect to every parameter group.
template <typename Scalar>
void backward(const ClassifierParams<Scalar>& p, const ForwardCache<Scalar>& cache, std::span<const int> labels,
              ClassifierParams<Scalar>& grad) {
  const Eigen::Index batch = cache.X.cols();
  Matrix<Scalar> dZ3 = cache.probs;
  for (Eigen::Index j = 0; j < batch; ++j) dZ3(labels[static_cast<std::size_t>(j)], j) -= Scalar(1);
  dZ3 /= static_cast<Scalar>(batch);

  grad.W3.noalias() = cache.H2 * dZ3.transpose();
  grad.b3 = dZ3.rowwise().sum();

  Matrix<Scalar> dZ2 = p.W3 * dZ3;
  if (cache.D2.size() != 0) dZ2.array() *= cache.D2.array();
  dZ2.array() *= (cache.Z2.array() > Scalar(0)).template cast<Scalar>();
  grad.W2.noalias() = cache.H1 * dZ2.transpose();
  grad.b2 = dZ2.rowwise().sum();

  Matrix<Scalar> dZ1 = p.W2 * dZ2;
  if (cache.D1.size() != 0) dZ1.array() *= cache.D1.array();
  dZ1.array() *= (cache.Z1.array() > Scalar(0)).template cast<Scalar>();
  grad.W1.noalias() = cache.X * dZ1.transpose();
  grad.b1 = dZ1.rowwise().sum();
}

/// Classical momentum: v <- mu v - lr g, theta <- theta + v.
template <typename Scalar>
void momentum_step(ClassifierParams<Scalar>& params, ClassifierParams<Scalar>& velocity,
                   const ClassifierParams<Scalar>& grad, double learning_rate, double momentum) {
  const auto lr = static_cast<Scalar>(learning_rate);
  const auto mu = static_cast<Scalar>(momentum);
  const auto step = [lr, mu](auto& theta, auto& v, const auto& g) {
    v = mu * v - lr * g;
    theta += v;
  };
  step(params.W1, velocity.W1, grad.W1);
  step(params.b1, velocity.b1, grad.b1);
  step(params.W2, velocity.W2, grad.W2);
  step(params.b2, velocity.b2, grad.b2);
  step(params.W3, velocity.W3, grad.W3);
  step(params.b3, velocity.b3, grad.b3);
}

struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double dropout_rate = 0.5;
  int max_epochs = 20;
  int patience = 3;
  double min_delta = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool augmentation_enabled = true;
  double convergence_loss = 1e-5;  // training loss below this counts as converged

  /// Learning rate by scale count: 1e-4 for a single scale, 1e-3 otherwise.
  static double default_learning_rate(int scale_count) { return scale_count == 1 ? 1e-4 : 1e-3; }

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate must lie in [0, 1)");
    if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
    if (patience < 1) throw ValidationError("patience must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  }
};

enum class StopReason : std::uint8_t { converged, early_stopped, max_epochs };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::converged: return "converged";
    case StopReason::early_stopped: return "early_stopped";
    case StopReason::max_epochs: return "max_epochs";
  }
  return "?";
}

/// Epochs are indexed from 0; stopped_epoch is the index of the last epoch run.
struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
  int stopped_epoch = 0;
  int best_epoch = 0;
  StopReason stop_reason = StopReason::max_epochs;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

/// Stops once validation loss has failed to improve on the best value by more than
/// min_delta for `patience` consecutive epochs.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Feed one epoch's validation loss; returns true when training should stop.
  bool update(double val_loss) {
    ++epoch_;
    if (val_loss < best_ - min_delta_) {
      best_ = val_loss;
      best_epoch_ = epoch_;
      wait_ = 0;
      improved_ = true;
      return false;
    }
    improved_ = false;
    return ++wait_ >= patience_;
  }

  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int epoch_ = -1;
  int best_epoch_ = 0;
  int wait_ = 0;
  bool improved_ = false;
};

/// Feature matrix (columns are samples) with integer labels (1 = bad).
template <typename Scalar>
struct LabeledFeatures {
  Matrix<Scalar> features;
  std::vector<int> labels;
  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

/// Supplies a fresh, augmented training feature matrix for an epoch.
template <typename Scalar>
using Augmenter = std::function<Matrix<Scalar>(int epoch)>;

template <typename Scalar>
struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
};

template <typename Scalar>
EvalSummary<Scalar> evaluate(const ClassifierParams<Scalar>& p, const LabeledFeatures<Scalar>& data,
                             Eigen::Index chunk = 256) {
  EvalSummary<Scalar> out;
  ForwardCache<Scalar> cache;
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  for (Eigen::Index start = 0; start < data.features.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, data.features.cols() - start);
    forward<Scalar>(p, data.features.middleCols(start, n), Mode::eval, 0.0, nullptr, cache);
    const std::span<const int> labels(data.labels.data() + start, static_cast<std::size_t>(n));
    loss_sum += cross_entropy(cache, labels) * static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const int y = decide({static_cast<double>(cache.probs(0, j)), static_cast<double>(cache.probs(1, j))});
      out.predictions.push_back(y);
      correct += y == labels[static_cast<std::size_t>(j)];
    }
  }
  out.loss = loss_sum / static_cast<double>(data.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

template <typename Scalar>
struct TrainResult {
  ClassifierParams<Scalar> params;
  TrainHistory history;
};

/// Mini-batch SGD with momentum on cross-entropy, early stopping on validation
/// loss, and restoration of the best-validation epoch's parameters.
template <typename Scalar>
TrainResult<Scalar> train(ClassifierParams<Scalar> params, const LabeledFeatures<Scalar>& train_set,
                          const LabeledFeatures<Scalar>& val_set, const TrainConfig& cfg,
                          const Augmenter<Scalar>& augment = {}) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw ValidationError("train and validation sets must be non-empty");
  if (train_set.features.rows() != params.input_dim() || val_set.features.rows() != params.input_dim())
    throw ValidationError("feature dimension does not match classifier input");

  Rng order_rng(derive_seed(cfg.seed, "batch-order"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  auto velocity = ClassifierParams<Scalar>::zeros(params.input_dim(), params.hidden1(), params.hidden2(),
                                                  params.output_dim());
  auto grad = velocity;
  ClassifierParams<Scalar> best = params;
  TrainHistory history;
  EarlyStopping stopper(cfg.patience, cfg.min_delta);
  ForwardCache<Scalar> cache;
  std::vector<std::int64_t> order(static_cast<std::size_t>(train_set.size()));
  Matrix<Scalar> batch_x;
  std::vector<int> batch_y;
  history.stop_reason = StopReason::max_epochs;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Matrix<Scalar> augmented;
    if (augment && cfg.augmentation_enabled) {
      augmented = augment(epoch);
      if (augmented.rows() != train_set.features.rows() || augmented.cols() != train_set.features.cols())
        throw StageError("augmenter returned a matrix of the wrong shape");
    }
    const Matrix<Scalar>& epoch_features = augmented.size() != 0 ? augmented : train_set.features;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    order_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      batch_x.resize(epoch_features.rows(), static_cast<Eigen::Index>(n));
      batch_y.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        batch_x.col(static_cast<Eigen::Index>(j)) = epoch_features.col(order[start + j]);
        batch_y[j] = train_set.labels[static_cast<std::size_t>(order[start + j])];
      }
      forward<Scalar>(params, batch_x, Mode::train, cfg.dropout_rate, &dropout_rng, cache);
      const double loss = cross_entropy(cache, batch_y);
      if (!std::isfinite(loss))
        throw StageError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                         std::to_string(start) + " (learning rate " + std::to_string(cfg.learning_rate) + ")");
      loss_sum += loss * static_cast<double>(n);
      backward<Scalar>(params, cache, batch_y, grad);
      momentum_step(params, velocity, grad, cfg.learning_rate, cfg.momentum);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    const auto val = evaluate(params, val_set);
    if (!std::isfinite(val.loss)) throw StageError("non-finite validation loss at epoch " + std::to_string(epoch));
    history.train_loss.push_back(train_loss);
    history.val_loss.push_back(val.loss);
    history.val_accuracy.push_back(val.accuracy);
    history.stopped_epoch = epoch;

    const bool stop = stopper.update(val.loss);
    if (stopper.improved()) best = params;
    if (stop) {
      history.stop_reason = StopReason::early_stopped;
      break;
    }
    if (train_loss < cfg.convergence_loss) {
      history.stop_reason = StopReason::converged;
      break;
    }
  }
  history.best_epoch = stopper.best_epoch();
  return {std::move(best), std::move(history)};
}

// Checkpoint (little endian):
//   "SPCK" | u32 version | u32 scalar bytes | u64 in, h1, h2, out | TrainConfig | u64 seed
//   | W1 b1 W2 b2 W3 b3 as column-major scalars

template <typename Scalar>
void write_checkpoint(const std::filesystem::path& path, const ClassifierParams<Scalar>& p, const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write checkpoint " + path.string());
  out.write("SPCK", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, sizeof(Scalar));
  for (std::int64_t d : {p.input_dim(), p.hidden1(), p.hidden2(), p.output_dim()})
    detail::put_u64(out, static_cast<std::uint64_t>(d));
  detail::put_f64(out, cfg.learning_rate);
  detail::put_f64(out, cfg.momentum);
  detail::put_f64(out, cfg.dropout_rate);
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.max_epochs));
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.patience));
  detail::put_f64(out, cfg.min_delta);
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.batch_size));
  detail::put_u32(out, cfg.augmentation_enabled ? 1u : 0u);
  detail::put_f64(out, cfg.convergence_loss);
  detail::put_u64(out, cfg.seed);
  const auto dump = [&out](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if constexpr (sizeof(Scalar) == 4)
        detail::put_f32(out, static_cast<float>(m.data()[i]));
      else
        detail::put_f64(out, static_cast<double>(m.data()[i]));
    }
  };
  dump(p.W1);
  dump(p.b1);
  dump(p.W2);
  dump(p.b2);
  dump(p.W3);
  dump(p.b3);
  if (!out) throw StageError("error writing checkpoint " + path.string());
}

template <typename Scalar>
struct Checkpoint {
  ClassifierParams<Scalar> params;
  TrainConfig config;
};

template <typename Scalar>
Checkpoint<Scalar> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot read checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SPCK", 4) != 0) throw StageError(path.string() + ": bad magic");
  if (detail::get_u32(in) != 1) throw StageError(path.string() + ": unsupported checkpoint version");
  if (detail::get_u32(in) != sizeof(Scalar)) throw StageError(path.string() + ": scalar width mismatch");
  std::int64_t dims[4];
  for (auto& d : dims) d = static_cast<std::int64_t>(detail::get_u64(in));
  Checkpoint<Scalar> ck;
  ck.params = ClassifierParams<Scalar>::zeros(dims[0], dims[1], dims[2], dims[3]);
  TrainConfig& cfg = ck.config;
  cfg.learning_rate = detail::get_f64(in);
  cfg.momentum = detail::get_f64(in);
  cfg.dropout_rate = detail::get_f64(in);
  cfg.max_epochs = static_cast<int>(detail::get_u32(in));
  cfg.patience = static_cast<int>(detail::get_u32(in));
  cfg.min_delta = detail::get_f64(in);
  cfg.batch_size = static_cast<int>(detail::get_u32(in));
  cfg.augmentation_enabled = detail::get_u32(in) != 0;
  cfg.convergence_loss = detail::get_f64(in);
  cfg.seed = detail::get_u64(in);
  const auto load = [&in](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if constexpr (sizeof(Scalar) == 4)
        m.data()[i] = static_cast<Scalar>(detail::get_f32(in));
      else
        m.data()[i] = static_cast<Scalar>(detail::get_f64(in));
    }
  };
  load(ck.params.W1);
  load(ck.params.b1);
  load(ck.params.W2);
  load(ck.params.b2);
  load(ck.params.W3);
  load(ck.params.b3);
  return ck;
}

}  // namespace slideprog

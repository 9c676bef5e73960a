#pragma once

// Teacher-forced training with AdaDelta, global-norm gradient clipping and
// early stopping on validation sequence error rate.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "kzr/checkpoint.hpp"
#include "kzr/dataset.hpp"
#include "kzr/metrics.hpp"
#include "kzr/model.hpp"
#include "kzr/optim.hpp"

namespace kzr {

/// Sum over steps of -log p(target token). Step t consumes the ground-truth
/// token t-1 (<S> first) and the final step predicts <E>.
template <typename T>
Tensor<T> sequence_loss(const Model<T>& model, const PreparedFeatures<T>& features,
                        const std::vector<std::size_t>& target) {
  if (target.empty()) throw std::invalid_argument("sequence_loss: empty target");
  const auto& dec = model.decoder();
  DecoderState<T> state = dec.initial_state(features);
  std::size_t prev = Vocabulary::kStart;
  Tensor<T> total;
  for (std::size_t t = 0; t <= target.size(); ++t) {
    const std::size_t gold = t < target.size() ? target[t] : Vocabulary::kEnd;
    if (t < target.size() && Vocabulary::is_reserved(gold)) {
      throw std::invalid_argument("sequence_loss: reserved token inside target");
    }
    StepOutput<T> out = dec.step(features, state, prev);
    Tensor<T> ce = cross_entropy(out.logits, gold);
    if (!std::isfinite(static_cast<double>(ce.item()))) {
      throw NumericError("sequence_loss: non-finite loss at step " + std::to_string(t + 1));
    }
    total = total.defined() ? add(total, ce) : ce;
    state = std::move(out.state);
    prev = gold;
  }
  return total;
}

template <typename T>
Tensor<T> sample_loss(const Model<T>& model, const Sample& s) {
  return sequence_loss(model, model.features(image_tensor<T>(s.image)), s.target);
}

/// Greedy decoding of every sample, scored with CER/SER.
template <typename T>
EvalReport evaluate_model(const Model<T>& model, const std::vector<Sample>& samples) {
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) pairs.emplace_back(s.target, model.recognize(s.image).tokens);
  return evaluate(pairs);
}

/// Stops once `patience` consecutive epochs fail to lower the best SER.
/// An epoch that only ties the best does not reset the counter.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience, std::optional<double> best = std::nullopt)
      : patience_(patience), best_(best) {}

  /// Records one epoch; returns true when it set a new best.
  bool update(double ser) {
    if (!best_ || ser < *best_) {
      best_ = ser;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  std::optional<double> best() const { return best_; }
  std::size_t stale_epochs() const { return stale_; }

 private:
  std::size_t patience_;
  std::optional<double> best_;
  std::size_t stale_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // summed over all training samples
  double val_cer = 0.0;
  double val_ser = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

template <typename T>
struct TrainResult {
  Checkpoint<T> best;
  std::vector<EpochLog> log;
  bool stopped_early = false;
};

template <typename T>
struct TrainHooks {
  // Replaces greedy validation decoding; receives the 1-based epoch.
  std::function<EvalReport(const Model<T>&, std::size_t)> validate;
  std::function<void(const EpochLog&)> on_epoch;
};

template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, RunConfig config)
      : model_(model),
        config_(std::move(config)),
        opt_(AdaDeltaState<T>::for_params(model.params())) {
    config_.train.validate();
  }

  /// Continues from a checkpoint: parameters, optimizer state, epoch
  /// counter and best SER.
  void resume(const Checkpoint<T>& c) {
    load_parameters(model_, c);
    opt_ = optimizer_state(c);
    if (opt_.mean_sq_grad.size() != model_.params().size()) {
      opt_ = AdaDeltaState<T>::for_params(model_.params());
    }
    epoch_ = c.epoch;
    best_ser_ = c.best_val_ser;
  }

  std::uint64_t epoch() const { return epoch_; }
  const AdaDeltaState<T>& optimizer() const { return opt_; }

  Checkpoint<T> snapshot() const {
    return make_checkpoint(model_, config_, opt_, epoch_, best_ser_);
  }

  /// Forward/backward over the batch, then clip and apply one update.
  /// Returns the summed loss.
  double train_batch(const std::vector<const Sample*>& batch) {
    if (batch.empty()) return 0.0;
    const std::size_t h = batch.front()->image.height, w = batch.front()->image.width;
    for (const auto* s : batch) {
      if (s->image.height != h || s->image.width != w) {
        throw DimensionError("train: batch mixes image sizes " + std::to_string(h) + "x" +
                             std::to_string(w) + " and " + std::to_string(s->image.height) + "x" +
                             std::to_string(s->image.width));
      }
    }
    auto& store = model_.params();
    store.zero_grad();
    double total = 0.0;
    for (const auto* s : batch) {
      Tensor<T> loss = sample_loss(model_, *s);
      total += static_cast<double>(loss.item());
      loss.backward();
    }
    std::vector<std::span<T>> grads;
    for (std::size_t i = 0; i < store.size(); ++i) grads.push_back(store[i].mutable_grad());
    last_grad_norm_ = clip_gradients(grads, config_.train.clip_norm);
    for (std::size_t i = 0; i < store.size(); ++i) {
      adadelta_step<T>(store[i].mutable_data(), grads[i], opt_.mean_sq_grad[i],
                       opt_.mean_sq_delta[i], config_.train.rho, config_.train.epsilon);
    }
    return total;
  }

  double last_grad_norm() const { return last_grad_norm_; }

  /// Runs epochs until max_epochs (counted from the current epoch) or until
  /// early stopping triggers. The model ends up holding the best weights.
  TrainResult<T> run(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                     const TrainHooks<T>& hooks = {}) {
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    if (val_set.empty() && !hooks.validate) throw std::invalid_argument("train: empty validation set");
    const auto& tc = config_.train;
    TrainResult<T> result;
    result.best = snapshot();
    EarlyStopping stopper(tc.patience_epochs, best_ser_);

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t e = 0; e < tc.max_epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      ++epoch_;
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(mix_epoch_seed(tc.seed, epoch_));
      rng.shuffle(order.begin(), order.end());

      EpochLog log;
      log.epoch = epoch_;
      for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
        std::vector<const Sample*> batch;
        for (std::size_t k = b; k < std::min(order.size(), b + tc.batch_size); ++k)
          batch.push_back(&train_set[order[k]]);
        try {
          log.train_loss += train_batch(batch);
        } catch (const NumericError& err) {
          throw NumericError("train: divergence at epoch " + std::to_string(epoch_) + ", batch " +
                             std::to_string(b / tc.batch_size) + ": " + err.what());
        }
      }
      const EvalReport report =
          hooks.validate ? hooks.validate(model_, epoch_) : evaluate_model(model_, val_set);
      log.val_cer = report.cer;
      log.val_ser = report.ser;
      log.improved = stopper.update(report.ser);
      best_ser_ = stopper.best();
      if (log.improved) result.best = snapshot();
      log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.log.push_back(log);
      if (hooks.on_epoch) hooks.on_epoch(log);
      if (stopper.should_stop()) {
        result.stopped_early = true;
        break;
      }
    }
    load_parameters(model_, result.best);
    result.best.best_val_ser = best_ser_;
    return result;
  }

 private:
  static std::uint64_t mix_epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + epoch;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  Model<T>& model_;
  RunConfig config_;
  AdaDeltaState<T> opt_;
  std::uint64_t epoch_ = 0;
  std::optional<double> best_ser_;
  double last_grad_norm_ = 0.0;
};

/// One-call training from scratch or from the model's current weights.
template <typename T>
TrainResult<T> train(Model<T>& model, const std::vector<Sample>& train_set,
                     const std::vector<Sample>& val_set, const RunConfig& config,
                     const TrainHooks<T>& hooks = {}) {
  Trainer<T> trainer(model, config);
  return trainer.run(train_set, val_set, hooks);
}

}  // namespace kzr

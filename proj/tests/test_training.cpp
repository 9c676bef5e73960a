#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "kzr/synth.hpp"
#include "kzr/trainer.hpp"

using namespace kzr;

namespace {

RunConfig small_run() {
  RunConfig rc;
  rc.encoder.growth_rate = 4;
  rc.encoder.block_depth = 2;
  rc.encoder.initial_channels = 8;
  rc.decoder.hidden_size = 16;
  rc.decoder.embed_size = 16;
  rc.decoder.attention_size = 16;
  rc.decoder.max_decode_len = 12;
  rc.train.batch_size = 4;
  return rc;
}

std::vector<Sample> small_corpus(std::size_t n, std::uint64_t seed) {
  SynthSpec spec;
  spec.canvas_height = 48;
  spec.canvas_width = 32;
  spec.glyph_size = 10;
  spec.jitter = 1;
  spec.num_classes = 4;
  std::vector<Sample> out;
  for (auto& d : generate_corpus(spec, n, seed)) out.push_back(d.sample);
  return out;
}

Vocabulary small_vocab() {
  SynthSpec spec;
  spec.num_classes = 4;
  return spec.vocabulary();
}

}  // namespace

TEST(AdaDelta, MatchesScalarRecurrence) {
  const double rho = 0.95, eps = 1e-8;
  std::vector<double> x = {0.5, -1.0}, g = {0.2, -3.0}, msg = {0.0, 0.1}, msd = {0.0, 0.01};
  // Written out independently for the first entry.
  const double eg = rho * 0.0 + (1 - rho) * 0.04;
  const double dx = -std::sqrt(0.0 + eps) / std::sqrt(eg + eps) * 0.2;
  const double ed = (1 - rho) * dx * dx;
  // ...and the second.
  const double eg2 = rho * 0.1 + (1 - rho) * 9.0;
  const double dx2 = -std::sqrt(0.01 + eps) / std::sqrt(eg2 + eps) * -3.0;
  const double ed2 = rho * 0.01 + (1 - rho) * dx2 * dx2;
  adadelta_step<double>(x, g, msg, msd, rho, eps);
  EXPECT_DOUBLE_EQ(msg[0], eg);
  EXPECT_DOUBLE_EQ(msd[0], ed);
  EXPECT_DOUBLE_EQ(x[0], 0.5 + dx);
  EXPECT_DOUBLE_EQ(msg[1], eg2);
  EXPECT_DOUBLE_EQ(msd[1], ed2);
  EXPECT_DOUBLE_EQ(x[1], -1.0 + dx2);
}

TEST(AdaDelta, ZeroGradientLeavesParametersUnchanged) {
  std::vector<float> x = {1.f, 2.f}, g = {0.f, 0.f}, msg = {0.f, 0.f}, msd = {0.f, 0.f};
  adadelta_step<float>(x, g, msg, msd, 0.95, 1e-8);
  EXPECT_EQ(x[0], 1.f);
  EXPECT_EQ(x[1], 2.f);
}

TEST(AdaDelta, NonFiniteGradientIsRejectedBeforeAnyUpdate) {
  std::vector<double> x = {1.0, 2.0}, g = {0.5, NAN}, msg = {0.0, 0.0}, msd = {0.0, 0.0};
  EXPECT_THROW(adadelta_step<double>(x, g, msg, msd, 0.95, 1e-8), NumericError);
  EXPECT_EQ(x[0], 1.0);
  EXPECT_EQ(msg[0], 0.0);
}

TEST(ClipGradients, RescalesOnlyAboveThreshold) {
  std::vector<double> a = {3.0}, b = {4.0};
  std::vector<std::span<double>> g = {a, b};
  EXPECT_DOUBLE_EQ(clip_gradients(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(a[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a[0], 0.6);
  EXPECT_DOUBLE_EQ(b[0], 0.8);
}

TEST(EarlyStopping, HaltsExactlyAtPatienceBoundary) {
  EarlyStopping s(3);
  EXPECT_TRUE(s.update(0.5));
  EXPECT_FALSE(s.update(0.6));
  EXPECT_FALSE(s.update(0.5));  // a tie is not an improvement
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(0.7));
  EXPECT_TRUE(s.should_stop());
}

TEST(EarlyStopping, ImprovementResetsCounter) {
  EarlyStopping s(2);
  s.update(0.5);
  s.update(0.6);
  EXPECT_TRUE(s.update(0.4));
  EXPECT_EQ(s.stale_epochs(), 0u);
  s.update(0.4);
  EXPECT_FALSE(s.should_stop());
}

TEST(SequenceLoss, EqualsSumOfStepwiseNegativeLogSoftmax) {
  const RunConfig rc = small_run();
  Model<double> model(rc.encoder, rc.decoder, small_vocab(), 3);
  const auto corpus = small_corpus(1, 4);
  const Sample& s = corpus[0];
  const double loss = sample_loss(model, s).item();

  NoGradGuard guard;
  const auto f = model.features(image_tensor<double>(s.image));
  auto state = model.decoder().initial_state(f);
  std::size_t prev = Vocabulary::kStart;
  double expect = 0.0;
  std::vector<std::size_t> gold = s.target;
  gold.push_back(Vocabulary::kEnd);
  for (std::size_t g : gold) {
    auto out = model.decoder().step(f, state, prev);
    const auto z = out.logits.data();
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double se = 0.0;
    for (double v : z) se += std::exp(v - m);
    expect += -(z[g] - m - std::log(se));
    state = std::move(out.state);
    prev = g;
  }
  EXPECT_NEAR(loss, expect, 1e-10);
}

TEST(Trainer, BatchRejectsMixedImageSizes) {
  const RunConfig rc = small_run();
  Model<float> model(rc.encoder, rc.decoder, small_vocab(), 1);
  Trainer<float> trainer(model, rc);
  Sample a{GrayImage(8, 8), {2}, "a", ""}, b{GrayImage(16, 8), {2}, "b", ""};
  EXPECT_THROW(trainer.train_batch({&a, &b}), DimensionError);
}

TEST(Trainer, LossDecreasesWhenOverfittingOneBatch) {
  const RunConfig rc = small_run();
  Model<float> model(rc.encoder, rc.decoder, small_vocab(), 2);
  Trainer<float> trainer(model, rc);
  const auto corpus = small_corpus(4, 9);
  std::vector<const Sample*> batch;
  for (const auto& s : corpus) batch.push_back(&s);
  const double first = trainer.train_batch(batch);
  double last = first;
  for (int i = 0; i < 30; ++i) last = trainer.train_batch(batch);
  EXPECT_LT(last, first);
}

TEST(Trainer, FixedSeedGivesBitIdenticalEpochLoss) {
  RunConfig rc = small_run();
  rc.train.max_epochs = 1;
  const auto corpus = small_corpus(8, 5);
  auto run = [&] {
    Model<float> model(rc.encoder, rc.decoder, small_vocab(), 7);
    return train(model, corpus, corpus, rc).log.at(0).train_loss;
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, ZeroEpochsReturnsInitialWeights) {
  RunConfig rc = small_run();
  rc.train.max_epochs = 0;
  Model<float> model(rc.encoder, rc.decoder, small_vocab(), 7);
  const auto corpus = small_corpus(2, 5);
  auto res = train(model, corpus, corpus, rc);
  EXPECT_TRUE(res.log.empty());
  EXPECT_EQ(res.best.epoch, 0u);
  EXPECT_FALSE(res.best.best_val_ser.has_value());
}

TEST(Trainer, StopsAfterPatienceEpochsWithoutImprovement) {
  RunConfig rc = small_run();
  rc.train.patience_epochs = 4;
  rc.train.max_epochs = 50;
  Model<float> model(rc.encoder, rc.decoder, small_vocab(), 7);
  const auto corpus = small_corpus(2, 5);
  TrainHooks<float> hooks;
  // SER improves for two epochs and then stays flat.
  const std::vector<double> curve = {0.9, 0.8};
  hooks.validate = [&](const Model<float>&, std::size_t epoch) {
    EvalReport r;
    r.ser = epoch <= curve.size() ? curve[epoch - 1] : 0.8;
    return r;
  };
  auto res = train(model, corpus, {}, rc, hooks);
  EXPECT_TRUE(res.stopped_early);
  EXPECT_EQ(res.log.size(), 2u + 4u);
  EXPECT_EQ(res.best.epoch, 2u);
  EXPECT_DOUBLE_EQ(*res.best.best_val_ser, 0.8);
}

TEST(Trainer, ResumeContinuesEpochCounterAndOptimizerState) {
  RunConfig rc = small_run();
  rc.train.max_epochs = 2;
  const auto corpus = small_corpus(4, 6);

  Model<float> straight(rc.encoder, rc.decoder, small_vocab(), 3);
  Trainer<float> t1(straight, rc);
  TrainHooks<float> keep_last;
  // Always "improve" so the final weights are the ones kept.
  keep_last.validate = [](const Model<float>&, std::size_t e) {
    EvalReport r;
    r.ser = 1.0 / static_cast<double>(e);
    return r;
  };
  t1.run(corpus, corpus, keep_last);

  RunConfig half = rc;
  half.train.max_epochs = 1;
  Model<float> first(rc.encoder, rc.decoder, small_vocab(), 3);
  Trainer<float> t2(first, half);
  auto ckpt = t2.run(corpus, corpus, keep_last).best;
  EXPECT_EQ(ckpt.epoch, 1u);

  Model<float> second(rc.encoder, rc.decoder, small_vocab(), 99);
  Trainer<float> t3(second, half);
  t3.resume(ckpt);
  t3.run(corpus, corpus, keep_last);
  EXPECT_EQ(t3.epoch(), 2u);
  for (std::size_t i = 0; i < straight.params().size(); ++i) {
    const auto a = straight.params()[i].data(), b = second.params()[i].data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end())) << straight.params().names()[i];
  }
}

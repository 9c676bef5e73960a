#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "kzr/grad_check.hpp"
#include "kzr/model.hpp"
#include "kzr/trainer.hpp"
#include "test_util.hpp"

using namespace kzr;
using kzr::testing::random_tensor;

namespace {

// Channel bookkeeping done by hand, one block at a time.
struct ChannelCase {
  std::size_t k, d, expected;
};

const ChannelCase kChannelCases[] = {
    // 48 + 256 = 304 -> 152; +256 = 408 -> 204; +256 = 460
    {16, 16, 460},
    // 48 + 384 = 432 -> 216; +384 = 600 -> 300; +384 = 684
    {24, 16, 684},
    // 48 + 128 = 176 -> 88; +128 = 216 -> 108; +128 = 236
    {16, 8, 236},
    // 48 + 192 = 240 -> 120; +192 = 312 -> 156; +192 = 348
    {24, 8, 348},
};

void set(ParameterStore<double>& store, const std::string& name, std::vector<double> v) {
  Tensor<double> t = store.at(name);
  ASSERT_EQ(t.size(), v.size()) << name;
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

Vocabulary small_vocab(std::size_t chars) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < chars; ++i) tokens.push_back(std::string(1, static_cast<char>('a' + i)));
  return Vocabulary(tokens);
}

EncoderConfig tiny_encoder() {
  EncoderConfig e;
  e.growth_rate = 4;
  e.block_depth = 2;
  e.initial_channels = 8;
  return e;
}

DecoderConfig tiny_decoder() {
  DecoderConfig d;
  d.hidden_size = 8;
  d.embed_size = 6;
  d.attention_size = 5;
  d.max_decode_len = 10;
  return d;
}

}  // namespace

TEST(Encoder, OutputChannelsMatchHandArithmetic) {
  for (const auto& c : kChannelCases) {
    EncoderConfig cfg;
    cfg.growth_rate = c.k;
    cfg.block_depth = c.d;
    EXPECT_EQ(cfg.output_channels(), c.expected) << "K=" << c.k << " D=" << c.d;
  }
}

TEST(Encoder, FeatureGridHasPredictedShape) {
  ParameterStore<float> store;
  Rng rng(1);
  EncoderConfig cfg;
  cfg.growth_rate = 16;
  cfg.block_depth = 8;
  Encoder<float> enc(cfg, store, rng);
  Tensor<float> img(Shape{16, 24, 1}, 0.5f);
  auto grid = enc.encode(img);
  EXPECT_EQ(grid.features.shape(), (Shape{2, 3, 236}));
  EXPECT_EQ(grid.downsample_factor, 8u);
}

TEST(Encoder, DownsampleFactorFollowsBlockCountAndStride) {
  EncoderConfig cfg;
  EXPECT_EQ(cfg.downsample_factor(), 8u);
  cfg.num_blocks = 2;
  EXPECT_EQ(cfg.downsample_factor(), 4u);
  cfg.initial_stride = 2;
  EXPECT_EQ(cfg.downsample_factor(), 8u);
}

TEST(Encoder, RejectsBadImages) {
  ParameterStore<float> store;
  Rng rng(2);
  Encoder<float> enc(tiny_encoder(), store, rng);
  EXPECT_THROW(enc.encode(Tensor<float>(Shape{4, 8, 1})), DimensionError);    // too small
  EXPECT_THROW(enc.encode(Tensor<float>(Shape{12, 16, 1})), DimensionError);  // not divisible
  EXPECT_THROW(enc.encode(Tensor<float>(Shape{8, 8, 3})), DimensionError);    // channels
  EXPECT_NO_THROW(enc.encode(Tensor<float>(Shape{8, 8, 1})));
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig cfg;
  cfg.growth_rate = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = EncoderConfig{};
  cfg.compression = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(DenseBlock, AppendsGrowthRateChannelsPerLayer) {
  ParameterStore<double> store;
  Rng rng(3);
  auto block = make_dense_block<double>(store, "b", 5, 3, 4, 4, rng);
  auto x = random_tensor<double>({3, 3, 5}, rng);
  auto y = dense_block(x, block);
  EXPECT_EQ(y.shape(), (Shape{3, 3, 17}));
  // The block input is passed through untouched as the leading channels.
  for (std::size_t p = 0; p < 9; ++p)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(y[p * 17 + c], x[p * 5 + c]);
}

TEST(Transition, RejectsGridSmallerThanPoolWindow) {
  ParameterStore<double> store;
  Rng rng(4);
  auto reduce = make_conv<double>(store, "t", 1, 4, 2, 1, rng);
  EXPECT_THROW(transition(Tensor<double>(Shape{1, 4, 4}), reduce), DimensionError);
  EXPECT_EQ(transition(Tensor<double>(Shape{4, 6, 4}), reduce).shape(), (Shape{2, 3, 2}));
}

TEST(Attention, HandComputedTwoByTwo) {
  // C = 1, A = 1: energy = tanh(F), so alpha = softmax(tanh(F)).
  ParameterStore<double> store;
  Rng rng(5);
  DecoderConfig cfg;
  cfg.hidden_size = 1;
  cfg.embed_size = 1;
  cfg.attention_size = 1;
  Decoder<double> dec(cfg, 1, 3, store, rng);
  set(store, "decoder.att_feature", {1.0});
  set(store, "decoder.att_hidden", {0.0});
  set(store, "decoder.att_coverage", {0.0});
  set(store, "decoder.att_score", {1.0});

  const std::vector<double> f = {0.0, 0.5, -1.0, 2.0};
  FeatureGrid<double> grid{Tensor<double>(Shape{2, 2, 1}, f), 8};
  auto prepared = dec.prepare(grid);
  auto state = dec.initial_state(prepared);
  auto att = dec.attend(prepared, state.h, state.coverage);

  double z = 0.0;
  for (double v : f) z += std::exp(std::tanh(v));
  double ctx = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double a = std::exp(std::tanh(f[i])) / z;
    EXPECT_NEAR(att.alpha[i], a, 1e-15);
    ctx += a * f[i];
  }
  EXPECT_NEAR(att.context.item(), ctx, 1e-15);
}

TEST(Attention, CoverageTermSteersAwayFromVisitedCells) {
  ParameterStore<double> store;
  Rng rng(6);
  DecoderConfig cfg;
  cfg.hidden_size = 1;
  cfg.embed_size = 1;
  cfg.attention_size = 1;
  Decoder<double> dec(cfg, 1, 3, store, rng);
  set(store, "decoder.att_feature", {0.0});
  set(store, "decoder.att_hidden", {0.0});
  set(store, "decoder.att_coverage", {-1.0});
  set(store, "decoder.att_score", {1.0});
  FeatureGrid<double> grid{Tensor<double>(Shape{1, 2, 1}, 1.0), 8};
  auto prepared = dec.prepare(grid);
  Tensor<double> coverage(Shape{2, 1}, std::vector<double>{1.0, 0.0});
  auto att = dec.attend(prepared, Tensor<double>(Shape{1, 1}), coverage);
  EXPECT_LT(att.alpha[0], att.alpha[1]);
  const double e0 = std::tanh(-1.0);
  EXPECT_NEAR(att.alpha[0], std::exp(e0) / (std::exp(e0) + 1.0), 1e-15);
}

TEST(Decoder, AlphaNormalizedAndCoverageIsRunningSum) {
  ParameterStore<double> store;
  Rng rng(7);
  Decoder<double> dec(tiny_decoder(), 6, 5, store, rng);
  FeatureGrid<double> grid{random_tensor<double>({3, 4, 6}, rng), 8};
  auto f = dec.prepare(grid);
  auto state = dec.initial_state(f);
  std::vector<double> running(12, 0.0);
  std::size_t prev = Vocabulary::kStart;
  for (std::size_t t = 0; t < 10; ++t) {
    auto out = dec.step(f, state, prev);
    const auto alpha = out.state.attention_trace.back().data();
    EXPECT_NEAR(std::accumulate(alpha.begin(), alpha.end(), 0.0), 1.0, 1e-12);
    for (std::size_t i = 0; i < 12; ++i) {
      running[i] += alpha[i];
      EXPECT_EQ(out.state.coverage[i], running[i]);
    }
    EXPECT_EQ(out.state.step, t + 1);
    EXPECT_EQ(out.state.attention_trace.size(), t + 1);
    state = std::move(out.state);
    prev = 2 + t % 3;
  }
  EXPECT_THROW(dec.step(f, state, prev), LengthError);
}

TEST(Decoder, RejectsTokensOutsideVocabulary) {
  ParameterStore<double> store;
  Rng rng(8);
  Decoder<double> dec(tiny_decoder(), 2, 4, store, rng);
  FeatureGrid<double> grid{Tensor<double>(Shape{1, 1, 2}, 0.1), 8};
  auto f = dec.prepare(grid);
  EXPECT_THROW(dec.step(f, dec.initial_state(f), 4), std::out_of_range);
}

TEST(Decoder, RejectsFeatureGridWithWrongChannelCount) {
  ParameterStore<double> store;
  Rng rng(9);
  Decoder<double> dec(tiny_decoder(), 3, 4, store, rng);
  FeatureGrid<double> grid{Tensor<double>(Shape{1, 1, 2}), 8};
  EXPECT_THROW(dec.prepare(grid), DimensionError);
}

TEST(Decoder, ArgmaxBreaksTiesTowardLowestIndex) {
  const std::vector<double> v = {0.1, 0.7, 0.7, -2.0};
  EXPECT_EQ(Decoder<double>::argmax(v), 1u);
  const std::vector<double> flat = {3.0, 3.0, 3.0};
  EXPECT_EQ(Decoder<double>::argmax(flat), 0u);
}

TEST(Decoder, GreedyDecodeEmitsEndImmediatelyWhenEndDominates) {
  ParameterStore<double> store;
  Rng rng(10);
  Decoder<double> dec(tiny_decoder(), 2, 4, store, rng);
  Tensor<double> w = store.at("decoder.out_vocab");
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) w.mutable_data()[r * 4 + c] = 0.0;
  // Bias through the embedding dimension: every mixed vector has a positive
  // first entry once the embedding row is set.
  Tensor<double> emb = store.at("decoder.embedding");
  for (std::size_t c = 0; c < 6; ++c) emb.mutable_data()[c] = c == 0 ? 100.0 : 0.0;
  w.mutable_data()[0 * 4 + Vocabulary::kEnd] = 1.0;
  FeatureGrid<double> grid{Tensor<double>(Shape{2, 2, 2}, 0.0), 8};
  auto r = dec.decode_greedy(dec.prepare(grid));
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_FALSE(r.truncated);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace_height, 2u);
  EXPECT_EQ(r.trace_width, 2u);
}

TEST(Decoder, GreedyDecodeStopsAtMaxLength) {
  ParameterStore<double> store;
  Rng rng(11);
  DecoderConfig cfg = tiny_decoder();
  cfg.max_decode_len = 4;
  Decoder<double> dec(cfg, 2, 4, store, rng);
  Tensor<double> w = store.at("decoder.out_vocab");
  for (auto& v : w.mutable_data()) v = 0.0;
  // All logits tie, and <S> (index 0) wins every tie; it is never emitted.
  FeatureGrid<double> grid{Tensor<double>(Shape{1, 1, 2}, 0.3), 8};
  auto r = dec.decode_greedy(dec.prepare(grid));
  EXPECT_TRUE(r.truncated);
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_EQ(r.trace.size(), 4u);
}

TEST(Model, ParameterNamesAreUniqueAndStable) {
  Model<float> a(tiny_encoder(), tiny_decoder(), small_vocab(3), 1);
  Model<float> b(tiny_encoder(), tiny_decoder(), small_vocab(3), 1);
  EXPECT_EQ(a.params().names(), b.params().names());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto x = a.params()[i].data(), y = b.params()[i].data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end()));
  }
  EXPECT_EQ(a.params().at("decoder.lstm_bias").data()[tiny_decoder().hidden_size], 1.0f);
}

TEST(Model, EndToEndGradientCheckOnSmallInstance) {
  EncoderConfig enc = tiny_encoder();
  enc.growth_rate = 2;
  enc.block_depth = 1;
  enc.initial_channels = 4;
  DecoderConfig dec = tiny_decoder();
  Model<double> model(enc, dec, small_vocab(3), 21);
  Rng rng(22);
  kzr::testing::randomize_biases(model.params(), rng);
  GrayImage img(8, 16);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.integer(0, 255));
  Sample s{img, {2, 4}, "x", ""};
  auto r = grad_check<double>([&] { return sample_loss(model, s); }, model.params().tensors());
  EXPECT_LT(r.max_relative_error, 1e-4) << "worst " << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Model, RecognizeDoesNotRecordGraph) {
  Model<float> model(tiny_encoder(), tiny_decoder(), small_vocab(3), 5);
  GrayImage img(8, 8);
  auto r = model.recognize(img);
  EXPECT_EQ(r.trace.size(), r.truncated ? tiny_decoder().max_decode_len : r.tokens.size() + 1);
  for (const auto& t : model.params().tensors()) EXPECT_TRUE(t.grad().empty() || t.grad()[0] == 0.0f);
}

#pragma once

// LSTM decoder with coverage attention over the encoder feature grid.
//
// One step, given the previous hidden state h, the coverage map Cov and the
// previous token y:
//
//   e(u,v)  = v_att . tanh(Wa_h h + Wa_F F(u,v) + w_cov Cov(u,v))
//   alpha   = softmax over all (u,v) of e
//   context = sum alpha(u,v) F(u,v)
//   h', c'  = LSTM([context ; E_y], h, c)
//   logits  = W_out (E_y + Wo_h h' + Wo_c context)
//   Cov'    = Cov + alpha
//
// Attention uses the previous hidden state and runs before the LSTM update.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "kzr/encoder.hpp"
#include "kzr/ops.hpp"
#include "kzr/params.hpp"
#include "kzr/vocab.hpp"

namespace kzr {

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct DecoderConfig {
  std::size_t hidden_size = 256;
  // The output layer adds the embedding to projections of h and context, so
  // this is also the width of those projections.
  std::size_t embed_size = 256;
  std::size_t attention_size = 128;
  std::size_t max_decode_len = 128;

  void validate() const {
    if (hidden_size < 1 || embed_size < 1 || attention_size < 1 || max_decode_len < 1) {
      throw std::invalid_argument("decoder: all sizes must be >= 1");
    }
  }
};

template <typename T>
struct DecoderWeights {
  Tensor<T> embedding;     // |Y| x E
  Tensor<T> att_hidden;    // hidden x A
  Tensor<T> att_feature;   // C x A
  Tensor<T> att_coverage;  // 1 x A
  Tensor<T> att_score;     // A x 1
  Tensor<T> lstm_input;    // (C + E) x 4*hidden, gate order i, f, o, g
  Tensor<T> lstm_hidden;   // hidden x 4*hidden
  Tensor<T> lstm_bias;     // 4*hidden
  Tensor<T> out_hidden;    // hidden x E
  Tensor<T> out_context;   // C x E
  Tensor<T> out_vocab;     // E x |Y|
};

/// Feature grid flattened to [H*W x C] plus its attention projection, both
/// reused by every step of one decoding run.
template <typename T>
struct PreparedFeatures {
  Tensor<T> flat;       // HW x C
  Tensor<T> projected;  // HW x A
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t downsample_factor = 1;
};

template <typename T>
struct DecoderState {
  Tensor<T> h;         // 1 x hidden
  Tensor<T> cell;      // 1 x hidden
  Tensor<T> coverage;  // HW x 1, sum of earlier alphas
  std::size_t step = 0;
  std::vector<Tensor<T>> attention_trace;  // one H x W map per step
};

template <typename T>
struct Attention {
  Tensor<T> alpha;    // HW x 1
  Tensor<T> context;  // 1 x C
};

template <typename T>
struct StepOutput {
  Tensor<T> logits;  // 1 x |Y|
  DecoderState<T> state;
};

struct DecodeResult {
  std::vector<std::size_t> tokens;                // without <S>/<E>
  std::vector<std::vector<double>> trace;         // row-major H x W per step
  std::size_t trace_height = 0;
  std::size_t trace_width = 0;
  bool truncated = false;
};

template <typename T>
class Decoder {
 public:
  Decoder(const DecoderConfig& config, std::size_t feature_channels, std::size_t vocab_size,
          ParameterStore<T>& store, Rng& rng)
      : config_(config), channels_(feature_channels), vocab_size_(vocab_size) {
    config_.validate();
    if (vocab_size < 3) throw std::invalid_argument("decoder: vocabulary needs at least one character");
    const std::size_t hid = config_.hidden_size, emb = config_.embed_size,
                      att = config_.attention_size, c = feature_channels;
    auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
    w_.embedding = store.add_uniform("decoder.embedding", {vocab_size, emb}, inv_sqrt(emb), rng);
    w_.att_hidden = store.add_uniform("decoder.att_hidden", {hid, att}, inv_sqrt(hid), rng);
    w_.att_feature = store.add_uniform("decoder.att_feature", {c, att}, inv_sqrt(c), rng);
    w_.att_coverage = store.add_uniform("decoder.att_coverage", {1, att}, 1.0, rng);
    w_.att_score = store.add_uniform("decoder.att_score", {att, 1}, inv_sqrt(att), rng);
    w_.lstm_input = store.add_uniform("decoder.lstm_input", {c + emb, 4 * hid}, inv_sqrt(hid), rng);
    w_.lstm_hidden = store.add_uniform("decoder.lstm_hidden", {hid, 4 * hid}, inv_sqrt(hid), rng);
    w_.lstm_bias = store.add_constant("decoder.lstm_bias", {4 * hid}, T(0));
    for (std::size_t j = hid; j < 2 * hid; ++j) w_.lstm_bias.mutable_data()[j] = T(1);
    w_.out_hidden = store.add_uniform("decoder.out_hidden", {hid, emb}, inv_sqrt(hid), rng);
    w_.out_context = store.add_uniform("decoder.out_context", {c, emb}, inv_sqrt(c), rng);
    w_.out_vocab = store.add_uniform("decoder.out_vocab", {emb, vocab_size}, inv_sqrt(emb), rng);
  }

  const DecoderConfig& config() const { return config_; }
  const DecoderWeights<T>& weights() const { return w_; }
  std::size_t vocab_size() const { return vocab_size_; }

  PreparedFeatures<T> prepare(const FeatureGrid<T>& grid) const {
    if (grid.channels() != channels_) {
      throw DimensionError("decoder: feature grid has " + std::to_string(grid.channels()) +
                           " channels, decoder expects " + std::to_string(channels_));
    }
    PreparedFeatures<T> p;
    p.height = grid.height();
    p.width = grid.width();
    p.downsample_factor = grid.downsample_factor;
    p.flat = reshape(grid.features, {p.height * p.width, channels_});
    p.projected = matmul(p.flat, w_.att_feature);
    return p;
  }

  DecoderState<T> initial_state(const PreparedFeatures<T>& f) const {
    DecoderState<T> s;
    s.h = Tensor<T>(Shape{1, config_.hidden_size});
    s.cell = Tensor<T>(Shape{1, config_.hidden_size});
    s.coverage = Tensor<T>(Shape{f.height * f.width, 1});
    return s;
  }

  Attention<T> attend(const PreparedFeatures<T>& f, const Tensor<T>& h_prev,
                      const Tensor<T>& coverage) const {
    const Tensor<T> hidden_term = matmul(h_prev, w_.att_hidden);      // 1 x A
    const Tensor<T> coverage_term = matmul(coverage, w_.att_coverage);  // HW x A
    const Tensor<T> pre = add_bias(add(f.projected, coverage_term), hidden_term);
    const Tensor<T> energy = matmul(tanh(pre), w_.att_score);  // HW x 1
    Attention<T> a;
    a.alpha = softmax_flat(energy);
    a.context = matmul(transpose(a.alpha), f.flat);
    return a;
  }

  StepOutput<T> step(const PreparedFeatures<T>& f, const DecoderState<T>& state,
                     std::size_t prev_token) const {
    if (prev_token >= vocab_size_) {
      throw std::out_of_range("decode_step: token " + std::to_string(prev_token) +
                              " outside vocabulary of size " + std::to_string(vocab_size_));
    }
    if (state.step + 1 > config_.max_decode_len) {
      throw LengthError("decode_step: step " + std::to_string(state.step + 1) +
                        " exceeds max_decode_len " + std::to_string(config_.max_decode_len));
    }
    const std::size_t hid = config_.hidden_size;
    const Attention<T> att = attend(f, state.h, state.coverage);
    const Tensor<T> emb = embedding_lookup(w_.embedding, prev_token);

    const Tensor<T> x = concat_channels<T>({att.context, emb});
    const Tensor<T> gates = add_bias(
        add(matmul(x, w_.lstm_input), matmul(state.h, w_.lstm_hidden)), w_.lstm_bias);
    const Tensor<T> in_gate = sigmoid(slice_channels(gates, 0, hid));
    const Tensor<T> forget_gate = sigmoid(slice_channels(gates, hid, hid));
    const Tensor<T> out_gate = sigmoid(slice_channels(gates, 2 * hid, hid));
    const Tensor<T> candidate = tanh(slice_channels(gates, 3 * hid, hid));

    StepOutput<T> out;
    out.state.cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate));
    out.state.h = mul(out_gate, tanh(out.state.cell));
    out.state.coverage = add(state.coverage, att.alpha);
    out.state.step = state.step + 1;
    out.state.attention_trace = state.attention_trace;
    out.state.attention_trace.push_back(reshape(att.alpha, {f.height, f.width}));

    const Tensor<T> mixed = add(add(emb, matmul(out.state.h, w_.out_hidden)),
                                matmul(att.context, w_.out_context));
    out.logits = matmul(mixed, w_.out_vocab);
    return out;
  }

  /// Greedy decoding from <S> until <E> or max_decode_len steps. Ties in the
  /// argmax go to the lowest token index. The trace holds one map per step,
  /// including the step that emitted <E>.
  DecodeResult decode_greedy(const PreparedFeatures<T>& f) const {
    NoGradGuard guard;
    DecodeResult r;
    r.trace_height = f.height;
    r.trace_width = f.width;
    DecoderState<T> state = initial_state(f);
    std::size_t prev = Vocabulary::kStart;
    for (;;) {
      if (state.step >= config_.max_decode_len) {
        r.truncated = true;
        break;
      }
      StepOutput<T> s = step(f, state, prev);
      state = std::move(s.state);
      const auto alpha = state.attention_trace.back().data();
      r.trace.emplace_back(alpha.begin(), alpha.end());
      // Only the latest map is needed while decoding.
      state.attention_trace.clear();
      const std::size_t best = argmax(s.logits.data());
      if (best == Vocabulary::kEnd) break;
      if (best != Vocabulary::kStart) r.tokens.push_back(best);
      prev = best;
    }
    return r;
  }

  static std::size_t argmax(std::span<const T> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[best]) best = i;
    return best;
  }

 private:
  DecoderConfig config_;
  std::size_t channels_;
  std::size_t vocab_size_;
  DecoderWeights<T> w_;
};

}  // namespace kzr

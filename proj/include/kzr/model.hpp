#pragma once

#include <cstdint>
#include <optional>

#include "kzr/decoder.hpp"
#include "kzr/encoder.hpp"
#include "kzr/image.hpp"
#include "kzr/params.hpp"
#include "kzr/vocab.hpp"

namespace kzr {

/// Encoder, decoder and vocabulary sharing one parameter store.
template <typename T>
class Model {
 public:
  Model(const EncoderConfig& enc, const DecoderConfig& dec, Vocabulary vocab, std::uint64_t seed)
      : vocab_(std::move(vocab)), init_rng_(seed) {
    encoder_.emplace(enc, store_, init_rng_);
    decoder_.emplace(dec, encoder_->output_channels(), vocab_.size(), store_, init_rng_);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const Encoder<T>& encoder() const { return *encoder_; }
  const Decoder<T>& decoder() const { return *decoder_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  std::size_t downsample_factor() const { return encoder_->downsample_factor(); }

  PreparedFeatures<T> features(const Tensor<T>& image) const {
    return decoder_->prepare(encoder_->encode(image));
  }

  /// Greedy transcription. Images not divisible by the downsample factor
  /// must be padded by the caller (see pad_to_multiple).
  DecodeResult recognize(const GrayImage& image) const {
    NoGradGuard guard;
    return decoder_->decode_greedy(features(image_tensor<T>(image)));
  }

 private:
  Vocabulary vocab_;
  ParameterStore<T> store_;
  Rng init_rng_;
  std::optional<Encoder<T>> encoder_;
  std::optional<Decoder<T>> decoder_;
};

}  // namespace kzr

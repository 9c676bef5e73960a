#pragma once

// DenseNet feature extractor: stem convolution and max pool, then dense
// blocks joined by compressing transition layers. Output is the H x W x C
// feature grid consumed by the attention decoder.

#include <cmath>
#include <string>
#include <vector>

#include "kzr/ops.hpp"
#include "kzr/params.hpp"

namespace kzr {

struct EncoderConfig {
  std::size_t growth_rate = 16;  // K
  std::size_t block_depth = 16;  // D
  std::size_t initial_channels = 48;
  std::size_t num_blocks = 3;
  double compression = 0.5;
  std::size_t input_channels = 1;
  std::size_t initial_kernel = 3;
  std::size_t initial_stride = 1;
  std::size_t bottleneck_factor = 4;

  void validate() const {
    if (growth_rate < 1) throw std::invalid_argument("encoder: growth_rate must be >= 1");
    if (!(compression > 0.0 && compression <= 1.0))
      throw std::invalid_argument("encoder: compression must be in (0, 1]");
    if (num_blocks < 1) throw std::invalid_argument("encoder: num_blocks must be >= 1");
    if (initial_channels < 1 || input_channels < 1 || initial_kernel < 1 || initial_stride < 1 ||
        bottleneck_factor < 1)
      throw std::invalid_argument("encoder: channel counts, kernel and stride must be >= 1");
  }

  std::size_t transition_channels(std::size_t c) const {
    const auto out = static_cast<std::size_t>(std::floor(static_cast<double>(c) * compression));
    if (out < 1) throw std::invalid_argument("encoder: transition would leave zero channels");
    return out;
  }

  /// Channel count of the feature grid.
  std::size_t output_channels() const {
    std::size_t c = initial_channels;
    for (std::size_t b = 0; b < num_blocks; ++b) {
      c += block_depth * growth_rate;
      if (b + 1 < num_blocks) c = transition_channels(c);
    }
    return c;
  }

  /// Input pixels per feature cell along each axis.
  std::size_t downsample_factor() const {
    return initial_stride * (std::size_t{2} << (num_blocks - 1));
  }
};

template <typename T>
struct FeatureGrid {
  Tensor<T> features;  // H x W x C
  std::size_t downsample_factor = 1;

  std::size_t height() const { return features.dim(0); }
  std::size_t width() const { return features.dim(1); }
  std::size_t channels() const { return features.dim(2); }
};

template <typename T>
struct ConvLayer {
  Tensor<T> kernel;  // kh x kw x Cin x Cout
  Tensor<T> bias;    // Cout
  std::size_t stride = 1;
  std::size_t padding = 0;

  Tensor<T> operator()(const Tensor<T>& x) const {
    return add_bias(conv2d(x, kernel, stride, padding), bias);
  }
  std::size_t out_channels() const { return kernel.dim(3); }
};

/// He-uniform kernel, zero bias.
template <typename T>
ConvLayer<T> make_conv(ParameterStore<T>& store, const std::string& name, std::size_t k,
                       std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(k * k * cin));
  ConvLayer<T> layer;
  layer.kernel = store.add_uniform(name + ".kernel", {k, k, cin, cout}, bound, rng);
  layer.bias = store.add_constant(name + ".bias", {cout}, T(0));
  layer.stride = stride;
  layer.padding = k / 2;
  return layer;
}

template <typename T>
struct DenseLayer {
  ConvLayer<T> bottleneck;  // 1x1, bottleneck_factor * K outputs
  ConvLayer<T> conv;        // 3x3 pad 1, K outputs
};

template <typename T>
using DenseBlock = std::vector<DenseLayer<T>>;

template <typename T>
DenseBlock<T> make_dense_block(ParameterStore<T>& store, const std::string& name, std::size_t cin,
                               std::size_t growth_rate, std::size_t depth,
                               std::size_t bottleneck_factor, Rng& rng) {
  DenseBlock<T> block;
  std::size_t c = cin;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::string prefix = name + ".layer" + std::to_string(i);
    DenseLayer<T> layer;
    layer.bottleneck =
        make_conv(store, prefix + ".bottleneck", 1, c, bottleneck_factor * growth_rate, 1, rng);
    layer.conv = make_conv(store, prefix + ".conv", 3, bottleneck_factor * growth_rate,
                           growth_rate, 1, rng);
    block.push_back(std::move(layer));
    c += growth_rate;
  }
  return block;
}

/// Each layer sees the concatenation of the block input and every earlier
/// layer's output and appends K new channels. Spatial extents are preserved.
template <typename T>
Tensor<T> dense_block(const Tensor<T>& input, const DenseBlock<T>& block) {
  detail::require_rank(input, 3, "dense_block");
  Tensor<T> x = input;
  for (const auto& layer : block) {
    Tensor<T> y = relu(layer.conv(relu(layer.bottleneck(x))));
    x = concat_channels<T>({x, y});
  }
  return x;
}

/// 1x1 convolution down to the compressed channel count, rectifier, then
/// 2x2 average pool with stride 2.
template <typename T>
Tensor<T> transition(const Tensor<T>& input, const ConvLayer<T>& reduce) {
  detail::require_rank(input, 3, "transition");
  if (input.dim(0) < 2 || input.dim(1) < 2) {
    throw DimensionError("transition: input " + shape_str(input.shape()) +
                         " is smaller than the 2x2 pooling window");
  }
  return pool2d(relu(reduce(input)), PoolKind::kAverage, 2, 2);
}

template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& config, ParameterStore<T>& store, Rng& rng) : config_(config) {
    config_.validate();
    stem_ = make_conv(store, "encoder.stem", config_.initial_kernel, config_.input_channels,
                      config_.initial_channels, config_.initial_stride, rng);
    std::size_t c = config_.initial_channels;
    for (std::size_t b = 0; b < config_.num_blocks; ++b) {
      const std::string name = "encoder.block" + std::to_string(b);
      blocks_.push_back(make_dense_block(store, name, c, config_.growth_rate, config_.block_depth,
                                         config_.bottleneck_factor, rng));
      c += config_.block_depth * config_.growth_rate;
      if (b + 1 < config_.num_blocks) {
        const std::size_t out = config_.transition_channels(c);
        transitions_.push_back(
            make_conv(store, "encoder.transition" + std::to_string(b), 1, c, out, 1, rng));
        c = out;
      }
    }
  }

  const EncoderConfig& config() const { return config_; }
  std::size_t downsample_factor() const { return config_.downsample_factor(); }
  std::size_t output_channels() const { return config_.output_channels(); }

  /// `image` is Hin x Win x input_channels with both extents divisible by
  /// the downsample factor.
  FeatureGrid<T> encode(const Tensor<T>& image) const {
    detail::require_rank(image, 3, "encode");
    const std::size_t f = downsample_factor();
    if (image.dim(2) != config_.input_channels) {
      throw DimensionError("encode: expected " + std::to_string(config_.input_channels) +
                           " input channel(s), got " + shape_str(image.shape()));
    }
    if (image.dim(0) < f || image.dim(1) < f) {
      throw DimensionError("encode: image " + shape_str(image.shape()) +
                           " is too small for downsample factor " + std::to_string(f));
    }
    if (image.dim(0) % f != 0 || image.dim(1) % f != 0) {
      throw DimensionError("encode: image " + shape_str(image.shape()) +
                           " is not divisible by downsample factor " + std::to_string(f));
    }
    Tensor<T> x = pool2d(relu(stem_(image)), PoolKind::kMax, 2, 2);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      x = dense_block(x, blocks_[b]);
      if (b < transitions_.size()) x = transition(x, transitions_[b]);
    }
    return FeatureGrid<T>{x, f};
  }

 private:
  EncoderConfig config_;
  ConvLayer<T> stem_;
  std::vector<DenseBlock<T>> blocks_;
  std::vector<ConvLayer<T>> transitions_;
};

}  // namespace kzr

#pragma once

// Flat key=value configuration files. '#' starts a comment, blank lines are
// ignored, every key must be known to the consumer.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kzr/decoder.hpp"
#include "kzr/encoder.hpp"
#include "kzr/optim.hpp"

namespace kzr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& origin) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Maps keys to setters and applies a parsed file, failing on unknown keys
/// and unparsable values.
class ConfigBinder {
 public:
  explicit ConfigBinder(std::string origin) : origin_(std::move(origin)) {}

  template <typename N>
  ConfigBinder& bind(const std::string& key, N& target) {
    setters_[key] = [&target, key](const std::string& v) {
      N parsed{};
      if constexpr (std::is_floating_point_v<N>) {
        std::size_t pos = 0;
        parsed = static_cast<N>(std::stod(v, &pos));
        if (pos != v.size()) throw std::invalid_argument(key);
      } else {
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
        if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument(key);
      }
      target = parsed;
    };
    return *this;
  }

  ConfigBinder& bind_string(const std::string& key, std::string& target) {
    setters_[key] = [&target](const std::string& v) { target = v; };
    return *this;
  }

  void apply(const std::vector<KeyValue>& kvs) const {
    for (const auto& kv : kvs) {
      auto it = setters_.find(kv.key);
      const std::string where = origin_ + ":" + std::to_string(kv.line) + ": ";
      if (it == setters_.end()) throw ConfigError(where + "unknown key '" + kv.key + "'");
      try {
        it->second(kv.value);
      } catch (const std::exception&) {
        throw ConfigError(where + "invalid value '" + kv.value + "' for '" + kv.key + "'");
      }
    }
  }

 private:
  std::string origin_;
  std::map<std::string, std::function<void(const std::string&)>> setters_;
};

/// Everything a training run needs besides data.
struct RunConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  TrainConfig train;
  std::string precision = "f32";  // f32 | f64

  void validate() const {
    encoder.validate();
    decoder.validate();
    train.validate();
    if (precision != "f32" && precision != "f64")
      throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
  }
};

inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "config") {
  RunConfig c;
  ConfigBinder b(origin);
  b.bind("encoder.growth_rate", c.encoder.growth_rate)
      .bind("encoder.block_depth", c.encoder.block_depth)
      .bind("encoder.initial_channels", c.encoder.initial_channels)
      .bind("encoder.num_blocks", c.encoder.num_blocks)
      .bind("encoder.compression", c.encoder.compression)
      .bind("encoder.input_channels", c.encoder.input_channels)
      .bind("encoder.initial_kernel", c.encoder.initial_kernel)
      .bind("encoder.initial_stride", c.encoder.initial_stride)
      .bind("encoder.bottleneck_factor", c.encoder.bottleneck_factor)
      .bind("decoder.hidden_size", c.decoder.hidden_size)
      .bind("decoder.embed_size", c.decoder.embed_size)
      .bind("decoder.attention_size", c.decoder.attention_size)
      .bind("decoder.max_decode_len", c.decoder.max_decode_len)
      .bind("train.rho", c.train.rho)
      .bind("train.epsilon", c.train.epsilon)
      .bind("train.batch_size", c.train.batch_size)
      .bind("train.clip_norm", c.train.clip_norm)
      .bind("train.patience_epochs", c.train.patience_epochs)
      .bind("train.max_epochs", c.train.max_epochs)
      .bind("train.seed", c.train.seed)
      .bind_string("precision", c.precision);
  b.apply(parse_key_values(text, origin));
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path), path);
}

}  // namespace kzr

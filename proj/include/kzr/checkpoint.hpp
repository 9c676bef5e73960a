#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   offset 0   4 bytes   magic "KZRD"
//   offset 4   u32       format version (1)
//   offset 8   u64       header length N
//   offset 16  N bytes   UTF-8 JSON header: configs, vocabulary, epoch,
//                        best validation SER, and a manifest listing every
//                        tensor as {name, dtype, shape}
//   then       payloads  raw little-endian tensor data, manifest order
//
// Tensor names: "param/<name>", "adadelta.mean_sq_grad/<name>",
// "adadelta.mean_sq_delta/<name>".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kzr/config.hpp"
#include "kzr/model.hpp"
#include "kzr/optim.hpp"

namespace kzr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in native order and assume little-endian");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'K', 'Z', 'R', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) {
    return "f32";
  } else {
    static_assert(std::is_same_v<T, double>, "scalar must be float or double");
    return "f64";
  }
}

template <typename T>
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<T> data;
  bool operator==(const NamedTensor&) const = default;
};

template <typename T>
struct Checkpoint {
  RunConfig config;
  std::vector<std::string> vocab_tokens;
  std::vector<NamedTensor<T>> params;
  std::vector<NamedTensor<T>> mean_sq_grad;
  std::vector<NamedTensor<T>> mean_sq_delta;
  std::uint64_t epoch = 0;
  std::optional<double> best_val_ser;
};

inline nlohmann::json config_to_json(const RunConfig& c) {
  return {{"encoder",
           {{"growth_rate", c.encoder.growth_rate},
            {"block_depth", c.encoder.block_depth},
            {"initial_channels", c.encoder.initial_channels},
            {"num_blocks", c.encoder.num_blocks},
            {"compression", c.encoder.compression},
            {"input_channels", c.encoder.input_channels},
            {"initial_kernel", c.encoder.initial_kernel},
            {"initial_stride", c.encoder.initial_stride},
            {"bottleneck_factor", c.encoder.bottleneck_factor}}},
          {"decoder",
           {{"hidden_size", c.decoder.hidden_size},
            {"embed_size", c.decoder.embed_size},
            {"attention_size", c.decoder.attention_size},
            {"max_decode_len", c.decoder.max_decode_len}}},
          {"train",
           {{"rho", c.train.rho},
            {"epsilon", c.train.epsilon},
            {"batch_size", c.train.batch_size},
            {"clip_norm", c.train.clip_norm},
            {"patience_epochs", c.train.patience_epochs},
            {"max_epochs", c.train.max_epochs},
            {"seed", c.train.seed}}},
          {"precision", c.precision}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  const auto& e = j.at("encoder");
  c.encoder.growth_rate = e.at("growth_rate");
  c.encoder.block_depth = e.at("block_depth");
  c.encoder.initial_channels = e.at("initial_channels");
  c.encoder.num_blocks = e.at("num_blocks");
  c.encoder.compression = e.at("compression");
  c.encoder.input_channels = e.at("input_channels");
  c.encoder.initial_kernel = e.at("initial_kernel");
  c.encoder.initial_stride = e.at("initial_stride");
  c.encoder.bottleneck_factor = e.at("bottleneck_factor");
  const auto& d = j.at("decoder");
  c.decoder.hidden_size = d.at("hidden_size");
  c.decoder.embed_size = d.at("embed_size");
  c.decoder.attention_size = d.at("attention_size");
  c.decoder.max_decode_len = d.at("max_decode_len");
  const auto& t = j.at("train");
  c.train.rho = t.at("rho");
  c.train.epsilon = t.at("epsilon");
  c.train.batch_size = t.at("batch_size");
  c.train.clip_norm = t.at("clip_norm");
  c.train.patience_epochs = t.at("patience_epochs");
  c.train.max_epochs = t.at("max_epochs");
  c.train.seed = t.at("seed");
  c.precision = j.at("precision");
  return c;
}

/// Captures parameters and optimizer state of a model.
template <typename T>
Checkpoint<T> make_checkpoint(const Model<T>& model, const RunConfig& config,
                              const AdaDeltaState<T>& opt, std::uint64_t epoch,
                              std::optional<double> best_val_ser) {
  Checkpoint<T> c;
  c.config = config;
  c.config.precision = dtype_name<T>();
  c.vocab_tokens = model.vocab().tokens();
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store[i];
    c.params.push_back({store.names()[i], t.shape(), {t.data().begin(), t.data().end()}});
    if (i < opt.mean_sq_grad.size()) {
      c.mean_sq_grad.push_back({store.names()[i], t.shape(), opt.mean_sq_grad[i]});
      c.mean_sq_delta.push_back({store.names()[i], t.shape(), opt.mean_sq_delta[i]});
    }
  }
  c.epoch = epoch;
  c.best_val_ser = best_val_ser;
  return c;
}

/// Copies checkpoint parameters into a model with the same architecture.
template <typename T>
void load_parameters(Model<T>& model, const Checkpoint<T>& c) {
  auto& store = model.params();
  if (c.params.size() != store.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(c.params.size()) +
                          " parameters, model has " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = c.params[i];
    if (p.name != store.names()[i] || p.shape != store[i].shape()) {
      throw CheckpointError("checkpoint parameter '" + p.name + "' " + shape_str(p.shape) +
                            " does not match model parameter '" + store.names()[i] + "' " +
                            shape_str(store[i].shape()));
    }
    std::copy(p.data.begin(), p.data.end(), store[i].mutable_data().begin());
  }
}

template <typename T>
AdaDeltaState<T> optimizer_state(const Checkpoint<T>& c) {
  AdaDeltaState<T> s;
  for (const auto& t : c.mean_sq_grad) s.mean_sq_grad.push_back(t.data);
  for (const auto& t : c.mean_sq_delta) s.mean_sq_delta.push_back(t.data);
  return s;
}

template <typename T>
std::unique_ptr<Model<T>> model_from_checkpoint(const Checkpoint<T>& c) {
  auto m = std::make_unique<Model<T>>(c.config.encoder, c.config.decoder,
                                      Vocabulary::from_tokens(c.vocab_tokens), 0);
  load_parameters(*m, c);
  return m;
}

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& c) {
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<const NamedTensor<T>*> order;
  auto add_group = [&](const std::vector<NamedTensor<T>>& group, const std::string& prefix) {
    for (const auto& t : group) {
      if (shape_numel(t.shape) != t.data.size()) {
        throw CheckpointError("tensor '" + t.name + "' data does not match its shape");
      }
      manifest.push_back({{"name", prefix + t.name}, {"dtype", dtype_name<T>()}, {"shape", t.shape}});
      order.push_back(&t);
    }
  };
  add_group(c.params, "param/");
  add_group(c.mean_sq_grad, "adadelta.mean_sq_grad/");
  add_group(c.mean_sq_delta, "adadelta.mean_sq_delta/");

  nlohmann::json header = {
      {"config", config_to_json(c.config)},
      {"vocab", c.vocab_tokens},
      {"vocab_hash", Vocabulary::from_tokens(c.vocab_tokens).hash()},
      {"epoch", c.epoch},
      {"best_val_ser", c.best_val_ser ? nlohmann::json(*c.best_val_ser) : nlohmann::json(nullptr)},
      {"tensors", manifest}};
  const std::string head = header.dump();

  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, head.size());
  out += head;
  for (const auto* t : order) {
    out.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(T));
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& c) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

namespace detail {

inline nlohmann::json read_checkpoint_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = get_le<std::uint64_t>(in, "header length");
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("checkpoint truncated in header");
  try {
    return nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
}

template <typename Stored, typename T>
std::vector<T> read_payload(std::istream& in, std::size_t n, const std::string& name) {
  std::vector<Stored> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(Stored)));
  if (!in) throw CheckpointError("checkpoint truncated in tensor '" + name + "'");
  return std::vector<T>(raw.begin(), raw.end());
}

}  // namespace detail

/// Scalar type the checkpoint was written with ("f32" or "f64").
inline std::string checkpoint_dtype(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  return detail::read_checkpoint_header(in).at("config").at("precision").get<std::string>();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(std::istream& in) {
  const nlohmann::json header = detail::read_checkpoint_header(in);
  Checkpoint<T> c;
  try {
    c.config = config_from_json(header.at("config"));
    c.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
    c.epoch = header.at("epoch").get<std::uint64_t>();
    if (!header.at("best_val_ser").is_null()) c.best_val_ser = header.at("best_val_ser").get<double>();
    if (header.at("vocab_hash").get<std::uint64_t>() !=
        Vocabulary::from_tokens(c.vocab_tokens).hash()) {
      throw CheckpointError("checkpoint vocabulary hash mismatch");
    }
    for (const auto& entry : header.at("tensors")) {
      NamedTensor<T> t;
      const auto full = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const std::size_t n = shape_numel(t.shape);
      if (dtype == "f32") {
        t.data = detail::read_payload<float, T>(in, n, full);
      } else if (dtype == "f64") {
        t.data = detail::read_payload<double, T>(in, n, full);
      } else {
        throw CheckpointError("tensor '" + full + "' has unknown dtype " + dtype);
      }
      const auto slash = full.find('/');
      const std::string group = full.substr(0, slash);
      t.name = full.substr(slash + 1);
      if (group == "param") {
        c.params.push_back(std::move(t));
      } else if (group == "adadelta.mean_sq_grad") {
        c.mean_sq_grad.push_back(std::move(t));
      } else if (group == "adadelta.mean_sq_delta") {
        c.mean_sq_delta.push_back(std::move(t));
      } else {
        throw CheckpointError("unknown tensor group in '" + full + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  c.config.precision = dtype_name<T>();
  return c;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  return deserialize_checkpoint<T>(in);
}

}  // namespace kzr

#pragma once

// The work behind each command-line subcommand. Every function throws on
// failure; the driver turns exceptions into a one-line diagnostic.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kzr/checkpoint.hpp"
#include "kzr/dataset.hpp"
#include "kzr/heatmap.hpp"
#include "kzr/synth.hpp"
#include "kzr/trainer.hpp"

namespace kzr {

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

/// Reads KZR_LOG (quiet | info | debug); info when unset.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("KZR_LOG");
  if (!v) return LogLevel::kInfo;
  const std::string s = v;
  if (s == "quiet" || s == "0") return LogLevel::kQuiet;
  if (s == "debug" || s == "2") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

class Logger {
 public:
  explicit Logger(LogLevel level = log_level_from_env(), std::ostream& out = std::cerr)
      : level_(level), out_(&out) {}
  void info(const std::string& msg) const {
    if (level_ >= LogLevel::kInfo) *out_ << msg << '\n';
  }
  void debug(const std::string& msg) const {
    if (level_ >= LogLevel::kDebug) *out_ << msg << '\n';
  }
  std::ostream& stream() const { return *out_; }

 private:
  LogLevel level_;
  std::ostream* out_;
};

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::string spec_file;  // empty: built-in defaults
  std::size_t count = 500;
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;
};

inline void write_placements(const std::filesystem::path& path, const std::vector<SynthDocument>& docs,
                             const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "id\tindex\ttoken\tcolumn\trow\tx0\ty0\tx1\ty1\n";
  for (const auto& d : docs)
    for (std::size_t i = 0; i < d.placements.size(); ++i) {
      const auto& p = d.placements[i];
      out << d.sample.id << '\t' << i << '\t' << vocab.token(p.token) << '\t' << p.column << '\t'
          << p.row << '\t' << p.x0 << '\t' << p.y0 << '\t' << p.x1 << '\t' << p.y1 << '\n';
    }
}

/// Reads a placements.tsv written by cmd_synth, keyed by sample id.
inline std::map<std::string, std::vector<Placement>> read_placements(
    const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("missing file " + path.string());
  std::map<std::string, std::vector<Placement>> out;
  std::string line;
  std::getline(in, line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, token;
    std::size_t index = 0;
    Placement p;
    if (!(row >> id >> index >> token >> p.column >> p.row >> p.x0 >> p.y0 >> p.x1 >> p.y1)) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": malformed placement row");
    }
    p.token = vocab.index(token);
    out[id].push_back(p);
  }
  return out;
}

inline void cmd_synth(const SynthOptions& opt, const Logger& log = Logger()) {
  const SynthSpec spec = opt.spec_file.empty()
                             ? SynthSpec{}
                             : parse_synth_spec(read_text_file(opt.spec_file), opt.spec_file);
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(opt.out_dir / "images", ec);
  if (ec) throw DatasetError("cannot create " + opt.out_dir.string() + ": " + ec.message());
  const Vocabulary vocab = spec.vocabulary();
  const auto docs = generate_corpus(spec, opt.count, opt.seed);
  std::vector<Sample> samples;
  std::vector<TaggedId> ids;
  for (const auto& d : docs) {
    samples.push_back(d.sample);
    ids.push_back({d.sample.id, d.sample.tag});
  }
  save_dataset(opt.out_dir, samples, vocab);
  write_placements(opt.out_dir / "placements.tsv", docs, vocab);
  SplitManifest manifest;
  manifest.seed = opt.seed;
  manifest.holdout_rule = "none";
  if (!ids.empty()) manifest = make_split(ids, 9, 1, "", opt.seed);
  manifest.save(opt.out_dir / "manifest.json");
  log.info("wrote " + std::to_string(docs.size()) + " documents to " + opt.out_dir.string() +
           " (train " + std::to_string(manifest.train.size()) + ", validation " +
           std::to_string(manifest.validation.size()) + ")");
}

// ---------------------------------------------------------------- datasets

struct LoadedData {
  Vocabulary vocab;
  std::vector<Sample> all;
  SplitManifest manifest;
};

inline LoadedData load_data_dir(const std::filesystem::path& dir, std::uint64_t fallback_seed,
                                const Logger& log) {
  LoadedData d;
  d.vocab = Vocabulary::load((dir / "vocab.txt").string());
  d.all = load_dataset(dir, d.vocab, log.stream());
  if (std::filesystem::exists(dir / "manifest.json")) {
    d.manifest = SplitManifest::load(dir / "manifest.json");
  } else if (!d.all.empty()) {
    log.info("no manifest.json in " + dir.string() + ", splitting 9:1 with seed " +
             std::to_string(fallback_seed));
    std::vector<TaggedId> ids;
    for (const auto& s : d.all) ids.push_back({s.id, s.tag});
    d.manifest = make_split(ids, 9, 1, "", fallback_seed);
  }
  return d;
}

inline std::vector<Sample> split_samples(const LoadedData& d, const std::string& split) {
  if (split == "train") return select(d.all, d.manifest.train);
  if (split == "validation") return select(d.all, d.manifest.validation);
  if (split == "test") return select(d.all, d.manifest.test);
  if (split == "all") return d.all;
  throw std::invalid_argument("unknown split '" + split + "' (train, validation, test, all)");
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::filesystem::path data_dir;
  std::string config_file;  // empty: defaults
  std::filesystem::path out_checkpoint;
  std::filesystem::path resume;    // optional
  std::filesystem::path log_csv;   // empty: <out_checkpoint>.csv
};

inline void write_epoch_csv_header(std::ostream& out) {
  out << "epoch,train_loss,val_cer,val_ser,improved,seconds\n";
}

inline void write_epoch_csv_row(std::ostream& out, const EpochLog& l) {
  out << l.epoch << ',' << std::setprecision(10) << l.train_loss << ',' << l.val_cer << ','
      << l.val_ser << ',' << (l.improved ? 1 : 0) << ',' << std::setprecision(4) << l.seconds
      << '\n';
  out.flush();
}

template <typename T>
TrainResult<T> run_training(const TrainOptions& opt, const RunConfig& rc, const LoadedData& data,
                            const Logger& log) {
  auto train_set = select(data.all, data.manifest.train);
  auto val_set = select(data.all, data.manifest.validation);
  if (train_set.empty()) throw DatasetError("training split is empty");
  if (val_set.empty()) throw DatasetError("validation split is empty");

  std::unique_ptr<Model<T>> model;
  std::optional<Checkpoint<T>> resume;
  if (!opt.resume.empty()) {
    resume = load_checkpoint<T>(opt.resume);
    if (Vocabulary::from_tokens(resume->vocab_tokens) != data.vocab) {
      throw CheckpointError("vocabulary of " + opt.resume.string() + " does not match " +
                            (opt.data_dir / "vocab.txt").string());
    }
    // The architecture is fixed by the checkpoint being resumed.
    model = std::make_unique<Model<T>>(resume->config.encoder, resume->config.decoder, data.vocab,
                                       rc.train.seed);
  } else {
    model = std::make_unique<Model<T>>(rc.encoder, rc.decoder, data.vocab, rc.train.seed);
  }
  for (auto* set : {&train_set, &val_set})
    for (auto& s : *set) s.image = pad_to_multiple(s.image, model->downsample_factor());
  RunConfig effective = rc;
  effective.encoder = model->encoder().config();
  effective.decoder = model->decoder().config();
  effective.precision = dtype_name<T>();

  Trainer<T> trainer(*model, effective);
  if (resume) trainer.resume(*resume);
  log.info("training " + std::to_string(model->params().scalar_count()) + " parameters on " +
           std::to_string(train_set.size()) + " samples, validating on " +
           std::to_string(val_set.size()));

  const auto csv_path =
      opt.log_csv.empty() ? std::filesystem::path(opt.out_checkpoint.string() + ".csv") : opt.log_csv;
  std::ofstream csv(csv_path, resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  if (!resume) write_epoch_csv_header(csv);

  TrainHooks<T> hooks;
  hooks.on_epoch = [&](const EpochLog& l) {
    write_epoch_csv_row(csv, l);
    std::ostringstream os;
    os << "epoch " << l.epoch << " loss " << l.train_loss << " val_cer " << l.val_cer
       << " val_ser " << l.val_ser << (l.improved ? " *" : "") << " (" << std::fixed
       << std::setprecision(1) << l.seconds << "s)";
    log.info(os.str());
    if (l.improved) save_checkpoint(opt.out_checkpoint, trainer.snapshot());
  };
  auto result = trainer.run(train_set, val_set, hooks);
  save_checkpoint(opt.out_checkpoint, result.best);
  if (result.stopped_early) log.info("stopped early after " + std::to_string(trainer.epoch()) + " epochs");
  return result;
}

inline void cmd_train(const TrainOptions& opt, const Logger& log = Logger()) {
  const RunConfig rc = opt.config_file.empty() ? RunConfig{} : load_run_config(opt.config_file);
  rc.validate();
  const LoadedData data = load_data_dir(opt.data_dir, rc.train.seed, log);
  std::string precision = rc.precision;
  if (!opt.resume.empty()) precision = checkpoint_dtype(opt.resume);
  if (precision == "f64") {
    run_training<double>(opt, rc, data, log);
  } else {
    run_training<float>(opt, rc, data, log);
  }
  log.info("wrote " + opt.out_checkpoint.string());
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint;
  std::string split = "test";
  std::filesystem::path json_out;  // optional
};

template <typename T>
EvalReport evaluate_checkpoint(const Checkpoint<T>& c, const std::vector<Sample>& samples) {
  auto model = model_from_checkpoint(c);
  std::vector<Sample> padded = samples;
  for (auto& s : padded) s.image = pad_to_multiple(s.image, model->downsample_factor());
  return evaluate_model(*model, padded);
}

inline EvalReport cmd_eval(const EvalOptions& opt, std::ostream& out, const Logger& log = Logger()) {
  const LoadedData data = load_data_dir(opt.data_dir, 1, log);
  const auto samples = split_samples(data, opt.split);
  if (samples.empty()) throw DatasetError("split '" + opt.split + "' of " + opt.data_dir.string() + " is empty");
  EvalReport report;
  const std::string dtype = checkpoint_dtype(opt.checkpoint);
  if (dtype == "f64") {
    const auto c = load_checkpoint<double>(opt.checkpoint);
    if (Vocabulary::from_tokens(c.vocab_tokens) != data.vocab)
      throw CheckpointError("checkpoint vocabulary does not match the dataset vocabulary");
    report = evaluate_checkpoint(c, samples);
  } else {
    const auto c = load_checkpoint<float>(opt.checkpoint);
    if (Vocabulary::from_tokens(c.vocab_tokens) != data.vocab)
      throw CheckpointError("checkpoint vocabulary does not match the dataset vocabulary");
    report = evaluate_checkpoint(c, samples);
  }
  out << report.to_text();
  if (!opt.json_out.empty()) {
    std::ofstream js(opt.json_out, std::ios::binary);
    if (!js) throw std::runtime_error("cannot write " + opt.json_out.string());
    js << report.to_json().dump(2) << '\n';
  }
  return report;
}

// ---------------------------------------------------------------- recognize

struct RecognizeOptions {
  std::filesystem::path image;
  std::filesystem::path checkpoint;
  std::filesystem::path trace_dir;  // optional
};

struct Recognition {
  std::string text;
  std::vector<std::string> tokens;
  std::size_t frames_written = 0;
  bool padded = false;
};

/// One frame per decoding step. The step that produced <E> is included.
inline std::vector<HeatmapFrame> heatmap_frames(const GrayImage& image, const DecodeResult& r,
                                                std::size_t downsample_factor,
                                                const Vocabulary& vocab) {
  std::vector<HeatmapFrame> frames;
  for (std::size_t t = 0; t < r.trace.size(); ++t) {
    HeatmapFrame f;
    f.base = image;
    f.alpha = upsample_alpha(r.trace[t], r.trace_height, r.trace_width, downsample_factor,
                             image.height, image.width);
    f.step = t + 1;
    f.token = t < r.tokens.size() ? vocab.token(r.tokens[t])
                                  : (r.truncated ? "" : Vocabulary::kEndToken);
    frames.push_back(std::move(f));
  }
  return frames;
}

template <typename T>
Recognition recognize_with(const Checkpoint<T>& c, const RecognizeOptions& opt, const Logger& log) {
  auto model = model_from_checkpoint(c);
  const GrayImage original = read_pgm(opt.image.string());
  const std::size_t factor = model->downsample_factor();
  const GrayImage image = pad_to_multiple(original, factor);
  Recognition rec;
  if (!(image == original)) {
    rec.padded = true;
    log.stream() << "note: padded " << original.height << "x" << original.width << " image to "
                 << image.height << "x" << image.width << " (multiple of " << factor << ")\n";
  }
  const DecodeResult r = model->recognize(image);
  for (std::size_t t : r.tokens) {
    rec.tokens.push_back(model->vocab().token(t));
    rec.text += rec.tokens.back();
  }
  if (r.truncated) log.stream() << "note: stopped at max_decode_len without <E>\n";
  if (!opt.trace_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(opt.trace_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + opt.trace_dir.string() + ": " + ec.message());
    std::ofstream index(opt.trace_dir / "frames.tsv", std::ios::binary);
    index << "step\ttoken\tfile\n";
    for (const auto& f : heatmap_frames(image, r, factor, model->vocab())) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%03zu.ppm", f.step);
      write_ppm((opt.trace_dir / name).string(), render_frame(f));
      index << f.step << '\t' << f.token << '\t' << name << '\n';
      ++rec.frames_written;
    }
  }
  return rec;
}

inline Recognition cmd_recognize(const RecognizeOptions& opt, std::ostream& out,
                                 const Logger& log = Logger()) {
  Recognition rec = checkpoint_dtype(opt.checkpoint) == "f64"
                        ? recognize_with(load_checkpoint<double>(opt.checkpoint), opt, log)
                        : recognize_with(load_checkpoint<float>(opt.checkpoint), opt, log);
  out << rec.text << '\n';
  return rec;
}

// ---------------------------------------------------------------- sweep

struct SweepPoint {
  std::size_t growth_rate = 0;
  std::size_t block_depth = 0;
};

/// Parses "8x4,16x4" into (K, D) pairs.
inline std::vector<SweepPoint> parse_grid(const std::string& text) {
  std::vector<SweepPoint> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto x = item.find('x');
    SweepPoint p;
    try {
      if (x == std::string::npos) throw std::invalid_argument(item);
      std::size_t pos = 0;
      p.growth_rate = std::stoul(item.substr(0, x), &pos);
      if (pos != x) throw std::invalid_argument(item);
      const std::string d = item.substr(x + 1);
      p.block_depth = std::stoul(d, &pos);
      if (pos != d.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad grid entry '" + item + "', expected KxD such as 16x8");
    }
    if (p.growth_rate == 0 || p.block_depth == 0)
      throw std::invalid_argument("bad grid entry '" + item + "', K and D must be >= 1");
    out.push_back(p);
  }
  if (out.empty()) throw std::invalid_argument("empty sweep grid");
  if (trim(text).back() == ',') throw std::invalid_argument("sweep grid ends with a comma");
  return out;
}

struct SweepRow {
  std::size_t growth_rate = 0;
  std::size_t block_depth = 0;
  std::size_t feature_channels = 0;
  std::size_t parameters = 0;
  std::size_t epochs = 0;
  double cer = 0.0;
  double ser = 0.0;
};

/// Stable sort by CER, ties keep grid order.
inline void sort_sweep(std::vector<SweepRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.cer < b.cer; });
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "growth_rate,block_depth,feature_channels,parameters,epochs,cer,ser\n";
  for (const auto& r : rows) {
    out << r.growth_rate << ',' << r.block_depth << ',' << r.feature_channels << ','
        << r.parameters << ',' << r.epochs << ',' << std::setprecision(10) << r.cer << ','
        << r.ser << '\n';
  }
}

struct SweepOptions {
  std::filesystem::path data_dir;
  std::string grid = "16x16,24x16,16x8,24x8";
  std::string config_file;
  std::filesystem::path out_csv;  // empty: stdout only
};

template <typename T>
SweepRow sweep_point(const RunConfig& rc, const LoadedData& data, const Logger& log) {
  Model<T> model(rc.encoder, rc.decoder, data.vocab, rc.train.seed);
  TrainHooks<T> hooks;
  hooks.on_epoch = [&](const EpochLog& l) {
    log.debug("  epoch " + std::to_string(l.epoch) + " val_ser " + std::to_string(l.val_ser));
  };
  const auto val = select(data.all, data.manifest.validation);
  auto result = train(model, select(data.all, data.manifest.train), val, rc, hooks);
  const EvalReport report = evaluate_model(model, val);
  SweepRow row;
  row.growth_rate = rc.encoder.growth_rate;
  row.block_depth = rc.encoder.block_depth;
  row.feature_channels = rc.encoder.output_channels();
  row.parameters = model.params().scalar_count();
  row.epochs = result.log.size();
  row.cer = report.cer;
  row.ser = report.ser;
  return row;
}

inline std::vector<SweepRow> cmd_sweep(const SweepOptions& opt, std::ostream& out,
                                       const Logger& log = Logger()) {
  const auto grid = parse_grid(opt.grid);
  const RunConfig base = opt.config_file.empty() ? RunConfig{} : load_run_config(opt.config_file);
  const LoadedData data = load_data_dir(opt.data_dir, base.train.seed, log);
  if (data.manifest.train.empty() || data.manifest.validation.empty())
    throw DatasetError("sweep needs non-empty training and validation splits");
  std::vector<SweepRow> rows;
  for (const auto& p : grid) {
    RunConfig rc = base;
    rc.encoder.growth_rate = p.growth_rate;
    rc.encoder.block_depth = p.block_depth;
    log.info("sweep: K=" + std::to_string(p.growth_rate) + " D=" + std::to_string(p.block_depth));
    rows.push_back(rc.precision == "f64" ? sweep_point<double>(rc, data, log)
                                         : sweep_point<float>(rc, data, log));
  }
  sort_sweep(rows);
  write_sweep_csv(out, rows);
  if (!opt.out_csv.empty()) {
    std::ofstream f(opt.out_csv, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + opt.out_csv.string());
    write_sweep_csv(f, rows);
  }
  return rows;
}

}  // namespace kzr

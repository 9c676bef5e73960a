#pragma once

// On-disk datasets.
//
//   root/labels.tsv      one sample per row:
//                        relative/image/path <TAB> space-separated tokens [<TAB> tag]
//   root/images/*.pgm    binary graymaps
//   root/vocab.txt       vocabulary file
//   root/manifest.json   split manifest
//
// The optional tag column groups samples (e.g. by source book); make_split
// sends every sample carrying the holdout tag to the test set.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kzr/image.hpp"
#include "kzr/params.hpp"
#include "kzr/vocab.hpp"

namespace kzr {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  GrayImage image;
  std::vector<std::size_t> target;  // vocabulary indices, no markers
  std::string id;
  std::string tag;
};

inline std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

/// Reads root/labels.tsv and every image it references.
inline std::vector<Sample> load_dataset(const std::filesystem::path& root, const Vocabulary& vocab,
                                        std::ostream& warn = std::cerr) {
  const auto labels = root / "labels.tsv";
  std::ifstream in(labels, std::ios::binary);
  if (!in) throw DatasetError("missing file " + labels.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = labels.string() + ":" + std::to_string(lineno) + ": ";
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 2 || cols.size() > 3 || cols[0].empty()) {
      throw DatasetError(where + "malformed row, expected path<TAB>tokens[<TAB>tag]");
    }
    Sample s;
    for (const auto& tok : split_tokens(cols[1])) {
      if (!vocab.contains(tok)) throw DatasetError(where + "unknown token '" + tok + "'");
      const std::size_t idx = vocab.index(tok);
      if (Vocabulary::is_reserved(idx)) {
        throw DatasetError(where + "reserved token '" + tok + "' in transcription");
      }
      s.target.push_back(idx);
    }
    if (s.target.empty()) throw DatasetError(where + "empty transcription");
    const auto image_path = root / cols[0];
    if (!std::filesystem::exists(image_path)) {
      throw DatasetError(where + "missing image " + image_path.string());
    }
    s.image = read_pgm(image_path.string());
    s.id = std::filesystem::path(cols[0]).stem().string();
    if (cols.size() == 3) s.tag = cols[2];
    out.push_back(std::move(s));
  }
  if (out.empty()) warn << "warning: " << labels.string() << " lists no samples\n";
  return out;
}

/// Writes images under root/images and rewrites root/labels.tsv.
inline void save_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples,
                         const Vocabulary& vocab) {
  std::filesystem::create_directories(root / "images");
  std::ofstream labels(root / "labels.tsv", std::ios::binary);
  if (!labels) throw DatasetError("cannot write " + (root / "labels.tsv").string());
  for (const auto& s : samples) {
    const std::string rel = "images/" + s.id + ".pgm";
    write_pgm((root / rel).string(), s.image);
    labels << rel << '\t' << vocab.join(s.target, " ");
    if (!s.tag.empty()) labels << '\t' << s.tag;
    labels << '\n';
  }
  vocab.save((root / "vocab.txt").string());
}

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  double train_ratio = 9.0;
  double validation_ratio = 1.0;
  std::string holdout_tag;
  std::string holdout_rule;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"train", train},
                          {"validation", validation},
                          {"test", test},
                          {"ratio", {train_ratio, validation_ratio}},
                          {"holdout_tag", holdout_tag},
                          {"holdout_rule", holdout_rule},
                          {"seed", seed}};
  }

  static SplitManifest from_json(const nlohmann::json& j) {
    SplitManifest m;
    m.train = j.at("train").get<std::vector<std::string>>();
    m.validation = j.at("validation").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
    m.train_ratio = j.at("ratio").at(0).get<double>();
    m.validation_ratio = j.at("ratio").at(1).get<double>();
    m.holdout_tag = j.at("holdout_tag").get<std::string>();
    m.holdout_rule = j.at("holdout_rule").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    return m;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
  }

  static SplitManifest load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("missing file " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(path.string() + ": " + e.what());
    }
  }
};

struct TaggedId {
  std::string id;
  std::string tag;
};

/// Samples tagged `holdout_tag` go to test; the rest are shuffled with
/// `seed` and divided train:validation = ratio_train:ratio_val, with the
/// train count rounded to nearest.
inline SplitManifest make_split(const std::vector<TaggedId>& ids, double ratio_train,
                                double ratio_val, const std::string& holdout_tag,
                                std::uint64_t seed) {
  if (ids.empty()) throw std::invalid_argument("make_split: no sample ids");
  if (!(ratio_train > 0.0) || !(ratio_val >= 0.0))
    throw std::invalid_argument("make_split: ratios must be positive");
  SplitManifest m;
  m.train_ratio = ratio_train;
  m.validation_ratio = ratio_val;
  m.holdout_tag = holdout_tag;
  m.seed = seed;
  m.holdout_rule = holdout_tag.empty() ? "none"
                                       : "samples tagged '" + holdout_tag + "' form the test set";
  std::vector<std::string> rest;
  std::set<std::string> seen;
  for (const auto& t : ids) {
    if (!seen.insert(t.id).second) throw std::invalid_argument("make_split: duplicate id " + t.id);
    if (!holdout_tag.empty() && t.tag == holdout_tag) {
      m.test.push_back(t.id);
    } else {
      rest.push_back(t.id);
    }
  }
  if (rest.empty()) {
    throw std::invalid_argument("make_split: every sample carries the holdout tag '" +
                                holdout_tag + "'");
  }
  Rng rng(seed);
  rng.shuffle(rest.begin(), rest.end());
  const double frac = ratio_train / (ratio_train + ratio_val);
  auto n_train = static_cast<std::size_t>(std::llround(frac * static_cast<double>(rest.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, rest.size());
  m.train.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.validation.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_train), rest.end());
  return m;
}

/// Picks samples by id, in manifest order.
inline std::vector<Sample> select(const std::vector<Sample>& all,
                                  const std::vector<std::string>& ids) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : all) by_id[s.id] = &s;
  std::vector<Sample> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DatasetError("manifest references unknown sample '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace kzr

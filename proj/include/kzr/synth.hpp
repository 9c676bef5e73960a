#pragma once

// Seeded generator of multi-column vertical documents.
//
// The canvas is divided into lines_max columns and chars_max rows of slots.
// Column 0 is the rightmost; a document with n columns fills columns
// 0..n-1. Reading order, and therefore the transcription, runs top to
// bottom within a column and columns right to left.
//
// Glyphs are procedurally drawn stroke bitmaps, one per class, derived from
// glyph_seed and forced to be pairwise distinct.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kzr/config.hpp"
#include "kzr/dataset.hpp"
#include "kzr/image.hpp"
#include "kzr/params.hpp"
#include "kzr/vocab.hpp"

namespace kzr {

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& hiragana_tokens() {
  static const std::vector<std::string> kTokens = {
      "あ", "い", "う", "え", "お", "か", "き", "く", "け", "こ", "さ", "し",
      "す", "せ", "そ", "た", "ち", "つ", "て", "と", "な", "に", "ぬ", "ね",
      "の", "は", "ひ", "ふ", "へ", "ほ", "ま", "み", "む", "め", "も", "や",
      "ゆ", "よ", "ら", "り", "る", "れ", "ろ", "わ", "を", "ん"};
  return kTokens;
}

struct SynthSpec {
  std::size_t canvas_height = 96;
  std::size_t canvas_width = 64;
  std::size_t num_classes = 10;
  std::size_t glyph_size = 20;
  std::size_t strokes = 4;
  std::size_t lines_min = 2;
  std::size_t lines_max = 2;
  std::size_t chars_min = 3;
  std::size_t chars_max = 3;
  std::size_t jitter = 3;
  double noise = 0.005;
  std::uint64_t glyph_seed = 7;

  std::size_t column_width() const { return canvas_width / lines_max; }
  std::size_t slot_height() const { return canvas_height / chars_max; }

  void validate() const {
    if (num_classes < 1 || num_classes > hiragana_tokens().size())
      throw SynthError("synth: num_classes must be in [1, " +
                       std::to_string(hiragana_tokens().size()) + "]");
    if (lines_min < 1 || lines_min > lines_max || chars_min < 1 || chars_min > chars_max)
      throw SynthError("synth: line and character ranges must be non-empty and start at >= 1");
    if (glyph_size < 4) throw SynthError("synth: glyph_size must be >= 4");
    if (!(noise >= 0.0 && noise <= 1.0)) throw SynthError("synth: noise must be in [0, 1]");
    const std::size_t need = glyph_size + 2 * jitter;
    if (need > column_width() || need > slot_height()) {
      throw SynthError("synth: glyph overflow, " + std::to_string(lines_max) + " columns x " +
                       std::to_string(chars_max) + " characters of " + std::to_string(need) +
                       " px do not fit a " + std::to_string(canvas_height) + "x" +
                       std::to_string(canvas_width) + " canvas");
    }
  }

  Vocabulary vocabulary() const {
    const auto& all = hiragana_tokens();
    return Vocabulary(std::vector<std::string>(all.begin(), all.begin() + num_classes));
  }
};

inline SynthSpec parse_synth_spec(const std::string& text, const std::string& origin = "spec") {
  SynthSpec s;
  ConfigBinder b(origin);
  b.bind("canvas_height", s.canvas_height)
      .bind("canvas_width", s.canvas_width)
      .bind("num_classes", s.num_classes)
      .bind("glyph_size", s.glyph_size)
      .bind("strokes", s.strokes)
      .bind("lines_min", s.lines_min)
      .bind("lines_max", s.lines_max)
      .bind("chars_min", s.chars_min)
      .bind("chars_max", s.chars_max)
      .bind("jitter", s.jitter)
      .bind("noise", s.noise)
      .bind("glyph_seed", s.glyph_seed);
  b.apply(parse_key_values(text, origin));
  s.validate();
  return s;
}

/// Where one character was stamped. Box bounds are half-open pixels.
struct Placement {
  std::size_t token = 0;
  std::size_t column = 0;  // 0 = rightmost
  std::size_t row = 0;     // 0 = top
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(double x, double y) const {
    return x >= static_cast<double>(x0) && x < static_cast<double>(x1) &&
           y >= static_cast<double>(y0) && y < static_cast<double>(y1);
  }
  bool operator==(const Placement&) const = default;
};

struct SynthDocument {
  Sample sample;
  std::vector<Placement> placements;  // in transcription order
};

/// splitmix64 finalizer; derives independent per-document seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class GlyphSet {
 public:
  explicit GlyphSet(const SynthSpec& spec) : size_(spec.glyph_size) {
    spec.validate();
    Rng rng(spec.glyph_seed);
    std::size_t attempts = 0;
    while (glyphs_.size() < spec.num_classes) {
      if (++attempts > 1000 * spec.num_classes) {
        throw SynthError("synth: could not draw " + std::to_string(spec.num_classes) +
                         " distinct glyphs of size " + std::to_string(spec.glyph_size));
      }
      GrayImage g = draw(spec, rng);
      bool distinct = true;
      for (const auto& other : glyphs_) distinct = distinct && differs(g, other);
      if (distinct) glyphs_.push_back(std::move(g));
    }
  }

  std::size_t size() const { return glyphs_.size(); }
  std::size_t glyph_size() const { return size_; }
  const GrayImage& glyph(std::size_t cls) const { return glyphs_.at(cls); }

 private:
  static void stamp_disc(GrayImage& g, double cx, double cy, double r) {
    for (std::size_t y = 0; y < g.height; ++y)
      for (std::size_t x = 0; x < g.width; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx;
        const double dy = static_cast<double>(y) + 0.5 - cy;
        if (dx * dx + dy * dy <= r * r) g.at(y, x) = 255;
      }
  }

  static GrayImage draw(const SynthSpec& spec, Rng& rng) {
    const double n = static_cast<double>(spec.glyph_size);
    const double margin = 2.0;
    const double radius = std::max(1.0, n / 12.0);
    GrayImage g(spec.glyph_size, spec.glyph_size);
    for (std::size_t s = 0; s < spec.strokes; ++s) {
      const double x0 = rng.uniform(margin, n - margin), y0 = rng.uniform(margin, n - margin);
      const double x1 = rng.uniform(margin, n - margin), y1 = rng.uniform(margin, n - margin);
      const int steps = static_cast<int>(std::ceil(std::hypot(x1 - x0, y1 - y0) * 2)) + 1;
      for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        stamp_disc(g, x0 + t * (x1 - x0), y0 + t * (y1 - y0), radius);
      }
    }
    return g;
  }

  // At least 30% of the union of ink differs.
  static bool differs(const GrayImage& a, const GrayImage& b) {
    std::size_t uni = 0, diff = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
      const bool pa = a.pixels[i] != 0, pb = b.pixels[i] != 0;
      uni += (pa || pb);
      diff += (pa != pb);
    }
    return uni > 0 && static_cast<double>(diff) >= 0.3 * static_cast<double>(uni);
  }

  std::size_t size_;
  std::vector<GrayImage> glyphs_;
};

/// One document, fully determined by (spec, glyphs, seed).
inline SynthDocument generate_document(const SynthSpec& spec, const GlyphSet& glyphs,
                                       std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const auto lines = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(spec.lines_min), static_cast<std::int64_t>(spec.lines_max)));
  SynthDocument doc;
  doc.sample.image = GrayImage(spec.canvas_height, spec.canvas_width);
  doc.sample.id = "synth-" + std::to_string(seed);
  const std::size_t cw = spec.column_width(), sh = spec.slot_height(), gs = spec.glyph_size;
  const auto j = static_cast<std::int64_t>(spec.jitter);
  for (std::size_t col = 0; col < lines; ++col) {
    const auto chars = static_cast<std::size_t>(rng.integer(
        static_cast<std::int64_t>(spec.chars_min), static_cast<std::int64_t>(spec.chars_max)));
    // Column 0 hugs the right edge.
    const std::size_t col_left = spec.canvas_width - (col + 1) * cw;
    for (std::size_t row = 0; row < chars; ++row) {
      const std::size_t cls =
          static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(glyphs.size()) - 1));
      const std::int64_t jx = j > 0 ? rng.integer(-j, j) : 0;
      const std::int64_t jy = j > 0 ? rng.integer(-j, j) : 0;
      const auto x0 = static_cast<std::size_t>(static_cast<std::int64_t>(col_left + (cw - gs) / 2) + jx);
      const auto y0 = static_cast<std::size_t>(static_cast<std::int64_t>(row * sh + (sh - gs) / 2) + jy);
      const GrayImage& g = glyphs.glyph(cls);
      for (std::size_t y = 0; y < gs; ++y)
        for (std::size_t x = 0; x < gs; ++x) {
          auto& px = doc.sample.image.at(y0 + y, x0 + x);
          px = std::max(px, g.at(y, x));
        }
      const std::size_t token = cls + 2;  // after <S>, <E>
      doc.sample.target.push_back(token);
      doc.placements.push_back({token, col, row, x0, y0, x0 + gs, y0 + gs});
    }
  }
  if (spec.noise > 0.0) {
    for (auto& px : doc.sample.image.pixels)
      if (rng.uniform() < spec.noise) px = 255;
  }
  return doc;
}

inline SynthDocument generate_document(const SynthSpec& spec, std::uint64_t seed) {
  return generate_document(spec, GlyphSet(spec), seed);
}

/// `count` documents with ids doc000000.. and seeds mix_seed(seed, i).
inline std::vector<SynthDocument> generate_corpus(const SynthSpec& spec, std::size_t count,
                                                  std::uint64_t seed) {
  const GlyphSet glyphs(spec);
  std::vector<SynthDocument> docs;
  docs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SynthDocument d = generate_document(spec, glyphs, mix_seed(seed, i));
    char id[32];
    std::snprintf(id, sizeof id, "doc%06zu", i);
    d.sample.id = id;
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace kzr

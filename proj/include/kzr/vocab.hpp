#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace kzr {

/// Ordered token set. Index 0 is the start marker "<S>", index 1 the end
/// marker "<E>"; character tokens follow.
class Vocabulary {
 public:
  static constexpr std::size_t kStart = 0;
  static constexpr std::size_t kEnd = 1;
  static constexpr const char* kStartToken = "<S>";
  static constexpr const char* kEndToken = "<E>";

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Builds a vocabulary from character tokens; the markers are prepended.
  explicit Vocabulary(const std::vector<std::string>& characters) {
    push(kStartToken);
    push(kEndToken);
    for (const auto& c : characters) {
      if (c == kStartToken || c == kEndToken) {
        throw std::invalid_argument("vocabulary: reserved token '" + c + "' in character list");
      }
      push(c);
    }
  }

  /// Full token list including markers, as stored in a vocabulary file.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < 2 || tokens[0] != kStartToken || tokens[1] != kEndToken) {
      throw std::invalid_argument("vocabulary: first two tokens must be <S> and <E>");
    }
    return Vocabulary(std::vector<std::string>(tokens.begin() + 2, tokens.end()));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(std::size_t index) const { return tokens_.at(index); }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  std::size_t index(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw std::out_of_range("vocabulary: unknown token '" + token + "'");
    return it->second;
  }

  static bool is_reserved(std::size_t index) { return index == kStart || index == kEnd; }

  std::string join(const std::vector<std::size_t>& seq, const std::string& sep = "") const {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out += sep;
      out += token(seq[i]);
    }
    return out;
  }

  /// FNV-1a over the newline-joined token list.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
      for (unsigned char ch : t) {
        h ^= ch;
        h *= 1099511628211ULL;
      }
      h ^= '\n';
      h *= 1099511628211ULL;
    }
    return h;
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

  /// One token per line, UTF-8; line n holds index n - 1.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty token");
      }
      tokens.push_back(line);
    }
    return from_tokens(tokens);
  }

 private:
  void push(const std::string& t) {
    if (!index_.emplace(t, tokens_.size()).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + t + "'");
    }
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace kzr

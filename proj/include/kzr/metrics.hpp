#pragma once

// Character and sequence error rates.
//
//   CER = (sum of edit distances) / (total target tokens)
//   SER = (number of hypotheses that differ from their target) / (number of pairs)
//
// Tokens compare by vocabulary index. CER can exceed 1 when hypotheses are
// longer than their targets.

#include <algorithm>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace kzr {

/// Unit-cost Levenshtein distance, two-row dynamic program.
template <typename Tok>
std::size_t levenshtein(std::span<const Tok> a, std::span<const Tok> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename Tok>
std::size_t levenshtein(const std::vector<Tok>& a, const std::vector<Tok>& b) {
  return levenshtein(std::span<const Tok>(a), std::span<const Tok>(b));
}

using TokenSeq = std::vector<std::size_t>;

struct EvalReport {
  double cer = 0.0;
  double ser = 0.0;
  std::size_t total_target_tokens = 0;
  std::size_t num_sequences = 0;
  std::size_t exact_matches = 0;
  std::vector<std::size_t> edit_distances;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "cer=" << cer << '\n'
       << "ser=" << ser << '\n'
       << "total_target_tokens=" << total_target_tokens << '\n'
       << "num_sequences=" << num_sequences << '\n'
       << "exact_matches=" << exact_matches << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"cer", cer},
                          {"ser", ser},
                          {"total_target_tokens", total_target_tokens},
                          {"num_sequences", num_sequences},
                          {"exact_matches", exact_matches},
                          {"edit_distances", edit_distances}};
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.cer = j.at("cer").get<double>();
    r.ser = j.at("ser").get<double>();
    r.total_target_tokens = j.at("total_target_tokens").get<std::size_t>();
    r.num_sequences = j.at("num_sequences").get<std::size_t>();
    r.exact_matches = j.at("exact_matches").get<std::size_t>();
    r.edit_distances = j.at("edit_distances").get<std::vector<std::size_t>>();
    return r;
  }

  bool operator==(const EvalReport&) const = default;
};

/// Scores (target, hypothesis) pairs.
inline EvalReport evaluate(const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  EvalReport r;
  std::size_t total_ed = 0;
  for (const auto& [target, hyp] : pairs) {
    const std::size_t ed = levenshtein(target, hyp);
    r.edit_distances.push_back(ed);
    total_ed += ed;
    r.total_target_tokens += target.size();
    if (target == hyp) ++r.exact_matches;
  }
  if (r.total_target_tokens == 0) {
    throw std::invalid_argument("evaluate: targets contain no tokens, CER is undefined");
  }
  r.num_sequences = pairs.size();
  r.cer = static_cast<double>(total_ed) / static_cast<double>(r.total_target_tokens);
  r.ser = static_cast<double>(r.num_sequences - r.exact_matches) /
          static_cast<double>(r.num_sequences);
  return r;
}

}  // namespace kzr

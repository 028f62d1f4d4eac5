#pragma once

/**
 * Token, sequence and score primitives shared by every other module.
 *
 * Sequences live in the padded space: a run of content tokens from the base
 * alphabet, an optional terminator, then padding to the right. The scoring
 * convention is length-normalized log probability; the raw-probability
 * variant is available behind ScoreConvention.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace conbeam {

using TokenId = std::int32_t;

/// Base alphabet plus the distinguished terminator and padding tokens.
class TokenAlphabet {
 public:
  TokenAlphabet(std::vector<TokenId> base_tokens, TokenId terminator, TokenId padding)
      : base_(std::move(base_tokens)), terminator_(terminator), padding_(padding) {
    if (base_.empty()) throw std::invalid_argument("TokenAlphabet: base alphabet empty");
    if (terminator_ == padding_)
      throw std::invalid_argument("TokenAlphabet: terminator and padding must differ");
    TokenId max_id = std::max(terminator_, padding_);
    for (TokenId t : base_) {
      if (t < 0) throw std::invalid_argument("TokenAlphabet: negative token id");
      if (t == terminator_ || t == padding_)
        throw std::invalid_argument("TokenAlphabet: terminator/padding overlaps base alphabet");
      max_id = std::max(max_id, t);
    }
    if (terminator_ < 0 || padding_ < 0)
      throw std::invalid_argument("TokenAlphabet: negative token id");
    is_base_.assign(static_cast<std::size_t>(max_id) + 1, false);
    for (TokenId t : base_) {
      if (is_base_[static_cast<std::size_t>(t)])
        throw std::invalid_argument("TokenAlphabet: duplicate base token");
      is_base_[static_cast<std::size_t>(t)] = true;
    }
  }

  /// Dense layout used by the JSON vocabulary: base 0..n-1, terminator n, padding n+1.
  static TokenAlphabet canonical(std::size_t base_count) {
    std::vector<TokenId> base(base_count);
    for (std::size_t i = 0; i < base_count; ++i) base[i] = static_cast<TokenId>(i);
    return TokenAlphabet(std::move(base),
                         static_cast<TokenId>(base_count),
                         static_cast<TokenId>(base_count + 1));
  }

  const std::vector<TokenId>& base_tokens() const { return base_; }
  TokenId terminator() const { return terminator_; }
  TokenId padding() const { return padding_; }

  /// One past the largest id; distribution vectors are indexed by id.
  std::size_t vocab_size() const { return is_base_.size(); }

  bool is_base(TokenId t) const {
    return t >= 0 && static_cast<std::size_t>(t) < is_base_.size() &&
           is_base_[static_cast<std::size_t>(t)];
  }
  bool in_vocab(TokenId t) const {
    return is_base(t) || t == terminator_ || t == padding_;
  }

  friend bool operator==(const TokenAlphabet& a, const TokenAlphabet& b) {
    return a.base_ == b.base_ && a.terminator_ == b.terminator_ && a.padding_ == b.padding_;
  }

 private:
  std::vector<TokenId> base_;
  TokenId terminator_;
  TokenId padding_;
  std::vector<bool> is_base_;
};

/// A token list answering the input identified by condition_id.
struct Sequence {
  std::vector<TokenId> tokens;
  std::string condition_id;
};

inline std::span<const TokenId> strip_padding(std::span<const TokenId> tokens,
                                              const TokenAlphabet& alphabet) {
  std::size_t n = tokens.size();
  while (n > 0 && tokens[n - 1] == alphabet.padding()) --n;
  return tokens.first(n);
}

/// Equality modulo trailing padding.
inline bool same_sequence(std::span<const TokenId> a, std::span<const TokenId> b,
                          const TokenAlphabet& alphabet) {
  auto sa = strip_padding(a, alphabet);
  auto sb = strip_padding(b, alphabet);
  return std::ranges::equal(sa, sb);
}

/// Count of tokens up to and including the terminator, excluding padding.
inline int content_length(std::span<const TokenId> tokens, const TokenAlphabet& alphabet) {
  return static_cast<int>(strip_padding(tokens, alphabet).size());
}

inline bool is_terminated(std::span<const TokenId> tokens, const TokenAlphabet& alphabet) {
  auto content = strip_padding(tokens, alphabet);
  return !content.empty() && content.back() == alphabet.terminator();
}

/// Membership in the padded length-L space: a_1..a_k, optional terminator,
/// then padding, with all a_i in the base alphabet. Total function.
inline bool is_acceptable(const Sequence& seq, int length, const TokenAlphabet& alphabet) {
  if (length <= 0 || static_cast<int>(seq.tokens.size()) != length) return false;
  std::size_t i = 0;
  while (i < seq.tokens.size() && alphabet.is_base(seq.tokens[i])) ++i;
  if (i < seq.tokens.size() && seq.tokens[i] == alphabet.terminator()) ++i;
  while (i < seq.tokens.size() && seq.tokens[i] == alphabet.padding()) ++i;
  return i == seq.tokens.size();
}

/// First l tokens, right-padded when the input is shorter.
inline Sequence truncate(const Sequence& seq, int l, const TokenAlphabet& alphabet) {
  if (l <= 0) throw std::invalid_argument("truncate: length must be positive");
  Sequence out;
  out.condition_id = seq.condition_id;
  const std::size_t keep = std::min<std::size_t>(seq.tokens.size(), static_cast<std::size_t>(l));
  out.tokens.assign(seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  out.tokens.resize(static_cast<std::size_t>(l), alphabet.padding());
  return out;
}

enum class ScoreConvention {
  LogNorm,   // log pi(S|X) / |S|  (canonical)
  ProbNorm,  // pi(S|X) / |S|      (the raw-probability variant)
};

inline std::string to_string(ScoreConvention c) {
  return c == ScoreConvention::LogNorm ? "log_norm" : "prob_norm";
}

inline ScoreConvention score_convention_from_string(const std::string& s) {
  if (s == "log_norm") return ScoreConvention::LogNorm;
  if (s == "prob_norm") return ScoreConvention::ProbNorm;
  throw std::invalid_argument("unknown score convention: " + s);
}

/// Canonical length-normalized score, log domain.
inline double normalized_score(double log_prob, int content_len) {
  if (content_len < 1) throw std::invalid_argument("normalized_score: content length must be >= 1");
  return log_prob / static_cast<double>(content_len);
}

inline double sequence_score(double log_prob, int content_len, ScoreConvention convention) {
  if (content_len < 1) throw std::invalid_argument("sequence_score: content length must be >= 1");
  if (convention == ScoreConvention::LogNorm) return log_prob / content_len;
  return std::exp(log_prob) / content_len;
}

/// A sequence with its model log probability and normalized score.
struct ScoredSequence {
  Sequence sequence;
  double log_prob = 0.0;
  int content_length = 0;
  double normalized_score = 0.0;
};

inline ScoredSequence make_scored(Sequence seq, double log_prob, const TokenAlphabet& alphabet) {
  ScoredSequence out;
  out.content_length = content_length(seq.tokens, alphabet);
  if (out.content_length < 1)
    throw std::invalid_argument("make_scored: sequence has no content tokens");
  out.sequence = std::move(seq);
  out.log_prob = log_prob;
  out.normalized_score = normalized_score(log_prob, out.content_length);
  return out;
}

/// Deterministic tie-break order: lexicographic by token id, shorter first.
inline bool lex_less(std::span<const TokenId> a, std::span<const TokenId> b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// ---------------------------------------------------------------------------
// Named vocabulary
// ---------------------------------------------------------------------------

/// Token names bound to the canonical dense alphabet layout. Ids are assigned
/// by position: base[0..n-1], then terminator, then padding.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> base_names, std::string terminator_name,
             std::string padding_name)
      : alphabet_(TokenAlphabet::canonical(base_names.size())),
        names_(std::move(base_names)) {
    names_.push_back(std::move(terminator_name));
    names_.push_back(std::move(padding_name));
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!ids_.emplace(names_[i], static_cast<TokenId>(i)).second)
        throw std::invalid_argument("Vocabulary: duplicate token name '" + names_[i] + "'");
    }
  }

  const TokenAlphabet& alphabet() const { return alphabet_; }

  const std::string& name(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
      throw std::out_of_range("Vocabulary: token id out of range");
    return names_[static_cast<std::size_t>(id)];
  }

  TokenId id(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw std::out_of_range("Vocabulary: unknown token '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names(std::span<const TokenId> tokens) const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) out.push_back(name(t));
    return out;
  }

  std::vector<TokenId> ids(std::span<const std::string> names) const {
    std::vector<TokenId> out;
    out.reserve(names.size());
    for (const auto& n : names) out.push_back(id(n));
    return out;
  }

  nlohmann::json to_json() const {
    std::vector<std::string> base(names_.begin(), names_.end() - 2);
    return nlohmann::json{{"base", base},
                          {"terminator", names_[names_.size() - 2]},
                          {"padding", names_.back()}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (!j.contains("base") || !j.contains("terminator") || !j.contains("padding"))
      throw std::invalid_argument("Vocabulary: missing base/terminator/padding");
    return Vocabulary(j.at("base").get<std::vector<std::string>>(),
                      j.at("terminator").get<std::string>(),
                      j.at("padding").get<std::string>());
  }

  /// Digits 0-9 with the usual seq2seq marker names.
  static Vocabulary digits() {
    std::vector<std::string> base;
    for (int d = 0; d <= 9; ++d) base.push_back(std::string(1, static_cast<char>('0' + d)));
    return Vocabulary(std::move(base), "</s>", "<pad>");
  }

  /// Single-letter names a, b, c, ... for synthetic alphabets.
  static Vocabulary letters(std::size_t count) {
    if (count == 0 || count > 26) throw std::invalid_argument("Vocabulary::letters: count in [1,26]");
    std::vector<std::string> base;
    for (std::size_t i = 0; i < count; ++i) base.push_back(std::string(1, static_cast<char>('a' + i)));
    return Vocabulary(std::move(base), "</s>", "<pad>");
  }

 private:
  TokenAlphabet alphabet_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace conbeam

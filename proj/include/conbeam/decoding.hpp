#pragma once

/**
 * Greedy and fixed-width beam search over ArsModels, plus the exhaustive
 * argmax oracle for small instances.
 *
 * Hypotheses are ranked by length-normalized log probability by default (the
 * raw unnormalized ranking is available via SearchOptions). Terminated
 * hypotheses stay in the beam and compete with live ones; ties break
 * lexicographically by token id, so identical inputs give identical results.
 */

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "conbeam/models.hpp"
#include "conbeam/seqcore.hpp"

namespace conbeam::decoding {

enum class BeamRanking {
  Normalized,  // log pi / content length (default)
  Raw,         // log pi
};

inline std::string to_string(BeamRanking r) {
  return r == BeamRanking::Normalized ? "normalized" : "raw";
}

inline BeamRanking beam_ranking_from_string(const std::string& s) {
  if (s == "normalized") return BeamRanking::Normalized;
  if (s == "raw") return BeamRanking::Raw;
  throw std::invalid_argument("unknown beam ranking: " + s);
}

struct SearchOptions {
  BeamRanking ranking = BeamRanking::Normalized;
};

/// Ranked beam-search output for one condition.
struct BeamResult {
  std::vector<ScoredSequence> beams;  // sorted by descending ranking score
  int width = 0;
  int max_len = 0;
  std::string condition_id;
};

namespace detail {

struct Hypothesis {
  std::vector<TokenId> tokens;  // content tokens only, terminator included
  double log_prob = 0.0;
  bool terminated = false;
};

inline double rank_score(const Hypothesis& h, BeamRanking ranking) {
  if (ranking == BeamRanking::Raw) return h.log_prob;
  return h.log_prob / static_cast<double>(h.tokens.size());
}

inline void sort_hypotheses(std::vector<Hypothesis>& hyps, BeamRanking ranking) {
  std::stable_sort(hyps.begin(), hyps.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    const double sa = rank_score(a, ranking);
    const double sb = rank_score(b, ranking);
    if (sa != sb) return sa > sb;
    return lex_less(a.tokens, b.tokens);
  });
}

}  // namespace detail

/// Argmax chain: append the most probable next token (ties to the lower id)
/// until the terminator or max_len.
inline ScoredSequence greedy_decode(const models::ArsModel& model, std::string_view condition,
                                    int max_len) {
  if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  const TokenAlphabet& ab = model.alphabet();
  Sequence seq;
  seq.condition_id = std::string(condition);
  double log_prob = 0.0;
  for (int step = 0; step < max_len; ++step) {
    const auto dist = model.next_token_log_probs(condition, seq.tokens);
    TokenId best = -1;
    double best_lp = models::kLogZero;
    for (std::size_t t = 0; t < dist.size(); ++t) {
      if (dist[t] > best_lp) {
        best_lp = dist[t];
        best = static_cast<TokenId>(t);
      }
    }
    if (best < 0) throw std::runtime_error("greedy_decode: model returned an empty distribution");
    seq.tokens.push_back(best);
    log_prob += best_lp;
    if (best == ab.terminator()) break;
  }
  return make_scored(std::move(seq), log_prob, ab);
}

/// Standard beam search. Terminated hypotheses are frozen (extended only by
/// padding, at probability one) and compete with live ones.
inline BeamResult beam_search(const models::ArsModel& model, std::string_view condition, int width,
                              int max_len, const SearchOptions& options = {}) {
  if (width < 1) throw std::invalid_argument("beam_search: width must be >= 1");
  if (max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");
  const TokenAlphabet& ab = model.alphabet();

  std::vector<detail::Hypothesis> beam{{{}, 0.0, false}};
  for (int step = 0; step < max_len; ++step) {
    std::vector<detail::Hypothesis> candidates;
    bool any_live = false;
    for (const auto& hyp : beam) {
      if (hyp.terminated) {
        candidates.push_back(hyp);  // padding extension keeps the score
        continue;
      }
      any_live = true;
      const auto dist = model.next_token_log_probs(condition, hyp.tokens);
      for (TokenId t : ab.base_tokens()) {
        const double lp = dist[static_cast<std::size_t>(t)];
        if (lp == models::kLogZero) continue;
        auto child = hyp;
        child.tokens.push_back(t);
        child.log_prob += lp;
        candidates.push_back(std::move(child));
      }
      const double lp_end = dist[static_cast<std::size_t>(ab.terminator())];
      if (lp_end > models::kLogZero) {
        auto child = hyp;
        child.tokens.push_back(ab.terminator());
        child.log_prob += lp_end;
        child.terminated = true;
        candidates.push_back(std::move(child));
      }
    }
    if (!any_live) break;
    if (candidates.empty())
      throw std::runtime_error("beam_search: all hypotheses have zero probability");
    detail::sort_hypotheses(candidates, options.ranking);
    if (static_cast<int>(candidates.size()) > width)
      candidates.resize(static_cast<std::size_t>(width));
    beam = std::move(candidates);
  }

  BeamResult result;
  result.width = width;
  result.max_len = max_len;
  result.condition_id = std::string(condition);
  for (auto& hyp : beam) {
    Sequence seq;
    seq.condition_id = result.condition_id;
    seq.tokens = std::move(hyp.tokens);
    result.beams.push_back(make_scored(std::move(seq), hyp.log_prob, ab));
  }
  return result;
}

/// The exactly highest-probability terminated sequence within max_len, by
/// exhaustive enumeration (unnormalized probability, as in the argmax
/// prediction definition). Errors if the guard trips or nothing terminates.
inline ScoredSequence exact_argmax(const models::ArsModel& model, std::string_view condition,
                                   int max_len) {
  const auto support = models::enumerate_support(model, condition, max_len);
  const TokenAlphabet& ab = model.alphabet();
  const ScoredSequence* best = nullptr;
  for (const auto& entry : support) {
    if (!is_terminated(entry.sequence.tokens, ab)) continue;
    if (best == nullptr || entry.log_prob > best->log_prob ||
        (entry.log_prob == best->log_prob &&
         lex_less(strip_padding(entry.sequence.tokens, ab),
                  strip_padding(best->sequence.tokens, ab))))
      best = &entry;
  }
  if (best == nullptr)
    throw std::runtime_error("exact_argmax: no terminated sequence within max_len");
  ScoredSequence out = *best;
  out.sequence.tokens.assign(strip_padding(out.sequence.tokens, ab).begin(),
                             strip_padding(out.sequence.tokens, ab).end());
  return out;
}

/// One JSONL line per beam entry: {"id", "rank", "tokens", "logp", "norm_score"}.
inline void write_beam_jsonl(const BeamResult& result, const Vocabulary& vocab,
                             std::ostream& out) {
  for (std::size_t rank = 0; rank < result.beams.size(); ++rank) {
    const auto& entry = result.beams[rank];
    nlohmann::json line{{"id", result.condition_id},
                        {"rank", rank + 1},
                        {"tokens", vocab.names(entry.sequence.tokens)},
                        {"logp", entry.log_prob},
                        {"norm_score", entry.normalized_score}};
    out << line.dump() << '\n';
  }
}

}  // namespace conbeam::decoding

#pragma once

/**
 * Conformal calibration and decoding.
 *
 * Three procedures share the split-CP threshold rank k = floor(alpha (N+1)):
 *
 *  - sub-beam: split calibration restricted to the in-beam subgroup of the
 *    calibration data, with a Clopper-Pearson bound on beam coverage giving a
 *    composite marginal guarantee;
 *  - dynamic: step-wise tolerance-region calibration over truncation scores,
 *    decoded as a variable-width beam whose output equals the calibrated
 *    region restricted to the condition;
 *  - length groups: independent dynamic calibrations per content-length
 *    bucket, decoded with a min-threshold envelope then per-bucket pruning.
 *
 * Acceptance is always non-strict (score >= threshold). A step whose rank k
 * is zero stores no threshold and prunes nothing.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "conbeam/decoding.hpp"
#include "conbeam/models.hpp"
#include "conbeam/rng.hpp"
#include "conbeam/seqcore.hpp"
#include "conbeam/stats.hpp"

namespace conbeam::conformal {

using stats::beta_quantile;
using stats::clopper_pearson_lower;

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

/// Confidence-score configuration. The optional jitter adds a deterministic
/// per-(condition, content) perturbation of size epsilon, restoring the
/// continuity assumption behind the tolerance-region law when the task has
/// score atoms. It is part of the score function, so calibration and decoding
/// stay exchangeable.
struct ScoreSpec {
  ScoreConvention convention = ScoreConvention::LogNorm;
  double jitter_epsilon = 0.0;
  std::uint64_t jitter_seed = 0;
};

inline double conformal_score(double log_prob, int content_len, std::string_view condition,
                              std::span<const TokenId> content_tokens, const ScoreSpec& spec) {
  double s = sequence_score(log_prob, content_len, spec.convention);
  if (spec.jitter_epsilon > 0.0) {
    s += spec.jitter_epsilon *
         hash_unit(StableHasher(spec.jitter_seed).add(condition).add(content_tokens).digest());
  }
  return s;
}

/// Scores of the length-l truncations of a sequence for l = 1..max_len. The
/// truncation is padding-extended, and padding contributes neither to the log
/// probability nor to the normalization length, so a terminated sequence's
/// score is constant from its content length onward.
inline std::vector<double> truncation_scores(const models::ArsModel& model,
                                             std::string_view condition, const Sequence& seq,
                                             int max_len, const ScoreSpec& spec) {
  if (max_len < 1) throw std::invalid_argument("truncation_scores: max_len >= 1");
  const TokenAlphabet& ab = model.alphabet();
  const auto content = strip_padding(seq.tokens, ab);
  if (content.empty()) throw std::invalid_argument("truncation_scores: sequence has no content");

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(max_len));
  std::vector<TokenId> prefix;
  double log_prob = 0.0;
  for (int l = 1; l <= max_len; ++l) {
    if (l <= static_cast<int>(content.size())) {
      const TokenId t = content[static_cast<std::size_t>(l - 1)];
      if (log_prob > models::kLogZero) {
        const auto dist = model.next_token_log_probs(condition, prefix);
        log_prob += dist[static_cast<std::size_t>(t)];
      }
      prefix.push_back(t);
    }
    const int cl = std::min<int>(l, static_cast<int>(content.size()));
    out.push_back(conformal_score(log_prob, cl, condition,
                                  std::span<const TokenId>(content.first(static_cast<std::size_t>(cl))),
                                  spec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split conformal threshold
// ---------------------------------------------------------------------------

/// Threshold rank k = floor(alpha (N+1)), with a nudge against binary
/// representation error on exact products.
inline int threshold_rank(int n, double alpha) {
  if (n < 0) throw std::invalid_argument("threshold_rank: negative count");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("threshold_rank: alpha in (0,1)");
  const long double x = static_cast<long double>(alpha) * static_cast<long double>(n + 1);
  return static_cast<int>(std::floor(x + 1e-9L));
}

/// Split calibration summary. A missing threshold means NO_PRUNE: the rank
/// was zero and everything passes.
struct SplitCalibration {
  double alpha = 0.0;
  int n = 0;
  int k = 0;
  std::optional<double> threshold;

  bool accepts(double score) const { return !threshold.has_value() || score >= *threshold; }
};

inline SplitCalibration split_threshold(std::vector<double> scores, double alpha) {
  if (scores.empty()) throw std::invalid_argument("split_threshold: empty score list");
  SplitCalibration cal;
  cal.alpha = alpha;
  cal.n = static_cast<int>(scores.size());
  cal.k = threshold_rank(cal.n, alpha);
  if (cal.k > 0) {
    std::nth_element(scores.begin(), scores.begin() + (cal.k - 1), scores.end());
    cal.threshold = scores[static_cast<std::size_t>(cal.k - 1)];
  }
  return cal;
}

// ---------------------------------------------------------------------------
// Conformal subsets of beam-search results
// ---------------------------------------------------------------------------

struct SubBeamOptions {
  decoding::BeamRanking ranking = decoding::BeamRanking::Normalized;
  ScoreSpec score;
};

/// Split calibration over the in-beam subgroup plus the post-hoc binomial
/// bound on beam coverage.
struct SubBeamCalibration {
  SplitCalibration inner;       // over in-beam true-sequence scores
  int n_total = 0;              // full calibration count N
  int n_beta = 0;               // in-beam count
  int width = 0;
  int max_len = 0;
  double delta = 0.0;
  double beam_cov_lower = 0.0;  // Clopper-Pearson lower bound at risk delta
  double composite_guarantee = 0.0;  // (1 - alpha) * beam_cov_lower
  SubBeamOptions options;
};

inline SubBeamCalibration calibrate_sub_beam(const models::ArsModel& model,
                                             std::span<const models::LabeledExample> calib,
                                             int width, int max_len, double alpha, double delta,
                                             const SubBeamOptions& options = {}) {
  if (calib.empty()) throw std::invalid_argument("calibrate_sub_beam: empty calibration set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("calibrate_sub_beam: alpha in (0,1)");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("calibrate_sub_beam: delta in (0,1)");
  const TokenAlphabet& ab = model.alphabet();

  std::vector<double> in_beam_scores;
  for (const auto& item : calib) {
    const auto beam = decoding::beam_search(model, item.condition_id, width, max_len,
                                            {options.ranking});
    const bool in_beam = std::any_of(beam.beams.begin(), beam.beams.end(), [&](const auto& hyp) {
      return same_sequence(hyp.sequence.tokens, item.truth.tokens, ab);
    });
    if (!in_beam) continue;
    const double lp = models::sequence_log_prob(model, item.condition_id, item.truth);
    const auto content = strip_padding(item.truth.tokens, ab);
    in_beam_scores.push_back(conformal_score(lp, static_cast<int>(content.size()),
                                             item.condition_id, content, options.score));
  }
  if (in_beam_scores.empty())
    throw std::runtime_error(
        "calibrate_sub_beam: no calibration sequence appears in its beam; "
        "the model is too weak for this beam width");

  SubBeamCalibration cal;
  cal.n_total = static_cast<int>(calib.size());
  cal.n_beta = static_cast<int>(in_beam_scores.size());
  cal.width = width;
  cal.max_len = max_len;
  cal.delta = delta;
  cal.options = options;
  cal.inner = split_threshold(std::move(in_beam_scores), alpha);
  cal.beam_cov_lower = beta_quantile(delta, static_cast<double>(cal.n_beta),
                                     static_cast<double>(cal.n_total + 1 - cal.n_beta));
  cal.composite_guarantee = (1.0 - alpha) * cal.beam_cov_lower;
  return cal;
}

/// Beam search at the calibrated width, keeping hypotheses whose confidence
/// score clears the in-beam threshold. The empty set is a valid output.
inline std::vector<ScoredSequence> predict_sub_beam(const models::ArsModel& model,
                                                    std::string_view condition,
                                                    const SubBeamCalibration& cal, int max_len) {
  const TokenAlphabet& ab = model.alphabet();
  auto beam = decoding::beam_search(model, condition, cal.width, max_len, {cal.options.ranking});
  std::vector<ScoredSequence> out;
  for (auto& hyp : beam.beams) {
    const auto content = strip_padding(hyp.sequence.tokens, ab);
    const double score = conformal_score(hyp.log_prob, static_cast<int>(content.size()), condition,
                                         content, cal.options.score);
    if (cal.inner.accepts(score)) out.push_back(std::move(hyp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic step-wise calibration
// ---------------------------------------------------------------------------

struct StepThreshold {
  int k = 0;                        // items pruned at this step
  int n = 0;                        // survivors after this step
  std::optional<double> threshold;  // k-th smallest surviving score; NO_PRUNE if k = 0
};

struct DynamicThresholds {
  double alpha = 0.0;
  int n0 = 0;       // calibration count after rejecting over-long items
  int max_len = 0;  // decoding horizon L
  std::vector<StepThreshold> per_step;
  ScoreSpec score;
  int rejected_count = 0;  // items whose truth does not fit the horizon

  int pruned_total() const {
    int sum = 0;
    for (const auto& s : per_step) sum += s.k;
    return sum;
  }
  /// Lemma value: 1 - sum_l k_l / (N0 + 1).
  double exact_coverage() const {
    return 1.0 - static_cast<double>(pruned_total()) / static_cast<double>(n0 + 1);
  }
  /// (1 - alpha)^L.
  double lower_bound() const { return std::pow(1.0 - alpha, max_len); }
};

/// Iterative tolerance-region calibration: at each step order the surviving
/// items by their truncation score, record the k-th smallest as the step
/// threshold, and drop those k items. Ties break by content tokens then
/// condition id, so the result is independent of input order.
inline DynamicThresholds calibrate_dynamic(const models::ArsModel& model,
                                           std::span<const models::LabeledExample> calib,
                                           double alpha, int max_len, const ScoreSpec& spec = {}) {
  if (calib.empty()) throw std::invalid_argument("calibrate_dynamic: empty calibration set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("calibrate_dynamic: alpha in (0,1)");
  if (max_len < 1) throw std::invalid_argument("calibrate_dynamic: max_len >= 1");
  const TokenAlphabet& ab = model.alphabet();

  DynamicThresholds out;
  out.alpha = alpha;
  out.max_len = max_len;
  out.score = spec;

  struct Item {
    std::vector<double> scores;
    const models::LabeledExample* example;
  };
  std::vector<Item> items;
  for (const auto& ex : calib) {
    const int cl = content_length(ex.truth.tokens, ab);
    if (cl < 1 || cl > max_len) {
      ++out.rejected_count;
      continue;
    }
    items.push_back({truncation_scores(model, ex.condition_id, ex.truth, max_len, spec), &ex});
  }
  if (items.empty())
    throw std::runtime_error(
        "calibrate_dynamic: no calibration sequence fits the decoding horizon (" +
        std::to_string(out.rejected_count) + " rejected)");
  out.n0 = static_cast<int>(items.size());

  std::vector<std::size_t> survivors(items.size());
  for (std::size_t i = 0; i < survivors.size(); ++i) survivors[i] = i;

  for (int l = 1; l <= max_len; ++l) {
    const int n_prev = static_cast<int>(survivors.size());
    const int k = threshold_rank(n_prev, alpha);
    StepThreshold step;
    step.k = k;
    if (k == 0) {
      step.n = n_prev;
      out.per_step.push_back(step);
      continue;
    }
    const auto by_step_score = [&](std::size_t ia, std::size_t ib) {
      const double sa = items[ia].scores[static_cast<std::size_t>(l - 1)];
      const double sb = items[ib].scores[static_cast<std::size_t>(l - 1)];
      if (sa != sb) return sa < sb;
      const auto& ea = *items[ia].example;
      const auto& eb = *items[ib].example;
      const auto ca = strip_padding(ea.truth.tokens, ab);
      const auto cb = strip_padding(eb.truth.tokens, ab);
      if (!std::ranges::equal(ca, cb)) return lex_less(ca, cb);
      return ea.condition_id < eb.condition_id;
    };
    std::nth_element(survivors.begin(), survivors.begin() + (k - 1), survivors.end(),
                     by_step_score);
    step.threshold = items[survivors[static_cast<std::size_t>(k - 1)]]
                         .scores[static_cast<std::size_t>(l - 1)];
    // Drop the k lowest scorers.
    std::nth_element(survivors.begin(), survivors.begin() + k, survivors.end(), by_step_score);
    survivors.erase(survivors.begin(), survivors.begin() + k);
    step.n = static_cast<int>(survivors.size());
    out.per_step.push_back(step);
    if (survivors.empty() && l < max_len)
      throw std::runtime_error("calibrate_dynamic: calibration set exhausted at step " +
                               std::to_string(l) +
                               " (N_l = 0); use a larger calibration set or a smaller per-step alpha");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic decoding
// ---------------------------------------------------------------------------

/// Hypothesis-count safety cap; nullopt disables it.
struct DecodeLimits {
  std::optional<std::size_t> beam_cap = 10000;
};

class BeamOverflowError : public std::runtime_error {
 public:
  BeamOverflowError(int step, std::size_t count, std::vector<ScoredSequence> partial)
      : std::runtime_error("dynamic beam overflow: " + std::to_string(count) +
                           " hypotheses at step " + std::to_string(step)),
        step_(step),
        count_(count),
        partial_(std::move(partial)) {}

  int step() const { return step_; }
  std::size_t hypothesis_count() const { return count_; }
  const std::vector<ScoredSequence>& partial_beam() const { return partial_; }

 private:
  int step_;
  std::size_t count_;
  std::vector<ScoredSequence> partial_;
};

namespace detail {

struct DynHypothesis {
  std::vector<TokenId> tokens;  // content tokens, terminator included when present
  double log_prob = 0.0;
  double score = 0.0;  // conformal score; constant once terminated
  bool terminated = false;
};

inline std::vector<ScoredSequence> finalize_hypotheses(std::vector<DynHypothesis> hyps,
                                                       std::string_view condition,
                                                       const TokenAlphabet& ab) {
  std::stable_sort(hyps.begin(), hyps.end(), [](const DynHypothesis& a, const DynHypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return lex_less(a.tokens, b.tokens);
  });
  std::vector<ScoredSequence> out;
  out.reserve(hyps.size());
  for (auto& hyp : hyps) {
    Sequence seq;
    seq.condition_id = std::string(condition);
    seq.tokens = std::move(hyp.tokens);
    out.push_back(make_scored(std::move(seq), hyp.log_prob, ab));
  }
  return out;
}

/// Shared step loop: expands live hypotheses over the extended alphabet,
/// carries terminated ones at their plateau score, and filters with the
/// per-step threshold provided by `threshold_at`. When `release_terminated`
/// is set, hypotheses leave the working set at their termination step
/// (length-group phase 1); otherwise they stay subject to later thresholds.
template <typename ThresholdAt>
inline std::vector<DynHypothesis> conformal_beam_loop(
    const models::ArsModel& model, std::string_view condition, int max_len, const ScoreSpec& spec,
    const ThresholdAt& threshold_at, const DecodeLimits& limits, bool release_terminated,
    std::vector<DynHypothesis>* finished) {
  const TokenAlphabet& ab = model.alphabet();
  std::vector<DynHypothesis> live{{{}, 0.0, 0.0, false}};

  for (int l = 1; l <= max_len && !live.empty(); ++l) {
    std::vector<DynHypothesis> candidates;
    for (const auto& hyp : live) {
      if (hyp.terminated) {
        candidates.push_back(hyp);  // padding extension, score unchanged
        continue;
      }
      const auto dist = model.next_token_log_probs(condition, hyp.tokens);
      const auto expand = [&](TokenId t, bool terminates) {
        const double lp = dist[static_cast<std::size_t>(t)];
        if (lp == models::kLogZero) return;
        DynHypothesis child = hyp;
        child.tokens.push_back(t);
        child.log_prob += lp;
        child.terminated = terminates;
        child.score = conformal_score(child.log_prob, l, condition, child.tokens, spec);
        candidates.push_back(std::move(child));
      };
      for (TokenId t : ab.base_tokens()) expand(t, false);
      expand(ab.terminator(), true);
    }

    const std::optional<double> threshold = threshold_at(l);
    std::vector<DynHypothesis> survivors;
    for (auto& cand : candidates) {
      if (threshold.has_value() && !(cand.score >= *threshold)) continue;
      if (release_terminated && cand.terminated)
        finished->push_back(std::move(cand));
      else
        survivors.push_back(std::move(cand));
    }
    const std::size_t total =
        survivors.size() + (release_terminated ? finished->size() : std::size_t{0});
    if (limits.beam_cap && total > *limits.beam_cap) {
      std::vector<DynHypothesis> partial = survivors;
      if (finished != nullptr)
        partial.insert(partial.end(), finished->begin(), finished->end());
      throw BeamOverflowError(l, total, finalize_hypotheses(std::move(partial), condition, ab));
    }
    live = std::move(survivors);
  }

  if (release_terminated && finished != nullptr)
    finished->insert(finished->end(), std::make_move_iterator(live.begin()),
                     std::make_move_iterator(live.end()));
  return live;
}

}  // namespace detail

/// Variable-width conformal decoding: step l keeps every extension whose
/// truncation score clears threshold l. Terminated hypotheses are extended by
/// padding at constant score and remain subject to the remaining thresholds,
/// matching the calibrated region exactly. Possibly empty.
inline std::vector<ScoredSequence> decode_dynamic(const models::ArsModel& model,
                                                  std::string_view condition,
                                                  const DynamicThresholds& th,
                                                  const DecodeLimits& limits = {}) {
  if (th.per_step.size() != static_cast<std::size_t>(th.max_len))
    throw std::invalid_argument("decode_dynamic: malformed thresholds");
  auto hyps = detail::conformal_beam_loop(
      model, condition, th.max_len, th.score,
      [&](int l) { return th.per_step[static_cast<std::size_t>(l - 1)].threshold; }, limits,
      /*release_terminated=*/false, nullptr);
  return detail::finalize_hypotheses(std::move(hyps), condition, model.alphabet());
}

/// True iff every truncation score of `seq` clears its step threshold.
/// Sequences that do not fit the horizon are never contained.
inline bool region_contains(const DynamicThresholds& th, const models::ArsModel& model,
                            std::string_view condition, const Sequence& seq) {
  const TokenAlphabet& ab = model.alphabet();
  const int cl = content_length(seq.tokens, ab);
  if (cl < 1 || cl > th.max_len) return false;
  const auto scores = truncation_scores(model, condition, seq, th.max_len, th.score);
  for (int l = 1; l <= th.max_len; ++l) {
    const auto& step = th.per_step[static_cast<std::size_t>(l - 1)];
    if (step.threshold.has_value() && !(scores[static_cast<std::size_t>(l - 1)] >= *step.threshold))
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Guarantees
// ---------------------------------------------------------------------------

struct GuaranteePair {
  double exact = 0.0;        // 1 - sum_l k_l / (N0 + 1)
  double lower_bound = 0.0;  // (1 - alpha)^L
};

inline double guarantee_lower_bound(double alpha, int steps) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("guarantee: alpha in (0,1)");
  if (steps < 1) throw std::invalid_argument("guarantee: steps >= 1");
  return std::pow(1.0 - alpha, steps);
}

inline GuaranteePair guarantee(double alpha, int steps, int n0, std::span<const int> step_counts) {
  GuaranteePair g;
  g.lower_bound = guarantee_lower_bound(alpha, steps);
  int pruned = 0;
  for (int k : step_counts) pruned += k;
  g.exact = 1.0 - static_cast<double>(pruned) / static_cast<double>(n0 + 1);
  if (g.exact < g.lower_bound - 1e-12)
    throw std::logic_error("guarantee: exact coverage below the (1-alpha)^L bound");
  return g;
}

inline GuaranteePair guarantee(const DynamicThresholds& th) {
  std::vector<int> ks;
  ks.reserve(th.per_step.size());
  for (const auto& s : th.per_step) ks.push_back(s.k);
  return guarantee(th.alpha, th.max_len, th.n0, ks);
}

/// Parameters of the conditional-coverage law Beta(N0+1-K, K). K = 0 is the
/// degenerate no-pruning case: coverage is almost surely complete.
struct BetaLaw {
  double a = 0.0;
  double b = 0.0;
  bool degenerate = false;
};

inline BetaLaw conditional_coverage_law(int n0, std::span<const int> step_counts) {
  if (n0 < 0) throw std::invalid_argument("conditional_coverage_law: negative count");
  int pruned = 0;
  for (int k : step_counts) {
    if (k < 0) throw std::invalid_argument("conditional_coverage_law: negative k");
    pruned += k;
  }
  if (pruned > n0) throw std::invalid_argument("conditional_coverage_law: sum k exceeds N0");
  if (pruned == 0) return {static_cast<double>(n0 + 1), 0.0, true};
  return {static_cast<double>(n0 + 1 - pruned), static_cast<double>(pruned), false};
}

// ---------------------------------------------------------------------------
// Length-group-conditional calibration
// ---------------------------------------------------------------------------

struct LengthBucket {
  int lo = 1;
  int hi = 1;  // inclusive content-length range; decoding horizon of the bucket
  DynamicThresholds thresholds;
};

struct LengthGroupCalibration {
  double alpha = 0.0;
  int max_len = 0;  // largest bucket edge
  ScoreSpec score;
  std::vector<LengthBucket> buckets;
  int rejected_count = 0;

  const LengthBucket& bucket_for(int content_len) const {
    for (const auto& b : buckets)
      if (content_len >= b.lo && content_len <= b.hi) return b;
    throw std::out_of_range("LengthGroupCalibration: content length outside every bucket");
  }
};

/// Independent dynamic calibration per length bucket. `bucket_edges` are the
/// inclusive upper edges of a partition of [1, edges.back()]; each bucket is
/// calibrated only on items whose true content length falls inside it.
inline LengthGroupCalibration calibrate_length_groups(
    const models::ArsModel& model, std::span<const models::LabeledExample> calib, double alpha,
    std::span<const int> bucket_edges, const ScoreSpec& spec = {}, int min_bucket_count = 10) {
  if (calib.empty()) throw std::invalid_argument("calibrate_length_groups: empty calibration set");
  if (bucket_edges.empty()) throw std::invalid_argument("calibrate_length_groups: no bucket edges");
  for (std::size_t i = 0; i < bucket_edges.size(); ++i) {
    if (bucket_edges[i] < 1 || (i > 0 && bucket_edges[i] <= bucket_edges[i - 1]))
      throw std::invalid_argument("calibrate_length_groups: edges must be strictly increasing and >= 1");
  }
  const TokenAlphabet& ab = model.alphabet();

  LengthGroupCalibration out;
  out.alpha = alpha;
  out.max_len = bucket_edges.back();
  out.score = spec;

  std::vector<std::vector<models::LabeledExample>> groups(bucket_edges.size());
  for (const auto& ex : calib) {
    const int cl = content_length(ex.truth.tokens, ab);
    if (cl < 1 || cl > out.max_len) {
      ++out.rejected_count;
      continue;
    }
    std::size_t bucket = 0;
    while (cl > bucket_edges[bucket]) ++bucket;
    groups[bucket].push_back(ex);
  }

  int lo = 1;
  for (std::size_t b = 0; b < bucket_edges.size(); ++b) {
    if (static_cast<int>(groups[b].size()) < min_bucket_count)
      throw std::runtime_error("calibrate_length_groups: bucket [" + std::to_string(lo) + "," +
                               std::to_string(bucket_edges[b]) + "] has only " +
                               std::to_string(groups[b].size()) + " items (minimum " +
                               std::to_string(min_bucket_count) + ")");
    LengthBucket bucket;
    bucket.lo = lo;
    bucket.hi = bucket_edges[b];
    bucket.thresholds = calibrate_dynamic(model, groups[b], alpha, bucket.hi, spec);
    out.buckets.push_back(std::move(bucket));
    lo = bucket_edges[b] + 1;
  }
  return out;
}

/// Two-phase group decoding: decode with the per-step minimum threshold
/// across buckets until each hypothesis terminates (or the horizon is hit),
/// then assign each finished hypothesis to the bucket of its content length
/// and keep it only if it passes every step threshold of that bucket.
inline std::vector<ScoredSequence> decode_length_groups(const models::ArsModel& model,
                                                        std::string_view condition,
                                                        const LengthGroupCalibration& lg,
                                                        const DecodeLimits& limits = {}) {
  const TokenAlphabet& ab = model.alphabet();
  const auto envelope = [&](int l) -> std::optional<double> {
    std::optional<double> min_threshold;
    bool any_no_prune = false;
    for (const auto& b : lg.buckets) {
      if (b.hi < l) continue;  // bucket's horizon already passed
      const auto& t = b.thresholds.per_step[static_cast<std::size_t>(l - 1)].threshold;
      if (!t.has_value()) {
        any_no_prune = true;
        break;
      }
      if (!min_threshold || *t < *min_threshold) min_threshold = *t;
    }
    if (any_no_prune) return std::nullopt;
    return min_threshold;
  };

  std::vector<detail::DynHypothesis> finished;
  detail::conformal_beam_loop(model, condition, lg.max_len, lg.score, envelope, limits,
                              /*release_terminated=*/true, &finished);

  std::vector<detail::DynHypothesis> kept;
  for (auto& hyp : finished) {
    const int cl = static_cast<int>(hyp.tokens.size());
    const LengthBucket& bucket = lg.bucket_for(cl);
    Sequence seq;
    seq.condition_id = std::string(condition);
    seq.tokens = hyp.tokens;
    if (region_contains(bucket.thresholds, model, condition, seq)) kept.push_back(std::move(hyp));
  }
  return detail::finalize_hypotheses(std::move(kept), condition, ab);
}

// ---------------------------------------------------------------------------
// Artifact serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ScoreSpec& spec) {
  return {{"convention", to_string(spec.convention)},
          {"jitter_epsilon", spec.jitter_epsilon},
          {"jitter_seed", spec.jitter_seed}};
}

inline ScoreSpec score_spec_from_json(const nlohmann::json& j) {
  ScoreSpec spec;
  spec.convention = score_convention_from_string(j.at("convention").get<std::string>());
  spec.jitter_epsilon = j.at("jitter_epsilon").get<double>();
  spec.jitter_seed = j.at("jitter_seed").get<std::uint64_t>();
  return spec;
}

inline nlohmann::json to_json(const DynamicThresholds& th, std::uint64_t master_seed = 0) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : th.per_step) {
    nlohmann::json step{{"k", s.k}, {"n", s.n}};
    step["threshold"] = s.threshold ? nlohmann::json(*s.threshold) : nlohmann::json(nullptr);
    steps.push_back(std::move(step));
  }
  const auto g = guarantee(th);
  return {{"procedure", "dynamic"},
          {"alpha", th.alpha},
          {"n0", th.n0},
          {"max_len", th.max_len},
          {"rejected_count", th.rejected_count},
          {"steps", std::move(steps)},
          {"exact_coverage", g.exact},
          {"guarantee", g.lower_bound},
          {"score", to_json(th.score)},
          {"master_seed", master_seed}};
}

inline DynamicThresholds dynamic_from_json(const nlohmann::json& j) {
  DynamicThresholds th;
  th.alpha = j.at("alpha").get<double>();
  th.n0 = j.at("n0").get<int>();
  th.max_len = j.at("max_len").get<int>();
  th.rejected_count = j.at("rejected_count").get<int>();
  th.score = score_spec_from_json(j.at("score"));
  for (const auto& s : j.at("steps")) {
    StepThreshold step;
    step.k = s.at("k").get<int>();
    step.n = s.at("n").get<int>();
    if (!s.at("threshold").is_null()) step.threshold = s.at("threshold").get<double>();
    th.per_step.push_back(step);
  }
  if (th.per_step.size() != static_cast<std::size_t>(th.max_len))
    throw std::invalid_argument("dynamic_from_json: step count does not match max_len");
  return th;
}

inline nlohmann::json to_json(const SubBeamCalibration& cal, std::uint64_t master_seed = 0) {
  return {{"procedure", "fixed-beam"},
          {"alpha", cal.inner.alpha},
          {"delta", cal.delta},
          {"width", cal.width},
          {"max_len", cal.max_len},
          {"n_total", cal.n_total},
          {"n_beta", cal.n_beta},
          {"k", cal.inner.k},
          {"threshold",
           cal.inner.threshold ? nlohmann::json(*cal.inner.threshold) : nlohmann::json(nullptr)},
          {"beam_cov_lower", cal.beam_cov_lower},
          {"guarantee", cal.composite_guarantee},
          {"ranking", to_string(cal.options.ranking)},
          {"score", to_json(cal.options.score)},
          {"master_seed", master_seed}};
}

inline SubBeamCalibration sub_beam_from_json(const nlohmann::json& j) {
  SubBeamCalibration cal;
  cal.inner.alpha = j.at("alpha").get<double>();
  cal.delta = j.at("delta").get<double>();
  cal.width = j.at("width").get<int>();
  cal.max_len = j.at("max_len").get<int>();
  cal.n_total = j.at("n_total").get<int>();
  cal.n_beta = j.at("n_beta").get<int>();
  cal.inner.n = cal.n_beta;
  cal.inner.k = j.at("k").get<int>();
  if (!j.at("threshold").is_null()) cal.inner.threshold = j.at("threshold").get<double>();
  cal.beam_cov_lower = j.at("beam_cov_lower").get<double>();
  cal.composite_guarantee = j.at("guarantee").get<double>();
  cal.options.ranking = decoding::beam_ranking_from_string(j.at("ranking").get<std::string>());
  cal.options.score = score_spec_from_json(j.at("score"));
  return cal;
}

inline nlohmann::json to_json(const LengthGroupCalibration& lg, std::uint64_t master_seed = 0) {
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& b : lg.buckets)
    buckets.push_back({{"lo", b.lo}, {"hi", b.hi}, {"thresholds", to_json(b.thresholds)}});
  return {{"procedure", "length-groups"},
          {"alpha", lg.alpha},
          {"max_len", lg.max_len},
          {"rejected_count", lg.rejected_count},
          {"score", to_json(lg.score)},
          {"buckets", std::move(buckets)},
          {"master_seed", master_seed}};
}

inline LengthGroupCalibration length_groups_from_json(const nlohmann::json& j) {
  LengthGroupCalibration lg;
  lg.alpha = j.at("alpha").get<double>();
  lg.max_len = j.at("max_len").get<int>();
  lg.rejected_count = j.at("rejected_count").get<int>();
  lg.score = score_spec_from_json(j.at("score"));
  for (const auto& b : j.at("buckets")) {
    LengthBucket bucket;
    bucket.lo = b.at("lo").get<int>();
    bucket.hi = b.at("hi").get<int>();
    bucket.thresholds = dynamic_from_json(b.at("thresholds"));
    lg.buckets.push_back(std::move(bucket));
  }
  return lg;
}

}  // namespace conbeam::conformal

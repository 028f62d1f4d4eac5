#pragma once

/**
 * Autoregressive model interface and the synthetic model zoo.
 *
 * Every model exposes the full next-token log distribution for a
 * (condition, prefix) pair. The base class enforces the padded-space
 * extension: once the terminator has been emitted, the distribution is a
 * point mass on the padding token, so any sequence can be scored at any
 * length. All models are deterministic and safe for concurrent queries.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conbeam/rng.hpp"
#include "conbeam/seqcore.hpp"

namespace conbeam::models {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// Abstract next-token distribution over the extended alphabet.
class ArsModel {
 public:
  virtual ~ArsModel() = default;

  virtual const TokenAlphabet& alphabet() const = 0;

  /// Dense log distribution indexed by token id, length alphabet().vocab_size().
  /// Sums to 1 in probability space; after the terminator (or padding)
  /// appears in the prefix it is a point mass on the padding token.
  std::vector<double> next_token_log_probs(std::string_view condition,
                                           std::span<const TokenId> prefix) const {
    const TokenAlphabet& ab = alphabet();
    bool done = false;
    for (TokenId t : prefix) {
      if (!ab.in_vocab(t))
        throw std::invalid_argument("ArsModel: prefix token outside alphabet");
      if (t == ab.terminator() || t == ab.padding()) done = true;
    }
    if (done) return padding_point_mass(ab);
    return next_content_log_probs(condition, prefix);
  }

  static std::vector<double> padding_point_mass(const TokenAlphabet& ab) {
    std::vector<double> dist(ab.vocab_size(), kLogZero);
    dist[static_cast<std::size_t>(ab.padding())] = 0.0;
    return dist;
  }

 protected:
  /// Distribution over base tokens and the terminator for a padding-free prefix.
  virtual std::vector<double> next_content_log_probs(std::string_view condition,
                                                     std::span<const TokenId> prefix) const = 0;
};

/// Total probability of a dense log distribution; used by validity checks.
inline double total_mass(std::span<const double> log_dist) {
  double sum = 0.0;
  for (double lp : log_dist)
    if (lp > kLogZero) sum += std::exp(lp);
  return sum;
}

/// Model probability of a sequence: sum of per-step log probabilities.
/// Padding steps after the terminator contribute exactly zero.
inline double sequence_log_prob(const ArsModel& model, std::string_view condition,
                                const Sequence& seq) {
  const TokenAlphabet& ab = model.alphabet();
  for (TokenId t : seq.tokens)
    if (!ab.in_vocab(t)) throw std::invalid_argument("sequence_log_prob: token outside alphabet");
  double total = 0.0;
  bool terminated = false;
  std::vector<TokenId> prefix;
  prefix.reserve(seq.tokens.size());
  for (TokenId t : seq.tokens) {
    if (terminated && t == ab.padding()) continue;
    if (total == kLogZero) return kLogZero;  // product already zero
    const auto dist = model.next_token_log_probs(condition, prefix);
    total += dist[static_cast<std::size_t>(t)];
    prefix.push_back(t);
    if (t == ab.terminator() || t == ab.padding()) terminated = true;
  }
  return total;
}

// ---------------------------------------------------------------------------
// TabularModel: explicit per-prefix distributions
// ---------------------------------------------------------------------------

/// Ground-truth model backed by an explicit (condition, prefix) -> distribution
/// map. Querying a prefix without an entry is an error.
class TabularModel final : public ArsModel {
 public:
  TabularModel(TokenAlphabet alphabet, int max_depth)
      : alphabet_(std::move(alphabet)), max_depth_(max_depth) {
    if (max_depth_ < 1) throw std::invalid_argument("TabularModel: max_depth must be >= 1");
  }

  const TokenAlphabet& alphabet() const override { return alphabet_; }
  int max_depth() const { return max_depth_; }

  /// Probability-space builder entry; unspecified vocabulary entries get zero.
  void set_distribution(const std::string& condition, std::span<const TokenId> prefix,
                        const std::vector<std::pair<TokenId, double>>& probs) {
    std::vector<double> dense(alphabet_.vocab_size(), kLogZero);
    double sum = 0.0;
    for (const auto& [token, p] : probs) {
      if (!alphabet_.in_vocab(token) || token == alphabet_.padding())
        throw std::invalid_argument("TabularModel: distribution token outside A+terminator");
      if (p < 0.0) throw std::invalid_argument("TabularModel: negative probability");
      if (p > 0.0) dense[static_cast<std::size_t>(token)] = std::log(p);
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("TabularModel: distribution does not sum to 1");
    set_log_distribution(condition, prefix, std::move(dense));
  }

  void set_log_distribution(const std::string& condition, std::span<const TokenId> prefix,
                            std::vector<double> dense) {
    if (static_cast<int>(prefix.size()) >= max_depth_ + 1)
      throw std::invalid_argument("TabularModel: prefix deeper than max_depth");
    for (TokenId t : prefix)
      if (!alphabet_.is_base(t))
        throw std::invalid_argument("TabularModel: prefix must contain base tokens only");
    if (dense.size() != alphabet_.vocab_size())
      throw std::invalid_argument("TabularModel: distribution size mismatch");
    table_[key(condition, prefix)] = std::move(dense);
  }

  /// Materialize any model's tables for the given conditions, following all
  /// positive-probability prefixes up to max_depth content tokens.
  static TabularModel from_model(const ArsModel& source, std::span<const std::string> conditions,
                                 int max_depth) {
    TabularModel out(source.alphabet(), max_depth);
    const TokenAlphabet& ab = out.alphabet_;
    for (const auto& condition : conditions) {
      std::vector<std::vector<TokenId>> frontier{{}};
      for (int depth = 0; depth < max_depth; ++depth) {
        std::vector<std::vector<TokenId>> next;
        for (auto& prefix : frontier) {
          auto dist = source.next_token_log_probs(condition, prefix);
          for (TokenId t : ab.base_tokens()) {
            if (dist[static_cast<std::size_t>(t)] > kLogZero && depth + 1 < max_depth) {
              auto child = prefix;
              child.push_back(t);
              next.push_back(std::move(child));
            }
          }
          out.set_log_distribution(condition, prefix, std::move(dist));
        }
        frontier = std::move(next);
      }
    }
    return out;
  }

 protected:
  std::vector<double> next_content_log_probs(std::string_view condition,
                                             std::span<const TokenId> prefix) const override {
    auto it = table_.find(key(condition, prefix));
    if (it == table_.end())
      throw std::out_of_range("TabularModel: prefix not covered by table (condition '" +
                              std::string(condition) + "')");
    return it->second;
  }

 private:
  static std::string key(std::string_view condition, std::span<const TokenId> prefix) {
    std::string k(condition);
    k.push_back('\x1e');
    for (TokenId t : prefix) {
      k.append(std::to_string(t));
      k.push_back(',');
    }
    return k;
  }

  TokenAlphabet alphabet_;
  int max_depth_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

// ---------------------------------------------------------------------------
// NoisyOracleAdditionModel: synthetic stand-in for a fine-tuned seq2seq model
// ---------------------------------------------------------------------------

/// Digit-sequence model for "x+y=" conditions. At each step the correct digit
/// of the sum (or the terminator once the sum is spelled out) receives mass
/// 1 - digit_confusion_rate; the remainder is spread over the other tokens by
/// a temperature-softened uniform. For any confusion rate below 0.5 the true
/// answer is the per-step argmax at every position, for every temperature.
class NoisyOracleAdditionModel final : public ArsModel {
 public:
  NoisyOracleAdditionModel(double noise_temperature, double digit_confusion_rate,
                           std::uint64_t rng_seed)
      : vocab_(Vocabulary::digits()),
        temperature_(noise_temperature),
        confusion_(digit_confusion_rate),
        seed_(rng_seed) {
    if (!(temperature_ > 0.0))
      throw std::invalid_argument("NoisyOracleAdditionModel: temperature must be positive");
    if (!(confusion_ >= 0.0 && confusion_ < 1.0))
      throw std::invalid_argument("NoisyOracleAdditionModel: confusion rate in [0,1)");
  }

  const TokenAlphabet& alphabet() const override { return vocab_.alphabet(); }
  const Vocabulary& vocabulary() const { return vocab_; }

  /// Digit tokens of x+y followed by the terminator.
  std::vector<TokenId> target_tokens(std::string_view condition) const {
    const auto [x, y] = parse_condition(condition);
    const std::string digits = std::to_string(x + y);
    std::vector<TokenId> out;
    out.reserve(digits.size() + 1);
    for (char c : digits) out.push_back(static_cast<TokenId>(c - '0'));
    out.push_back(alphabet().terminator());
    return out;
  }

  static std::pair<unsigned long long, unsigned long long> parse_condition(
      std::string_view condition) {
    const auto plus = condition.find('+');
    const auto eq = condition.find('=');
    if (plus == std::string_view::npos || eq == std::string_view::npos || eq != condition.size() - 1 ||
        plus == 0 || plus + 1 >= eq)
      throw std::invalid_argument("NoisyOracleAdditionModel: condition is not of the form 'x+y='");
    const auto parse = [](std::string_view s) {
      unsigned long long v = 0;
      if (s.empty() || s.size() > 18) throw std::invalid_argument("addition operand out of range");
      for (char c : s) {
        if (c < '0' || c > '9') throw std::invalid_argument("addition operand is not a number");
        v = v * 10 + static_cast<unsigned long long>(c - '0');
      }
      return v;
    };
    return {parse(condition.substr(0, plus)), parse(condition.substr(plus + 1, eq - plus - 1))};
  }

 protected:
  std::vector<double> next_content_log_probs(std::string_view condition,
                                             std::span<const TokenId> prefix) const override {
    const TokenAlphabet& ab = alphabet();
    const auto target = target_tokens(condition);
    const std::size_t pos = prefix.size();
    const TokenId correct = pos < target.size() ? target[pos] : ab.terminator();

    std::vector<double> dist(ab.vocab_size(), kLogZero);
    if (confusion_ == 0.0) {
      dist[static_cast<std::size_t>(correct)] = 0.0;
      return dist;
    }

    // Softmax of per-(condition, position, token) uniforms over the wrong tokens.
    std::vector<TokenId> wrong;
    std::vector<double> u;
    double u_max = -1.0;
    for (TokenId t : ab.base_tokens()) {
      if (t == correct) continue;
      wrong.push_back(t);
      u.push_back(noise_unit(condition, pos, t));
      u_max = std::max(u_max, u.back());
    }
    if (correct != ab.terminator()) {
      wrong.push_back(ab.terminator());
      u.push_back(noise_unit(condition, pos, ab.terminator()));
      u_max = std::max(u_max, u.back());
    }
    double z = 0.0;
    for (double& w : u) {
      w = std::exp((w - u_max) / temperature_);
      z += w;
    }
    dist[static_cast<std::size_t>(correct)] = std::log1p(-confusion_);
    for (std::size_t i = 0; i < wrong.size(); ++i)
      dist[static_cast<std::size_t>(wrong[i])] = std::log(confusion_ * u[i] / z);
    return dist;
  }

 private:
  double noise_unit(std::string_view condition, std::size_t pos, TokenId token) const {
    return hash_unit(StableHasher(seed_)
                         .add(condition)
                         .add(static_cast<std::uint64_t>(pos))
                         .add(token)
                         .digest());
  }

  Vocabulary vocab_;
  double temperature_;
  double confusion_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// RandomTabularModel: procedurally generated ground-truth tables
// ---------------------------------------------------------------------------

enum class OmegaMode {
  Anywhere,   // terminator competes with base tokens at every step
  FinalOnly,  // terminator possible only at the last content step
};

struct RandomTabularConfig {
  std::uint64_t seed = 1;
  int alphabet_size = 3;
  int depth = 3;  // content steps; beyond this the terminator is forced
  OmegaMode omega = OmegaMode::Anywhere;
  double omega_weight = 1.0;
};

/// Procedural family of tabular models: any condition string names a model
/// whose rows are Dirichlet(1) draws derived from (seed, condition, prefix).
/// Distinct conditions give independent, continuously distributed tables,
/// which is what the coverage-law experiments need.
class RandomTabularModel final : public ArsModel {
 public:
  explicit RandomTabularModel(RandomTabularConfig config)
      : config_(config), alphabet_(TokenAlphabet::canonical(static_cast<std::size_t>(config.alphabet_size))) {
    if (config.alphabet_size < 1) throw std::invalid_argument("RandomTabularModel: alphabet_size >= 1");
    if (config.depth < 1) throw std::invalid_argument("RandomTabularModel: depth >= 1");
    if (!(config.omega_weight > 0.0))
      throw std::invalid_argument("RandomTabularModel: omega_weight must be positive");
  }

  const TokenAlphabet& alphabet() const override { return alphabet_; }
  const RandomTabularConfig& config() const { return config_; }

 protected:
  std::vector<double> next_content_log_probs(std::string_view condition,
                                             std::span<const TokenId> prefix) const override {
    const TokenAlphabet& ab = alphabet_;
    std::vector<double> dist(ab.vocab_size(), kLogZero);
    const int step = static_cast<int>(prefix.size()) + 1;
    if (step > config_.depth) {
      dist[static_cast<std::size_t>(ab.terminator())] = 0.0;
      return dist;
    }
    const bool omega_allowed =
        config_.omega == OmegaMode::Anywhere || step == config_.depth;
    // Exp(1) weights normalize to a Dirichlet(1) row.
    double z = 0.0;
    std::vector<std::pair<TokenId, double>> weights;
    for (TokenId t : ab.base_tokens()) {
      const double w = exp_weight(condition, prefix, t);
      weights.emplace_back(t, w);
      z += w;
    }
    if (omega_allowed) {
      const double w = config_.omega_weight * exp_weight(condition, prefix, ab.terminator());
      weights.emplace_back(ab.terminator(), w);
      z += w;
    }
    for (const auto& [t, w] : weights) dist[static_cast<std::size_t>(t)] = std::log(w / z);
    return dist;
  }

 private:
  double exp_weight(std::string_view condition, std::span<const TokenId> prefix, TokenId token) const {
    double u = hash_unit(
        StableHasher(config_.seed).add(condition).add(prefix).add(token).digest());
    u = std::max(u, 0x1.0p-60);
    return -std::log(u);
  }

  RandomTabularConfig config_;
  TokenAlphabet alphabet_;
};

// ---------------------------------------------------------------------------
// Trace recording and replay
// ---------------------------------------------------------------------------

/// Logged per-step log distributions keyed by (condition, step).
struct TraceData {
  Vocabulary vocab;
  std::unordered_map<std::string, std::vector<std::vector<double>>> rows;
};

/// Record a model's distributions along its own greedy path, max_len steps per
/// condition. Replay through TraceModel is exact on that path.
inline TraceData record_trace(const ArsModel& model, const Vocabulary& vocab,
                              std::span<const std::string> conditions, int max_len) {
  if (max_len < 1) throw std::invalid_argument("record_trace: max_len must be >= 1");
  if (!(vocab.alphabet() == model.alphabet()))
    throw std::invalid_argument("record_trace: vocabulary does not match the model alphabet");
  TraceData trace{vocab, {}};
  for (const auto& condition : conditions) {
    auto& steps = trace.rows[condition];
    if (!steps.empty()) continue;  // duplicate condition in the list
    std::vector<TokenId> prefix;
    for (int step = 0; step < max_len; ++step) {
      auto dist = model.next_token_log_probs(condition, prefix);
      TokenId best = 0;
      for (std::size_t t = 1; t < dist.size(); ++t)
        if (dist[t] > dist[static_cast<std::size_t>(best)]) best = static_cast<TokenId>(t);
      prefix.push_back(best);
      steps.push_back(std::move(dist));
    }
  }
  return trace;
}

inline void write_trace(const TraceData& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trace: cannot open " + path.string());
  out << trace.vocab.to_json().dump() << '\n';
  std::vector<std::string> conditions;
  conditions.reserve(trace.rows.size());
  for (const auto& [condition, _] : trace.rows) conditions.push_back(condition);
  std::sort(conditions.begin(), conditions.end());
  for (const auto& condition : conditions) {
    const auto& steps = trace.rows.at(condition);
    for (std::size_t step = 0; step < steps.size(); ++step) {
      nlohmann::json line{{"id", condition}, {"step", step}};
      auto& logp = line["logp"] = nlohmann::json::array();
      for (double lp : steps[step]) {
        if (lp == kLogZero)
          logp.push_back(nullptr);  // JSON has no -inf
        else
          logp.push_back(lp);
      }
      out << line.dump() << '\n';
    }
  }
  if (!out) throw std::runtime_error("write_trace: write failed for " + path.string());
}

inline TraceData read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_trace: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_trace: missing vocabulary header");
  TraceData trace{Vocabulary::from_json(nlohmann::json::parse(line)), {}};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto condition = j.at("id").get<std::string>();
    const auto step = j.at("step").get<std::size_t>();
    std::vector<double> dist;
    for (const auto& v : j.at("logp")) dist.push_back(v.is_null() ? kLogZero : v.get<double>());
    auto& steps = trace.rows[condition];
    if (steps.size() != step)
      throw std::runtime_error("read_trace: steps out of order for condition '" + condition + "'");
    steps.push_back(std::move(dist));
  }
  return trace;
}

/// Replays a recorded trace; the distribution depends on (condition, step).
/// Queries outside the recorded keys are errors.
class TraceModel final : public ArsModel {
 public:
  explicit TraceModel(TraceData trace) : trace_(std::move(trace)) {}
  explicit TraceModel(const std::filesystem::path& path) : TraceModel(read_trace(path)) {}

  const TokenAlphabet& alphabet() const override { return trace_.vocab.alphabet(); }
  const Vocabulary& vocabulary() const { return trace_.vocab; }

 protected:
  std::vector<double> next_content_log_probs(std::string_view condition,
                                             std::span<const TokenId> prefix) const override {
    auto it = trace_.rows.find(std::string(condition));
    if (it == trace_.rows.end())
      throw std::out_of_range("TraceModel: condition '" + std::string(condition) + "' not in trace");
    if (prefix.size() >= it->second.size())
      throw std::out_of_range("TraceModel: step " + std::to_string(prefix.size()) +
                              " not recorded for condition '" + std::string(condition) + "'");
    return it->second[prefix.size()];
  }

 private:
  TraceData trace_;
};

// ---------------------------------------------------------------------------
// Ground-truth tasks
// ---------------------------------------------------------------------------

/// One (X, S) pair.
struct LabeledExample {
  std::string condition_id;
  Sequence truth;
};

/// Joint sampler over (X, S); draws are i.i.d. hence exchangeable.
class GroundTruthTask {
 public:
  virtual ~GroundTruthTask() = default;
  virtual LabeledExample sample(Rng& rng) const = 0;
  /// Exact conditional log pmf where available.
  virtual std::optional<double> log_pmf(const LabeledExample&) const { return std::nullopt; }
};

/// Ancestral sampling from a model, capped at max_content tokens. When the cap
/// is hit the unterminated prefix is returned.
inline Sequence sample_sequence(const ArsModel& model, std::string condition_id, int max_content,
                                Rng& rng) {
  if (max_content < 1) throw std::invalid_argument("sample_sequence: max_content >= 1");
  const TokenAlphabet& ab = model.alphabet();
  Sequence seq;
  seq.condition_id = std::move(condition_id);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(seq.tokens.size()) < max_content) {
    const auto dist = model.next_token_log_probs(seq.condition_id, seq.tokens);
    const double u = unit(rng);
    double cum = 0.0;
    TokenId chosen = -1;
    for (std::size_t t = 0; t < dist.size(); ++t) {
      if (dist[t] == kLogZero) continue;
      cum += std::exp(dist[t]);
      chosen = static_cast<TokenId>(t);
      if (u < cum) break;
    }
    if (chosen < 0) throw std::runtime_error("sample_sequence: empty distribution");
    seq.tokens.push_back(chosen);
    if (chosen == ab.terminator()) break;
  }
  return seq;
}

/// Truth sampled from the model itself: conditions are fresh random ids, so
/// procedural models see a new table per draw.
class ModelSampledTask final : public GroundTruthTask {
 public:
  ModelSampledTask(std::shared_ptr<const ArsModel> model, int horizon,
                   std::string condition_prefix = "c")
      : model_(std::move(model)), horizon_(horizon), prefix_(std::move(condition_prefix)) {
    if (!model_) throw std::invalid_argument("ModelSampledTask: null model");
    if (horizon_ < 1) throw std::invalid_argument("ModelSampledTask: horizon >= 1");
  }

  LabeledExample sample(Rng& rng) const override {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
    std::string condition = prefix_ + buf;
    Sequence truth = sample_sequence(*model_, condition, horizon_, rng);
    return {std::move(condition), std::move(truth)};
  }

  std::optional<double> log_pmf(const LabeledExample& ex) const override {
    return sequence_log_prob(*model_, ex.condition_id, ex.truth);
  }

  const ArsModel& model() const { return *model_; }
  int horizon() const { return horizon_; }

 private:
  std::shared_ptr<const ArsModel> model_;
  int horizon_;
  std::string prefix_;
};

/// Random integer additions with the exact sum as the (deterministic) truth.
class AdditionsGroundTruthTask final : public GroundTruthTask {
 public:
  AdditionsGroundTruthTask(int min_digits, int max_digits)
      : vocab_(Vocabulary::digits()), min_digits_(min_digits), max_digits_(max_digits) {
    if (min_digits_ < 1 || max_digits_ < min_digits_ || max_digits_ > 18)
      throw std::invalid_argument("AdditionsGroundTruthTask: digit range invalid");
  }

  LabeledExample sample(Rng& rng) const override {
    const unsigned long long x = sample_operand(rng);
    const unsigned long long y = sample_operand(rng);
    LabeledExample ex;
    ex.condition_id = std::to_string(x) + "+" + std::to_string(y) + "=";
    const std::string digits = std::to_string(x + y);
    for (char c : digits) ex.truth.tokens.push_back(static_cast<TokenId>(c - '0'));
    ex.truth.tokens.push_back(vocab_.alphabet().terminator());
    ex.truth.condition_id = ex.condition_id;
    return ex;
  }

  std::optional<double> log_pmf(const LabeledExample&) const override { return 0.0; }

  const Vocabulary& vocabulary() const { return vocab_; }

 private:
  unsigned long long sample_operand(Rng& rng) const {
    std::uniform_int_distribution<int> digit_count(min_digits_, max_digits_);
    const int m = digit_count(rng);
    unsigned long long lo = 0, hi = 9;
    if (m > 1) {
      lo = 1;
      for (int i = 1; i < m; ++i) lo *= 10;
      hi = lo * 10 - 1;
    }
    std::uniform_int_distribution<unsigned long long> value(lo, hi);
    return value(rng);
  }

  Vocabulary vocab_;
  int min_digits_;
  int max_digits_;
};

// ---------------------------------------------------------------------------
// Additions dataset generation
// ---------------------------------------------------------------------------

struct DatasetRecord {
  std::string id;
  std::string question;
  std::vector<std::string> answer;  // token names, terminator included
};

inline const std::vector<std::pair<int, int>>& default_addition_pairs() {
  static const std::vector<std::pair<int, int>> pairs{
      {3, 3}, {2, 4}, {3, 4}, {4, 4}, {2, 5}, {3, 5}, {4, 5}, {5, 5}, {2, 8}, {4, 6}, {3, 7}};
  return pairs;
}

inline DatasetRecord make_addition_record(unsigned long long x, unsigned long long y,
                                          std::size_t index) {
  DatasetRecord rec;
  char buf[16];
  std::snprintf(buf, sizeof buf, "add-%08zu", index);
  rec.id = buf;
  rec.question = std::to_string(x) + "+" + std::to_string(y) + "=";
  for (char c : std::to_string(x + y)) rec.answer.push_back(std::string(1, c));
  rec.answer.push_back("</s>");
  return rec;
}

/// Additions corpus: every one- and two-digit pair exhaustively, then for each
/// requested digit-count pair, `repeats` rounds of index permutation, order
/// permutation and emission over freshly sampled operand pools.
inline std::vector<DatasetRecord> generate_additions_dataset(
    std::uint64_t seed, std::span<const std::pair<int, int>> pairs, int samples_per_pair,
    int repeats) {
  if (samples_per_pair < 1) throw std::invalid_argument("generate_additions_dataset: samples_per_pair >= 1");
  if (repeats < 1) throw std::invalid_argument("generate_additions_dataset: repeats >= 1");
  for (const auto& [m, n] : pairs)
    if (m < 1 || n < 1 || m > 18 || n > 18)
      throw std::invalid_argument("generate_additions_dataset: digit counts must be in [1,18]");

  std::vector<DatasetRecord> records;
  for (unsigned long long x = 0; x <= 99; ++x)
    for (unsigned long long y = 0; y <= 99; ++y)
      records.push_back(make_addition_record(x, y, records.size()));

  const auto sample_with_digits = [](int m, Rng& rng) {
    unsigned long long lo = 0, hi = 9;
    if (m > 1) {
      lo = 1;
      for (int i = 1; i < m; ++i) lo *= 10;
      hi = lo * 10 - 1;
    }
    return std::uniform_int_distribution<unsigned long long>(lo, hi)(rng);
  };

  for (std::size_t pair_index = 0; pair_index < pairs.size(); ++pair_index) {
    const auto [m, n] = pairs[pair_index];
    Rng rng(derive_seed(seed, pair_index));
    const std::size_t count = static_cast<std::size_t>(samples_per_pair);
    std::vector<unsigned long long> xs(count), ys(count);
    for (auto& v : xs) v = sample_with_digits(m, rng);
    for (auto& v : ys) v = sample_with_digits(n, rng);
    std::vector<std::size_t> xi(count), yi(count);
    for (std::size_t i = 0; i < count; ++i) xi[i] = yi[i] = i;
    for (int round = 0; round < repeats; ++round) {
      std::shuffle(xi.begin(), xi.end(), rng);
      std::shuffle(yi.begin(), yi.end(), rng);
      for (std::size_t i = 0; i < count; ++i) {
        const bool swap_order = (rng() & 1u) != 0;
        const unsigned long long a = xs[xi[i]];
        const unsigned long long b = ys[yi[i]];
        records.push_back(swap_order ? make_addition_record(b, a, records.size())
                                     : make_addition_record(a, b, records.size()));
      }
    }
  }
  return records;
}

inline void write_dataset(std::span<const DatasetRecord> records,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_dataset: cannot open " + path.string());
  for (const auto& rec : records) {
    nlohmann::json line{{"id", rec.id}, {"question", rec.question}, {"answer", rec.answer}};
    out << line.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write_dataset: write failed for " + path.string());
}

inline std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + path.string());
  std::vector<DatasetRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    records.push_back({j.at("id").get<std::string>(), j.at("question").get<std::string>(),
                       j.at("answer").get<std::vector<std::string>>()});
  }
  return records;
}

inline LabeledExample to_example(const DatasetRecord& rec, const Vocabulary& vocab) {
  LabeledExample ex;
  ex.condition_id = rec.question;
  ex.truth.condition_id = rec.question;
  ex.truth.tokens = vocab.ids(rec.answer);
  return ex;
}

// ---------------------------------------------------------------------------
// Exhaustive support enumeration (brute-force oracle)
// ---------------------------------------------------------------------------

inline constexpr double kEnumerationGuard = 1e7;

/// All acceptable length-L sequences with nonzero probability, with exact log
/// probabilities. Guarded against combinatorial explosion.
inline std::vector<ScoredSequence> enumerate_support(const ArsModel& model,
                                                     std::string_view condition, int length) {
  if (length < 1) throw std::invalid_argument("enumerate_support: length >= 1");
  const TokenAlphabet& ab = model.alphabet();
  const double leaves = std::pow(static_cast<double>(ab.base_tokens().size()) + 1.0,
                                 static_cast<double>(length));
  if (leaves > kEnumerationGuard)
    throw std::runtime_error("enumerate_support: search space exceeds the enumeration guard");

  std::vector<ScoredSequence> out;
  Sequence prefix;
  prefix.condition_id = std::string(condition);

  const auto emit = [&](double log_prob) {
    Sequence padded = prefix;
    padded.tokens.resize(static_cast<std::size_t>(length), ab.padding());
    out.push_back(make_scored(std::move(padded), log_prob, ab));
  };

  const auto recurse = [&](const auto& self, double log_prob) -> void {
    const auto dist = model.next_token_log_probs(condition, prefix.tokens);
    const int depth = static_cast<int>(prefix.tokens.size());
    for (TokenId t : ab.base_tokens()) {
      const double lp = dist[static_cast<std::size_t>(t)];
      if (lp == kLogZero) continue;
      prefix.tokens.push_back(t);
      if (depth + 1 == length)
        emit(log_prob + lp);
      else
        self(self, log_prob + lp);
      prefix.tokens.pop_back();
    }
    const double lp_end = dist[static_cast<std::size_t>(ab.terminator())];
    if (lp_end > kLogZero) {
      prefix.tokens.push_back(ab.terminator());
      emit(log_prob + lp_end);
      prefix.tokens.pop_back();
    }
  };
  recurse(recurse, 0.0);
  return out;
}

}  // namespace conbeam::models

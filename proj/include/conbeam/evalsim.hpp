#pragma once

/**
 * Monte-Carlo experiment harness and metric computations.
 *
 * Repetitions draw fresh calibration/test splits, calibrate, predict and
 * score. Each repetition derives its own RNG stream from the master seed, so
 * reports are byte-identical across reruns regardless of worker scheduling.
 * Reports aggregate per-repetition records and emit plot-ready CSV files.
 */

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "conbeam/conformal.hpp"
#include "conbeam/decoding.hpp"
#include "conbeam/models.hpp"
#include "conbeam/rng.hpp"
#include "conbeam/seqcore.hpp"
#include "conbeam/stats.hpp"

namespace conbeam::evalsim {

// ---------------------------------------------------------------------------
// Oracle set-size metrics
// ---------------------------------------------------------------------------

/// Per-item record: rank of the true sequence in the score-ordered prediction
/// set (absent when uncovered), the oracle size, and the predicted size.
struct OracleAnalysis {
  std::optional<int> true_rank;
  int oracle_size = 0;
  int predicted_size = 0;
};

/// 1-based rank of the (padding-stripped) true sequence in a score-ordered set.
inline std::optional<int> oracle_rank(std::span<const ScoredSequence> set, const Sequence& truth,
                                      const TokenAlphabet& alphabet) {
  for (std::size_t i = 0; i < set.size(); ++i)
    if (same_sequence(set[i].sequence.tokens, truth.tokens, alphabet))
      return static_cast<int>(i + 1);
  return std::nullopt;
}

/// Mean absolute error between predicted and oracle set sizes.
inline double mae_vs_oracle(std::span<const OracleAnalysis> items) {
  if (items.empty()) throw std::invalid_argument("mae_vs_oracle: empty analysis");
  double sum = 0.0;
  for (const auto& item : items)
    sum += std::abs(static_cast<double>(item.predicted_size - item.oracle_size));
  return sum / static_cast<double>(items.size());
}

/// Mean predicted/oracle size ratio over covered items.
inline double size_ratio(std::span<const OracleAnalysis> items) {
  double sum = 0.0;
  int covered = 0;
  for (const auto& item : items) {
    if (!item.true_rank.has_value()) continue;
    if (item.oracle_size < 1) throw std::invalid_argument("size_ratio: oracle size must be >= 1");
    sum += static_cast<double>(item.predicted_size) / static_cast<double>(item.oracle_size);
    ++covered;
  }
  if (covered == 0) throw std::invalid_argument("size_ratio: no covered items");
  return sum / static_cast<double>(covered);
}

// ---------------------------------------------------------------------------
// Sample sources
// ---------------------------------------------------------------------------

struct SampleSizes {
  int calibration = 200;
  int test = 2000;
};

/// Supplies the per-repetition calibration/test split.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual void draw(Rng& rng, int n_calib, int n_test,
                    std::vector<models::LabeledExample>& calib,
                    std::vector<models::LabeledExample>& test) const = 0;
};

/// Fresh i.i.d. draws from a ground-truth task.
class IidSource final : public SampleSource {
 public:
  explicit IidSource(const models::GroundTruthTask& task) : task_(&task) {}

  void draw(Rng& rng, int n_calib, int n_test, std::vector<models::LabeledExample>& calib,
            std::vector<models::LabeledExample>& test) const override {
    calib.clear();
    test.clear();
    for (int i = 0; i < n_calib; ++i) calib.push_back(task_->sample(rng));
    for (int i = 0; i < n_test; ++i) test.push_back(task_->sample(rng));
  }

 private:
  const models::GroundTruthTask* task_;
};

/// Disjoint random subsamples of a fixed pool (bootstrap over held-out data).
class PoolSource final : public SampleSource {
 public:
  explicit PoolSource(std::vector<models::LabeledExample> pool) : pool_(std::move(pool)) {}

  void draw(Rng& rng, int n_calib, int n_test, std::vector<models::LabeledExample>& calib,
            std::vector<models::LabeledExample>& test) const override {
    if (static_cast<std::size_t>(n_calib) + static_cast<std::size_t>(n_test) > pool_.size())
      throw std::runtime_error("PoolSource: pool smaller than calibration + test request");
    std::vector<std::size_t> index(pool_.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
    std::shuffle(index.begin(), index.end(), rng);
    calib.clear();
    test.clear();
    for (int i = 0; i < n_calib; ++i) calib.push_back(pool_[index[static_cast<std::size_t>(i)]]);
    for (int i = 0; i < n_test; ++i)
      test.push_back(pool_[index[static_cast<std::size_t>(n_calib + i)]]);
  }

  std::size_t size() const { return pool_.size(); }

 private:
  std::vector<models::LabeledExample> pool_;
};

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct RepetitionRecord {
  int index = 0;
  bool aborted = false;
  std::string error;

  double global_coverage = std::numeric_limits<double>::quiet_NaN();
  double beam_coverage = std::numeric_limits<double>::quiet_NaN();
  // Fixed-beam: coverage among in-beam test items. Dynamic: coverage given
  // this repetition's calibration draw (the Beta-law variable).
  double conditional_coverage = std::numeric_limits<double>::quiet_NaN();
  double mean_set_size = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
  double mean_size_ratio = std::numeric_limits<double>::quiet_NaN();
  double guarantee = std::numeric_limits<double>::quiet_NaN();
  double exact_coverage = std::numeric_limits<double>::quiet_NaN();
  bool bound_holds = false;

  int test_count = 0;
  int covered_count = 0;
  int in_beam_count = 0;
  int overflow_count = 0;

  std::map<int, std::pair<long, long>> per_length;  // length -> (covered, total)
  std::map<int, long> size_histogram;               // set size -> count
  std::vector<std::pair<int, int>> scatter;         // (oracle_size, predicted_size)
};

struct MetricSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = std::numeric_limits<double>::quiet_NaN();
  double sem = std::numeric_limits<double>::quiet_NaN();  // stddev of the mean estimator
  int count = 0;
};

inline MetricSummary summarize(std::span<const RepetitionRecord> reps,
                               double RepetitionRecord::*metric) {
  std::vector<double> values;
  for (const auto& rep : reps) {
    if (rep.aborted) continue;
    const double v = rep.*metric;
    if (!std::isnan(v)) values.push_back(v);
  }
  MetricSummary s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = stats::mean(values);
  s.stddev = stats::sample_stddev(values);
  s.sem = s.stddev / std::sqrt(static_cast<double>(values.size()));
  return s;
}

struct CoverageReport {
  std::string procedure;
  double alpha = 0.0;
  double delta = std::numeric_limits<double>::quiet_NaN();
  int width = 0;
  int max_len = 0;
  int repetitions = 0;
  SampleSizes sizes;
  std::uint64_t master_seed = 0;
  nlohmann::json config;  // resolved run configuration, echoed to the manifest

  std::vector<RepetitionRecord> reps;

  MetricSummary coverage, beam_coverage, conditional_coverage, mean_size, mae, size_ratio,
      guarantee, exact_coverage;
  double bound_hold_rate = std::numeric_limits<double>::quiet_NaN();
  int aborted_count = 0;
  long overflow_total = 0;

  std::map<int, std::pair<long, long>> per_length;
  std::map<int, long> size_histogram;
  std::vector<std::pair<int, int>> scatter;
};

struct ExperimentOptions {
  int workers = 0;  // 0 = hardware concurrency
  conformal::ScoreSpec score;
  decoding::BeamRanking ranking = decoding::BeamRanking::Normalized;
  conformal::DecodeLimits limits;
  std::size_t scatter_limit = 20000;
};

namespace detail {

inline void run_repetitions(int count, int workers, const std::function<void(int)>& body) {
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline void merge_reps(CoverageReport& report, const ExperimentOptions& options) {
  report.coverage = summarize(report.reps, &RepetitionRecord::global_coverage);
  report.beam_coverage = summarize(report.reps, &RepetitionRecord::beam_coverage);
  report.conditional_coverage = summarize(report.reps, &RepetitionRecord::conditional_coverage);
  report.mean_size = summarize(report.reps, &RepetitionRecord::mean_set_size);
  report.mae = summarize(report.reps, &RepetitionRecord::mae);
  report.size_ratio = summarize(report.reps, &RepetitionRecord::mean_size_ratio);
  report.guarantee = summarize(report.reps, &RepetitionRecord::guarantee);
  report.exact_coverage = summarize(report.reps, &RepetitionRecord::exact_coverage);

  int holds = 0, valid = 0;
  for (const auto& rep : report.reps) {
    if (rep.aborted) {
      ++report.aborted_count;
      continue;
    }
    ++valid;
    if (rep.bound_holds) ++holds;
    report.overflow_total += rep.overflow_count;
    for (const auto& [len, counts] : rep.per_length) {
      auto& slot = report.per_length[len];
      slot.first += counts.first;
      slot.second += counts.second;
    }
    for (const auto& [size, count] : rep.size_histogram) report.size_histogram[size] += count;
    for (const auto& pair : rep.scatter) {
      if (report.scatter.size() >= options.scatter_limit) break;
      report.scatter.push_back(pair);
    }
  }
  if (valid > 0) report.bound_hold_rate = static_cast<double>(holds) / static_cast<double>(valid);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fixed-beam experiment
// ---------------------------------------------------------------------------

/// Per repetition: draw calibration and test sets, calibrate the sub-beam
/// procedure, predict on test items, and record coverage, conditional
/// coverage, MAE and whether the composite bound held.
inline CoverageReport run_fixed_beam_experiment(const SampleSource& source,
                                                const models::ArsModel& model, int width,
                                                int max_len, double alpha, double delta, int reps,
                                                const SampleSizes& sizes, std::uint64_t seed,
                                                const ExperimentOptions& options = {}) {
  if (reps < 1) throw std::invalid_argument("run_fixed_beam_experiment: reps >= 1");
  const TokenAlphabet& ab = model.alphabet();

  CoverageReport report;
  report.procedure = "fixed-beam";
  report.alpha = alpha;
  report.delta = delta;
  report.width = width;
  report.max_len = max_len;
  report.repetitions = reps;
  report.sizes = sizes;
  report.master_seed = seed;
  report.reps.resize(static_cast<std::size_t>(reps));

  detail::run_repetitions(reps, options.workers, [&](int r) {
    RepetitionRecord& rec = report.reps[static_cast<std::size_t>(r)];
    rec.index = r;
    try {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
      std::vector<models::LabeledExample> calib, test;
      source.draw(rng, sizes.calibration, sizes.test, calib, test);

      const auto cal = conformal::calibrate_sub_beam(model, calib, width, max_len, alpha, delta,
                                                     {options.ranking, options.score});

      std::vector<OracleAnalysis> analysis;
      analysis.reserve(test.size());
      for (const auto& item : test) {
        const auto beam =
            decoding::beam_search(model, item.condition_id, width, max_len, {options.ranking});
        std::vector<ScoredSequence> pred;
        for (const auto& hyp : beam.beams) {
          const auto content = strip_padding(hyp.sequence.tokens, ab);
          const double s = conformal::conformal_score(hyp.log_prob, static_cast<int>(content.size()),
                                                      item.condition_id, content, options.score);
          if (cal.inner.accepts(s)) pred.push_back(hyp);
        }

        const auto rank_in_beam = oracle_rank(beam.beams, item.truth, ab);
        const auto rank_in_pred = oracle_rank(pred, item.truth, ab);
        OracleAnalysis oa;
        oa.true_rank = rank_in_pred;
        oa.oracle_size = rank_in_beam.value_or(static_cast<int>(beam.beams.size()));
        oa.predicted_size = static_cast<int>(pred.size());
        analysis.push_back(oa);

        ++rec.test_count;
        if (rank_in_beam) ++rec.in_beam_count;
        if (rank_in_pred) ++rec.covered_count;
        const int len = content_length(item.truth.tokens, ab);
        auto& slot = rec.per_length[len];
        if (rank_in_pred) ++slot.first;
        ++slot.second;
        ++rec.size_histogram[oa.predicted_size];
        rec.scatter.emplace_back(oa.oracle_size, oa.predicted_size);
      }

      rec.global_coverage = static_cast<double>(rec.covered_count) / rec.test_count;
      rec.beam_coverage = static_cast<double>(rec.in_beam_count) / rec.test_count;
      if (rec.in_beam_count > 0)
        rec.conditional_coverage = static_cast<double>(rec.covered_count) / rec.in_beam_count;
      double size_sum = 0.0;
      for (const auto& oa : analysis) size_sum += oa.predicted_size;
      rec.mean_set_size = size_sum / static_cast<double>(analysis.size());
      rec.mae = mae_vs_oracle(analysis);
      if (rec.covered_count > 0) rec.mean_size_ratio = size_ratio(analysis);
      rec.guarantee = cal.composite_guarantee;
      rec.bound_holds = rec.global_coverage >= cal.composite_guarantee;
    } catch (const std::exception& e) {
      rec.aborted = true;
      rec.error = e.what();
    }
  });

  detail::merge_reps(report, options);
  return report;
}

// ---------------------------------------------------------------------------
// Dynamic-beam experiment
// ---------------------------------------------------------------------------

/// Per repetition: calibrate the dynamic thresholds, decode the test items,
/// and record coverage against the guarantee, set sizes, size ratios,
/// per-length coverage and the size histogram. Beam overflows are counted,
/// not fatal: coverage still comes from region membership of the truth.
inline CoverageReport run_dynamic_experiment(const SampleSource& source,
                                             const models::ArsModel& model, double alpha,
                                             int max_len, int reps, const SampleSizes& sizes,
                                             std::uint64_t seed,
                                             const ExperimentOptions& options = {}) {
  if (reps < 1) throw std::invalid_argument("run_dynamic_experiment: reps >= 1");
  const TokenAlphabet& ab = model.alphabet();

  CoverageReport report;
  report.procedure = "dynamic";
  report.alpha = alpha;
  report.max_len = max_len;
  report.repetitions = reps;
  report.sizes = sizes;
  report.master_seed = seed;
  report.reps.resize(static_cast<std::size_t>(reps));

  detail::run_repetitions(reps, options.workers, [&](int r) {
    RepetitionRecord& rec = report.reps[static_cast<std::size_t>(r)];
    rec.index = r;
    try {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
      std::vector<models::LabeledExample> calib, test;
      source.draw(rng, sizes.calibration, sizes.test, calib, test);

      const auto th = conformal::calibrate_dynamic(model, calib, alpha, max_len, options.score);

      std::vector<OracleAnalysis> analysis;
      for (const auto& item : test) {
        const bool covered = conformal::region_contains(th, model, item.condition_id, item.truth);
        ++rec.test_count;
        if (covered) ++rec.covered_count;
        const int len = content_length(item.truth.tokens, ab);
        auto& slot = rec.per_length[len];
        if (covered) ++slot.first;
        ++slot.second;

        try {
          const auto set = conformal::decode_dynamic(model, item.condition_id, th, options.limits);
          OracleAnalysis oa;
          oa.true_rank = oracle_rank(set, item.truth, ab);
          oa.oracle_size = oa.true_rank.value_or(0);
          oa.predicted_size = static_cast<int>(set.size());
          ++rec.size_histogram[oa.predicted_size];
          if (oa.true_rank) rec.scatter.emplace_back(oa.oracle_size, oa.predicted_size);
          analysis.push_back(oa);
        } catch (const conformal::BeamOverflowError&) {
          ++rec.overflow_count;
        }
      }

      rec.global_coverage = static_cast<double>(rec.covered_count) / rec.test_count;
      rec.conditional_coverage = rec.global_coverage;  // conditional on this calibration draw
      rec.guarantee = th.lower_bound();
      rec.exact_coverage = th.exact_coverage();
      rec.bound_holds = rec.global_coverage >= rec.guarantee;
      if (!analysis.empty()) {
        double size_sum = 0.0;
        for (const auto& oa : analysis) size_sum += oa.predicted_size;
        rec.mean_set_size = size_sum / static_cast<double>(analysis.size());
        std::vector<OracleAnalysis> covered_items;
        for (const auto& oa : analysis)
          if (oa.true_rank) covered_items.push_back(oa);
        if (!covered_items.empty()) {
          rec.mean_size_ratio = size_ratio(covered_items);
          rec.mae = mae_vs_oracle(covered_items);
        }
      }
    } catch (const std::exception& e) {
      rec.aborted = true;
      rec.error = e.what();
    }
  });

  detail::merge_reps(report, options);
  return report;
}

inline CoverageReport run_fixed_beam_experiment(const models::GroundTruthTask& task,
                                                const models::ArsModel& model, int width,
                                                int max_len, double alpha, double delta, int reps,
                                                const SampleSizes& sizes, std::uint64_t seed,
                                                const ExperimentOptions& options = {}) {
  IidSource source(task);
  return run_fixed_beam_experiment(source, model, width, max_len, alpha, delta, reps, sizes, seed,
                                   options);
}

inline CoverageReport run_dynamic_experiment(const models::GroundTruthTask& task,
                                             const models::ArsModel& model, double alpha,
                                             int max_len, int reps, const SampleSizes& sizes,
                                             std::uint64_t seed,
                                             const ExperimentOptions& options = {}) {
  IidSource source(task);
  return run_dynamic_experiment(source, model, alpha, max_len, reps, sizes, seed, options);
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace csv {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    out.push_back(c);
    if (c == '"') out.push_back('"');
  }
  out.push_back('"');
  return out;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("csv: cannot open " + path.string());
  }

  void row(std::span<const std::string> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(fields[i]);
    }
    out_ << "\r\n";
  }

 private:
  std::ofstream out_;
};

}  // namespace csv

/// Writes aggregate.csv, reps.csv, per_length.csv, histogram.csv, scatter.csv
/// and manifest.json under `dir`.
inline void emit_report(const CoverageReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  using csv::format_double;

  {
    csv::Writer w(dir / "aggregate.csv");
    w.row(std::vector<std::string>{
        "procedure", "alpha", "delta", "width", "max_len", "repetitions", "n_calibration",
        "n_test", "coverage", "coverage_sem", "guarantee", "exact_coverage", "mean_size",
        "mean_size_sem", "mean_ratio", "mean_ratio_sem", "conditional_coverage",
        "conditional_coverage_sem", "beam_coverage", "beam_coverage_sem", "mae", "mae_sem",
        "bound_hold_rate", "aborted", "overflows"});
    w.row(std::vector<std::string>{
        report.procedure, format_double(report.alpha), format_double(report.delta),
        std::to_string(report.width), std::to_string(report.max_len),
        std::to_string(report.repetitions), std::to_string(report.sizes.calibration),
        std::to_string(report.sizes.test), format_double(report.coverage.mean),
        format_double(report.coverage.sem), format_double(report.guarantee.mean),
        format_double(report.exact_coverage.mean), format_double(report.mean_size.mean),
        format_double(report.mean_size.sem), format_double(report.size_ratio.mean),
        format_double(report.size_ratio.sem), format_double(report.conditional_coverage.mean),
        format_double(report.conditional_coverage.sem), format_double(report.beam_coverage.mean),
        format_double(report.beam_coverage.sem), format_double(report.mae.mean),
        format_double(report.mae.sem), format_double(report.bound_hold_rate),
        std::to_string(report.aborted_count), std::to_string(report.overflow_total)});
  }
  {
    csv::Writer w(dir / "reps.csv");
    w.row(std::vector<std::string>{"rep", "aborted", "coverage", "conditional_coverage",
                                   "beam_coverage", "mean_size", "mae", "mean_ratio", "guarantee",
                                   "bound_holds", "overflows", "error"});
    for (const auto& rep : report.reps) {
      w.row(std::vector<std::string>{
          std::to_string(rep.index), rep.aborted ? "1" : "0", format_double(rep.global_coverage),
          format_double(rep.conditional_coverage), format_double(rep.beam_coverage),
          format_double(rep.mean_set_size), format_double(rep.mae),
          format_double(rep.mean_size_ratio), format_double(rep.guarantee),
          rep.bound_holds ? "1" : "0", std::to_string(rep.overflow_count), rep.error});
    }
  }
  {
    csv::Writer w(dir / "per_length.csv");
    w.row(std::vector<std::string>{"length", "covered", "total", "coverage"});
    for (const auto& [len, counts] : report.per_length) {
      w.row(std::vector<std::string>{
          std::to_string(len), std::to_string(counts.first), std::to_string(counts.second),
          format_double(static_cast<double>(counts.first) / static_cast<double>(counts.second))});
    }
  }
  {
    csv::Writer w(dir / "histogram.csv");
    w.row(std::vector<std::string>{"size", "count"});
    const int max_size = report.size_histogram.empty() ? 0 : report.size_histogram.rbegin()->first;
    for (int size = 0; size <= max_size; ++size) {
      const auto it = report.size_histogram.find(size);
      w.row(std::vector<std::string>{std::to_string(size),
                                     std::to_string(it == report.size_histogram.end() ? 0L
                                                                                      : it->second)});
    }
  }
  {
    csv::Writer w(dir / "scatter.csv");
    w.row(std::vector<std::string>{"oracle_size", "predicted_size"});
    for (const auto& [oracle, predicted] : report.scatter)
      w.row(std::vector<std::string>{std::to_string(oracle), std::to_string(predicted)});
  }
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("emit_report: cannot open manifest.json");
    nlohmann::json manifest = report.config.is_null() ? nlohmann::json::object() : report.config;
    manifest["master_seed"] = report.master_seed;
    out << manifest.dump(2) << '\n';
  }
}

}  // namespace conbeam::evalsim

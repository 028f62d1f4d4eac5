// conbeam command-line interface.
//
// Subcommands: generate | calibrate | decode | experiment | trace-record.
// A JSON config file (--config) and flags describe each run; flags override
// file values. All paths are resolved against --workdir when given. The
// CONBEAM_SEED environment variable supplies the default seed and is honored
// only when neither --seed nor the config file set one.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "conbeam/conformal.hpp"
#include "conbeam/decoding.hpp"
#include "conbeam/evalsim.hpp"
#include "conbeam/models.hpp"
#include "conbeam/seqcore.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace conbeam;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct ModelSpec {
  std::string zoo = "noisy-addition";  // noisy-addition | random-tabular | trace
  double temperature = 1.0;
  double confusion = 0.1;
  std::uint64_t seed = 7;
  int alphabet_size = 3;
  int depth = 3;
  std::string omega = "anywhere";  // anywhere | final-only
  double omega_weight = 1.0;
  std::string path;  // trace file

  json to_json() const {
    if (zoo == "trace") return {{"zoo", zoo}, {"path", path}};
    if (zoo == "random-tabular")
      return {{"zoo", zoo},         {"alphabet_size", alphabet_size}, {"depth", depth},
              {"seed", seed},       {"omega", omega},                 {"omega_weight", omega_weight}};
    return {{"zoo", zoo}, {"temperature", temperature}, {"confusion", confusion}, {"seed", seed}};
  }

  static ModelSpec from_json(const json& j) {
    ModelSpec spec;
    spec.zoo = j.value("zoo", spec.zoo);
    spec.temperature = j.value("temperature", spec.temperature);
    spec.confusion = j.value("confusion", spec.confusion);
    spec.seed = j.value("seed", spec.seed);
    spec.alphabet_size = j.value("alphabet_size", spec.alphabet_size);
    spec.depth = j.value("depth", spec.depth);
    spec.omega = j.value("omega", spec.omega);
    spec.omega_weight = j.value("omega_weight", spec.omega_weight);
    spec.path = j.value("path", spec.path);
    return spec;
  }
};

struct TaskSpec {
  std::string kind = "sampled";  // sampled | additions | dataset
  int horizon = 0;               // sampled: max content tokens (0 = max_len)
  int min_digits = 1;
  int max_digits = 3;
  std::string path;  // dataset file

  json to_json() const {
    if (kind == "dataset") return {{"kind", kind}, {"path", path}};
    if (kind == "additions")
      return {{"kind", kind}, {"min_digits", min_digits}, {"max_digits", max_digits}};
    return {{"kind", kind}, {"horizon", horizon}};
  }

  static TaskSpec from_json(const json& j) {
    TaskSpec spec;
    spec.kind = j.value("kind", spec.kind);
    spec.horizon = j.value("horizon", spec.horizon);
    spec.min_digits = j.value("min_digits", spec.min_digits);
    spec.max_digits = j.value("max_digits", spec.max_digits);
    spec.path = j.value("path", spec.path);
    return spec;
  }
};

struct RunConfig {
  std::string procedure = "dynamic";  // fixed-beam | dynamic | length-groups
  double alpha = 0.05;
  double delta = 0.05;
  int width = 5;
  int max_len = 5;
  int repetitions = 100;
  int calibration_size = 200;
  int test_size = 2000;
  double calibration_fraction = 0.0;  // dataset tasks; 0 = use absolute sizes
  double test_fraction = 0.0;
  std::uint64_t seed = 42;
  std::string output_dir = "out";
  std::size_t beam_cap = 10000;  // 0 disables the cap
  int workers = 0;
  std::string score_convention = "log_norm";
  double jitter_epsilon = 0.0;
  std::string ranking = "normalized";
  std::vector<int> bucket_edges;
  std::size_t scatter_limit = 20000;
  int min_bucket_count = 10;
  ModelSpec model;
  TaskSpec task;

  json to_json() const {
    return {{"procedure", procedure},
            {"alpha", alpha},
            {"delta", delta},
            {"width", width},
            {"max_len", max_len},
            {"repetitions", repetitions},
            {"calibration_size", calibration_size},
            {"test_size", test_size},
            {"calibration_fraction", calibration_fraction},
            {"test_fraction", test_fraction},
            {"seed", seed},
            {"output_dir", output_dir},
            {"beam_cap", beam_cap},
            {"workers", workers},
            {"score_convention", score_convention},
            {"jitter_epsilon", jitter_epsilon},
            {"ranking", ranking},
            {"bucket_edges", bucket_edges},
            {"scatter_limit", scatter_limit},
            {"min_bucket_count", min_bucket_count},
            {"model", model.to_json()},
            {"task", task.to_json()}};
  }

  static RunConfig from_json(const json& j) {
    RunConfig c;
    c.procedure = j.value("procedure", c.procedure);
    c.alpha = j.value("alpha", c.alpha);
    c.delta = j.value("delta", c.delta);
    c.width = j.value("width", c.width);
    c.max_len = j.value("max_len", c.max_len);
    c.repetitions = j.value("repetitions", c.repetitions);
    c.calibration_size = j.value("calibration_size", c.calibration_size);
    c.test_size = j.value("test_size", c.test_size);
    c.calibration_fraction = j.value("calibration_fraction", c.calibration_fraction);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.beam_cap = j.value("beam_cap", c.beam_cap);
    c.workers = j.value("workers", c.workers);
    c.score_convention = j.value("score_convention", c.score_convention);
    c.jitter_epsilon = j.value("jitter_epsilon", c.jitter_epsilon);
    c.ranking = j.value("ranking", c.ranking);
    c.bucket_edges = j.value("bucket_edges", c.bucket_edges);
    c.scatter_limit = j.value("scatter_limit", c.scatter_limit);
    c.min_bucket_count = j.value("min_bucket_count", c.min_bucket_count);
    if (j.contains("model")) c.model = ModelSpec::from_json(j.at("model"));
    if (j.contains("task")) c.task = TaskSpec::from_json(j.at("task"));
    return c;
  }

  void validate() const {
    if (procedure != "fixed-beam" && procedure != "dynamic" && procedure != "length-groups")
      throw ConfigError("procedure must be fixed-beam, dynamic or length-groups");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must be in (0,1)");
    if (width < 1) throw ConfigError("width must be >= 1");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (calibration_fraction < 0.0 || test_fraction < 0.0 ||
        calibration_fraction + test_fraction > 1.0)
      throw ConfigError("split fractions must be nonnegative and sum to <= 1");
    if (procedure == "length-groups" && bucket_edges.empty())
      throw ConfigError("length-groups requires bucket_edges");
  }

  conformal::ScoreSpec score_spec() const {
    conformal::ScoreSpec spec;
    spec.convention = score_convention_from_string(score_convention);
    spec.jitter_epsilon = jitter_epsilon;
    spec.jitter_seed = seed;
    return spec;
  }

  conformal::DecodeLimits limits() const {
    conformal::DecodeLimits lim;
    if (beam_cap == 0)
      lim.beam_cap.reset();
    else
      lim.beam_cap = beam_cap;
    return lim;
  }
};

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

struct BuiltModel {
  std::shared_ptr<const models::ArsModel> model;
  Vocabulary vocab;
};

BuiltModel build_model(const ModelSpec& spec) {
  if (spec.zoo == "noisy-addition") {
    auto m = std::make_shared<models::NoisyOracleAdditionModel>(spec.temperature, spec.confusion,
                                                                spec.seed);
    Vocabulary vocab = m->vocabulary();
    return {std::move(m), std::move(vocab)};
  }
  if (spec.zoo == "random-tabular") {
    models::RandomTabularConfig config;
    config.seed = spec.seed;
    config.alphabet_size = spec.alphabet_size;
    config.depth = spec.depth;
    config.omega_weight = spec.omega_weight;
    if (spec.omega == "anywhere")
      config.omega = models::OmegaMode::Anywhere;
    else if (spec.omega == "final-only")
      config.omega = models::OmegaMode::FinalOnly;
    else
      throw ConfigError("model.omega must be anywhere or final-only");
    return {std::make_shared<models::RandomTabularModel>(config),
            Vocabulary::letters(static_cast<std::size_t>(spec.alphabet_size))};
  }
  if (spec.zoo == "trace") {
    if (spec.path.empty()) throw ConfigError("trace model requires model.path");
    auto m = std::make_shared<models::TraceModel>(fs::path(spec.path));
    Vocabulary vocab = m->vocabulary();
    return {std::move(m), std::move(vocab)};
  }
  throw ConfigError("unknown model zoo '" + spec.zoo + "'");
}

std::unique_ptr<evalsim::SampleSource> build_source(const RunConfig& config,
                                                    const BuiltModel& built,
                                                    std::shared_ptr<const models::GroundTruthTask>& keep_alive) {
  if (config.task.kind == "dataset") {
    if (config.task.path.empty()) throw ConfigError("dataset task requires task.path");
    const auto records = models::read_dataset(config.task.path);
    std::vector<models::LabeledExample> pool;
    pool.reserve(records.size());
    for (const auto& rec : records) pool.push_back(models::to_example(rec, built.vocab));
    return std::make_unique<evalsim::PoolSource>(std::move(pool));
  }
  if (config.task.kind == "additions") {
    auto task = std::make_shared<models::AdditionsGroundTruthTask>(config.task.min_digits,
                                                                   config.task.max_digits);
    keep_alive = task;
    return std::make_unique<evalsim::IidSource>(*task);
  }
  if (config.task.kind == "sampled") {
    const int horizon = config.task.horizon > 0 ? config.task.horizon : config.max_len;
    auto task = std::make_shared<models::ModelSampledTask>(built.model, horizon);
    keep_alive = task;
    return std::make_unique<evalsim::IidSource>(*task);
  }
  throw ConfigError("unknown task kind '" + config.task.kind + "'");
}

evalsim::SampleSizes resolve_sizes(const RunConfig& config,
                                   const evalsim::SampleSource* source) {
  evalsim::SampleSizes sizes{config.calibration_size, config.test_size};
  if (config.calibration_fraction > 0.0 || config.test_fraction > 0.0) {
    const auto* pool = dynamic_cast<const evalsim::PoolSource*>(source);
    if (pool == nullptr)
      throw ConfigError("split fractions apply to dataset tasks only");
    sizes.calibration = static_cast<int>(config.calibration_fraction *
                                         static_cast<double>(pool->size()));
    sizes.test = static_cast<int>(config.test_fraction * static_cast<double>(pool->size()));
    if (sizes.calibration < 1 || sizes.test < 1)
      throw ConfigError("split fractions select an empty calibration or test set");
  }
  return sizes;
}

std::vector<models::LabeledExample> draw_calibration(const RunConfig& config,
                                                     const evalsim::SampleSource& source,
                                                     const evalsim::SampleSizes& sizes) {
  Rng rng(derive_seed(config.seed, 0));
  std::vector<models::LabeledExample> calib, test;
  source.draw(rng, sizes.calibration, 0, calib, test);
  return calib;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_generate(const fs::path& output, std::uint64_t seed,
                 const std::vector<std::pair<int, int>>& pairs, int samples_per_pair,
                 int repeats) {
  const auto& use_pairs = pairs.empty() ? models::default_addition_pairs() : pairs;
  const auto records =
      models::generate_additions_dataset(seed, use_pairs, samples_per_pair, repeats);
  models::write_dataset(records, output);
  std::cout << "wrote " << records.size() << " records to " << output.string() << "\n";
  return 0;
}

int cmd_calibrate(const RunConfig& config, const fs::path& output) {
  const BuiltModel built = build_model(config.model);
  std::shared_ptr<const models::GroundTruthTask> keep_alive;
  const auto source = build_source(config, built, keep_alive);
  const auto sizes = resolve_sizes(config, source.get());
  const auto calib = draw_calibration(config, *source, sizes);

  json artifact;
  if (config.procedure == "fixed-beam") {
    const auto cal = conformal::calibrate_sub_beam(
        *built.model, calib, config.width, config.max_len, config.alpha, config.delta,
        {decoding::beam_ranking_from_string(config.ranking), config.score_spec()});
    artifact = conformal::to_json(cal, config.seed);
  } else if (config.procedure == "dynamic") {
    const auto th = conformal::calibrate_dynamic(*built.model, calib, config.alpha,
                                                 config.max_len, config.score_spec());
    artifact = conformal::to_json(th, config.seed);
  } else {
    const auto lg = conformal::calibrate_length_groups(*built.model, calib, config.alpha,
                                                       config.bucket_edges, config.score_spec(),
                                                       config.min_bucket_count);
    artifact = conformal::to_json(lg, config.seed);
  }
  artifact["model"] = config.model.to_json();
  std::ofstream out(output);
  if (!out) throw std::runtime_error("cannot open " + output.string());
  out << artifact.dump(2) << '\n';
  std::cout << "wrote calibration artifact to " << output.string() << "\n";
  return 0;
}

json prediction_line(const std::string& id, std::span<const ScoredSequence> set,
                     const Vocabulary& vocab) {
  json entries = json::array();
  for (const auto& entry : set) {
    entries.push_back({{"tokens", vocab.names(entry.sequence.tokens)},
                       {"logp", entry.log_prob},
                       {"norm_score", entry.normalized_score}});
  }
  return {{"id", id}, {"set", std::move(entries)}, {"set_size", set.size()}};
}

int cmd_decode(const RunConfig& config, const fs::path& artifact_path, const fs::path& input,
               const fs::path& output) {
  const BuiltModel built = build_model(config.model);
  std::ifstream artifact_in(artifact_path);
  if (!artifact_in) throw std::runtime_error("cannot open " + artifact_path.string());
  const json artifact = json::parse(artifact_in);
  const std::string procedure = artifact.at("procedure").get<std::string>();

  const auto records = models::read_dataset(input);
  std::ofstream out(output);
  if (!out) throw std::runtime_error("cannot open " + output.string());

  const auto limits = config.limits();
  std::optional<conformal::SubBeamCalibration> sub;
  std::optional<conformal::DynamicThresholds> dyn;
  std::optional<conformal::LengthGroupCalibration> groups;
  if (procedure == "fixed-beam")
    sub = conformal::sub_beam_from_json(artifact);
  else if (procedure == "dynamic")
    dyn = conformal::dynamic_from_json(artifact);
  else if (procedure == "length-groups")
    groups = conformal::length_groups_from_json(artifact);
  else
    throw std::runtime_error("unknown procedure in artifact: " + procedure);

  int overflow_warnings = 0;
  for (const auto& rec : records) {
    try {
      std::vector<ScoredSequence> set;
      if (sub)
        set = conformal::predict_sub_beam(*built.model, rec.question, *sub, sub->max_len);
      else if (dyn)
        set = conformal::decode_dynamic(*built.model, rec.question, *dyn, limits);
      else
        set = conformal::decode_length_groups(*built.model, rec.question, *groups, limits);
      out << prediction_line(rec.id, set, built.vocab).dump() << '\n';
    } catch (const conformal::BeamOverflowError& e) {
      ++overflow_warnings;
      json line = prediction_line(rec.id, e.partial_beam(), built.vocab);
      line["error"] = "beam_overflow";
      out << line.dump() << '\n';
    }
  }
  if (overflow_warnings > 0)
    std::cerr << "warning: " << overflow_warnings << " beam overflow(s); partial sets emitted\n";
  std::cout << "wrote " << records.size() << " prediction sets to " << output.string() << "\n";
  return 0;
}

int cmd_experiment(const RunConfig& config) {
  const BuiltModel built = build_model(config.model);
  std::shared_ptr<const models::GroundTruthTask> keep_alive;
  const auto source = build_source(config, built, keep_alive);
  const auto sizes = resolve_sizes(config, source.get());

  evalsim::ExperimentOptions options;
  options.workers = config.workers;
  options.score = config.score_spec();
  options.ranking = decoding::beam_ranking_from_string(config.ranking);
  options.limits = config.limits();
  options.scatter_limit = config.scatter_limit;

  evalsim::CoverageReport report;
  if (config.procedure == "fixed-beam") {
    report = evalsim::run_fixed_beam_experiment(*source, *built.model, config.width,
                                                config.max_len, config.alpha, config.delta,
                                                config.repetitions, sizes, config.seed, options);
  } else if (config.procedure == "dynamic") {
    report = evalsim::run_dynamic_experiment(*source, *built.model, config.alpha, config.max_len,
                                             config.repetitions, sizes, config.seed, options);
  } else {
    throw ConfigError("experiment supports the fixed-beam and dynamic procedures");
  }
  report.config = config.to_json();
  evalsim::emit_report(report, config.output_dir);

  std::cout << "procedure=" << report.procedure << " coverage=" << report.coverage.mean
            << " guarantee=" << report.guarantee.mean << " mean_size=" << report.mean_size.mean
            << " aborted=" << report.aborted_count << "\n";
  std::cout << "report written to " << config.output_dir << "\n";
  return report.aborted_count > 0 ? 1 : 0;
}

int cmd_trace_record(const RunConfig& config, const fs::path& input, const fs::path& output,
                     int max_len) {
  const BuiltModel built = build_model(config.model);
  const auto records = models::read_dataset(input);
  std::vector<std::string> conditions;
  conditions.reserve(records.size());
  for (const auto& rec : records) conditions.push_back(rec.question);
  const auto trace = models::record_trace(*built.model, built.vocab, conditions, max_len);
  models::write_trace(trace, output);
  std::cout << "recorded " << trace.rows.size() << " conditions to " << output.string() << "\n";
  return 0;
}

// "m,n;m,n;..." -> pair list
std::vector<std::pair<int, int>> parse_pairs(const std::string& text) {
  std::vector<std::pair<int, int>> pairs;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find(';', start);
    if (end == std::string::npos) end = text.size();
    const std::string item = text.substr(start, end - start);
    const std::size_t comma = item.find(',');
    if (comma == std::string::npos)
      throw ConfigError("malformed digit pair '" + item + "' (expected m,n)");
    try {
      pairs.emplace_back(std::stoi(item.substr(0, comma)), std::stoi(item.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ConfigError("malformed digit pair '" + item + "' (expected m,n)");
    }
    start = end + 1;
  }
  if (pairs.empty()) throw ConfigError("empty digit pair list");
  return pairs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conformal decoding for autoregressive sequence models"};
  app.require_subcommand(1);

  std::string config_path, workdir;
  const auto add_global = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    cmd->add_option("--workdir", workdir, "base directory for relative paths");
  };

  // Flag storage; only flags the user passed override the config.
  std::string procedure, output_dir, score_convention, ranking, model_json, task_json;
  double alpha = 0, delta = 0, jitter = 0;
  int width = 0, max_len = 0, repetitions = 0;
  int calibration_size = 0, test_size = 0, workers = 0, min_bucket = 0;
  double calibration_fraction = 0, test_fraction = 0;
  std::uint64_t seed = 0;
  std::size_t beam_cap = 0, scatter_limit = 0;
  std::vector<int> bucket_edges;

  const auto add_common = [&](CLI::App* cmd) {
    add_global(cmd);
    cmd->add_option("--procedure", procedure, "fixed-beam | dynamic | length-groups");
    cmd->add_option("--alpha", alpha, "per-step risk level");
    cmd->add_option("--delta", delta, "risk for the binomial beam-coverage bound");
    cmd->add_option("--width", width, "beam width");
    cmd->add_option("--max-len", max_len, "decoding horizon");
    cmd->add_option("--repetitions", repetitions, "Monte-Carlo repetitions");
    cmd->add_option("--calibration-size", calibration_size, "calibration draw size");
    cmd->add_option("--test-size", test_size, "test draw size");
    cmd->add_option("--calibration-fraction", calibration_fraction, "dataset calibration fraction");
    cmd->add_option("--test-fraction", test_fraction, "dataset test fraction");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--output-dir", output_dir, "report directory");
    cmd->add_option("--beam-cap", beam_cap, "dynamic beam safety cap (0 disables)");
    cmd->add_option("--workers", workers, "worker threads (0 = hardware)");
    cmd->add_option("--score-convention", score_convention, "log_norm | prob_norm");
    cmd->add_option("--jitter-epsilon", jitter, "tie-breaking score jitter");
    cmd->add_option("--ranking", ranking, "normalized | raw beam ranking");
    cmd->add_option("--bucket-edges", bucket_edges, "length-group upper edges");
    cmd->add_option("--scatter-limit", scatter_limit, "max scatter rows in reports");
    cmd->add_option("--min-bucket-count", min_bucket, "minimum items per length bucket");
    cmd->add_option("--model", model_json, "model spec as inline JSON");
    cmd->add_option("--task", task_json, "task spec as inline JSON");
  };

  auto* generate = app.add_subcommand("generate", "generate the additions dataset");
  std::string gen_output = "dataset.jsonl", gen_pairs;
  int gen_samples = 5000, gen_repeats = 10;
  add_global(generate);
  generate->add_option("--output", gen_output, "dataset path (JSONL)");
  generate->add_option("--pairs", gen_pairs, "digit pairs, e.g. '3,3;2,4'");
  generate->add_option("--samples-per-pair", gen_samples, "operand pool size per digit pair");
  generate->add_option("--repeats", gen_repeats, "permutation rounds per digit pair");
  generate->add_option("--seed", seed, "master seed");

  auto* calibrate = app.add_subcommand("calibrate", "calibrate a conformal procedure");
  std::string cal_output = "calibration.json";
  calibrate->add_option("--output", cal_output, "artifact path");
  add_common(calibrate);

  auto* decode = app.add_subcommand("decode", "decode prediction sets from an artifact");
  std::string dec_artifact, dec_input, dec_output = "predictions.jsonl";
  decode->add_option("--artifact", dec_artifact, "calibration artifact")->required();
  decode->add_option("--input", dec_input, "input dataset (JSONL with questions)")->required();
  decode->add_option("--output", dec_output, "predictions path");
  add_common(decode);

  auto* experiment = app.add_subcommand("experiment", "run a Monte-Carlo coverage experiment");
  add_common(experiment);

  auto* trace_record = app.add_subcommand("trace-record", "record a model trace over a dataset");
  std::string tr_input, tr_output = "trace.jsonl";
  int tr_max_len = 8;
  trace_record->add_option("--input", tr_input, "input dataset (JSONL with questions)")->required();
  trace_record->add_option("--output", tr_output, "trace path");
  trace_record->add_option("--trace-len", tr_max_len, "steps to record per condition");
  add_common(trace_record);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!workdir.empty()) fs::current_path(workdir);

    RunConfig config;
    bool config_has_seed = false;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config " + config_path);
      const json j = json::parse(in);
      config = RunConfig::from_json(j);
      config_has_seed = j.contains("seed");
    }

    CLI::App* active = app.get_subcommands().front();
    const auto passed = [&](const std::string& name) {
      const CLI::Option* opt = active->get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };

    if (passed("--procedure")) config.procedure = procedure;
    if (passed("--alpha")) config.alpha = alpha;
    if (passed("--delta")) config.delta = delta;
    if (passed("--width")) config.width = width;
    if (passed("--max-len")) config.max_len = max_len;
    if (passed("--repetitions")) config.repetitions = repetitions;
    if (passed("--calibration-size")) config.calibration_size = calibration_size;
    if (passed("--test-size")) config.test_size = test_size;
    if (passed("--calibration-fraction")) config.calibration_fraction = calibration_fraction;
    if (passed("--test-fraction")) config.test_fraction = test_fraction;
    if (passed("--output-dir")) config.output_dir = output_dir;
    if (passed("--beam-cap")) config.beam_cap = beam_cap;
    if (passed("--workers")) config.workers = workers;
    if (passed("--score-convention")) config.score_convention = score_convention;
    if (passed("--jitter-epsilon")) config.jitter_epsilon = jitter;
    if (passed("--ranking")) config.ranking = ranking;
    if (passed("--bucket-edges")) config.bucket_edges = bucket_edges;
    if (passed("--scatter-limit")) config.scatter_limit = scatter_limit;
    if (passed("--min-bucket-count")) config.min_bucket_count = min_bucket;
    if (passed("--model")) config.model = ModelSpec::from_json(json::parse(model_json));
    if (passed("--task")) config.task = TaskSpec::from_json(json::parse(task_json));

    if (passed("--seed")) {
      config.seed = seed;
    } else if (!config_has_seed) {
      if (const char* env = std::getenv("CONBEAM_SEED")) config.seed = std::stoull(env);
    }

    config.validate();

    if (active == generate) {
      std::vector<std::pair<int, int>> pairs;
      if (generate->count("--pairs") > 0) pairs = parse_pairs(gen_pairs);
      return cmd_generate(gen_output, config.seed, pairs, gen_samples, gen_repeats);
    }
    if (active == calibrate) return cmd_calibrate(config, cal_output);
    if (active == decode) return cmd_decode(config, dec_artifact, dec_input, dec_output);
    if (active == experiment) return cmd_experiment(config);
    if (active == trace_record) return cmd_trace_record(config, tr_input, tr_output, tr_max_len);
    throw std::runtime_error("no subcommand selected");
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

// medcca: command-line front end for the CCA code-embedding pipeline.

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "medcca/cca.h"
#include "medcca/embed_store.h"
#include "medcca/error.h"
#include "medcca/eval.h"
#include "medcca/parallel.h"
#include "medcca/pipeline.h"
#include "medcca/synthgen.h"
#include "medcca/text_io.h"

namespace {

using namespace medcca;

std::map<std::string, std::string> ReadFlatConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> values;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = text::StripCr(line);
    while (!view.empty() && (view.front() == ' ' || view.front() == '\t')) view.remove_prefix(1);
    if (view.empty() || view[0] == '#' || view[0] == ';') continue;
    auto eq = view.find('=');
    if (eq == std::string_view::npos) throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
      return std::string(s);
    };
    std::string key = trim(view.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    values[key] = trim(view.substr(eq + 1));
  }
  return values;
}

// Config values fill options the command line left unset.
void ApplyConfig(CLI::App* sub, const std::map<std::string, std::string>& config) {
  for (CLI::Option* opt : sub->get_options()) {
    if (opt->count() > 0) continue;
    auto it = config.find(opt->get_single_name());
    if (it == config.end()) continue;
    opt->add_result(it->second);
    opt->run_callback();
  }
}

void Require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError("missing required option " + flag);
}

std::vector<double> ParseGrid(const std::string& csv) {
  std::vector<double> grid;
  for (auto part : text::Split(csv, ',')) {
    auto v = text::ParseDouble(part);
    if (!v || !(*v > 0)) throw ConfigError("bad C grid value '" + std::string(part) + "'");
    grid.push_back(*v);
  }
  return grid;
}

struct ParseFlags {
  std::string delimiter = ",";
  bool header = false;
  bool skip_bad_rows = false;

  void Add(CLI::App* sub) {
    sub->add_option("--delimiter", delimiter, "Event file delimiter");
    sub->add_flag("--header", header, "Event file has a header row");
    sub->add_flag("--skip-bad-rows", skip_bad_rows, "Skip and count malformed rows instead of failing");
  }
  ParseOptions Get() const {
    if (delimiter.size() != 1) throw ConfigError("delimiter must be a single character");
    return {delimiter[0], header, skip_bad_rows ? BadRowPolicy::kSkip : BadRowPolicy::kFailFast};
  }
};

std::optional<fs::path> OptionalPath(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CCA embeddings for timestamped code sequences"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  unsigned threads = DefaultThreadCount();
  bool verbose = false;
  app.add_option("--config", config_path, "Flat key=value file with option defaults");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", verbose, "Progress logging on stderr");

  ParseFlags parse_flags;
  int32_t followup_days = kDefaultFollowupDays;
  auto add_followup = [&](CLI::App* sub) {
    sub->add_option("--followup-days", followup_days, "Feature window length after the index date");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic planted-topic corpus");
  SynthConfig synth_config;
  std::string synth_out;
  synth->add_option("--out-dir", synth_out, "Output directory");
  synth->add_option("--persons", synth_config.n_persons);
  synth->add_option("--codes", synth_config.n_codes);
  synth->add_option("--topics", synth_config.n_topics);
  synth->add_option("--mean-events", synth_config.mean_events);
  synth->add_option("--burst-size", synth_config.mean_burst_size);
  synth->add_option("--burst-span", synth_config.burst_span_days);
  synth->add_option("--noise", synth_config.noise);
  synth->add_option("--base-rate", synth_config.base_rate);
  synth->add_option("--label-coef", synth_config.label_coefficient);
  synth->add_option("--target-topic", synth_config.target_topic);
  synth->add_option("--target-weight", synth_config.target_topic_weight);
  synth->add_option("--seed", synth_config.seed);

  // vocab
  auto* vocab_cmd = app.add_subcommand("vocab", "Build the code vocabulary");
  std::string events, windows, out, vocab_path, stats_path, model_path, features_path, report_path;
  uint64_t min_count = 1;
  vocab_cmd->add_option("--events", events);
  vocab_cmd->add_option("--windows", windows, "Drop events after each windowed person's cutoff");
  vocab_cmd->add_option("--min-count", min_count, "Fold codes rarer than this into <UNK>");
  vocab_cmd->add_option("--out", out);
  parse_flags.Add(vocab_cmd);
  add_followup(vocab_cmd);

  // cooccur
  auto* cooccur_cmd = app.add_subcommand("cooccur", "Accumulate time-weighted co-occurrence statistics");
  std::optional<int> max_lag_weeks;
  cooccur_cmd->add_option("--events", events);
  cooccur_cmd->add_option("--windows", windows);
  cooccur_cmd->add_option("--vocab", vocab_path);
  cooccur_cmd->add_option("--max-lag-weeks", max_lag_weeks);
  cooccur_cmd->add_option("--out", out);
  parse_flags.Add(cooccur_cmd);
  add_followup(cooccur_cmd);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit CCA embeddings");
  FitOptions fit;
  std::string mode_name = "singular-vectors";
  fit_cmd->add_option("--stats", stats_path);
  fit_cmd->add_option("--vocab", vocab_path);
  fit_cmd->add_option("--dims", fit.dims);
  fit_cmd->add_option("--lambda-frac", fit.lambda_frac);
  fit_cmd->add_option("--mode", mode_name, "singular-vectors | whitened | sv-weighted");
  fit_cmd->add_option("--seed", fit.seed);
  fit_cmd->add_option("--oversample", fit.oversample);
  fit_cmd->add_option("--power-iters", fit.power_iters);
  fit_cmd->add_option("--out", out);

  // neighbors
  auto* nn_cmd = app.add_subcommand("neighbors", "Nearest codes by Euclidean distance");
  std::string query;
  size_t k = 3;
  nn_cmd->add_option("--model", model_path);
  nn_cmd->add_option("--code", query);
  nn_cmd->add_option("-k", k);

  // featurize
  auto* feat_cmd = app.add_subcommand("featurize", "Build per-person feature rows");
  std::string kind = "cca";
  uint64_t ngram_min_count = 10;
  feat_cmd->add_option("--events", events);
  feat_cmd->add_option("--windows", windows);
  feat_cmd->add_option("--model", model_path);
  feat_cmd->add_option("--kind", kind, "cca | unigram | bigram | unigram+bigram | all");
  feat_cmd->add_option("--min-count", ngram_min_count, "Minimum corpus count for n-gram columns");
  feat_cmd->add_option("--out", out);
  parse_flags.Add(feat_cmd);
  add_followup(feat_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Cross-validated penalized logistic regression AUC");
  CvOptions cv;
  std::string grid_csv;
  eval_cmd->add_option("--features", features_path);
  eval_cmd->add_option("--folds", cv.folds);
  eval_cmd->add_option("--inner-folds", cv.inner_folds);
  eval_cmd->add_option("--grid", grid_csv, "Comma-separated C values");
  eval_cmd->add_option("--seed", cv.seed);
  eval_cmd->add_option("--report", report_path, "Per-fold JSON-lines report (default <features>.cv.jsonl)");

  // pipeline
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run every stage end to end");
  PipelineConfig pipe;
  std::string pipe_out;
  pipe_cmd->add_option("--events", events);
  pipe_cmd->add_option("--windows", windows);
  pipe_cmd->add_option("--out-dir", pipe_out);
  pipe_cmd->add_option("--dims", pipe.dims);
  pipe_cmd->add_option("--lambda-frac", pipe.lambda_frac);
  pipe_cmd->add_option("--min-count", pipe.min_count);
  pipe_cmd->add_option("--ngram-min-count", pipe.ngram_min_count);
  pipe_cmd->add_option("--max-lag-weeks", max_lag_weeks);
  pipe_cmd->add_option("--mode", mode_name);
  pipe_cmd->add_option("--seed", pipe.seed);
  pipe_cmd->add_option("--folds", pipe.folds);
  pipe_cmd->add_option("--inner-folds", pipe.inner_folds);
  pipe_cmd->add_option("--grid", grid_csv);
  parse_flags.Add(pipe_cmd);
  add_followup(pipe_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : ExitCodeFor(ErrorKind::kUsage);
  }

  spdlog::set_default_logger(spdlog::stderr_logger_st("medcca"));
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  const auto started = std::chrono::steady_clock::now();

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) {
      auto config = ReadFlatConfig(config_path);
      ApplyConfig(sub, config);
    }
    const std::string name = sub->get_name();

    if (name == "synth") {
      Require(synth_out, "--out-dir");
      SynthCorpus corpus = GenerateSynth(synth_config);
      WriteSynthCorpus(corpus, synth_out);
      spdlog::info("wrote {} events for {} persons to {}", corpus.events.size(), corpus.windows.size(), synth_out);
    } else if (name == "vocab") {
      Require(events, "--events");
      Require(out, "--out");
      Vocabulary v = RunVocabStage(events, OptionalPath(windows), min_count, parse_flags.Get(), followup_days, out);
      spdlog::info("vocabulary: {} codes", v.size());
    } else if (name == "cooccur") {
      Require(events, "--events");
      Require(vocab_path, "--vocab");
      Require(out, "--out");
      CooccurOptions co;
      co.max_lag_weeks = max_lag_weeks;
      co.threads = threads;
      auto stats = RunCooccurStage(events, OptionalPath(windows), vocab_path, co, parse_flags.Get(), followup_days, out);
      spdlog::info("co-occurrence: {} persons, {} nonzeros", stats.person_count(), stats.triplets().size());
    } else if (name == "fit") {
      Require(stats_path, "--stats");
      Require(vocab_path, "--vocab");
      Require(out, "--out");
      fit.mode = ParseScalingMode(mode_name);
      fit.threads = threads;
      auto model = RunFitStage(stats_path, vocab_path, fit, out);
      spdlog::info("fitted {} x {} embeddings, sigma_1 = {}", model.size(), model.dims(), model.sigma(0));
    } else if (name == "neighbors") {
      Require(model_path, "--model");
      Require(query, "--code");
      EmbeddingModel model = LoadModel(model_path);
      NeighborResult result = NearestNeighbors(model, query, k);
      for (size_t i = 0; i < result.neighbors.size(); ++i) {
        std::cout << (i + 1) << '\t' << result.neighbors[i].code << '\t'
                  << text::FormatDouble(result.neighbors[i].distance) << '\n';
      }
    } else if (name == "featurize") {
      Require(events, "--events");
      Require(windows, "--windows");
      Require(out, "--out");
      auto fm = RunFeaturizeStage(events, windows, OptionalPath(model_path), kind, ngram_min_count,
                                  parse_flags.Get(), followup_days, out);
      spdlog::info("features '{}': {} rows x {} columns", fm.name, fm.rows(), fm.cols());
    } else if (name == "eval") {
      Require(features_path, "--features");
      if (!grid_csv.empty()) cv.grid = ParseGrid(grid_csv);
      cv.threads = threads;
      if (report_path.empty()) report_path = features_path + ".cv.jsonl";
      CvReport report = RunEvalStage(features_path, cv, report_path);
      std::cout << report.feature_set << '\t' << text::FormatDouble(report.mean_auc) << '\t'
                << text::FormatDouble(report.std_auc) << '\n';
    } else if (name == "pipeline") {
      Require(events, "--events");
      Require(windows, "--windows");
      Require(pipe_out, "--out-dir");
      pipe.events = events;
      pipe.windows = windows;
      pipe.out_dir = pipe_out;
      pipe.parse = parse_flags.Get();
      pipe.max_lag_weeks = max_lag_weeks;
      pipe.mode = ParseScalingMode(mode_name);
      pipe.followup_days = followup_days;
      pipe.threads = threads;
      if (!grid_csv.empty()) pipe.grid = ParseGrid(grid_csv);
      PipelineSummary summary = RunPipeline(pipe);
      std::cout << summary.table;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCodeFor(e.kind());
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCodeFor(ErrorKind::kUsage);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCodeFor(ErrorKind::kData);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  spdlog::info("done in {:.1f}s", secs);
  return 0;
}

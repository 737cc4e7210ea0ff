#include "medcca/pipeline.h"

#include <cstdio>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <sstream>

#include "medcca/cooccur.h"
#include "medcca/embed_store.h"
#include "medcca/error.h"

namespace medcca {

namespace {

template <typename Fn>
auto InStage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage '" + stage + "': " + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(ErrorKind::kData, "stage '" + stage + "': " + e.what());
  }
}

fs::path PartialPath(const fs::path& out) { return out.string() + ".partial"; }

// Runs writer(partial_path) and then moves the file into place.
void WriteAtomically(const fs::path& out, const std::function<void(const fs::path&)>& writer) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path partial = PartialPath(out);
  writer(partial);
  fs::rename(partial, out);
}

std::vector<EventRecord> LoadEvents(const fs::path& events, const std::optional<fs::path>& windows,
                                    const ParseOptions& parse, int32_t followup_days) {
  ParseResult parsed = ReadEventFile(events, parse);
  if (!windows) return std::move(parsed.events);
  auto w = ReadWindowFile(*windows, followup_days);
  return TruncateToWindows(parsed.events, w);
}

std::string FormatFixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

const std::vector<std::string>& PipelineFeatureSets() {
  static const std::vector<std::string> sets = {"unigram", "unigram+bigram", "cca", "all"};
  return sets;
}

void PipelineConfig::Validate() const {
  if (dims < 1) throw ConfigError("dims must be >= 1");
  if (!(lambda_frac >= 0.0)) throw ConfigError("lambda_frac must be >= 0");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (inner_folds < 2) throw ConfigError("inner folds must be >= 2");
  if (grid.empty()) throw ConfigError("C grid must not be empty");
  if (max_lag_weeks && *max_lag_weeks < 0) throw ConfigError("max_lag_weeks must be >= 0");
  if (events.empty() || windows.empty() || out_dir.empty()) throw ConfigError("events, windows and out_dir are required");
}

Vocabulary RunVocabStage(const fs::path& events, const std::optional<fs::path>& windows, uint64_t min_count,
                         const ParseOptions& parse, int32_t followup_days, const fs::path& out) {
  return InStage("vocab", [&] {
    Vocabulary vocab = Vocabulary::Build(LoadEvents(events, windows, parse, followup_days), min_count);
    WriteAtomically(out, [&](const fs::path& p) { vocab.Save(p); });
    return vocab;
  });
}

CooccurrenceStats RunCooccurStage(const fs::path& events, const std::optional<fs::path>& windows,
                                  const fs::path& vocab_path, const CooccurOptions& options,
                                  const ParseOptions& parse, int32_t followup_days, const fs::path& out) {
  return InStage("cooccur", [&] {
    Vocabulary vocab = Vocabulary::Load(vocab_path);
    auto records = LoadEvents(events, windows, parse, followup_days);
    CooccurrenceStats stats = BuildCooccurrence(records, vocab, options);
    WriteAtomically(out, [&](const fs::path& p) { stats.Save(p); });
    return stats;
  });
}

EmbeddingModel RunFitStage(const fs::path& stats_path, const fs::path& vocab_path, const FitOptions& options,
                           const fs::path& out) {
  return InStage("fit", [&] {
    Vocabulary vocab = Vocabulary::Load(vocab_path);
    CooccurrenceStats stats = CooccurrenceStats::Load(stats_path);
    EmbeddingModel model = FitEmbeddings(stats, vocab, options);
    WriteAtomically(out, [&](const fs::path& p) {
      SaveModel(model, p);
      fs::rename(ContextPath(p), ContextPath(out));
    });
    return model;
  });
}

FeatureMatrix RunFeaturizeStage(const fs::path& events, const fs::path& windows_path,
                                const std::optional<fs::path>& model_path, const std::string& kind,
                                uint64_t ngram_min_count, const ParseOptions& parse, int32_t followup_days,
                                const fs::path& out) {
  return InStage("featurize", [&] {
    const bool needs_model = kind == "cca" || kind == "all";
    if (kind != "cca" && kind != "unigram" && kind != "bigram" && kind != "unigram+bigram" && kind != "all") {
      throw ConfigError("unknown feature kind '" + kind + "'");
    }
    if (needs_model && !model_path) throw ConfigError("feature kind '" + kind + "' needs --model");
    auto windows = ReadWindowFile(windows_path, followup_days);
    ParseResult parsed = ReadEventFile(events, parse);

    std::optional<FeatureMatrix> cca, uni, bi;
    if (needs_model) {
      EmbeddingModel model = LoadModel(*model_path);
      cca = BuildCcaFeatures(parsed.events, windows, model);
    }
    if (kind != "cca" && kind != "bigram") uni = BuildNgramFeatures(parsed.events, windows, 1, ngram_min_count);
    if (kind == "bigram" || kind == "unigram+bigram" || kind == "all") {
      bi = BuildNgramFeatures(parsed.events, windows, 2, ngram_min_count);
    }
    FeatureMatrix fm;
    if (kind == "cca") fm = std::move(*cca);
    if (kind == "unigram") fm = std::move(*uni);
    if (kind == "bigram") fm = std::move(*bi);
    if (kind == "unigram+bigram") fm = HConcat(*uni, *bi, kind);
    if (kind == "all") fm = HConcat(*cca, HConcat(*uni, *bi, "unigram+bigram"), kind);
    WriteAtomically(out, [&](const fs::path& p) { SaveFeatures(fm, p); });
    return fm;
  });
}

CvReport RunEvalStage(const fs::path& features, const CvOptions& options, const fs::path& report_path) {
  return InStage("eval", [&] {
    FeatureMatrix fm = LoadFeatures(features);
    CvReport report = CrossValidate(fm, options);
    WriteAtomically(report_path, [&](const fs::path& p) {
      std::ofstream out(p);
      if (!out) throw DataError("cannot write report: " + p.string());
      out << CvReportJsonLines(report);
    });
    return report;
  });
}

PipelineSummary Summarize(const std::vector<CvReport>& reports) {
  PipelineSummary summary;
  std::ostringstream table, jsonl;
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %9s %9s %9s\n", "feature_set", "columns", "mean_auc", "std_auc");
  table << line;
  for (const auto& r : reports) {
    summary.rows.push_back({r.feature_set, r.columns, r.mean_auc, r.std_auc});
    std::snprintf(line, sizeof(line), "%-16s %9zu %9s %9s\n", r.feature_set.c_str(), r.columns,
                  FormatFixed(r.mean_auc, 4).c_str(), FormatFixed(r.std_auc, 4).c_str());
    table << line;
    nlohmann::json j = {{"feature_set", r.feature_set},
                        {"columns", r.columns},
                        {"mean_auc", r.mean_auc},
                        {"std_auc", r.std_auc},
                        {"folds", r.folds.size()}};
    jsonl << j.dump() << '\n';
  }
  summary.table = table.str();
  summary.jsonl = jsonl.str();
  return summary;
}

PipelineSummary RunPipeline(const PipelineConfig& config) {
  config.Validate();
  const fs::path& dir = config.out_dir;
  fs::create_directories(dir);
  const fs::path vocab = dir / "vocab.tsv";
  const fs::path stats = dir / "stats.tsv";
  const fs::path model = dir / "model.tsv";

  RunVocabStage(config.events, config.windows, config.min_count, config.parse, config.followup_days, vocab);

  CooccurOptions co;
  co.max_lag_weeks = config.max_lag_weeks;
  co.threads = config.threads;
  RunCooccurStage(config.events, config.windows, vocab, co, config.parse, config.followup_days, stats);

  FitOptions fit;
  fit.dims = config.dims;
  fit.lambda_frac = config.lambda_frac;
  fit.mode = config.mode;
  fit.seed = config.seed;
  fit.threads = config.threads;
  RunFitStage(stats, vocab, fit, model);

  CvOptions cv;
  cv.folds = config.folds;
  cv.inner_folds = config.inner_folds;
  cv.grid = config.grid;
  cv.seed = config.seed;
  cv.threads = config.threads;
  std::vector<CvReport> reports;
  for (const auto& set : PipelineFeatureSets()) {
    const fs::path features = dir / ("features_" + set + ".tsv");
    RunFeaturizeStage(config.events, config.windows, model, set, config.ngram_min_count, config.parse,
                      config.followup_days, features);
    reports.push_back(RunEvalStage(features, cv, dir / ("cv_" + set + ".jsonl")));
  }

  PipelineSummary summary = Summarize(reports);
  WriteAtomically(dir / "summary.txt", [&](const fs::path& p) { std::ofstream(p) << summary.table; });
  WriteAtomically(dir / "summary.jsonl", [&](const fs::path& p) { std::ofstream(p) << summary.jsonl; });
  return summary;
}

}  // namespace medcca

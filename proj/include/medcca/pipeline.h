#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medcca/cca.h"
#include "medcca/eval.h"
#include "medcca/featurize.h"
#include "medcca/ingest.h"

namespace medcca {

namespace fs = std::filesystem;

// Feature sets in summary order: unigram, unigram+bigram, cca, all.
const std::vector<std::string>& PipelineFeatureSets();

struct PipelineConfig {
  fs::path events;
  fs::path windows;
  fs::path out_dir;
  ParseOptions parse;
  size_t dims = 25;
  double lambda_frac = 0.01;
  uint64_t min_count = 1;
  std::optional<int> max_lag_weeks;
  ScalingMode mode = ScalingMode::kSingularVectors;
  uint64_t seed = 0;
  size_t folds = 10;
  size_t inner_folds = 3;
  std::vector<double> grid = DefaultCGrid();
  uint64_t ngram_min_count = 10;
  int32_t followup_days = kDefaultFollowupDays;
  unsigned threads = 1;

  void Validate() const;
};

struct SummaryRow {
  std::string feature_set;
  size_t columns = 0;
  double mean_auc = 0.0;
  double std_auc = 0.0;
};

struct PipelineSummary {
  std::vector<SummaryRow> rows;
  std::string table;  // human-readable
  std::string jsonl;
};

// Individual stages. Each writes `out` through a ".partial" file that is
// renamed on success; errors are rethrown prefixed with the stage name.
// Windows, when given, drop events after each windowed person's cutoff.
Vocabulary RunVocabStage(const fs::path& events, const std::optional<fs::path>& windows, uint64_t min_count,
                         const ParseOptions& parse, int32_t followup_days, const fs::path& out);
CooccurrenceStats RunCooccurStage(const fs::path& events, const std::optional<fs::path>& windows,
                                  const fs::path& vocab, const CooccurOptions& options, const ParseOptions& parse,
                                  int32_t followup_days, const fs::path& out);
EmbeddingModel RunFitStage(const fs::path& stats, const fs::path& vocab, const FitOptions& options,
                           const fs::path& out);
// kind: cca | unigram | bigram | unigram+bigram | all. The model is required
// for cca and all.
FeatureMatrix RunFeaturizeStage(const fs::path& events, const fs::path& windows,
                                const std::optional<fs::path>& model, const std::string& kind,
                                uint64_t ngram_min_count, const ParseOptions& parse, int32_t followup_days,
                                const fs::path& out);
CvReport RunEvalStage(const fs::path& features, const CvOptions& options, const fs::path& report);

PipelineSummary Summarize(const std::vector<CvReport>& reports);
PipelineSummary RunPipeline(const PipelineConfig& config);

}  // namespace medcca

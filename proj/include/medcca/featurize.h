#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "medcca/cca.h"
#include "medcca/date.h"
#include "medcca/ingest.h"

namespace medcca {

constexpr int32_t kDefaultFollowupDays = 48 * 7;

// A person's prediction window: codes strictly before index_date form the
// "pre" segment, codes in [index_date, cutoff] the "post" segment.
struct PersonWindow {
  std::string person_id;
  Date index_date;
  Date cutoff;
  int label = 0;
};

// "person_id,index_date,label" rows (optional header); cutoff = index + followup_days.
std::vector<PersonWindow> ReadWindows(std::istream& in, int32_t followup_days = kDefaultFollowupDays,
                                      std::string_view source = "<windows>");
std::vector<PersonWindow> ReadWindowFile(const std::filesystem::path& path,
                                         int32_t followup_days = kDefaultFollowupDays);
void WriteWindows(std::ostream& out, std::span<const PersonWindow> windows);

// Drops events after the cutoff of windowed persons; other persons keep every event.
std::vector<EventRecord> TruncateToWindows(std::span<const EventRecord> events,
                                           std::span<const PersonWindow> windows);

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int64_t>;

// Per-person feature rows. Columns are the dense block followed by the sparse
// block; `columns` names them in that order.
struct FeatureMatrix {
  std::string name;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::string> columns;
  Eigen::MatrixXd dense;
  SparseRowMatrix sparse;

  size_t rows() const { return ids.size(); }
  size_t cols() const { return columns.size(); }
  size_t dense_cols() const { return static_cast<size_t>(dense.cols()); }
  double value(size_t row, size_t col) const;
  // Throws DataError if shapes, labels or column names are inconsistent.
  void Validate() const;
};

// Column-wise concatenation of matrices over the same persons.
FeatureMatrix HConcat(const FeatureMatrix& a, const FeatureMatrix& b, std::string name);

void SaveFeatures(const FeatureMatrix& fm, std::ostream& out);
void SaveFeatures(const FeatureMatrix& fm, const std::filesystem::path& path);
FeatureMatrix LoadFeatures(std::istream& in, std::string_view source = "<features>");
FeatureMatrix LoadFeatures(const std::filesystem::path& path);

struct CcaFeatureStats {
  size_t skipped_codes = 0;   // events whose code the model does not know
  size_t empty_rows = 0;      // persons with neither pre nor post codes
};

// Maps model codes to rows once, then averages embeddings per segment.
class CcaFeaturizer {
 public:
  explicit CcaFeaturizer(const EmbeddingModel& model);

  size_t width() const { return 2 * model_.dims(); }
  // First dims entries: mean embedding before index_date; last dims: mean over
  // [index_date, cutoff]. Empty segments are zero.
  Eigen::VectorXd Row(std::span<const EventRecord* const> events, const PersonWindow& window,
                      CcaFeatureStats* stats = nullptr) const;
  Eigen::VectorXd Row(std::span<const EventRecord> events, const PersonWindow& window,
                      CcaFeatureStats* stats = nullptr) const;

 private:
  const EmbeddingModel& model_;
  std::unordered_map<std::string, uint32_t> index_;
};

FeatureMatrix BuildCcaFeatures(std::span<const EventRecord> events, std::span<const PersonWindow> windows,
                               const EmbeddingModel& model, CcaFeatureStats* stats = nullptr);

// n = 1: counts of each code in the person's window (everything up to the
// cutoff). n = 2: counts of consecutive code pairs after a stable sort by date.
// Columns whose corpus-wide windowed count is below min_count are dropped.
FeatureMatrix BuildNgramFeatures(std::span<const EventRecord> events, std::span<const PersonWindow> windows, int n,
                                 uint64_t min_count);

// Column centering and population-sigma scaling fitted on training rows.
// Zero-variance columns get scale 0 and come out all-zero.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_scale;

  static Standardizer Fit(const Eigen::MatrixXd& rows);
  static Standardizer Fit(const FeatureMatrix& fm, std::span<const size_t> rows);
  Eigen::MatrixXd Apply(const Eigen::MatrixXd& rows) const;
};

}  // namespace medcca

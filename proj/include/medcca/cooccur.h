#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "medcca/date.h"
#include "medcca/ingest.h"

namespace medcca {

struct Triplet {
  uint32_t row = 0;
  uint32_t col = 0;
  double weight = 0.0;

  bool operator==(const Triplet&) const = default;
};

// 1 / (1 + whole weeks between the two dates).
double PairWeight(Date a, Date b);

struct CooccurOptions {
  std::optional<int> max_lag_weeks;  // unset: every pair counts
  unsigned threads = 1;
  size_t persons_per_chunk = 512;    // fixed chunking keeps results thread-count independent
};

// One person's normalized pair weights, sorted by (row, col). Empty when the
// person has fewer than two in-vocabulary events.
struct PersonContribution {
  std::string person_id;
  std::vector<Triplet> weights;
  double raw_total = 0.0;

  bool empty() const { return weights.empty(); }
};

// Every unordered pair of distinct event instances adds its time-decay weight
// to both (x, y) and (y, x); the result is divided by the person's raw total so
// it sums to 1. Events whose code the vocabulary cannot encode are dropped.
PersonContribution AccumulatePerson(std::span<const EventRecord* const> events, const Vocabulary& vocab,
                                    const CooccurOptions& options = {});
PersonContribution AccumulatePerson(std::span<const EventRecord> events, const Vocabulary& vocab,
                                    const CooccurOptions& options = {});

// Sparse symmetric co-occurrence matrix with its row/column sums. Triplets are
// unique, sorted by (row, col), strictly positive.
class CooccurrenceStats {
 public:
  static CooccurrenceStats FromTriplets(size_t vocab_size, std::vector<Triplet> triplets, size_t person_count);

  size_t vocab_size() const { return row_sums_.size(); }
  size_t person_count() const { return person_count_; }
  double total_mass() const { return total_mass_; }
  std::span<const Triplet> triplets() const { return triplets_; }
  const std::vector<double>& row_sums() const { return row_sums_; }
  const std::vector<double>& col_sums() const { return col_sums_; }
  double weight(uint32_t row, uint32_t col) const;

  void Save(std::ostream& out) const;
  void Save(const std::filesystem::path& path) const;
  static CooccurrenceStats Load(std::istream& in, std::string_view source = "<stats>");
  static CooccurrenceStats Load(const std::filesystem::path& path);

 private:
  std::vector<Triplet> triplets_;
  std::vector<double> row_sums_;
  std::vector<double> col_sums_;
  size_t person_count_ = 0;
  double total_mass_ = 0.0;
};

// Commutative-monoid accumulator over person contributions. Partial
// accumulators built on separate workers combine with Merge.
class CooccurrenceAccumulator {
 public:
  void Add(const PersonContribution& contribution);
  void Merge(const CooccurrenceAccumulator& other);
  size_t person_count() const { return person_count_; }
  // Throws DataError when no person contributed.
  CooccurrenceStats Finish(size_t vocab_size) const;

 private:
  std::unordered_map<uint64_t, double> weights_;
  size_t person_count_ = 0;
};

CooccurrenceStats MergeContributions(std::span<const PersonContribution> contributions, size_t vocab_size);

// Full pass over a corpus: groups by person, accumulates in fixed chunks of
// persons (in parallel when threads > 1) and merges chunks in order.
CooccurrenceStats BuildCooccurrence(std::span<const EventRecord> events, const Vocabulary& vocab,
                                    const CooccurOptions& options = {});

}  // namespace medcca

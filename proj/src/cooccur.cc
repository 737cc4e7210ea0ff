#include "medcca/cooccur.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "medcca/error.h"
#include "medcca/parallel.h"
#include "medcca/text_io.h"

namespace medcca {

namespace {

constexpr uint64_t PackKey(uint32_t row, uint32_t col) { return (static_cast<uint64_t>(row) << 32) | col; }

std::vector<Triplet> SortedTriplets(const std::unordered_map<uint64_t, double>& weights, double divisor) {
  std::vector<Triplet> out;
  out.reserve(weights.size());
  for (const auto& [key, w] : weights) {
    out.push_back({static_cast<uint32_t>(key >> 32), static_cast<uint32_t>(key & 0xffffffffu), w / divisor});
  }
  std::sort(out.begin(), out.end(),
            [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  return out;
}

}  // namespace

double PairWeight(Date a, Date b) { return 1.0 / (1.0 + static_cast<double>(DaysBetween(a, b) / 7)); }

PersonContribution AccumulatePerson(std::span<const EventRecord* const> events, const Vocabulary& vocab,
                                    const CooccurOptions& options) {
  PersonContribution contribution;
  if (!events.empty()) contribution.person_id = events.front()->person_id;

  struct Encoded {
    uint32_t index;
    Date date;
  };
  std::vector<Encoded> encoded;
  encoded.reserve(events.size());
  for (const EventRecord* e : events) {
    if (auto idx = vocab.Encode(e->code)) encoded.push_back({*idx, e->date});
  }
  if (encoded.size() < 2) return contribution;
  std::stable_sort(encoded.begin(), encoded.end(), [](const Encoded& a, const Encoded& b) { return a.date < b.date; });

  const int32_t max_lag_days =
      options.max_lag_weeks ? 7 * (*options.max_lag_weeks + 1) - 1 : std::numeric_limits<int32_t>::max();
  std::unordered_map<uint64_t, double> raw;
  double total = 0.0;
  for (size_t i = 0; i < encoded.size(); ++i) {
    for (size_t j = i + 1; j < encoded.size(); ++j) {
      if (DaysBetween(encoded[i].date, encoded[j].date) > max_lag_days) break;
      double w = PairWeight(encoded[i].date, encoded[j].date);
      raw[PackKey(encoded[i].index, encoded[j].index)] += w;
      raw[PackKey(encoded[j].index, encoded[i].index)] += w;
      total += 2.0 * w;
    }
  }
  if (raw.empty()) return contribution;
  contribution.raw_total = total;
  contribution.weights = SortedTriplets(raw, total);
  return contribution;
}

PersonContribution AccumulatePerson(std::span<const EventRecord> events, const Vocabulary& vocab,
                                    const CooccurOptions& options) {
  std::vector<const EventRecord*> ptrs;
  ptrs.reserve(events.size());
  for (const auto& e : events) ptrs.push_back(&e);
  return AccumulatePerson(std::span<const EventRecord* const>(ptrs), vocab, options);
}

CooccurrenceStats CooccurrenceStats::FromTriplets(size_t vocab_size, std::vector<Triplet> triplets,
                                                  size_t person_count) {
  CooccurrenceStats stats;
  stats.row_sums_.assign(vocab_size, 0.0);
  stats.col_sums_.assign(vocab_size, 0.0);
  for (size_t i = 0; i < triplets.size(); ++i) {
    const Triplet& t = triplets[i];
    if (t.row >= vocab_size || t.col >= vocab_size) throw DataError("co-occurrence index out of range");
    if (!(t.weight > 0.0) || !std::isfinite(t.weight)) throw DataError("co-occurrence weights must be positive");
    if (i > 0) {
      const Triplet& p = triplets[i - 1];
      if (p.row > t.row || (p.row == t.row && p.col >= t.col)) {
        throw DataError("co-occurrence triplets must be unique and sorted by (row, col)");
      }
    }
    stats.row_sums_[t.row] += t.weight;
    stats.col_sums_[t.col] += t.weight;
  }
  stats.total_mass_ = std::accumulate(stats.row_sums_.begin(), stats.row_sums_.end(), 0.0);
  stats.triplets_ = std::move(triplets);
  stats.person_count_ = person_count;
  return stats;
}

double CooccurrenceStats::weight(uint32_t row, uint32_t col) const {
  auto it = std::lower_bound(triplets_.begin(), triplets_.end(), Triplet{row, col, 0.0},
                             [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  if (it != triplets_.end() && it->row == row && it->col == col) return it->weight;
  return 0.0;
}

void CooccurrenceStats::Save(std::ostream& out) const {
  out << "# persons=" << person_count_ << '\n';
  out << "# vocab=" << vocab_size() << '\n';
  for (const auto& t : triplets_) out << t.row << '\t' << t.col << '\t' << text::FormatDouble(t.weight) << '\n';
}

void CooccurrenceStats::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write stats file: " + path.string());
  Save(out);
  if (!out) throw DataError("write failed: " + path.string());
}

CooccurrenceStats CooccurrenceStats::Load(std::istream& in, std::string_view source) {
  std::optional<size_t> persons, vocab;
  std::vector<Triplet> triplets;
  std::string line;
  size_t line_no = 0;
  const std::string src(source);
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = text::StripCr(line);
    if (view.empty()) continue;
    if (view[0] == '#') {
      auto header = text::ParseHeader(view);
      if (!header) throw FormatError(src, line_no, "malformed header line");
      if (header->first == "persons") persons = text::ParseInt<size_t>(header->second);
      if (header->first == "vocab") vocab = text::ParseInt<size_t>(header->second);
      continue;
    }
    if (!persons || !vocab) throw FormatError(src, line_no, "missing '# persons=' or '# vocab=' header");
    auto fields = text::Split(view, '\t');
    if (fields.size() != 3) throw FormatError(src, line_no, "expected row<TAB>col<TAB>weight");
    auto r = text::ParseInt<uint32_t>(fields[0]);
    auto c = text::ParseInt<uint32_t>(fields[1]);
    auto w = text::ParseDouble(fields[2]);
    if (!r || !c || !w) throw FormatError(src, line_no, "bad triplet");
    if (*r >= *vocab || *c >= *vocab) throw FormatError(src, line_no, "index out of range");
    triplets.push_back({*r, *c, *w});
  }
  if (!persons || !vocab) throw FormatError(src, line_no, "missing '# persons=' or '# vocab=' header");
  return FromTriplets(*vocab, std::move(triplets), *persons);
}

CooccurrenceStats CooccurrenceStats::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stats file: " + path.string());
  return Load(in, path.string());
}

void CooccurrenceAccumulator::Add(const PersonContribution& contribution) {
  if (contribution.empty()) return;
  for (const auto& t : contribution.weights) weights_[PackKey(t.row, t.col)] += t.weight;
  ++person_count_;
}

void CooccurrenceAccumulator::Merge(const CooccurrenceAccumulator& other) {
  for (const auto& [key, w] : other.weights_) weights_[key] += w;
  person_count_ += other.person_count_;
}

CooccurrenceStats CooccurrenceAccumulator::Finish(size_t vocab_size) const {
  if (person_count_ == 0) throw DataError("empty co-occurrence statistics: no person has two or more events");
  return CooccurrenceStats::FromTriplets(vocab_size, SortedTriplets(weights_, 1.0), person_count_);
}

CooccurrenceStats MergeContributions(std::span<const PersonContribution> contributions, size_t vocab_size) {
  CooccurrenceAccumulator acc;
  for (const auto& c : contributions) acc.Add(c);
  return acc.Finish(vocab_size);
}

CooccurrenceStats BuildCooccurrence(std::span<const EventRecord> events, const Vocabulary& vocab,
                                    const CooccurOptions& options) {
  PersonGroups groups = GroupByPerson(events);
  const size_t chunk = std::max<size_t>(1, options.persons_per_chunk);
  const size_t n_chunks = (groups.size() + chunk - 1) / chunk;
  std::vector<CooccurrenceAccumulator> partial(n_chunks);
  ParallelFor(n_chunks, options.threads, [&](size_t c) {
    std::vector<const EventRecord*> person;
    for (size_t p = c * chunk; p < std::min(groups.size(), (c + 1) * chunk); ++p) {
      person.clear();
      for (uint32_t idx : groups.event_indices[p]) person.push_back(&events[idx]);
      partial[c].Add(AccumulatePerson(std::span<const EventRecord* const>(person), vocab, options));
    }
  });
  CooccurrenceAccumulator total;
  for (const auto& p : partial) total.Merge(p);
  return total.Finish(vocab.size());
}

}  // namespace medcca

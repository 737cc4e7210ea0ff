#include "medcca/ingest.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "medcca/error.h"
#include "medcca/text_io.h"

namespace medcca {

namespace {

constexpr size_t kMaxReportedIssues = 20;

std::optional<std::string> ValidateRow(std::span<const std::string_view> fields, EventRecord& out) {
  if (fields.size() != 3) {
    return "expected 3 columns (person_id, code, date), got " + std::to_string(fields.size());
  }
  if (fields[0].empty()) return std::string("empty person_id");
  if (fields[1].empty()) return std::string("empty code");
  auto date = ParseIsoDate(fields[2]);
  if (!date) return "invalid date '" + std::string(fields[2]) + "'";
  out.person_id.assign(fields[0]);
  out.code.assign(fields[1]);
  out.date = *date;
  return std::nullopt;
}

}  // namespace

ParseResult ParseEvents(std::istream& in, const ParseOptions& options, std::string_view source) {
  ParseResult result;
  std::string line;
  size_t line_no = 0;
  bool header_pending = options.has_header;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = text::StripCr(line);
    if (view.empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    ++result.rows_read;
    auto fields = text::Split(view, options.delimiter);
    EventRecord record;
    if (auto problem = ValidateRow(fields, record)) {
      if (options.policy == BadRowPolicy::kFailFast) throw FormatError(std::string(source), line_no, *problem);
      ++result.rows_skipped;
      if (result.issues.size() < kMaxReportedIssues) result.issues.push_back({line_no, *problem});
      continue;
    }
    result.events.push_back(std::move(record));
  }
  return result;
}

ParseResult ReadEventFile(const std::filesystem::path& path, const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open events file: " + path.string());
  return ParseEvents(in, options, path.string());
}

void WriteEvents(std::ostream& out, std::span<const EventRecord> events, char delimiter) {
  for (const auto& e : events) {
    out << e.person_id << delimiter << e.code << delimiter << FormatIsoDate(e.date) << '\n';
  }
}

PersonGroups GroupByPerson(std::span<const EventRecord> events) {
  PersonGroups groups;
  for (uint32_t i = 0; i < events.size(); ++i) {
    auto [it, inserted] = groups.position.try_emplace(events[i].person_id, static_cast<uint32_t>(groups.size()));
    if (inserted) {
      groups.person_ids.push_back(events[i].person_id);
      groups.event_indices.emplace_back();
    }
    groups.event_indices[it->second].push_back(i);
  }
  return groups;
}

Vocabulary Vocabulary::Build(std::span<const EventRecord> events, uint64_t min_count) {
  std::unordered_map<std::string, uint64_t> counts;
  for (const auto& e : events) ++counts[e.code];
  if (counts.empty()) throw DataError("empty vocabulary: no events");
  if (counts.count(std::string(kUnkSymbol))) {
    throw DataError("code collides with the reserved UNK symbol " + std::string(kUnkSymbol));
  }

  std::vector<std::pair<std::string, uint64_t>> retained;
  uint64_t folded = 0;
  for (auto& [code, n] : counts) {
    if (min_count > 1 && n < min_count) {
      folded += n;
    } else {
      retained.emplace_back(code, n);
    }
  }
  std::sort(retained.begin(), retained.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (folded > 0) retained.emplace_back(std::string(kUnkSymbol), folded);
  return FromEntries(std::move(retained), min_count);
}

Vocabulary Vocabulary::FromEntries(std::vector<std::pair<std::string, uint64_t>> entries, uint64_t min_count) {
  if (entries.empty()) throw DataError("empty vocabulary");
  Vocabulary vocab;
  vocab.min_count_ = min_count;
  vocab.codes_.reserve(entries.size());
  vocab.counts_.reserve(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    auto& [code, n] = entries[i];
    if (code.empty()) throw DataError("empty code in vocabulary");
    bool is_unk = code == kUnkSymbol;
    if (is_unk && i + 1 != entries.size()) throw DataError("UNK symbol must take the last index");
    if (!is_unk && min_count > 1 && n < min_count) {
      throw DataError("code '" + code + "' has count " + std::to_string(n) + " below min_count");
    }
    if (!is_unk && i > 0 && vocab.codes_.back() != kUnkSymbol) {
      uint64_t prev = vocab.counts_.back();
      if (prev < n || (prev == n && vocab.codes_.back() >= code)) {
        throw DataError("vocabulary entries out of order at '" + code + "'");
      }
    }
    auto [it, inserted] = vocab.index_.emplace(code, static_cast<uint32_t>(i));
    if (!inserted) throw DataError("duplicate code '" + code + "' in vocabulary");
    if (is_unk) vocab.unk_index_ = static_cast<uint32_t>(i);
    vocab.codes_.push_back(std::move(code));
    vocab.counts_.push_back(n);
  }
  return vocab;
}

std::optional<uint32_t> Vocabulary::Find(std::string_view code) const {
  auto it = index_.find(std::string(code));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<uint32_t> Vocabulary::Encode(std::string_view code) const {
  if (auto idx = Find(code)) return idx;
  return unk_index_;
}

uint64_t Vocabulary::Hash() const {
  uint64_t h = text::Fnv1a("medcca-vocab");
  for (const auto& c : codes_) {
    h = text::Fnv1a(c, h);
    h = text::Fnv1a(std::string_view("\n", 1), h);
  }
  return h;
}

void Vocabulary::Save(std::ostream& out) const {
  out << "# min_count=" << min_count_ << '\n';
  for (size_t i = 0; i < codes_.size(); ++i) out << codes_[i] << '\t' << counts_[i] << '\n';
}

void Vocabulary::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary file: " + path.string());
  Save(out);
  if (!out) throw DataError("write failed: " + path.string());
}

Vocabulary Vocabulary::Load(std::istream& in, std::string_view source) {
  std::string line;
  size_t line_no = 0;
  std::optional<uint64_t> min_count;
  std::vector<std::pair<std::string, uint64_t>> entries;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = text::StripCr(line);
    if (view.empty()) continue;
    if (view[0] == '#') {
      auto header = text::ParseHeader(view);
      if (!header) throw FormatError(std::string(source), line_no, "malformed header line");
      if (header->first == "min_count") {
        min_count = text::ParseInt<uint64_t>(header->second);
        if (!min_count) throw FormatError(std::string(source), line_no, "bad min_count value");
      }
      continue;
    }
    auto fields = text::Split(view, '\t');
    if (fields.size() != 2) throw FormatError(std::string(source), line_no, "expected code<TAB>count");
    auto n = text::ParseInt<uint64_t>(fields[1]);
    if (!n) throw FormatError(std::string(source), line_no, "bad count");
    entries.emplace_back(std::string(fields[0]), *n);
  }
  if (!min_count) throw FormatError(std::string(source), line_no, "missing '# min_count=' header");
  return FromEntries(std::move(entries), *min_count);
}

Vocabulary Vocabulary::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file: " + path.string());
  return Load(in, path.string());
}

}  // namespace medcca

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "medcca/date.h"

namespace medcca {

// One (person, code, date) billing event.
struct EventRecord {
  std::string person_id;
  std::string code;
  Date date;

  bool operator==(const EventRecord&) const = default;
};

enum class BadRowPolicy { kFailFast, kSkip };

struct ParseOptions {
  char delimiter = ',';
  bool has_header = false;
  BadRowPolicy policy = BadRowPolicy::kFailFast;
};

struct RowIssue {
  size_t line = 0;
  std::string message;
};

struct ParseResult {
  std::vector<EventRecord> events;
  size_t rows_read = 0;      // non-blank data rows seen
  size_t rows_skipped = 0;
  std::vector<RowIssue> issues;  // first few skipped rows, for reporting
};

// Parses "person_id,code,date" rows. Blank lines are ignored. With kFailFast a
// bad row throws FormatError carrying its line number.
ParseResult ParseEvents(std::istream& in, const ParseOptions& options = {}, std::string_view source = "<events>");
ParseResult ReadEventFile(const std::filesystem::path& path, const ParseOptions& options = {});
void WriteEvents(std::ostream& out, std::span<const EventRecord> events, char delimiter = ',');

// Events grouped by person, persons in order of first appearance. Each
// person's indices keep input order.
struct PersonGroups {
  std::vector<std::string> person_ids;
  std::vector<std::vector<uint32_t>> event_indices;
  std::unordered_map<std::string, uint32_t> position;

  size_t size() const { return person_ids.size(); }
};

PersonGroups GroupByPerson(std::span<const EventRecord> events);

// Code <-> dense index map with occurrence counts. Retained codes are ordered
// by descending count, then lexicographically; the UNK symbol, when present,
// takes the last index. Immutable after construction.
class Vocabulary {
 public:
  static constexpr std::string_view kUnkSymbol = "<UNK>";

  // Codes seen fewer than min_count times fold into UNK when min_count > 1.
  static Vocabulary Build(std::span<const EventRecord> events, uint64_t min_count = 1);
  // Entries in index order; validates the ordering and threshold invariants.
  static Vocabulary FromEntries(std::vector<std::pair<std::string, uint64_t>> entries, uint64_t min_count);

  size_t size() const { return codes_.size(); }
  const std::string& code(uint32_t index) const { return codes_[index]; }
  uint64_t count(uint32_t index) const { return counts_[index]; }
  const std::vector<std::string>& codes() const { return codes_; }
  uint64_t min_count() const { return min_count_; }
  std::optional<uint32_t> unk_index() const { return unk_index_; }

  // Exact lookup of a retained code (or the UNK symbol itself).
  std::optional<uint32_t> Find(std::string_view code) const;
  // Lookup that falls back to UNK for codes without their own index.
  std::optional<uint32_t> Encode(std::string_view code) const;

  // Order-sensitive hash of the code list; identifies the index mapping.
  uint64_t Hash() const;

  void Save(std::ostream& out) const;
  void Save(const std::filesystem::path& path) const;
  static Vocabulary Load(std::istream& in, std::string_view source = "<vocab>");
  static Vocabulary Load(const std::filesystem::path& path);

 private:
  std::vector<std::string> codes_;
  std::vector<uint64_t> counts_;
  std::unordered_map<std::string, uint32_t> index_;
  uint64_t min_count_ = 1;
  std::optional<uint32_t> unk_index_;
};

}  // namespace medcca

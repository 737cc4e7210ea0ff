#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace medcca {

// Calendar date at day resolution, stored as days since 1970-01-01.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(int32_t days_since_epoch) : days_(days_since_epoch) {}

  static std::optional<Date> FromCivil(int year, unsigned month, unsigned day);

  constexpr int32_t days() const { return days_; }
  constexpr Date operator+(int32_t n) const { return Date(days_ + n); }
  constexpr Date operator-(int32_t n) const { return Date(days_ - n); }
  constexpr auto operator<=>(const Date&) const = default;

 private:
  int32_t days_ = 0;
};

constexpr int32_t DaysBetween(Date a, Date b) { return a.days() > b.days() ? a.days() - b.days() : b.days() - a.days(); }

// Strict YYYY-MM-DD; rejects impossible calendar dates such as 2010-02-30.
std::optional<Date> ParseIsoDate(std::string_view text);
std::string FormatIsoDate(Date date);

}  // namespace medcca

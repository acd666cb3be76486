#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "raildelay/errors.hpp"

namespace raildelay {

// Timestamp at minute resolution: minutes since 1970-01-01 00:00 (civil, no
// time zone). Source data records hh:mm, so nothing finer is representable.
struct MinuteTime {
  std::int64_t minutes = 0;

  friend auto operator<=>(const MinuteTime&, const MinuteTime&) = default;

  MinuteTime operator+(std::int64_t m) const { return MinuteTime{minutes + m}; }
  MinuteTime operator-(std::int64_t m) const { return MinuteTime{minutes - m}; }
  std::int64_t operator-(MinuteTime other) const { return minutes - other.minutes; }

  std::int64_t minute_of_hour() const {
    std::int64_t m = minutes % 60;
    return m < 0 ? m + 60 : m;
  }
};

namespace detail {

inline int parse_int_field(std::string_view s, const char* what) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DataError(std::string("invalid ") + what + " '" + std::string(s) + "'");
  return value;
}

}  // namespace detail

// "YYYY-MM-DD" -> days since epoch.
inline std::int64_t parse_date_days(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-')
    throw DataError("invalid date '" + std::string(s) + "' (want YYYY-MM-DD)");
  const int y = detail::parse_int_field(s.substr(0, 4), "year");
  const unsigned m = static_cast<unsigned>(detail::parse_int_field(s.substr(5, 2), "month"));
  const unsigned d = static_cast<unsigned>(detail::parse_int_field(s.substr(8, 2), "day"));
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw DataError("invalid calendar date '" + std::string(s) + "'");
  return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

// "HH:MM" -> minutes within the day.
inline int parse_time_of_day(std::string_view s) {
  if (s.size() != 5 || s[2] != ':')
    throw DataError("invalid time '" + std::string(s) + "' (want HH:MM)");
  const int h = detail::parse_int_field(s.substr(0, 2), "hour");
  const int m = detail::parse_int_field(s.substr(3, 2), "minute");
  if (h < 0 || h > 23 || m < 0 || m > 59)
    throw DataError("time out of range '" + std::string(s) + "'");
  return h * 60 + m;
}

inline MinuteTime make_minute_time(std::string_view date, std::string_view hhmm) {
  return MinuteTime{parse_date_days(date) * 1440 + parse_time_of_day(hhmm)};
}

// "YYYY-MM-DD HH:MM" in one field.
inline MinuteTime parse_datetime(std::string_view s) {
  if (s.size() != 16 || s[10] != ' ')
    throw DataError("invalid datetime '" + std::string(s) + "' (want YYYY-MM-DD HH:MM)");
  return make_minute_time(s.substr(0, 10), s.substr(11, 5));
}

inline std::string format_date(std::int64_t days) {
  const std::chrono::year_month_day ymd{
      std::chrono::sys_days{std::chrono::days{days}}};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::string format_datetime(MinuteTime t) {
  std::int64_t days = t.minutes / 1440;
  std::int64_t mod = t.minutes % 1440;
  if (mod < 0) {
    mod += 1440;
    days -= 1;
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), " %02d:%02d", static_cast<int>(mod / 60),
                static_cast<int>(mod % 60));
  return format_date(days) + buf;
}

inline std::string format_time_of_day(MinuteTime t) {
  return format_datetime(t).substr(11);
}

// Nearest hour; exactly :30 rounds up.
inline MinuteTime round_to_hour(MinuteTime t) {
  const std::int64_t m = t.minute_of_hour();
  const std::int64_t base = t.minutes - m;
  return MinuteTime{m >= 30 ? base + 60 : base};
}

}  // namespace raildelay

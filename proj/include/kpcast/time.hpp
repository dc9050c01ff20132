#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "kpcast/error.hpp"

namespace kpcast {

/// Seconds since 1970-01-01T00:00Z. All timestamps in the pipeline are UTC.
using UtcSeconds = std::int64_t;

inline constexpr UtcSeconds kHour = 3600;
inline constexpr UtcSeconds kThreeHours = 3 * kHour;
inline constexpr UtcSeconds kDay = 24 * kHour;

// Howard Hinnant's civil-date algorithms.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct CivilTime {
  int year;
  unsigned month;
  unsigned day;
  int hour;
  int minute;
  int second;
};

constexpr CivilTime civil_from_seconds(UtcSeconds t) {
  std::int64_t days = t >= 0 ? t / kDay : -((-t + kDay - 1) / kDay);
  std::int64_t secs = t - days * kDay;
  days += 719468;
  const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
  const auto doe = static_cast<unsigned>(days - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return CivilTime{static_cast<int>(y + (m <= 2)), m, d, static_cast<int>(secs / 3600),
                   static_cast<int>(secs % 3600 / 60), static_cast<int>(secs % 60)};
}

constexpr UtcSeconds utc_seconds(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                                 int second = 0) {
  return days_from_civil(year, month, day) * kDay + hour * kHour + minute * 60 + second;
}

inline bool is_leap_year(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

/// YEAR/DOY/Hour as used by OMNI-style tables; DOY is 1-based.
inline UtcSeconds from_year_doy_hour(int year, int doy, double hour) {
  const int max_doy = is_leap_year(year) ? 366 : 365;
  if (doy < 1 || doy > max_doy) fail(ErrorKind::Parse, "day of year out of range: " + std::to_string(doy));
  if (hour < 0.0 || hour >= 24.0) fail(ErrorKind::Parse, "hour out of range: " + std::to_string(hour));
  return days_from_civil(year, 1, 1) * kDay + static_cast<UtcSeconds>(doy - 1) * kDay +
         static_cast<UtcSeconds>(hour * 3600.0 + 0.5);
}

/// Accepts YYYY-MM-DD, YYYY-MM-DDTHH, YYYY-MM-DDTHH:MM, YYYY-MM-DDTHH:MM:SS with an optional
/// trailing Z; a space may replace the T.
inline UtcSeconds parse_iso8601(std::string_view s) {
  auto bad = [&]() -> UtcSeconds { fail(ErrorKind::Parse, "bad ISO-8601 timestamp '" + std::string(s) + "'"); };
  if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.remove_suffix(1);
  auto digits = [&](std::size_t pos, std::size_t n, int& out) {
    if (pos + n > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (s[i] < '0' || s[i] > '9') return false;
      v = v * 10 + (s[i] - '0');
    }
    out = v;
    return true;
  };
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  if (!digits(0, 4, y) || s.size() < 10 || s[4] != '-' || !digits(5, 2, mo) || s[7] != '-' || !digits(8, 2, d))
    return bad();
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || !digits(11, 2, h)) return bad();
    if (s.size() > 13) {
      if (s[13] != ':' || !digits(14, 2, mi)) return bad();
      if (s.size() > 16) {
        if (s[16] != ':' || !digits(17, 2, se) || s.size() != 19) return bad();
      }
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60) return bad();
  return utc_seconds(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi, se);
}

inline std::string format_iso8601(UtcSeconds t) {
  const CivilTime c = civil_from_seconds(t);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", c.year, c.month, c.day, c.hour, c.minute,
                c.second);
  return buf;
}

inline std::string format_date(UtcSeconds t) {
  const CivilTime c = civil_from_seconds(t);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", c.year, c.month, c.day);
  return buf;
}

/// Largest multiple of `step` that is <= t.
constexpr UtcSeconds floor_to(UtcSeconds t, UtcSeconds step) {
  const UtcSeconds r = t % step;
  return r >= 0 ? t - r : t - r - step;
}

constexpr UtcSeconds ceil_to(UtcSeconds t, UtcSeconds step) {
  const UtcSeconds f = floor_to(t, step);
  return f == t ? t : f + step;
}

}  // namespace kpcast

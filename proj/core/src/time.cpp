#include "tpc/time.hpp"

#include <charconv>
#include <cstdio>

#include "tpc/errors.hpp"

namespace tpc {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date (H. Hinnant's
// days_from_civil).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
}

unsigned days_in_month(std::int64_t y, unsigned m) {
  static constexpr unsigned kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
  return m == 2 && leap ? 29 : kDays[m - 1];
}

bool read_uint(std::string_view text, std::size_t pos, std::size_t width, unsigned& out) {
  if (pos + width > text.size()) return false;
  for (std::size_t i = pos; i < pos + width; ++i)
    if (text[i] < '0' || text[i] > '9') return false;
  auto res = std::from_chars(text.data() + pos, text.data() + pos + width, out);
  return res.ec == std::errc{};
}

}  // namespace

Timestamp Timestamp::from_civil(int year, unsigned month, unsigned day, unsigned hour,
                                unsigned minute, unsigned second) {
  return {days_from_civil(year, month, day) * 86400 + hour * 3600 + minute * 60 + second};
}

Timestamp Timestamp::parse(std::string_view text) {
  auto fail = [&]() -> Timestamp {
    throw DataError("invalid timestamp '" + std::string(text) + "'");
  };
  unsigned y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (!read_uint(text, 0, 4, y) || text.size() < 10 || text[4] != '-' || text[7] != '-' ||
      !read_uint(text, 5, 2, mo) || !read_uint(text, 8, 2, d)) {
    return fail();
  }
  if (text.size() > 10) {
    if ((text[10] != ' ' && text[10] != 'T') || !read_uint(text, 11, 2, h) ||
        text.size() < 16 || text[13] != ':' || !read_uint(text, 14, 2, mi)) {
      return fail();
    }
    if (text.size() > 16) {
      if (text.size() != 19 || text[16] != ':' || !read_uint(text, 17, 2, s)) return fail();
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > days_in_month(y, mo) || h > 23 || mi > 59 || s > 59) {
    return fail();
  }
  return from_civil(static_cast<int>(y), mo, d, h, mi, s);
}

std::string Timestamp::format() const {
  const std::int64_t days = floor_div(seconds, 86400);
  const std::int64_t rem = seconds - days * 86400;
  const Civil c = civil_from_days(days);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02u %02lld:%02lld:%02lld",
                static_cast<long long>(c.year), c.month, c.day,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

unsigned Timestamp::weekday() const {
  // 1970-01-01 was a Thursday (index 3).
  const std::int64_t days = floor_div(seconds, 86400);
  return static_cast<unsigned>(((days % 7) + 7 + 3) % 7);
}

unsigned Timestamp::hour() const {
  const std::int64_t rem = seconds - floor_div(seconds, 86400) * 86400;
  return static_cast<unsigned>(rem / 3600);
}

Granularity Granularity::parse(std::string_view label) {
  if (label == "hourly") return {3600};
  if (label == "daily") return {86400};
  if (label == "minutely") return {60};
  const auto dash = label.find('-');
  if (dash != std::string_view::npos && dash > 0) {
    std::int64_t n = 0;
    auto res = std::from_chars(label.data(), label.data() + dash, n);
    const auto unit = label.substr(dash + 1);
    if (res.ec == std::errc{} && res.ptr == label.data() + dash && n > 0) {
      if (unit == "second") return {n};
      if (unit == "minute") return {n * 60};
      if (unit == "hour") return {n * 3600};
    }
  }
  throw ConfigError("unknown granularity '" + std::string(label) + "'");
}

std::string Granularity::label() const {
  if (seconds == 3600) return "hourly";
  if (seconds == 86400) return "daily";
  if (seconds == 60) return "minutely";
  if (seconds % 3600 == 0) return std::to_string(seconds / 3600) + "-hour";
  if (seconds % 60 == 0) return std::to_string(seconds / 60) + "-minute";
  return std::to_string(seconds) + "-second";
}

}  // namespace tpc

#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace tpc {

/// Naive local timestamp with one-second resolution (no time zones).
struct Timestamp {
  std::int64_t seconds = 0;  // since 1970-01-01 00:00:00

  static Timestamp from_civil(int year, unsigned month, unsigned day, unsigned hour = 0,
                              unsigned minute = 0, unsigned second = 0);
  /// Accepts "YYYY-MM-DD HH:MM:SS", "YYYY-MM-DDTHH:MM:SS", "YYYY-MM-DD HH:MM"
  /// and "YYYY-MM-DD". Throws DataError otherwise.
  static Timestamp parse(std::string_view text);

  /// "YYYY-MM-DD HH:MM:SS"
  std::string format() const;
  /// 0 = Monday ... 6 = Sunday.
  unsigned weekday() const;
  unsigned hour() const;

  Timestamp plus(std::int64_t delta_seconds) const { return {seconds + delta_seconds}; }
  auto operator<=>(const Timestamp&) const = default;
};

/// Fixed sampling interval with its human-readable label.
struct Granularity {
  std::int64_t seconds = 3600;

  /// Accepts "hourly", "daily", "minutely", "<n>-minute", "<n>-hour",
  /// "<n>-second". Throws ConfigError otherwise.
  static Granularity parse(std::string_view label);
  static Granularity hourly() { return {3600}; }

  /// Canonical label: "hourly", "daily", "minutely", "15-minute", ...
  std::string label() const;
  bool operator==(const Granularity&) const = default;
};

}  // namespace tpc

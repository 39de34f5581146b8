#pragma once

// UTC timestamps with millisecond precision. Every serialized timestamp in the
// toolkit goes through format_rfc3339().

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace npmhist {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Millis = std::chrono::milliseconds;

inline constexpr Millis kDay{86'400'000};

inline Timestamp from_unix_millis(std::int64_t ms) { return Timestamp{Millis{ms}}; }
inline std::int64_t to_unix_millis(Timestamp t) { return t.time_since_epoch().count(); }

class MalformedTimestamp : public std::runtime_error {
 public:
  explicit MalformedTimestamp(std::string_view text)
      : std::runtime_error("malformed timestamp: \"" + std::string(text) + "\"") {}
};

namespace detail {

inline bool read_digits(std::string_view s, std::size_t& pos, std::size_t count, int& out) {
  if (pos + count > s.size()) return false;
  int value = 0;
  for (std::size_t i = 0; i < count; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    value = value * 10 + (c - '0');
  }
  pos += count;
  out = value;
  return true;
}

inline bool expect(std::string_view s, std::size_t& pos, char c) {
  if (pos >= s.size() || s[pos] != c) return false;
  ++pos;
  return true;
}

}  // namespace detail

/// Parses RFC 3339 ("2020-01-31T12:00:00.123Z", offsets allowed, fraction
/// optional and truncated to milliseconds) or a string of unix milliseconds.
inline std::optional<Timestamp> try_parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty()) return std::nullopt;

  bool all_digits = true;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (!(c >= '0' && c <= '9') && !(i == 0 && c == '-')) {
      all_digits = false;
      break;
    }
  }
  if (all_digits) {
    if (text.size() > 16 || text == "-") return std::nullopt;
    return from_unix_millis(std::stoll(std::string(text)));
  }

  std::size_t pos = 0;
  int y, mo, d, h, mi, sec;
  if (!detail::read_digits(text, pos, 4, y) || !detail::expect(text, pos, '-') ||
      !detail::read_digits(text, pos, 2, mo) || !detail::expect(text, pos, '-') ||
      !detail::read_digits(text, pos, 2, d))
    return std::nullopt;
  if (pos >= text.size() || (text[pos] != 'T' && text[pos] != 't' && text[pos] != ' '))
    return std::nullopt;
  ++pos;
  if (!detail::read_digits(text, pos, 2, h) || !detail::expect(text, pos, ':') ||
      !detail::read_digits(text, pos, 2, mi) || !detail::expect(text, pos, ':') ||
      !detail::read_digits(text, pos, 2, sec))
    return std::nullopt;

  int millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 3) millis = millis * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) return std::nullopt;
    for (int i = digits; i < 3; ++i) millis *= 10;
  }

  int offset_minutes = 0;
  if (pos >= text.size()) return std::nullopt;
  if (text[pos] == 'Z' || text[pos] == 'z') {
    ++pos;
  } else if (text[pos] == '+' || text[pos] == '-') {
    int sign = text[pos] == '-' ? -1 : 1;
    ++pos;
    int oh, om;
    if (!detail::read_digits(text, pos, 2, oh) || !detail::expect(text, pos, ':') ||
        !detail::read_digits(text, pos, 2, om))
      return std::nullopt;
    offset_minutes = sign * (oh * 60 + om);
  } else {
    return std::nullopt;
  }
  if (pos != text.size()) return std::nullopt;

  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  auto tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec} + milliseconds{millis} -
            minutes{offset_minutes};
  return time_point_cast<milliseconds>(tp);
}

inline Timestamp parse_timestamp(std::string_view text) {
  if (auto t = try_parse_timestamp(text)) return *t;
  throw MalformedTimestamp(text);
}

/// Always "YYYY-MM-DDTHH:MM:SS.mmmZ".
inline std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  auto day_point = floor<days>(t);
  year_month_day ymd{day_point};
  auto rest = t - day_point;
  auto h = duration_cast<hours>(rest);
  rest -= h;
  auto m = duration_cast<minutes>(rest);
  rest -= m;
  auto s = duration_cast<seconds>(rest);
  rest -= s;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(h.count()), static_cast<int>(m.count()),
                static_cast<int>(s.count()), static_cast<int>(rest.count()));
  return buf;
}

inline int utc_year(Timestamp t) {
  using namespace std::chrono;
  return static_cast<int>(year_month_day{floor<days>(t)}.year());
}

inline double to_days(Millis d) { return static_cast<double>(d.count()) / kDay.count(); }

}  // namespace npmhist

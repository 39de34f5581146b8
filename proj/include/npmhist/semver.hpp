#pragma once

// Semantic versions and npm-style version constraints.
//
// A Version is <major>.<minor>.<bug>[-<prerelease>][+<build>]. We say "bug"
// rather than "patch" throughout so that security patches and the third
// version component cannot be confused.
//
// A Constraint keeps three things: the raw text, a syntactic category (one of
// six, decided by the leading sigil) and the set of half-open version
// intervals the text denotes under npm range semantics. The category never
// looks at the intervals, so "^0.0.3" is a Minor constraint even though it
// only admits 0.0.3.

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace npmhist::semver {

class MalformedVersion : public std::runtime_error {
 public:
  MalformedVersion(std::string_view text, std::size_t offset, std::size_t length,
                   std::string_view reason)
      : std::runtime_error(make_message(text, offset, length, reason)),
        offset_(offset),
        length_(length) {}

  /// Offending span within the input passed to parse_version().
  std::size_t offset() const noexcept { return offset_; }
  std::size_t length() const noexcept { return length_; }

 private:
  static std::string make_message(std::string_view text, std::size_t offset, std::size_t length,
                                  std::string_view reason) {
    std::string msg = "malformed version \"" + std::string(text) + "\": " + std::string(reason);
    msg += " at [" + std::to_string(offset) + ", " + std::to_string(offset + length) + ")";
    return msg;
  }

  std::size_t offset_;
  std::size_t length_;
};

class NotAnUpgrade : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline bool is_ident_char(char c) {
  return is_digit(c) || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '-';
}

inline bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), is_digit);
}

inline std::string_view trim(std::string_view s) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Numeric identifiers may exceed 64 bits in prerelease tags; compare them as
// digit strings without leading zeros.
inline int compare_numeric_text(std::string_view a, std::string_view b) {
  while (a.size() > 1 && a.front() == '0') a.remove_prefix(1);
  while (b.size() > 1 && b.front() == '0') b.remove_prefix(1);
  if (a.size() != b.size()) return a.size() < b.size() ? -1 : 1;
  int c = a.compare(b);
  return c < 0 ? -1 : (c > 0 ? 1 : 0);
}

}  // namespace detail

struct Version {
  std::uint64_t major = 0;
  std::uint64_t minor = 0;
  std::uint64_t bug = 0;
  std::vector<std::string> prerelease;
  std::string build;

  bool is_prerelease() const noexcept { return !prerelease.empty(); }

  /// Same major.minor.bug, ignoring prerelease and build.
  bool same_triple(const Version& other) const noexcept {
    return major == other.major && minor == other.minor && bug == other.bug;
  }

  Version release() const { return Version{major, minor, bug, {}, {}}; }

  std::string render() const {
    std::string out =
        std::to_string(major) + '.' + std::to_string(minor) + '.' + std::to_string(bug);
    for (std::size_t i = 0; i < prerelease.size(); ++i) {
      out += i == 0 ? '-' : '.';
      out += prerelease[i];
    }
    if (!build.empty()) out += '+' + build;
    return out;
  }

  /// Structural equality, build metadata included.
  bool identical(const Version& other) const {
    return same_triple(other) && prerelease == other.prerelease && build == other.build;
  }
};

/// Semver precedence. Build metadata never participates.
inline std::strong_ordering compare(const Version& a, const Version& b) {
  if (auto c = a.major <=> b.major; c != 0) return c;
  if (auto c = a.minor <=> b.minor; c != 0) return c;
  if (auto c = a.bug <=> b.bug; c != 0) return c;
  if (a.prerelease.empty() || b.prerelease.empty())
    return b.prerelease.size() <=> a.prerelease.size();
  std::size_t n = std::min(a.prerelease.size(), b.prerelease.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& x = a.prerelease[i];
    const std::string& y = b.prerelease[i];
    bool xn = detail::all_digits(x);
    bool yn = detail::all_digits(y);
    if (xn && yn) {
      int c = detail::compare_numeric_text(x, y);
      if (c != 0) return c < 0 ? std::strong_ordering::less : std::strong_ordering::greater;
    } else if (xn != yn) {
      return xn ? std::strong_ordering::less : std::strong_ordering::greater;
    } else if (int c = x.compare(y); c != 0) {
      return c < 0 ? std::strong_ordering::less : std::strong_ordering::greater;
    }
  }
  return a.prerelease.size() <=> b.prerelease.size();
}

inline std::strong_ordering operator<=>(const Version& a, const Version& b) { return compare(a, b); }
inline bool operator==(const Version& a, const Version& b) { return compare(a, b) == 0; }

inline std::ostream& operator<<(std::ostream& os, const Version& v) { return os << v.render(); }

/// The immediate successor of v in the total order: nothing lies strictly
/// between v and successor(v). Used to express inclusive upper bounds as
/// exclusive ones.
inline Version successor(const Version& v) {
  Version next = v;
  next.build.clear();
  if (next.prerelease.empty()) {
    ++next.bug;
    next.prerelease = {"0"};
  } else {
    next.prerelease.push_back("0");
  }
  return next;
}

namespace detail {

struct VersionParser {
  std::string_view input;  // the caller's original text, for error spans
  std::size_t pos;
  std::size_t end;

  [[noreturn]] void fail(std::size_t at, std::size_t len, std::string_view why) const {
    throw MalformedVersion(input, at, std::max<std::size_t>(len, 1), why);
  }

  std::uint64_t number(std::string_view what) {
    std::size_t start = pos;
    while (pos < end && is_digit(input[pos])) ++pos;
    if (pos == start) fail(start, 1, std::string("expected ") + std::string(what) + " number");
    if (pos - start > 1 && input[start] == '0') fail(start, pos - start, "leading zero");
    if (pos - start > 19) fail(start, pos - start, "number too large");
    return std::stoull(std::string(input.substr(start, pos - start)));
  }

  void dot() {
    if (pos >= end || input[pos] != '.') fail(pos, 1, "expected '.'");
    ++pos;
  }

  std::vector<std::string> identifiers(bool prerelease) {
    std::vector<std::string> ids;
    while (true) {
      std::size_t start = pos;
      while (pos < end && is_ident_char(input[pos])) ++pos;
      if (pos == start) fail(start, 1, "empty identifier");
      std::string_view id = input.substr(start, pos - start);
      if (prerelease && all_digits(id) && id.size() > 1 && id.front() == '0')
        fail(start, id.size(), "leading zero in numeric identifier");
      ids.emplace_back(id);
      if (pos < end && input[pos] == '.') {
        ++pos;
        continue;
      }
      return ids;
    }
  }
};

}  // namespace detail

/// Strict semver, except that surrounding whitespace and a leading 'v' are
/// accepted and dropped.
inline Version parse_version(std::string_view text) {
  std::string_view trimmed = detail::trim(text);
  std::size_t begin = trimmed.empty() ? 0 : static_cast<std::size_t>(trimmed.data() - text.data());
  detail::VersionParser p{text, begin, begin + trimmed.size()};
  if (trimmed.empty()) p.fail(0, text.size(), "empty version");
  if (text[p.pos] == 'v' || text[p.pos] == 'V') ++p.pos;

  Version v;
  v.major = p.number("major");
  p.dot();
  v.minor = p.number("minor");
  p.dot();
  v.bug = p.number("bug");
  if (p.pos < p.end && text[p.pos] == '-') {
    ++p.pos;
    v.prerelease = p.identifiers(true);
  }
  if (p.pos < p.end && text[p.pos] == '+') {
    ++p.pos;
    std::size_t start = p.pos;
    p.identifiers(false);
    v.build = std::string(text.substr(start, p.pos - start));
  }
  if (p.pos != p.end) p.fail(p.pos, p.end - p.pos, "unexpected trailing characters");
  return v;
}

inline std::optional<Version> try_parse_version(std::string_view text) {
  try {
    return parse_version(text);
  } catch (const MalformedVersion&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Increment types

enum class IncrementType { Bug, Minor, Major };

inline constexpr std::array<IncrementType, 3> kIncrementTypes{IncrementType::Bug,
                                                              IncrementType::Minor,
                                                              IncrementType::Major};

inline std::string_view to_string(IncrementType t) {
  switch (t) {
    case IncrementType::Bug: return "bug";
    case IncrementType::Minor: return "minor";
    case IncrementType::Major: return "major";
  }
  return "?";
}

inline std::optional<IncrementType> increment_type_from_string(std::string_view s) {
  for (auto t : kIncrementTypes)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

/// Requires a < b.
inline IncrementType increment_type(const Version& a, const Version& b) {
  if (compare(a, b) >= 0)
    throw NotAnUpgrade("not an upgrade: " + a.render() + " -> " + b.render());
  if (a.major != b.major) return IncrementType::Major;
  if (a.minor != b.minor) return IncrementType::Minor;
  return IncrementType::Bug;
}

// ---------------------------------------------------------------------------
// Constraints

enum class Category { Exact, Bug, Minor, Geq, Any, Other };

inline constexpr std::array<Category, 6> kCategories{Category::Exact, Category::Bug,
                                                     Category::Minor, Category::Geq,
                                                     Category::Any,   Category::Other};

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::Exact: return "exact";
    case Category::Bug: return "bug";
    case Category::Minor: return "minor";
    case Category::Geq: return "geq";
    case Category::Any: return "any";
    case Category::Other: return "other";
  }
  return "?";
}

inline std::optional<Category> category_from_string(std::string_view s) {
  for (auto c : kCategories)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

/// Half-open interval [lower, upper). A missing bound is unbounded.
struct Interval {
  std::optional<Version> lower;
  std::optional<Version> upper;
  /// major.minor.bug triples whose prereleases this interval admits (npm only
  /// lets a prerelease match a range that mentions a prerelease of the same
  /// triple).
  std::vector<Version> prerelease_triples;

  static Interval everything() { return {}; }

  bool contains(const Version& v) const {
    if (lower && compare(v, *lower) < 0) return false;
    if (upper && compare(v, *upper) >= 0) return false;
    return true;
  }

  bool empty() const { return lower && upper && compare(*lower, *upper) >= 0; }

  bool admits_prerelease_of(const Version& v) const {
    return std::any_of(prerelease_triples.begin(), prerelease_triples.end(),
                       [&](const Version& t) { return t.same_triple(v); });
  }

  /// Intersection; prerelease opt-ins accumulate.
  Interval intersect(const Interval& other) const {
    Interval out = *this;
    if (other.lower && (!out.lower || compare(*other.lower, *out.lower) > 0))
      out.lower = other.lower;
    if (other.upper && (!out.upper || compare(*other.upper, *out.upper) < 0))
      out.upper = other.upper;
    out.prerelease_triples.insert(out.prerelease_triples.end(), other.prerelease_triples.begin(),
                                  other.prerelease_triples.end());
    return out;
  }
};

struct Constraint {
  std::string raw;
  Category category = Category::Other;
  /// One interval per satisfiable "||" branch.
  std::vector<Interval> intervals;
  /// False when the text is not npm range syntax at all (URLs, tags, paths).
  bool recognized = false;

  bool interval_backed() const { return recognized; }
};

namespace detail {

// A partially specified version as it appears in range syntax; missing or
// wildcard components are nullopt.
struct Partial {
  std::optional<std::uint64_t> major;
  std::optional<std::uint64_t> minor;
  std::optional<std::uint64_t> bug;
  std::vector<std::string> prerelease;
  bool has_wildcard = false;  // any of x, X, * appeared

  bool full() const { return major && minor && bug; }
  bool any() const { return !major; }

  Version floor() const {
    Version v{major.value_or(0), minor.value_or(0), bug.value_or(0), {}, {}};
    if (full()) v.prerelease = prerelease;
    return v;
  }
};

inline Version ver(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return {a, b, c, {}, {}}; }

inline std::optional<std::uint64_t> parse_component(std::string_view s, bool& wildcard, bool& ok) {
  if (s == "x" || s == "X" || s == "*") {
    wildcard = true;
    return std::nullopt;
  }
  if (!all_digits(s) || s.size() > 19) {
    ok = false;
    return std::nullopt;
  }
  return std::stoull(std::string(s));
}

inline std::optional<Partial> parse_partial(std::string_view s) {
  if (!s.empty() && (s.front() == 'v' || s.front() == 'V')) s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  Partial p;

  std::string_view core = s;
  std::string_view pre;
  std::size_t plus = core.find('+');
  if (plus != std::string_view::npos) {
    std::string_view build = core.substr(plus + 1);
    if (build.empty()) return std::nullopt;
    for (char c : build)
      if (!is_ident_char(c) && c != '.') return std::nullopt;
    core = core.substr(0, plus);
  }
  // The first '-' after the third component starts the prerelease.
  std::size_t dots = 0, dash = std::string_view::npos;
  for (std::size_t i = 0; i < core.size(); ++i) {
    if (core[i] == '.') ++dots;
    if (core[i] == '-' && dots >= 2) {
      dash = i;
      break;
    }
  }
  if (dash != std::string_view::npos) {
    pre = core.substr(dash + 1);
    core = core.substr(0, dash);
    if (pre.empty()) return std::nullopt;
  }

  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = core.find('.', start);
    parts.push_back(core.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  if (parts.size() > 3) return std::nullopt;

  bool ok = true;
  std::array<std::optional<std::uint64_t>*, 3> slots{&p.major, &p.minor, &p.bug};
  bool seen_wild = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    bool wild = false;
    auto value = parse_component(parts[i], wild, ok);
    if (!ok) return std::nullopt;
    if (wild) seen_wild = true;
    // Components after a wildcard are ignored by npm ("1.x.3" == "1.x").
    if (!seen_wild) *slots[i] = value;
  }
  p.has_wildcard = seen_wild;

  if (!pre.empty()) {
    if (!p.full()) return std::nullopt;
    std::size_t b = 0;
    while (true) {
      std::size_t dot = pre.find('.', b);
      std::string_view id = pre.substr(b, dot == std::string_view::npos ? dot : dot - b);
      if (id.empty()) return std::nullopt;
      for (char c : id)
        if (!is_ident_char(c)) return std::nullopt;
      p.prerelease.emplace_back(id);
      if (dot == std::string_view::npos) break;
      b = dot + 1;
    }
  }
  return p;
}

// Upper (exclusive) bound covering every version that matches the partial.
inline std::optional<Version> partial_ceiling(const Partial& p) {
  if (p.any()) return std::nullopt;
  if (!p.minor) return ver(*p.major + 1, 0, 0);
  if (!p.bug) return ver(*p.major, *p.minor + 1, 0);
  return successor(p.floor());
}

inline Interval with_opt_in(Interval iv, const Partial& p) {
  if (p.full() && !p.prerelease.empty()) iv.prerelease_triples.push_back(p.floor().release());
  return iv;
}

inline Interval empty_interval() { return Interval{ver(0, 0, 0), ver(0, 0, 0), {}}; }

inline std::optional<Interval> comparator_interval(std::string_view op, const Partial& p) {
  Interval iv;
  if (op.empty() || op == "=") {
    if (p.any()) return Interval::everything();
    iv.lower = p.floor();
    iv.upper = partial_ceiling(p);
  } else if (op == ">") {
    if (p.any()) return empty_interval();
    iv.lower = partial_ceiling(p);
  } else if (op == ">=") {
    if (p.any()) return Interval::everything();
    iv.lower = p.floor();
  } else if (op == "<") {
    if (p.any()) return empty_interval();
    iv.upper = p.floor();
  } else if (op == "<=") {
    if (p.any()) return Interval::everything();
    iv.upper = partial_ceiling(p);
  } else if (op == "~" || op == "~>") {
    if (p.any()) return Interval::everything();
    iv.lower = p.floor();
    iv.upper = p.minor ? ver(*p.major, *p.minor + 1, 0) : ver(*p.major + 1, 0, 0);
  } else if (op == "^") {
    if (p.any()) return Interval::everything();
    iv.lower = p.floor();
    std::uint64_t major = *p.major;
    if (major > 0 || !p.minor) {
      iv.upper = ver(major + 1, 0, 0);
    } else if (*p.minor > 0 || !p.bug) {
      iv.upper = ver(0, *p.minor + 1, 0);
    } else {
      iv.upper = ver(0, 0, *p.bug + 1);
    }
  } else {
    return std::nullopt;
  }
  return with_opt_in(std::move(iv), p);
}

struct Comparator {
  std::string_view op;
  std::string_view version;
};

inline std::optional<Comparator> split_comparator(std::string_view token) {
  static constexpr std::array<std::string_view, 8> ops{">=", "<=", "~>", ">", "<", "=", "~", "^"};
  for (auto op : ops) {
    if (token.substr(0, op.size()) == op) {
      // "=" as the only operator is equivalent to no operator; but "==" or
      // ">==" are not range syntax.
      return Comparator{op == "=" ? std::string_view{} : op, token.substr(op.size())};
    }
  }
  return Comparator{{}, token};
}

// Splits a branch into tokens, gluing operators to the version that follows
// them ("> = 1.2" is not accepted, "> 1.2" is).
inline std::vector<std::string> tokenize(std::string_view branch) {
  std::vector<std::string> raw;
  std::size_t i = 0;
  while (i < branch.size()) {
    while (i < branch.size() && (branch[i] == ' ' || branch[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < branch.size() && branch[i] != ' ' && branch[i] != '\t') ++i;
    if (i > start) raw.emplace_back(branch.substr(start, i - start));
  }
  std::vector<std::string> out;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const std::string& t = raw[k];
    bool bare_op = t == ">" || t == "<" || t == ">=" || t == "<=" || t == "=" || t == "~" ||
                   t == "~>" || t == "^";
    if (bare_op && k + 1 < raw.size()) {
      out.push_back(t + raw[k + 1]);
      ++k;
    } else {
      out.push_back(t);
    }
  }
  return out;
}

struct ParsedBranch {
  Interval interval;
  std::vector<std::string> tokens;
};

inline std::optional<ParsedBranch> parse_branch(std::string_view branch) {
  ParsedBranch out;
  out.tokens = tokenize(branch);
  const auto& tokens = out.tokens;
  if (tokens.empty()) return out;  // "" matches everything

  // Hyphen range: "A - B".
  if (tokens.size() == 3 && tokens[1] == "-") {
    auto lo = parse_partial(tokens[0]);
    auto hi = parse_partial(tokens[2]);
    if (!lo || !hi) return std::nullopt;
    Interval iv;
    if (!lo->any()) iv.lower = lo->floor();
    iv.upper = partial_ceiling(*hi);
    iv = with_opt_in(with_opt_in(std::move(iv), *lo), *hi);
    out.interval = std::move(iv);
    return out;
  }

  Interval acc = Interval::everything();
  for (const auto& tok : tokens) {
    auto cmp = split_comparator(tok);
    if (!cmp) return std::nullopt;
    auto partial = parse_partial(cmp->version);
    if (!partial) return std::nullopt;
    auto iv = comparator_interval(cmp->op, *partial);
    if (!iv) return std::nullopt;
    acc = acc.intersect(*iv);
  }
  out.interval = std::move(acc);
  return out;
}

inline Category classify(std::string_view text, const std::vector<std::string>& tokens) {
  if (text.empty() || text == "*" || text == "x" || text == "X") return Category::Any;
  if (tokens.size() != 1) return Category::Other;
  const std::string& tok = tokens.front();
  auto cmp = split_comparator(tok);
  if (!cmp) return Category::Other;
  std::string_view body = cmp->version;
  if (!body.empty() && (body.front() == 'v' || body.front() == 'V')) body.remove_prefix(1);
  auto p = parse_partial(body);
  if (!p || p->has_wildcard || p->any()) return Category::Other;

  std::string_view op = cmp->op;
  // "=1.2.3" reaches here with op == "" just like a bare "1.2.3".
  if (op.empty()) return p->full() ? Category::Exact : Category::Other;
  if (op == "~" || op == "~>") return Category::Bug;
  if (op == "^") return Category::Minor;
  if (op == ">=") return Category::Geq;
  return Category::Other;
}

}  // namespace detail

/// Total: every string yields a Constraint. Text that is not range syntax is
/// Other with recognized == false and no intervals.
inline Constraint parse_constraint(std::string_view text) {
  Constraint c;
  c.raw = std::string(text);
  std::string_view trimmed = detail::trim(text);

  std::vector<std::string_view> branches;
  std::size_t start = 0;
  while (true) {
    std::size_t bar = trimmed.find("||", start);
    branches.push_back(detail::trim(
        trimmed.substr(start, bar == std::string_view::npos ? bar : bar - start)));
    if (bar == std::string_view::npos) break;
    start = bar + 2;
  }

  bool ok = true;
  std::vector<std::string> first_tokens;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    auto parsed = detail::parse_branch(branches[i]);
    if (!parsed) {
      ok = false;
      break;
    }
    if (i == 0) first_tokens = parsed->tokens;
    if (!parsed->interval.empty()) c.intervals.push_back(std::move(parsed->interval));
  }
  if (!ok) {
    c.intervals.clear();
    c.recognized = false;
    c.category = Category::Other;
    return c;
  }
  c.recognized = true;
  c.category = branches.size() > 1 ? Category::Other : detail::classify(trimmed, first_tokens);
  return c;
}

/// npm satisfaction: interval membership, plus the rule that a prerelease
/// only matches an interval that opted in to its exact major.minor.bug.
inline bool satisfies(const Version& v, const Constraint& c) {
  for (const auto& iv : c.intervals) {
    if (!iv.contains(v)) continue;
    if (v.is_prerelease() && !iv.admits_prerelease_of(v)) continue;
    return true;
  }
  return false;
}

inline bool satisfies(const Version& v, std::string_view constraint) {
  return satisfies(v, parse_constraint(constraint));
}

}  // namespace npmhist::semver

#pragma once

// Update mining.
//
// Versions may be published out of numeric order (maintenance branches), so
// consecutive versions are not necessarily updates of one another. Releases
// are grouped by major number; each group must be chronologically ordered
// within itself, otherwise the package is rejected. Updates are then the
// consecutive pairs inside each group plus one bridge between every pair of
// adjacent existing groups: from the newest version of the lower group that
// was already published when the higher group's first version appeared.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmhist/semver.hpp"
#include "npmhist/store.hpp"
#include "npmhist/time.hpp"

namespace npmhist::miner {

using nlohmann::json;
using semver::IncrementType;
using semver::Version;

enum class SecurityEffect { None, IntroducesVuln, PatchesVuln };
enum class UpdateKind { IntraGroup, InterGroup };

inline std::string_view to_string(SecurityEffect e) {
  switch (e) {
    case SecurityEffect::None: return "none";
    case SecurityEffect::IntroducesVuln: return "introduces";
    case SecurityEffect::PatchesVuln: return "patches";
  }
  return "?";
}

inline std::optional<SecurityEffect> security_effect_from_string(std::string_view s) {
  for (auto e : {SecurityEffect::None, SecurityEffect::IntroducesVuln, SecurityEffect::PatchesVuln})
    if (to_string(e) == s) return e;
  return std::nullopt;
}

inline std::string_view to_string(UpdateKind k) {
  return k == UpdateKind::IntraGroup ? "intra" : "inter";
}

struct Update {
  std::string package;
  Version from;
  Version to;
  Timestamp from_at;
  Timestamp to_at;
  IncrementType increment = IncrementType::Bug;
  SecurityEffect security = SecurityEffect::None;
  UpdateKind kind = UpdateKind::IntraGroup;
};

struct MiningReport {
  std::string package;
  std::vector<Update> updates;
  bool rejected = false;
  std::optional<std::string> rejection_reason;
};

namespace detail {

struct Release {
  Version version;
  Timestamp at;
};

inline Update make_update(const std::string& package, const Release& a, const Release& b,
                          UpdateKind kind) {
  return Update{package, a.version, b.version, a.at, b.at, semver::increment_type(a.version, b.version),
                SecurityEffect::None, kind};
}

}  // namespace detail

/// Pure function of the history; tombstoned records are ignored.
inline MiningReport mine_updates(const store::PackageHistory& history) {
  MiningReport report{history.package, {}, false, std::nullopt};

  std::map<std::uint64_t, std::vector<detail::Release>> groups;
  for (const auto& r : history.records) {
    if (r.deleted || r.version.is_prerelease()) continue;
    groups[r.version.major].push_back({r.version, r.published_at});
  }

  for (auto& [major, group] : groups) {
    std::sort(group.begin(), group.end(),
              [](const auto& a, const auto& b) { return semver::compare(a.version, b.version) < 0; });
    for (std::size_t i = 1; i < group.size(); ++i) {
      if (group[i].at < group[i - 1].at) {
        report.rejected = true;
        report.rejection_reason = group[i].version.render() + " was published before " +
                                  group[i - 1].version.render();
        return report;
      }
    }
  }

  for (const auto& [major, group] : groups)
    for (std::size_t i = 1; i < group.size(); ++i)
      report.updates.push_back(
          detail::make_update(history.package, group[i - 1], group[i], UpdateKind::IntraGroup));

  for (auto hi = groups.begin(); hi != groups.end(); ++hi) {
    if (hi == groups.begin()) continue;
    const auto& lower = std::prev(hi)->second;
    const auto& upper = hi->second;
    // Groups are chronologically ordered, so the first version is also the
    // earliest published.
    const detail::Release& first = upper.front();
    const detail::Release* source = nullptr;
    for (const auto& r : lower)
      if (r.at <= first.at) source = &r;
    if (source)
      report.updates.push_back(
          detail::make_update(history.package, *source, first, UpdateKind::InterGroup));
  }

  std::sort(report.updates.begin(), report.updates.end(), [](const Update& a, const Update& b) {
    if (a.to_at != b.to_at) return a.to_at < b.to_at;
    if (auto c = semver::compare(a.to, b.to); c != 0) return c < 0;
    return semver::compare(a.from, b.from) < 0;
  });
  return report;
}

/// Advisories must all concern u.package. Patching wins over introducing.
inline SecurityEffect classify_security_effect(const Update& u,
                                               const std::vector<store::Advisory>& advisories) {
  for (const auto& a : advisories) {
    if (!a.affects(u.from)) continue;
    for (const auto& p : a.patched)
      if (semver::compare(p, u.to) == 0) return SecurityEffect::PatchesVuln;
  }
  for (const auto& a : advisories) {
    auto minimal = a.minimal_affected();
    if (minimal && semver::compare(*minimal, u.to) == 0) return SecurityEffect::IntroducesVuln;
  }
  return SecurityEffect::None;
}

inline void annotate_security(MiningReport& report, const std::vector<store::Advisory>& advisories) {
  for (auto& u : report.updates) u.security = classify_security_effect(u, advisories);
}

// ---------------------------------------------------------------------------
// Per-package increment distribution

struct IncrementShare {
  std::string package;
  std::size_t total = 0;
  std::map<IncrementType, std::size_t> counts;

  double fraction(IncrementType t) const {
    auto it = counts.find(t);
    return total == 0 || it == counts.end() ? 0.0 : static_cast<double>(it->second) / total;
  }
};

/// One row per package that has at least one update within the segment
/// (nullopt = every update). Rejected reports contribute nothing.
inline std::vector<IncrementShare> update_type_distribution(const std::vector<MiningReport>& reports,
                                                            std::optional<SecurityEffect> segment) {
  std::map<std::string, IncrementShare> rows;
  for (const auto& r : reports) {
    if (r.rejected) continue;
    for (const auto& u : r.updates) {
      if (segment && u.security != *segment) continue;
      auto& row = rows[u.package];
      row.package = u.package;
      ++row.total;
      ++row.counts[u.increment];
    }
  }
  std::vector<IncrementShare> out;
  out.reserve(rows.size());
  for (auto& [_, row] : rows) out.push_back(std::move(row));
  return out;
}

// ---------------------------------------------------------------------------
// NDJSON

inline json to_json(const Update& u) {
  return json{{"package", u.package},
              {"from", u.from.render()},
              {"to", u.to.render()},
              {"fromAt", format_rfc3339(u.from_at)},
              {"toAt", format_rfc3339(u.to_at)},
              {"increment", semver::to_string(u.increment)},
              {"security", to_string(u.security)},
              {"kind", to_string(u.kind)}};
}

inline Update update_from_json(const json& j) {
  Update u;
  u.package = j.at("package").get<std::string>();
  u.from = semver::parse_version(j.at("from").get<std::string>());
  u.to = semver::parse_version(j.at("to").get<std::string>());
  u.from_at = parse_timestamp(j.at("fromAt").get<std::string>());
  u.to_at = parse_timestamp(j.at("toAt").get<std::string>());
  u.increment = semver::increment_type(u.from, u.to);
  u.security = security_effect_from_string(j.value("security", "none")).value_or(SecurityEffect::None);
  u.kind = j.value("kind", "intra") == "inter" ? UpdateKind::InterGroup : UpdateKind::IntraGroup;
  return u;
}

}  // namespace npmhist::miner

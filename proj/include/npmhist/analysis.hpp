#pragma once

// Corpus statistics: constraint usage per year, technical lag of resolved
// dependencies, and how individual upstream updates reach downstream
// packages over time.

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmhist/miner.hpp"
#include "npmhist/resolver.hpp"
#include "npmhist/semver.hpp"
#include "npmhist/store.hpp"
#include "npmhist/time.hpp"

namespace npmhist::analysis {

using nlohmann::json;
using semver::Category;
using semver::Constraint;
using semver::Version;

// ---------------------------------------------------------------------------
// Constraint usage by year

struct UsageRow {
  int year = 0;
  std::size_t total = 0;
  std::map<Category, std::size_t> counts;

  double percent(Category c) const {
    auto it = counts.find(c);
    return total == 0 || it == counts.end() ? 0.0 : 100.0 * static_cast<double>(it->second) / total;
  }
};

/// The representative of a package in a year is its newest release published
/// that year (by publication time). Years without constraints are omitted.
inline std::vector<UsageRow> constraint_usage_by_year(const store::Snapshot& snapshot, int first_year,
                                                      int last_year) {
  std::map<int, UsageRow> rows;
  for (const auto& name : snapshot.package_names()) {
    std::map<int, const store::VersionRecord*> representative;
    for (const auto& r : snapshot.entry(name).records) {
      if (r.deleted || r.version.is_prerelease()) continue;
      int year = utc_year(r.published_at);
      if (year < first_year || year > last_year) continue;
      representative[year] = &r;  // records are chronological; the last one wins
    }
    for (const auto& [year, r] : representative) {
      if (r->dependencies.empty()) continue;
      auto& row = rows[year];
      row.year = year;
      for (const auto& [_, c] : r->dependencies) {
        ++row.counts[c.category];
        ++row.total;
      }
    }
  }
  std::vector<UsageRow> out;
  for (auto& [_, row] : rows) out.push_back(std::move(row));
  return out;
}

// ---------------------------------------------------------------------------
// Technical lag

struct LagEntry {
  std::string dependency;
  Version resolved;
  Timestamp resolved_at;
  std::optional<Timestamp> newest_eligible_at;
  std::optional<double> out_of_date_days;

  bool out_of_date() const { return out_of_date_days.has_value(); }
};

struct LagSummary {
  std::size_t dependencies = 0;
  std::size_t out_of_date = 0;
  double percent_out_of_date = 0.0;
  std::optional<double> mean_out_of_date_days;  // over out-of-date entries only
};

struct LagResult {
  std::string root;
  Timestamp as_of;
  std::vector<LagEntry> entries;
  LagSummary summary;
};

/// A resolved dependency (V_D published at T_D) is out of date when some
/// V_D' > V_D was published at T_D' with T_D < T_D' < T_P, T_P being the
/// graph's asOf. Both inequalities are strict. The lag is T_D' - T_D for the
/// largest such T_D'.
inline LagResult compute_lag(const resolver::ResolvedGraph& g, const store::Snapshot& snapshot) {
  LagResult result{g.root, g.as_of, {}, {}};
  double total_days = 0.0;
  for (const auto& [key, node] : g.nodes) {
    LagEntry e{key.package, key.version, node.published_at, std::nullopt, std::nullopt};
    for (const auto& r : snapshot.entry(key.package).records) {
      if (r.deleted) continue;
      if (r.published_at <= node.published_at || r.published_at >= g.as_of) continue;
      if (semver::compare(r.version, key.version) <= 0) continue;
      if (!e.newest_eligible_at || r.published_at > *e.newest_eligible_at) e.newest_eligible_at = r.published_at;
    }
    if (e.newest_eligible_at) {
      e.out_of_date_days = to_days(*e.newest_eligible_at - node.published_at);
      ++result.summary.out_of_date;
      total_days += *e.out_of_date_days;
    }
    result.entries.push_back(std::move(e));
  }
  result.summary.dependencies = result.entries.size();
  if (result.summary.dependencies > 0)
    result.summary.percent_out_of_date =
        100.0 * static_cast<double>(result.summary.out_of_date) / result.summary.dependencies;
  if (result.summary.out_of_date > 0)
    result.summary.mean_out_of_date_days = total_days / static_cast<double>(result.summary.out_of_date);
  return result;
}

// ---------------------------------------------------------------------------
// Update flows

enum class FlowCategory {
  InstantNoIntervention,
  DelayedWithIntervention,
  DelayedMiddleFix,
  DeletedDependency,
  Censored,  // not adopted within the horizon; outside the four-way taxonomy
};

inline std::string_view to_string(FlowCategory c) {
  switch (c) {
    case FlowCategory::InstantNoIntervention: return "instant-no-intervention";
    case FlowCategory::DelayedWithIntervention: return "delayed-with-intervention";
    case FlowCategory::DelayedMiddleFix: return "delayed-middle-fix";
    case FlowCategory::DeletedDependency: return "deleted-dependency";
    case FlowCategory::Censored: return "censored";
  }
  return "?";
}

inline std::optional<FlowCategory> flow_category_from_string(std::string_view s) {
  for (auto c : {FlowCategory::InstantNoIntervention, FlowCategory::DelayedWithIntervention,
                 FlowCategory::DelayedMiddleFix, FlowCategory::DeletedDependency, FlowCategory::Censored})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

struct FlowOutcome {
  miner::Update upstream;
  std::string downstream;
  FlowCategory category = FlowCategory::Censored;
  std::optional<int> days_to_unblock;  // delayed and deleted categories only
  /// Adoption happened but neither the downstream nor a package on the path
  /// published in the window; reported as DelayedWithIntervention.
  bool attribution_uncertain = false;
  std::vector<std::string> intervening;  // packages that published in the window
};

class PreconditionViolated : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Resolves a root dependency map at a point in time.
using ResolutionDriver =
    std::function<resolver::ResolvedGraph(const std::map<std::string, Constraint>&, Timestamp, const std::string&)>;

inline ResolutionDriver flat_driver(const store::Snapshot& snapshot) {
  return [&snapshot](const std::map<std::string, Constraint>& deps, Timestamp t, const std::string& root) {
    return resolver::resolve(deps, t, snapshot, root, resolver::Options{true});
  };
}

struct FlowOptions {
  int horizon_days = 90;
  /// Keep observing the downstream version that was current before the
  /// update instead of its newest release at each step.
  bool frozen_downstream = false;
};

/// Newest (highest) live release of `package` published at or before t.
inline const store::VersionRecord* latest_release(const store::Snapshot& snapshot, const std::string& package,
                                                  Timestamp t) {
  const store::VersionRecord* best = nullptr;
  for (const auto& r : snapshot.entry(package).records) {
    if (r.deleted || r.version.is_prerelease() || r.published_at > t) continue;
    if (!best || semver::compare(r.version, best->version) > 0) best = &r;
  }
  return best;
}

namespace detail {

inline bool published_in_window(const store::Snapshot& snapshot, const std::string& package, Timestamp after,
                                Timestamp until) {
  if (!snapshot.contains(package)) return false;
  for (const auto& r : snapshot.entry(package).records)
    if (!r.deleted && r.published_at > after && r.published_at <= until) return true;
  return false;
}

// Packages on the first root-to-target path found breadth-first, target
// excluded.
inline std::vector<std::string> path_to(const resolver::ResolvedGraph& g, const resolver::NodeKey& target) {
  std::map<resolver::NodeKey, std::optional<resolver::NodeKey>> parent;
  std::deque<std::optional<resolver::NodeKey>> frontier{std::nullopt};
  std::set<resolver::NodeKey> seen;
  while (!frontier.empty()) {
    auto cur = frontier.front();
    frontier.pop_front();
    for (const auto& e : g.edges) {
      if (e.from.has_value() != cur.has_value() || (cur && !(*e.from == *cur))) continue;
      if (!seen.insert(e.to).second) continue;
      parent[e.to] = cur;
      frontier.push_back(e.to);
    }
  }
  std::vector<std::string> path;
  if (!parent.count(target)) return path;
  auto at = parent[target];
  while (at) {
    path.push_back(at->package);
    at = parent[*at];
  }
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace detail

/// Follows one upstream update into one downstream package: resolve the
/// downstream just before the update (it must then use u.from), then at the
/// update instant and every 24 hours after it until the update is adopted,
/// the dependency disappears, or the horizon passes.
inline FlowOutcome classify_flow(const miner::Update& u, const std::string& downstream,
                                 const store::Snapshot& snapshot, const ResolutionDriver& driver,
                                 FlowOptions options = {}) {
  const Timestamp before = u.to_at - Millis{1};
  const store::VersionRecord* frozen = latest_release(snapshot, downstream, before);
  if (!frozen) throw PreconditionViolated(downstream + " had no release before the update");
  try {
    auto g = driver(frozen->dependencies, before, downstream + "@" + frozen->version.render());
    if (!g.nodes.count(resolver::NodeKey{u.package, u.from}))
      throw PreconditionViolated(downstream + " did not resolve " + u.package + "@" + u.from.render() +
                                 " before the update");
  } catch (const resolver::UnsatisfiableDependency& e) {
    throw PreconditionViolated(std::string("downstream unresolvable before the update: ") + e.what());
  } catch (const store::UnknownPackage& e) {
    throw PreconditionViolated(std::string("downstream unresolvable before the update: ") + e.what());
  }

  FlowOutcome out{u, downstream, FlowCategory::Censored, std::nullopt, false, {}};
  for (int k = 0; k <= options.horizon_days; ++k) {
    const Timestamp t = u.to_at + kDay * k;
    const store::VersionRecord* current = options.frozen_downstream ? frozen : latest_release(snapshot, downstream, t);
    resolver::ResolvedGraph g;
    try {
      g = driver(current->dependencies, t, downstream + "@" + current->version.render());
    } catch (const resolver::UnsatisfiableDependency&) {
      continue;
    } catch (const store::UnknownPackage&) {
      continue;
    }

    const resolver::Node* adopted = nullptr;
    for (const auto* n : g.nodes_of(u.package))
      if (semver::compare(n->key.version, u.to) >= 0) adopted = n;
    if (!adopted && !g.contains_package(u.package)) {
      out.category = FlowCategory::DeletedDependency;
      out.days_to_unblock = k;
      if (detail::published_in_window(snapshot, downstream, u.to_at, t)) out.intervening.push_back(downstream);
      return out;
    }
    if (!adopted) continue;
    if (k == 0) {
      out.category = FlowCategory::InstantNoIntervention;
      return out;
    }
    out.days_to_unblock = k;
    if (!options.frozen_downstream && detail::published_in_window(snapshot, downstream, u.to_at, t)) {
      out.category = FlowCategory::DelayedWithIntervention;
      out.intervening.push_back(downstream);
      return out;
    }
    for (const auto& p : detail::path_to(g, adopted->key))
      if (detail::published_in_window(snapshot, p, u.to_at, t)) out.intervening.push_back(p);
    if (!out.intervening.empty()) {
      out.category = FlowCategory::DelayedMiddleFix;
    } else {
      out.category = FlowCategory::DelayedWithIntervention;
      out.attribution_uncertain = true;
    }
    return out;
  }
  return out;
}

/// Packages that (transitively, by name, over any live version) depend on
/// `package`, sorted by name.
inline std::vector<std::string> reverse_dependents(const store::Snapshot& snapshot, const std::string& package) {
  std::map<std::string, std::set<std::string>> reverse;
  for (const auto& name : snapshot.package_names())
    for (const auto& r : snapshot.entry(name).records)
      if (!r.deleted)
        for (const auto& [dep, _] : r.dependencies) reverse[dep].insert(name);
  std::set<std::string> seen;
  std::deque<std::string> frontier{package};
  while (!frontier.empty()) {
    auto cur = frontier.front();
    frontier.pop_front();
    for (const auto& user : reverse[cur])
      if (user != package && seen.insert(user).second) frontier.push_back(user);
  }
  return {seen.begin(), seen.end()};
}

/// Picks up to `sample` downstream packages that satisfy the flow
/// precondition for u, uniformly at random with the given seed.
inline std::vector<std::string> sample_downstreams(const miner::Update& u, const store::Snapshot& snapshot,
                                                   const ResolutionDriver& driver, std::size_t sample,
                                                   std::uint64_t seed) {
  std::vector<std::string> eligible;
  const Timestamp before = u.to_at - Millis{1};
  for (const auto& name : reverse_dependents(snapshot, u.package)) {
    const auto* r = latest_release(snapshot, name, before);
    if (!r) continue;
    try {
      auto g = driver(r->dependencies, before, name);
      if (g.nodes.count(resolver::NodeKey{u.package, u.from})) eligible.push_back(name);
    } catch (const std::exception&) {
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  if (eligible.size() > sample) eligible.resize(sample);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

/// The most recent non-rejected update of each package strictly before cutoff.
inline std::vector<miner::Update> latest_updates_before(const std::vector<miner::MiningReport>& reports,
                                                        Timestamp cutoff) {
  std::vector<miner::Update> out;
  for (const auto& r : reports) {
    const miner::Update* best = nullptr;
    for (const auto& u : r.updates)
      if (u.to_at < cutoff && (!best || u.to_at > best->to_at || (u.to_at == best->to_at && u.to > best->to)))
        best = &u;
    if (best) out.push_back(*best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// NDJSON

inline json to_json(const LagEntry& e) {
  json j{{"dependency", e.dependency},
         {"version", e.resolved.render()},
         {"resolvedAt", format_rfc3339(e.resolved_at)},
         {"outOfDate", e.out_of_date()}};
  j["newestEligibleAt"] = e.newest_eligible_at ? json(format_rfc3339(*e.newest_eligible_at)) : json(nullptr);
  j["outOfDateDays"] = e.out_of_date_days ? json(*e.out_of_date_days) : json(nullptr);
  return j;
}

inline json to_json(const LagSummary& s) {
  json j{{"dependencies", s.dependencies}, {"outOfDate", s.out_of_date}, {"percentOutOfDate", s.percent_out_of_date}};
  j["meanOutOfDateDays"] = s.mean_out_of_date_days ? json(*s.mean_out_of_date_days) : json(nullptr);
  return j;
}

inline json to_json(const FlowOutcome& f) {
  json j{{"upstream", miner::to_json(f.upstream)},
         {"downstream", f.downstream},
         {"category", to_string(f.category)},
         {"attributionUncertain", f.attribution_uncertain},
         {"intervening", f.intervening}};
  j["daysToUnblock"] = f.days_to_unblock ? json(*f.days_to_unblock) : json(nullptr);
  return j;
}

}  // namespace npmhist::analysis

#pragma once

// Flat, time-filtered dependency resolution.
//
// This is an approximation of what npm would install, kept deliberately
// simple: every dependency edge independently picks the highest release that
// satisfies its constraint among the versions published at or before asOf.
// There is no cross-edge unification and no hoisting, so a package may appear
// at several versions. Every graph is tagged resolverKind = "flat-approx".
// Studies that need npm's real behaviour should drive npm through the proxy.

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "npmhist/semver.hpp"
#include "npmhist/store.hpp"
#include "npmhist/time.hpp"

namespace npmhist::resolver {

using nlohmann::json;
using semver::Constraint;
using semver::Version;

inline constexpr std::string_view kResolverKind = "flat-approx";

enum class UnsatisfiableReason { NoMatchingVersion, NonIntervalConstraint };

class UnsatisfiableDependency : public std::runtime_error {
 public:
  UnsatisfiableDependency(std::string name, std::string constraint, Timestamp as_of,
                          std::vector<Version> available, UnsatisfiableReason reason)
      : std::runtime_error(make_message(name, constraint, as_of, available, reason)),
        name_(std::move(name)),
        constraint_(std::move(constraint)),
        as_of_(as_of),
        available_(std::move(available)),
        reason_(reason) {}

  const std::string& name() const noexcept { return name_; }
  const std::string& constraint() const noexcept { return constraint_; }
  Timestamp as_of() const noexcept { return as_of_; }
  const std::vector<Version>& available() const noexcept { return available_; }
  UnsatisfiableReason reason() const noexcept { return reason_; }

 private:
  static std::string make_message(const std::string& name, const std::string& constraint,
                                  Timestamp as_of, const std::vector<Version>& available,
                                  UnsatisfiableReason reason) {
    std::string msg = "no version of " + name + " satisfies \"" + constraint + "\" as of " +
                      format_rfc3339(as_of);
    if (reason == UnsatisfiableReason::NonIntervalConstraint) msg += " (not a version range)";
    msg += "; available:";
    if (available.empty()) msg += " none";
    for (const auto& v : available) msg += " " + v.render();
    return msg;
  }

  std::string name_;
  std::string constraint_;
  Timestamp as_of_;
  std::vector<Version> available_;
  UnsatisfiableReason reason_;
};

struct NodeKey {
  std::string package;
  Version version;

  friend bool operator<(const NodeKey& a, const NodeKey& b) {
    if (a.package != b.package) return a.package < b.package;
    return semver::compare(a.version, b.version) < 0;
  }
  friend bool operator==(const NodeKey& a, const NodeKey& b) {
    return a.package == b.package && semver::compare(a.version, b.version) == 0;
  }
};

struct Node {
  NodeKey key;
  Timestamp published_at;
};

struct Edge {
  std::optional<NodeKey> from;  // nullopt for the root manifest
  std::string dependency;
  Constraint constraint;
  NodeKey to;
};

struct ResolvedGraph {
  Timestamp as_of;
  std::string root;  // manifest reference, e.g. "pkg@1.2.0" or a file path
  std::map<NodeKey, Node> nodes;
  std::vector<Edge> edges;  // discovery order

  std::string_view resolver_kind() const { return kResolverKind; }

  std::vector<const Node*> nodes_of(const std::string& package) const {
    std::vector<const Node*> out;
    for (auto it = nodes.lower_bound(NodeKey{package, Version{}}); it != nodes.end() && it->first.package == package; ++it)
      out.push_back(&it->second);
    return out;
  }

  bool contains_package(const std::string& package) const { return !nodes_of(package).empty(); }
};

struct Options {
  /// Skip edges whose constraint is not a version range instead of failing.
  bool skip_non_interval = false;
};

/// Highest live release of `package` satisfying `c` among versions published
/// at or before `as_of`.
inline std::optional<store::VersionRecord> select_version(const store::Snapshot& snapshot,
                                                          const std::string& package,
                                                          const Constraint& c, Timestamp as_of) {
  std::optional<store::VersionRecord> best;
  for (const auto& r : snapshot.entry(package).records) {
    if (r.deleted || r.published_at > as_of || r.version.is_prerelease()) continue;
    if (!semver::satisfies(r.version, c)) continue;
    if (!best || semver::compare(r.version, best->version) > 0) best = r;
  }
  return best;
}

/// Breadth-first; edges of each node are visited in dependency-name order.
inline ResolvedGraph resolve(const std::map<std::string, Constraint>& root_deps, Timestamp as_of,
                             const store::Snapshot& snapshot, std::string root = "root",
                             Options options = {}) {
  ResolvedGraph g{as_of, std::move(root), {}, {}};
  std::deque<std::pair<std::optional<NodeKey>, const std::map<std::string, Constraint>*>> queue;
  // Dependency maps of discovered nodes, kept alive for the queue.
  std::map<NodeKey, std::map<std::string, Constraint>> deps_of;
  queue.emplace_back(std::nullopt, &root_deps);

  while (!queue.empty()) {
    auto [from, deps] = queue.front();
    queue.pop_front();
    for (const auto& [name, constraint] : *deps) {
      auto available = [&] {
        std::vector<Version> vs;
        if (!snapshot.contains(name)) return vs;
        for (const auto& r : snapshot.history_as_of(name, as_of).records) vs.push_back(r.version);
        std::sort(vs.begin(), vs.end());
        return vs;
      };
      // URL, tag and path dependencies need not exist in the registry at all.
      if (!constraint.interval_backed()) {
        if (options.skip_non_interval) continue;
        throw UnsatisfiableDependency(name, constraint.raw, as_of, available(),
                                      UnsatisfiableReason::NonIntervalConstraint);
      }
      if (!snapshot.contains(name)) throw store::UnknownPackage(name);
      auto chosen = select_version(snapshot, name, constraint, as_of);
      if (!chosen)
        throw UnsatisfiableDependency(name, constraint.raw, as_of, available(),
                                      UnsatisfiableReason::NoMatchingVersion);
      NodeKey key{name, chosen->version};
      g.edges.push_back(Edge{from, name, constraint, key});
      if (g.nodes.count(key)) continue;  // already expanded (closes cycles)
      g.nodes.emplace(key, Node{key, chosen->published_at});
      auto& stored = deps_of[key] = chosen->dependencies;
      queue.emplace_back(key, &stored);
    }
  }
  return g;
}

/// Checks the graph invariants; returns a list of
/// violations (empty when the graph is well formed).
inline std::vector<std::string> validate(const ResolvedGraph& g) {
  std::vector<std::string> problems;
  for (const auto& e : g.edges) {
    if (!g.nodes.count(e.to)) problems.push_back("edge to missing node " + e.to.package);
    if (!semver::satisfies(e.to.version, e.constraint))
      problems.push_back(e.to.package + "@" + e.to.version.render() + " does not satisfy " + e.constraint.raw);
    if (e.from && !g.nodes.count(*e.from)) problems.push_back("edge from missing node " + e.from->package);
  }
  for (const auto& [key, node] : g.nodes)
    if (node.published_at > g.as_of)
      problems.push_back(key.package + "@" + key.version.render() + " published after asOf");
  std::set<NodeKey> reached;
  std::deque<std::optional<NodeKey>> frontier{std::nullopt};
  while (!frontier.empty()) {
    auto cur = frontier.front();
    frontier.pop_front();
    for (const auto& e : g.edges) {
      if (e.from.has_value() != cur.has_value()) continue;
      if (cur && !(*e.from == *cur)) continue;
      if (reached.insert(e.to).second) frontier.push_back(e.to);
    }
  }
  for (const auto& [key, _] : g.nodes)
    if (!reached.count(key)) problems.push_back(key.package + " unreachable from root");
  return problems;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string node_id(const NodeKey& k) { return k.package + "@" + k.version.render(); }

/// One header line, then nodes in key order, then edges in discovery order.
inline std::vector<json> to_ndjson(const ResolvedGraph& g) {
  std::vector<json> lines;
  lines.push_back(json{{"type", "graph"},
                       {"asOf", format_rfc3339(g.as_of)},
                       {"root", g.root},
                       {"resolverKind", kResolverKind},
                       {"nodes", g.nodes.size()},
                       {"edges", g.edges.size()}});
  for (const auto& [key, node] : g.nodes)
    lines.push_back(json{{"type", "node"},
                         {"package", key.package},
                         {"version", key.version.render()},
                         {"publishedAt", format_rfc3339(node.published_at)}});
  for (const auto& e : g.edges)
    lines.push_back(json{{"type", "edge"},
                         {"from", e.from ? json(node_id(*e.from)) : json(nullptr)},
                         {"dependency", e.dependency},
                         {"constraint", e.constraint.raw},
                         {"to", node_id(e.to)}});
  return lines;
}

inline ResolvedGraph from_ndjson(const std::vector<json>& lines) {
  ResolvedGraph g{};
  std::map<std::string, NodeKey> by_id;
  for (const auto& l : lines) {
    const std::string type = l.at("type").get<std::string>();
    if (type == "graph") {
      g.as_of = parse_timestamp(l.at("asOf").get<std::string>());
      g.root = l.at("root").get<std::string>();
    } else if (type == "node") {
      NodeKey k{l.at("package").get<std::string>(), semver::parse_version(l.at("version").get<std::string>())};
      by_id[node_id(k)] = k;
      g.nodes.emplace(k, Node{k, parse_timestamp(l.at("publishedAt").get<std::string>())});
    } else if (type == "edge") {
      Edge e;
      if (l.at("from").is_string()) e.from = by_id.at(l["from"].get<std::string>());
      e.dependency = l.at("dependency").get<std::string>();
      e.constraint = semver::parse_constraint(l.at("constraint").get<std::string>());
      e.to = by_id.at(l.at("to").get<std::string>());
      g.edges.push_back(std::move(e));
    }
  }
  return g;
}

/// Lockfile-like summary keyed by "name@version".
inline json lockfile(const ResolvedGraph& g) {
  json packages = json::object();
  for (const auto& [key, node] : g.nodes)
    packages[node_id(key)] = json{{"version", key.version.render()},
                                  {"publishedAt", format_rfc3339(node.published_at)},
                                  {"dependencies", json::object()}};
  json root_deps = json::object();
  for (const auto& e : g.edges) {
    if (e.from) packages[node_id(*e.from)]["dependencies"][e.dependency] = e.to.version.render();
    else root_deps[e.dependency] = e.to.version.render();
  }
  return json{{"lockfileVersion", 1},
              {"resolverKind", kResolverKind},
              {"asOf", format_rfc3339(g.as_of)},
              {"root", g.root},
              {"dependencies", std::move(root_deps)},
              {"packages", std::move(packages)}};
}

}  // namespace npmhist::resolver

#pragma once

// Brute-force reference implementations used by the property tests and the
// acceptance binary. They deliberately avoid the library's interval code.

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "npmhist/resolver.hpp"
#include "npmhist/semver.hpp"
#include "npmhist/store.hpp"
#include "support.hpp"

namespace oracle {

using npmhist::Timestamp;
using npmhist::semver::Category;
using npmhist::semver::Version;

// ---------------------------------------------------------------------------
// Constraint membership from component arithmetic.

struct SimpleConstraint {
  Category category = Category::Any;
  int parts = 3;  // how many components the text spells out
  std::uint64_t a = 0, b = 0, c = 0;
  std::string sigil;

  std::string text() const {
    if (category == Category::Any) return "*";
    std::string s = sigil + std::to_string(a);
    if (parts >= 2) s += "." + std::to_string(b);
    if (parts >= 3) s += "." + std::to_string(c);
    return s;
  }
};

inline bool admits(const SimpleConstraint& k, const Version& x) {
  if (x.is_prerelease()) return false;
  using T = std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>;
  T lo{k.a, k.parts >= 2 ? k.b : 0, k.parts >= 3 ? k.c : 0};
  T t{x.major, x.minor, x.bug};
  switch (k.category) {
    case Category::Any: return true;
    case Category::Exact: return t == lo;
    case Category::Geq: return t >= lo;
    case Category::Bug:
      if (t < lo) return false;
      return k.parts == 1 ? x.major == k.a : x.major == k.a && x.minor == k.b;
    case Category::Minor:
      if (t < lo) return false;
      if (k.a > 0 || k.parts == 1) return x.major == k.a;
      if (k.b > 0 || k.parts == 2) return x.major == 0 && x.minor == k.b;
      return t == lo;
    default: return false;
  }
}

inline SimpleConstraint random_constraint(std::mt19937_64& rng, std::uint64_t range = 3) {
  static const std::vector<std::pair<Category, std::string>> forms{
      {Category::Exact, "="}, {Category::Exact, ""}, {Category::Bug, "~"},
      {Category::Minor, "^"}, {Category::Geq, ">="}, {Category::Any, "*"}};
  auto [cat, sigil] = forms[rng() % forms.size()];
  SimpleConstraint k;
  k.category = cat;
  k.sigil = sigil;
  k.a = rng() % range;
  k.b = rng() % range;
  k.c = rng() % range;
  k.parts = cat == Category::Exact || cat == Category::Any ? 3 : 1 + static_cast<int>(rng() % 3);
  return k;
}

inline Version random_version(std::mt19937_64& rng, std::uint64_t range = 3, bool allow_pre = true) {
  Version v{rng() % range, rng() % range, rng() % range, {}, {}};
  if (allow_pre && rng() % 4 == 0) v.prerelease = {rng() % 2 ? "rc" : "beta", std::to_string(rng() % 3)};
  return v;
}

// ---------------------------------------------------------------------------
// Update mining, pair by pair.

struct MinedPair {
  std::string from, to;
  auto operator<=>(const MinedPair&) const = default;
};

struct MineResult {
  bool rejected = false;
  std::set<MinedPair> pairs;
};

inline MineResult mine(const npmhist::store::PackageHistory& h) {
  struct R {
    Version v;
    Timestamp at;
  };
  std::vector<R> rs;
  for (const auto& r : h.records)
    if (!r.deleted && !r.version.is_prerelease()) rs.push_back({r.version, r.published_at});

  MineResult out;
  // Any numerically-ordered pair inside a major that is published backwards.
  for (const auto& x : rs)
    for (const auto& y : rs)
      if (x.v.major == y.v.major && x.v < y.v && x.at > y.at) {
        out.rejected = true;
        return out;
      }

  std::set<std::uint64_t> majors;
  for (const auto& r : rs) majors.insert(r.v.major);

  for (const auto& x : rs)
    for (const auto& y : rs) {
      if (!(x.v < y.v)) continue;
      if (x.v.major == y.v.major) {
        bool between = std::any_of(rs.begin(), rs.end(), [&](const R& z) {
          return z.v.major == x.v.major && x.v < z.v && z.v < y.v;
        });
        if (!between) out.pairs.insert({x.v.render(), y.v.render()});
        continue;
      }
      // y must be in the next existing major above x's.
      auto next = majors.upper_bound(x.v.major);
      if (next == majors.end() || *next != y.v.major) continue;
      // y is the earliest of its group (ties: smallest version)...
      bool y_first = std::none_of(rs.begin(), rs.end(), [&](const R& z) {
        return z.v.major == y.v.major && (z.at < y.at || (z.at == y.at && z.v < y.v));
      });
      if (!y_first) continue;
      // ...and x the latest of its group not published after y (ties: highest).
      if (x.at > y.at) continue;
      bool x_last = std::none_of(rs.begin(), rs.end(), [&](const R& z) {
        return z.v.major == x.v.major && z.at <= y.at && (z.at > x.at || (z.at == x.at && x.v < z.v));
      });
      if (x_last) out.pairs.insert({x.v.render(), y.v.render()});
    }
  return out;
}

inline npmhist::store::PackageHistory random_history(std::mt19937_64& rng) {
  npmhist::store::PackageHistory h{"p", {}, {}};
  std::set<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>> used;
  int n = static_cast<int>(rng() % 9);  // 0..8 versions
  for (int i = 0; i < n; ++i) {
    Version v{1 + rng() % 3, rng() % 3, rng() % 3, {}, {}};
    if (rng() % 10 == 0) v.prerelease = {"rc", std::to_string(i)};
    else if (!used.insert({v.major, v.minor, v.bug}).second) continue;
    // Mostly consistent: time follows version order with some noise.
    double base = static_cast<double>(v.major * 9 + v.minor * 3 + v.bug);
    double jitter = rng() % 4 == 0 ? static_cast<double>(rng() % 20) - 10.0 : 0.0;
    if (rng() % 3 == 0) base = static_cast<double>(rng() % 27);  // majors interleaved
    h.records.push_back({"p", v, fixture::day(base + jitter), {}, std::nullopt, false});
  }
  std::sort(h.records.begin(), h.records.end(), npmhist::store::chronological_less);
  return h;
}

// ---------------------------------------------------------------------------
// Flat resolution by exhaustive per-edge enumeration and closure fixpoint.

struct Registry {
  struct Release {
    Version version;
    Timestamp at;
    std::map<std::string, SimpleConstraint> deps;
  };
  std::map<std::string, std::vector<Release>> packages;

  std::vector<nlohmann::json> documents() const {
    std::vector<nlohmann::json> docs;
    for (const auto& [name, rels] : packages) {
      fixture::Packument p(name);
      for (const auto& r : rels) {
        std::map<std::string, std::string> deps;
        for (const auto& [d, k] : r.deps) deps[d] = k.text();
        p.version(r.version.render(), r.at, deps);
      }
      docs.push_back(p.doc());
    }
    return docs;
  }
};

inline Registry random_registry(std::mt19937_64& rng) {
  Registry reg;
  int npk = 1 + static_cast<int>(rng() % 6);
  for (int i = 0; i < npk; ++i) {
    std::string name = "p" + std::to_string(i);
    auto& rels = reg.packages[name];
    int nv = 1 + static_cast<int>(rng() % 5);
    std::set<std::string> seen;
    for (int k = 0; k < nv; ++k) {
      auto v = random_version(rng, 3, true);
      if (!seen.insert(v.render()).second) continue;
      Registry::Release r{v, fixture::day(static_cast<double>(rng() % 20)), {}};
      int nd = static_cast<int>(rng() % 3);
      for (int d = 0; d < nd; ++d) r.deps["p" + std::to_string(rng() % npk)] = random_constraint(rng);
      r.deps.erase(name);  // self-edges are legal but uninteresting
      rels.push_back(std::move(r));
    }
  }
  return reg;
}

struct Resolution {
  bool unsatisfiable = false;
  std::set<std::string> nodes;                                   // "name@version"
  std::set<std::tuple<std::string, std::string, std::string>> edges;  // (from, dep, to)
};

inline Resolution resolve(const Registry& reg, const std::map<std::string, SimpleConstraint>& root, Timestamp as_of) {
  Resolution out;
  auto choose = [&](const std::string& name, const SimpleConstraint& k) -> const Registry::Release* {
    const Registry::Release* best = nullptr;
    for (const auto& r : reg.packages.at(name))
      if (r.at <= as_of && admits(k, r.version) && (!best || best->version < r.version)) best = &r;
    return best;
  };
  std::vector<std::pair<std::string, const Registry::Release*>> work;
  auto visit = [&](const std::string& from, const std::map<std::string, SimpleConstraint>& deps) {
    for (const auto& [name, k] : deps) {
      const auto* r = choose(name, k);
      if (!r) {
        out.unsatisfiable = true;
        return;
      }
      std::string id = name + "@" + r->version.render();
      out.edges.insert({from, name, id});
      if (out.nodes.insert(id).second) work.push_back({name, r});
    }
  };
  visit("", root);
  while (!out.unsatisfiable && !work.empty()) {
    auto [name, r] = work.back();
    work.pop_back();
    visit(name + "@" + r->version.render(), r->deps);
  }
  return out;
}

/// The library's graph in the oracle's shape.
inline Resolution view(const npmhist::resolver::ResolvedGraph& g) {
  Resolution out;
  for (const auto& [key, _] : g.nodes) out.nodes.insert(npmhist::resolver::node_id(key));
  for (const auto& e : g.edges)
    out.edges.insert({e.from ? npmhist::resolver::node_id(*e.from) : "", e.dependency, npmhist::resolver::node_id(e.to)});
  return out;
}

inline std::map<std::string, npmhist::semver::Constraint> parsed(const std::map<std::string, SimpleConstraint>& deps) {
  std::map<std::string, npmhist::semver::Constraint> out;
  for (const auto& [k, c] : deps) out.emplace(k, npmhist::semver::parse_constraint(c.text()));
  return out;
}

}  // namespace oracle

#include <catch_amalgamated.hpp>

#include "npmhist/miner.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace npmhist;
using namespace npmhist::miner;
using fixture::day;

namespace {

store::PackageHistory history(std::initializer_list<std::pair<const char*, double>> versions) {
  store::PackageHistory h{"p", {}, {}};
  for (const auto& [v, d] : versions) h.records.push_back({"p", semver::parse_version(v), day(d), {}, std::nullopt, false});
  std::sort(h.records.begin(), h.records.end(), store::chronological_less);
  return h;
}

std::set<oracle::MinedPair> pairs(const MiningReport& r) {
  std::set<oracle::MinedPair> out;
  for (const auto& u : r.updates) out.insert({u.from.render(), u.to.render()});
  return out;
}

store::Advisory advisory(const char* id, std::vector<semver::Interval> affected, std::vector<const char*> patched = {}) {
  store::Advisory a{id, "p", std::move(affected), {}, store::Severity::Moderate};
  for (const char* v : patched) a.patched.push_back(semver::parse_version(v));
  return a;
}

semver::Interval range(const char* lo, const char* hi) {
  semver::Interval iv;
  if (lo) iv.lower = semver::parse_version(lo);
  if (hi) iv.upper = semver::parse_version(hi);
  return iv;
}

Update update(const char* from, const char* to) {
  auto a = semver::parse_version(from), b = semver::parse_version(to);
  return Update{"p", a, b, day(0), day(1), semver::increment_type(a, b), SecurityEffect::None, UpdateKind::IntraGroup};
}

}  // namespace

TEST_CASE("backport history mines three updates", "[miner]") {
  auto r = mine_updates(history({{"1.0.0", 0}, {"2.0.0", 1}, {"1.0.1", 2}, {"2.0.1", 3}}));
  REQUIRE_FALSE(r.rejected);
  CHECK(pairs(r) == std::set<oracle::MinedPair>{{"1.0.0", "1.0.1"}, {"2.0.0", "2.0.1"}, {"1.0.0", "2.0.0"}});
  for (const auto& u : r.updates) {
    CHECK(u.from_at <= u.to_at);
    if (u.to.render() == "2.0.0") {
      CHECK(u.kind == UpdateKind::InterGroup);
      CHECK(u.increment == semver::IncrementType::Major);
    }
  }
}

TEST_CASE("mining edge cases", "[miner]") {
  auto single = mine_updates(history({{"1.0.0", 0}}));
  CHECK_FALSE(single.rejected);
  CHECK(single.updates.empty());

  auto bad = mine_updates(history({{"1.0.1", 0}, {"1.0.0", 1}}));
  CHECK(bad.rejected);
  CHECK(bad.updates.empty());
  CHECK(bad.rejection_reason.has_value());

  auto gap = mine_updates(history({{"1.0.0", 0}, {"3.0.0", 1}}));
  REQUIRE(gap.updates.size() == 1);
  CHECK(gap.updates[0].increment == semver::IncrementType::Major);
  CHECK(gap.updates[0].to.render() == "3.0.0");

  // 2.0.0 predates every 1.x release: no inter-group source.
  auto none = mine_updates(history({{"2.0.0", 0}, {"1.0.0", 1}, {"1.1.0", 2}}));
  CHECK(pairs(none) == std::set<oracle::MinedPair>{{"1.0.0", "1.1.0"}});

  auto pre = mine_updates(history({{"1.0.0", 0}, {"1.1.0-rc.1", 1}, {"1.1.0", 2}}));
  CHECK(pairs(pre) == std::set<oracle::MinedPair>{{"1.0.0", "1.1.0"}});
}

TEST_CASE("miner agrees with the pairwise oracle", "[miner][property]") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    auto h = oracle::random_history(rng);
    auto expected = oracle::mine(h);
    auto got = mine_updates(h);
    REQUIRE(got.rejected == expected.rejected);
    REQUIRE(pairs(got) == expected.pairs);
    for (const auto& u : got.updates) {
      REQUIRE(u.from < u.to);
      REQUIRE(u.from_at <= u.to_at);
      REQUIRE_FALSE(u.from.is_prerelease());
      REQUIRE_FALSE(u.to.is_prerelease());
    }
  }
}

TEST_CASE("security effect", "[miner][security]") {
  std::vector<store::Advisory> ssri{advisory("A", {range("5.2.2", "5.2.3")})};
  CHECK(classify_security_effect(update("5.2.1", "5.2.2"), ssri) == SecurityEffect::IntroducesVuln);
  CHECK(classify_security_effect(update("5.2.2", "5.2.3"), ssri) == SecurityEffect::None);

  std::vector<store::Advisory> xhr{advisory("B", {range(nullptr, "1.7.0")}, {"1.7.0"})};
  CHECK(classify_security_effect(update("1.6.0", "1.7.0"), xhr) == SecurityEffect::PatchesVuln);
  CHECK(classify_security_effect(update("1.7.0", "1.8.0"), xhr) == SecurityEffect::None);
  CHECK(classify_security_effect(update("1.0.0", "1.1.0"), {}) == SecurityEffect::None);

  // Both hold: patching wins.
  std::vector<store::Advisory> both{advisory("C", {range("1.0.0", "2.0.0")}, {}),
                                    advisory("D", {range("2.0.0", "3.0.0")}, {})};
  both[0].patched.push_back(semver::parse_version("2.0.0"));
  CHECK(classify_security_effect(update("1.5.0", "2.0.0"), both) == SecurityEffect::PatchesVuln);
}

TEST_CASE("update type distribution is per package", "[miner]") {
  MiningReport a{"a", {update("1.0.0", "1.0.1"), update("1.0.1", "1.0.2"), update("1.0.2", "2.0.0")}, false, {}};
  for (auto& u : a.updates) u.package = "a";
  MiningReport b{"b", {update("1.0.0", "2.0.0")}, false, {}};
  b.updates[0].package = "b";
  b.updates[0].security = SecurityEffect::PatchesVuln;
  MiningReport rejected{"c", {}, true, "x"};

  auto rows = update_type_distribution({a, b, rejected}, SecurityEffect::None);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].package == "a");
  CHECK(rows[0].fraction(semver::IncrementType::Bug) == Catch::Approx(2.0 / 3));
  CHECK(rows[0].fraction(semver::IncrementType::Minor) == 0.0);
  CHECK(rows[0].fraction(semver::IncrementType::Major) == Catch::Approx(1.0 / 3));

  auto all = update_type_distribution({a, b, rejected}, std::nullopt);
  REQUIRE(all.size() == 2);
  CHECK(all[1].fraction(semver::IncrementType::Major) == 1.0);
}

TEST_CASE("update JSON round trip", "[miner]") {
  auto u = update("1.2.3", "1.3.0");
  u.security = SecurityEffect::IntroducesVuln;
  u.kind = UpdateKind::InterGroup;
  auto back = update_from_json(to_json(u));
  CHECK(to_json(back) == to_json(u));
}

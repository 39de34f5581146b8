#include <catch_amalgamated.hpp>

#include <random>

#include "npmhist/store.hpp"
#include "support.hpp"

using namespace npmhist;
using namespace npmhist::store;
using fixture::day;
using fixture::Packument;
using nlohmann::json;

namespace {

std::vector<std::string> versions_of(const PackageHistory& h) {
  std::vector<std::string> out;
  for (const auto& r : h.records) out.push_back(r.version.render());
  return out;
}

json osv(const std::string& id, const std::string& package, json events, json extra = json::object()) {
  json doc{{"id", id},
           {"affected",
            {{{"package", {{"ecosystem", "npm"}, {"name", package}}},
              {"ranges", {{{"type", "SEMVER"}, {"events", std::move(events)}}}}}}}};
  doc.update(extra);
  return doc;
}

}  // namespace

TEST_CASE("ingest builds a chronological history", "[store]") {
  Store s;
  json doc = Packument("a")
                 .version("1.0.0", day(0))
                 .version("2.0.0", day(1), {{"b", "^1.0.0"}})
                 .version("1.0.1", day(2))
                 .tag("latest", "2.0.0");
  auto rep = s.ingest_changes(std::vector<json>{doc}, fixture::far_future());
  CHECK(rep.clean());
  CHECK(rep.inserted == 3);
  auto snap = s.snapshot();
  auto h = snap->history("a");
  CHECK(versions_of(h) == std::vector<std::string>{"1.0.0", "2.0.0", "1.0.1"});
  CHECK(h.records[1].dependencies.at("b").category == semver::Category::Minor);
  CHECK(h.records[1].tarball.has_value());
  REQUIRE(h.dist_tag_events.size() == 1);
  CHECK(h.dist_tag_events[0].version.render() == "2.0.0");
}

TEST_CASE("history_as_of is inclusive at the boundary", "[store]") {
  auto s = fixture::make_store({Packument("a").version("1.0.0", day(0)).version("1.1.0", day(5))});
  auto snap = s->snapshot();
  CHECK(versions_of(snap->history_as_of("a", day(5))) == std::vector<std::string>{"1.0.0", "1.1.0"});
  CHECK(versions_of(snap->history_as_of("a", day(5) - Millis{1})) == std::vector<std::string>{"1.0.0"});
  CHECK(snap->history_as_of("a", day(-1)).records.empty());
  CHECK_THROWS_AS(snap->history_as_of("missing", day(0)), UnknownPackage);
}

TEST_CASE("re-ingesting the same document changes nothing", "[store]") {
  fixture::TempDir dir;
  Store s(dir.path());
  json doc = Packument("a").version("1.0.0", day(0)).version("1.0.1", day(1)).tag("latest", "1.0.1");
  s.ingest_changes(std::vector<json>{doc}, fixture::far_future());
  auto size = std::filesystem::file_size(s.log_path());
  auto rep = s.ingest_changes(std::vector<json>{doc}, fixture::far_future());
  CHECK(rep.inserted == 0);
  CHECK(rep.updated == 0);
  CHECK(rep.tag_events == 0);
  CHECK(rep.unchanged == 2);
  CHECK(std::filesystem::file_size(s.log_path()) == size);
  CHECK(s.snapshot()->version_count() == 2);
}

TEST_CASE("bad versions are skipped and reported, bad documents rejected", "[store]") {
  Store s;
  json doc = Packument("a").version("1.0.0", day(0)).version("1.0.1", day(1));
  doc["versions"]["not-a-version"] = json::object();
  doc["time"]["not-a-version"] = fixture::iso(day(1));
  doc["versions"]["1.0.2"] = json::object();  // no time entry
  doc["versions"]["1.0.3"] = json::object();
  doc["time"]["1.0.3"] = "yesterday";
  doc["versions"]["1.0.4"] = json::object();
  doc["time"]["1.0.4"] = "2200-01-01T00:00:00Z";  // after the ingestion clock
  std::vector<json> feed{doc, json{{"versions", json::object()}}, json{{"name", "b"}}, json("garbage")};
  auto rep = s.ingest_changes(feed, fixture::far_future());
  CHECK(rep.inserted == 2);
  CHECK(rep.skipped_versions == 4);
  CHECK(rep.rejected_documents == 3);
  CHECK(s.snapshot()->version_count() == 2);
  CHECK_FALSE(s.snapshot()->contains("b"));
}

TEST_CASE("unpublished versions become tombstones", "[store]") {
  Store s;
  Packument p("a");
  p.version("1.0.0", day(0)).version("1.1.0", day(1));
  s.ingest_changes(std::vector<json>{p.doc()}, fixture::far_future());

  json later = p.doc();
  later["versions"].erase("1.1.0");  // the time entry stays, as on the registry
  auto rep = s.ingest_changes(std::vector<json>{later}, fixture::far_future());
  CHECK(rep.tombstoned == 1);
  auto snap = s.snapshot();
  CHECK(versions_of(snap->history("a")) == std::vector<std::string>{"1.0.0"});
  const auto* dead = snap->entry("a").find(semver::parse_version("1.1.0"));
  REQUIRE(dead);
  CHECK(dead->deleted);

  // A version present only in the time map is recorded as deleted from the start.
  Store t;
  json only_time = Packument("b").version("1.0.0", day(0));
  only_time["time"]["0.9.0"] = fixture::iso(day(-3));
  t.ingest_changes(std::vector<json>{only_time}, fixture::far_future());
  CHECK(t.snapshot()->entry("b").find(semver::parse_version("0.9.0"))->deleted);
  CHECK(versions_of(t.snapshot()->history("b")) == std::vector<std::string>{"1.0.0"});
}

TEST_CASE("_changes feed rows, deletions and seq tracking", "[store]") {
  Store s;
  json feed{{"results",
             {{{"seq", 1}, {"id", "a"}, {"doc", Packument("a").version("1.0.0", day(0)).doc()}},
              {{"seq", 2}, {"id", "b"}, {"doc", Packument("b").version("2.0.0", day(1)).doc()}}}},
            {"last_seq", 2}};
  s.ingest_changes(std::vector<json>{feed}, fixture::far_future());
  CHECK(s.snapshot()->package_count() == 2);
  CHECK(s.snapshot()->last_seq() == json(2));

  json removal{{"seq", 3}, {"id", "a"}, {"deleted", true}};
  auto rep = s.ingest_changes(std::vector<json>{removal}, fixture::far_future());
  CHECK(rep.tombstoned == 1);
  CHECK(s.snapshot()->history("a").records.empty());
  CHECK(s.snapshot()->last_seq() == json(3));
}

TEST_CASE("snapshots are isolated from later ingestion", "[store]") {
  Store s;
  s.ingest_changes(std::vector<json>{Packument("a").version("1.0.0", day(0)).doc()}, fixture::far_future());
  auto old = s.snapshot();
  s.ingest_changes(std::vector<json>{Packument("a").version("1.0.0", day(0)).version("1.0.1", day(1)).doc()},
                   fixture::far_future());
  CHECK(old->history("a").records.size() == 1);
  CHECK(s.snapshot()->history("a").records.size() == 2);
}

TEST_CASE("persistent store survives reopen and a torn tail", "[store]") {
  fixture::TempDir dir;
  json a = Packument("a").version("1.0.0", day(0)).version("1.1.0", day(2), {{"b", "~1.0.0"}}).tag("latest", "1.1.0");
  json b = Packument("b").version("1.0.0", day(1));
  {
    Store s(dir.path());
    s.ingest_changes(std::vector<json>{a, b}, fixture::far_future());
    s.ingest_advisories(std::vector<json>{osv("GHSA-1", "b", json::array({{{"introduced", "0"}}, {{"fixed", "1.0.1"}}}))});
  }
  std::string log_before = fixture::read_file(dir / "records.ndjson");
  {
    std::ofstream out(dir / "records.ndjson", std::ios::app | std::ios::binary);
    out << R"({"kind":"version","name":"c","ver)";  // crash mid-write
  }
  Store s(dir.path());
  CHECK(s.recovered_bytes() > 0);
  CHECK(fixture::read_file(dir / "records.ndjson") == log_before);
  auto snap = s.snapshot();
  CHECK(snap->package_count() == 2);
  CHECK(snap->version_count() == 3);
  CHECK(snap->history("a").records[1].dependencies.at("b").raw == "~1.0.0");
  CHECK(snap->history("a").dist_tag_events.size() == 1);
  CHECK(snap->advisory_count() == 1);

  auto from_log = s.read_package_from_log("a");
  REQUIRE(from_log);
  REQUIRE(from_log->records.size() == 2);
  CHECK(from_log->records[1].same_content(snap->entry("a").records[1]));
  CHECK_FALSE(s.read_package_from_log("zzz").has_value());
}

TEST_CASE("history_as_of is monotone in time", "[store][property]") {
  std::mt19937_64 rng(19);
  for (int round = 0; round < 50; ++round) {
    Packument p("p");
    int n = 1 + static_cast<int>(rng() % 8);
    for (int i = 0; i < n; ++i) p.version("1.0." + std::to_string(i), day(static_cast<double>(rng() % 30)));
    auto s = fixture::make_store({p.doc()});
    auto snap = s->snapshot();
    for (int k = 0; k < 20; ++k) {
      auto t1 = day(static_cast<double>(rng() % 32) - 1), t2 = day(static_cast<double>(rng() % 32) - 1);
      if (t2 < t1) std::swap(t1, t2);
      auto early = versions_of(snap->history_as_of("p", t1));
      auto late = versions_of(snap->history_as_of("p", t2));
      for (const auto& v : early) REQUIRE(std::find(late.begin(), late.end(), v) != late.end());
    }
  }
}

TEST_CASE("OSV advisories", "[store][advisory]") {
  Store s;
  std::vector<json> docs{
      osv("GHSA-ssri", "ssri", json::array({{{"introduced", "5.2.2"}}, {{"fixed", "5.2.3"}}}),
          {{"database_specific", {{"severity", "HIGH"}}}}),
      osv("GHSA-xhr", "xmlhttprequest", json::array({{{"introduced", "0"}}, {{"fixed", "1.7.0"}}})),
      osv("GHSA-last", "c", json::array({{{"introduced", "1.0.0"}}, {{"last_affected", "1.2.0"}}}),
          {{"severity", {{{"type", "CVSS_V3"}, {"score", "9.8"}}}}}),
      json{{"id", "PYSEC-1"}, {"affected", {{{"package", {{"ecosystem", "PyPI"}, {"name", "django"}}}}}}},
      json{{"affected", json::array()}}};
  auto rep = s.ingest_advisories(docs);
  CHECK(rep.ingested == 3);
  CHECK(rep.skipped == 2);

  auto snap = s.snapshot();
  auto ssri = snap->advisories_for("ssri");
  REQUIRE(ssri.size() == 1);
  CHECK(ssri[0].severity == Severity::High);
  CHECK(ssri[0].affects(semver::parse_version("5.2.2")));
  CHECK_FALSE(ssri[0].affects(semver::parse_version("5.2.3")));
  CHECK_FALSE(ssri[0].affects(semver::parse_version("5.2.1")));
  CHECK(ssri[0].minimal_affected()->render() == "5.2.2");

  auto xhr = snap->advisories_for("xmlhttprequest");
  REQUIRE(xhr.size() == 1);
  CHECK(xhr[0].severity == Severity::Moderate);
  CHECK(xhr[0].patched.size() == 1);
  CHECK(xhr[0].patched[0].render() == "1.7.0");
  CHECK(xhr[0].minimal_affected()->render() == "0.0.0");

  auto c = snap->advisories_for("c");
  REQUIRE(c.size() == 1);
  CHECK(c[0].severity == Severity::Critical);
  CHECK(c[0].affects(semver::parse_version("1.2.0")));
  CHECK_FALSE(c[0].affects(semver::parse_version("1.2.1")));

  // Same documents again: nothing new.
  auto again = s.ingest_advisories(docs);
  CHECK(again.ingested == 0);
  CHECK(again.unchanged == 3);
}

TEST_CASE("JSON record round trip", "[store]") {
  VersionRecord r{"a", semver::parse_version("1.2.3-rc.1"), day(3), {}, std::string("https://x/a.tgz"), false};
  r.dependencies.emplace("b", semver::parse_constraint("^1 || 2.x"));
  auto back = version_record_from_json(to_json(r));
  CHECK(back.same_content(r));
  CHECK(back.dependencies.at("b").raw == "^1 || 2.x");
}

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <future>
#include <thread>

#include "npmhist/proxy.hpp"
#include "proxy_fixture.hpp"
#include "support.hpp"

using namespace npmhist;
using namespace npmhist::proxy;
using fixture::day;
using fixture::Packument;
using nlohmann::json;

namespace {

std::set<std::string> version_keys(const json& body) {
  std::set<std::string> out;
  for (const auto& [k, _] : body["versions"].items()) out.insert(k);
  return out;
}

// Runs a ProxyServer on an ephemeral port for the lifetime of the object.
class RunningProxy {
 public:
  explicit RunningProxy(std::shared_ptr<ProxyCore> core) : server_(std::move(core)) {
    port_ = server_.bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~RunningProxy() {
    server_.stop();
    thread_.join();
  }
  int port() const { return port_; }

 private:
  ProxyServer server_;
  int port_ = -1;
  std::thread thread_;
};

// A stand-in upstream registry that counts requests.
class FakeUpstream {
 public:
  explicit FakeUpstream(std::map<std::string, json> docs) : docs_(std::move(docs)) {
    server_.Get(".*", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      std::string name = req.path.substr(1);
      if (name == "broken") {
        res.status = 500;
        return;
      }
      auto it = docs_.find(name);
      if (it == docs_.end()) {
        res.status = 404;
        res.set_content(R"({"error":"Not found"})", "application/json");
        return;
      }
      res.set_content(it->second.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeUpstream() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int requests() const { return requests_.load(); }

 private:
  std::map<std::string, json> docs_;
  httplib::Server server_;
  int port_ = -1;
  std::thread thread_;
  std::atomic<int> requests_{0};
};

}  // namespace

TEST_CASE("golden bodies at seven probe timestamps", "[proxy][golden]") {
  auto store = fixture::proxy_store();
  ProxyCore core(std::make_shared<LocalSource>(*store));
  const bool update = std::getenv("NPMHIST_UPDATE_GOLDEN") != nullptr;
  for (const auto& probe : fixture::proxy_probes()) {
    INFO(probe.as_of);
    auto r = core.handle("GET", "/t/" + probe.as_of + "/timely");
    CHECK(r.status == probe.status);
    if (update) fixture::write_file(probe.golden, r.body + "\n");
    CHECK(r.body + "\n" == fixture::read_file(probe.golden));
  }
}

TEST_CASE("filtered packument content", "[proxy]") {
  auto store = fixture::proxy_store();
  ProxyCore core(std::make_shared<LocalSource>(*store));

  auto early = json::parse(core.handle("GET", "/t/2020-01-16T12:00:00Z/timely").body);
  CHECK(version_keys(early) == std::set<std::string>{"1.0.0", "1.1.0", "2.0.0-beta.1"});
  CHECK(early["dist-tags"]["latest"] == "1.1.0");  // prereleases never become latest
  CHECK_FALSE(early["dist-tags"].contains("next"));
  CHECK(early["time"]["modified"] == "2020-01-16T12:00:00.000Z");
  CHECK(early["time"]["created"] == "2020-01-01T00:00:00.000Z");
  CHECK_FALSE(early["time"].contains("1.2.0"));

  auto late = json::parse(core.handle("GET", "/t/2021-01-01T00:00:00Z/timely").body);
  CHECK(late["dist-tags"]["latest"] == "2.0.0");
  CHECK(late["dist-tags"]["next"] == "2.0.0-beta.1");
}

TEST_CASE("request routing and errors", "[proxy]") {
  auto store = fixture::make_store({Packument("@scope/pkg").version("1.0.0", day(0))});
  ProxyCore core(std::make_shared<LocalSource>(*store));
  CHECK(core.handle("GET", "/t/2021-01-01T00:00:00Z/@scope%2fpkg").status == 200);
  CHECK(core.handle("GET", "/t/2021-01-01T00:00:00Z/@scope/pkg").status == 200);
  CHECK(core.handle("GET", "/t/yesterday/@scope/pkg").status == 400);
  CHECK(core.handle("GET", "/t/2021-01-01T00:00:00Z/missing").status == 404);
  CHECK(core.handle("GET", "/t/2021-01-01T00:00:00Z/@scope/pkg/1.0.0").status == 404);
  CHECK(core.handle("GET", "/scope").status == 404);
  CHECK(core.handle("POST", "/t/2021-01-01T00:00:00Z/x").status == 405);
  auto health = core.handle("GET", "/-/health");
  CHECK(health.status == 200);
  CHECK(json::parse(health.body)["packages"] == 1);
}

TEST_CASE("unavailable store answers 503", "[proxy]") {
  fixture::TempDir dir;
  store::Store s(dir.path());
  s.ingest_changes(std::vector<json>{Packument("a").version("1.0.0", day(0)).doc()}, fixture::far_future());
  ProxyCore core(std::make_shared<LocalSource>(s));
  CHECK(core.handle("GET", "/t/2021-01-01T00:00:00Z/a").status == 200);
  std::filesystem::remove(s.log_path());
  CHECK(core.handle("GET", "/t/2021-01-01T00:00:00Z/a").status == 503);
  CHECK(core.handle("GET", "/-/health").status == 503);
}

TEST_CASE("served versions equal the store's history and grow with asOf", "[proxy][property]") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 1000; ++i) {
    Packument p("p");
    int n = 1 + static_cast<int>(rng() % 6);
    for (int k = 0; k < n; ++k) {
      std::string v = std::to_string(rng() % 3) + "." + std::to_string(rng() % 3) + "." + std::to_string(k);
      if (rng() % 5 == 0) v += "-rc." + std::to_string(k);
      p.version(v, fixture::at_ms(static_cast<std::int64_t>(rng() % (10 * 86400000LL))));
    }
    auto store = fixture::make_store({p.doc()});
    auto snap = store->snapshot();
    auto t1 = fixture::at_ms(static_cast<std::int64_t>(rng() % (11 * 86400000LL)) - 86400000LL);
    auto t2 = t1 + Millis{static_cast<std::int64_t>(rng() % (3 * 86400000LL))};
    auto full = render_packument(snap->entry("p"));
    auto a = filter_packument(full, t1, snap->entry("p").tags);
    auto b = filter_packument(full, t2, snap->entry("p").tags);

    std::set<std::string> expected;
    for (const auto& r : snap->history_as_of("p", t1).records) expected.insert(r.version.render());
    std::set<std::string> got = a ? version_keys(*a) : std::set<std::string>{};
    REQUIRE(got == expected);
    std::set<std::string> later = b ? version_keys(*b) : std::set<std::string>{};
    REQUIRE(std::includes(later.begin(), later.end(), got.begin(), got.end()));
    if (a) {
      for (const auto& [k, t] : (*a)["time"].items()) REQUIRE(parse_timestamp(t.get<std::string>()) <= t1);
      if ((*a)["dist-tags"].contains("latest"))
        REQUIRE(got.count((*a)["dist-tags"]["latest"].get<std::string>()) == 1);
    }
  }
}

TEST_CASE("HTTP server gzips when asked", "[proxy][http]") {
  auto store = fixture::proxy_store();
  auto core = std::make_shared<ProxyCore>(std::make_shared<LocalSource>(*store));
  RunningProxy proxy(core);
  REQUIRE(proxy.port() > 0);

  httplib::Client client("127.0.0.1", proxy.port());
  client.set_decompress(false);
  auto res = client.Get("/t/2020-01-25T00:00:00Z/timely", {{"Accept-Encoding", "gzip"}});
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Encoding") == "gzip");

  httplib::Client plain("127.0.0.1", proxy.port());
  auto body = plain.Get("/t/2020-01-25T00:00:00Z/timely");
  REQUIRE(body);
  CHECK(body->body == core->handle("GET", "/t/2020-01-25T00:00:00Z/timely").body);
  CHECK(plain.Post("/t/2020-01-25T00:00:00Z/timely", "{}", "application/json")->status == 405);
}

TEST_CASE("upstream mode filters, caches and deduplicates", "[proxy][upstream]") {
  json doc = json::parse(fixture::read_file(fixture::proxy_dir() / "packument.json"));
  doc["description"] = "passes through untouched";
  FakeUpstream upstream({{"timely", doc}});
  fixture::TempDir cache;
  auto source = std::make_shared<UpstreamSource>(upstream.url(), cache.path());
  ProxyCore core(source);

  // Concurrent misses share one upstream request.
  std::vector<std::future<Response>> calls;
  for (int i = 0; i < 8; ++i)
    calls.push_back(std::async(std::launch::async, [&] { return core.handle("GET", "/t/2020-01-12T00:00:00Z/timely"); }));
  for (auto& c : calls) {
    auto r = c.get();
    REQUIRE(r.status == 200);
    auto body = json::parse(r.body);
    CHECK(version_keys(body) == std::set<std::string>{"1.0.0", "1.1.0"});
    CHECK(body["description"] == "passes through untouched");
  }
  CHECK(upstream.requests() == 1);
  CHECK(std::filesystem::exists(cache / "timely.json"));

  CHECK(core.handle("GET", "/t/2020-01-12T00:00:00Z/nope").status == 404);
  CHECK(core.handle("GET", "/t/2020-01-12T00:00:00Z/broken").status == 502);

  // A fresh source reads the disk cache instead of the network.
  auto again = std::make_shared<UpstreamSource>(upstream.url(), cache.path());
  int before = upstream.requests();
  CHECK(ProxyCore(again).handle("GET", "/t/2021-01-01T00:00:00Z/timely").status == 200);
  CHECK(upstream.requests() == before);
}

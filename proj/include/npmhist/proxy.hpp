#pragma once

// Time-traveling registry proxy.
//
// GET /t/{asOf}/{package} returns the package's packument as it would have
// looked at asOf: versions published later are removed, the time map is
// filtered the same way, time.modified becomes the newest retained publish
// time and dist-tags.latest is recomputed as the highest retained release.
// Pointing an unmodified npm client at http://host/t/{asOf}/ makes it resolve
// against that historical registry state.
//
// The request logic (ProxyCore) is independent of the HTTP server so that it
// can be exercised without sockets; ProxyServer binds it to cpp-httplib.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "npmhist/semver.hpp"
#include "npmhist/store.hpp"
#include "npmhist/time.hpp"

namespace npmhist::proxy {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Packument rendering and filtering

/// Full packument for the live records of a store entry.
inline json render_packument(const store::PackageEntry& entry) {
  json versions = json::object();
  json time = json::object();
  std::optional<semver::Version> newest_release;
  for (const auto& r : entry.records) {
    if (r.deleted) continue;
    const std::string v = r.version.render();
    json deps = json::object();
    for (const auto& [name, c] : r.dependencies) deps[name] = c.raw;
    json doc{{"name", entry.name}, {"version", v}, {"dependencies", std::move(deps)}};
    if (r.tarball) doc["dist"] = json{{"tarball", *r.tarball}};
    versions[v] = std::move(doc);
    time[v] = format_rfc3339(r.published_at);
    if (!r.version.is_prerelease() && (!newest_release || r.version > *newest_release))
      newest_release = r.version;
  }
  if (entry.created) time["created"] = format_rfc3339(*entry.created);
  if (entry.modified) time["modified"] = format_rfc3339(*entry.modified);
  json tags = json::object();
  for (const auto& ev : entry.tags) tags[ev.tag] = ev.version.render();
  if (!tags.contains("latest") && newest_release) tags["latest"] = newest_release->render();
  return json{{"_id", entry.name},
              {"name", entry.name},
              {"versions", std::move(versions)},
              {"time", std::move(time)},
              {"dist-tags", std::move(tags)}};
}

/// Applies the as-of view to a packument. Returns nullopt when no version
/// survives. Fields other than versions, time and dist-tags pass through.
inline std::optional<json> filter_packument(const json& full, Timestamp as_of,
                                            const std::vector<store::DistTagEvent>& tag_events = {}) {
  if (!full.is_object() || !full.contains("versions") || !full["versions"].is_object()) return std::nullopt;
  const json empty = json::object();
  const json& time = full.contains("time") && full["time"].is_object() ? full["time"] : empty;

  json out = full;
  json versions = json::object();
  json new_time = json::object();
  std::optional<Timestamp> newest;
  std::optional<semver::Version> latest;
  std::map<std::string, semver::Version> retained;

  for (const auto& [key, doc] : full["versions"].items()) {
    if (!time.contains(key) || !time[key].is_string()) continue;
    auto published = try_parse_timestamp(time[key].get<std::string>());
    if (!published || *published > as_of) continue;
    versions[key] = doc;
    new_time[key] = time[key];
    if (!newest || *published > *newest) newest = *published;
    if (auto v = semver::try_parse_version(key)) {
      retained.emplace(key, *v);
      if (!v->is_prerelease() && (!latest || *v > *latest)) latest = *v;
    }
  }
  if (versions.empty()) return std::nullopt;

  if (time.contains("created")) new_time["created"] = time["created"];
  new_time["modified"] = format_rfc3339(*newest);

  json tags = json::object();
  std::map<std::string, const store::DistTagEvent*> last_event;
  for (const auto& ev : tag_events)
    if (ev.at <= as_of && (!last_event.count(ev.tag) || last_event[ev.tag]->at <= ev.at))
      last_event[ev.tag] = &ev;
  for (const auto& [tag, ev] : last_event) {
    if (tag == "latest") continue;
    for (const auto& [key, v] : retained)
      if (v.identical(ev->version)) tags[tag] = key;
  }
  if (latest) {
    for (const auto& [key, v] : retained)
      if (semver::compare(v, *latest) == 0 && v.identical(*latest)) tags["latest"] = key;
  }

  out["versions"] = std::move(versions);
  out["time"] = std::move(new_time);
  out["dist-tags"] = std::move(tags);
  return out;
}

// ---------------------------------------------------------------------------
// Backing sources

struct FetchResult {
  enum class Status { Found, NotFound, UpstreamError, Unavailable } status = Status::NotFound;
  json packument;
  std::vector<store::DistTagEvent> tag_events;
  std::string error;
};

class PackumentSource {
 public:
  virtual ~PackumentSource() = default;
  virtual FetchResult fetch(const std::string& package) = 0;
  virtual json status() const = 0;
  virtual bool healthy() const = 0;
};

class LocalSource : public PackumentSource {
 public:
  explicit LocalSource(const store::Store& store) : store_(store) {}

  FetchResult fetch(const std::string& package) override {
    if (!store_.healthy()) return {FetchResult::Status::Unavailable, {}, {}, "store unavailable"};
    auto snap = store_.snapshot();
    if (!snap->contains(package)) return {};
    const auto& entry = snap->entry(package);
    return {FetchResult::Status::Found, render_packument(entry), entry.tags, {}};
  }

  json status() const override {
    auto snap = store_.snapshot();
    auto newest = snap->newest_record_time();
    return json{{"mode", "local"},
                {"packages", snap->package_count()},
                {"versions", snap->version_count()},
                {"newestRecord", newest ? json(format_rfc3339(*newest)) : json(nullptr)}};
  }

  bool healthy() const override { return store_.healthy(); }

 private:
  const store::Store& store_;
};

/// Registry path segment for a package name ("@scope/x" -> "@scope%2fx").
inline std::string encode_package_name(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (c == '/') out += "%2f";
    else out += c;
  }
  return out;
}

/// Fetches full packuments from an upstream registry and caches them in
/// memory and, optionally, on disk. Concurrent misses on one package share a
/// single upstream request.
class UpstreamSource : public PackumentSource {
 public:
  UpstreamSource(std::string upstream_url, std::optional<std::filesystem::path> cache_dir = std::nullopt)
      : cache_dir_(std::move(cache_dir)) {
    // Split "scheme://host[:port]/prefix" into client base and path prefix.
    auto scheme_end = upstream_url.find("://");
    auto path_start = upstream_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    base_ = upstream_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : upstream_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (cache_dir_) std::filesystem::create_directories(*cache_dir_);
  }

  FetchResult fetch(const std::string& package) override {
    std::shared_future<FetchResult> pending;
    bool leader = false;
    std::promise<FetchResult> promise;
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(package); it != cache_.end()) {
        ++hits_;
        return {FetchResult::Status::Found, it->second, {}, {}};
      }
      if (auto it = inflight_.find(package); it != inflight_.end()) {
        pending = it->second;
      } else {
        ++misses_;
        leader = true;
        pending = promise.get_future().share();
        inflight_[package] = pending;
      }
    }
    if (!leader) return pending.get();

    FetchResult result = load(package);
    {
      std::lock_guard lock(mutex_);
      if (result.status == FetchResult::Status::Found) cache_[package] = result.packument;
      inflight_.erase(package);
    }
    promise.set_value(result);
    return result;
  }

  json status() const override {
    std::lock_guard lock(mutex_);
    return json{{"mode", "upstream"},
                {"upstream", base_ + prefix_},
                {"cacheEntries", cache_.size()},
                {"cacheHits", hits_},
                {"cacheMisses", misses_},
                {"upstreamFetches", upstream_fetches_.load()}};
  }

  bool healthy() const override { return true; }

  std::size_t upstream_fetches() const { return upstream_fetches_.load(); }

 private:
  std::optional<std::filesystem::path> cache_file(const std::string& package) const {
    if (!cache_dir_) return std::nullopt;
    return *cache_dir_ / (encode_package_name(package) + ".json");
  }

  FetchResult load(const std::string& package) {
    if (auto file = cache_file(package); file && std::filesystem::exists(*file)) {
      std::ifstream in(*file);
      json doc = json::parse(in, nullptr, false);
      if (!doc.is_discarded()) return {FetchResult::Status::Found, std::move(doc), {}, {}};
    }
    ++upstream_fetches_;
    httplib::Client client(base_);
    client.set_connection_timeout(10);
    client.set_read_timeout(60);
    client.set_follow_location(true);
    auto res = client.Get(prefix_ + "/" + encode_package_name(package),
                          httplib::Headers{{"Accept", "application/json"}});
    if (!res) return {FetchResult::Status::UpstreamError, {}, {}, httplib::to_string(res.error())};
    if (res->status == 404) return {};
    if (res->status != 200)
      return {FetchResult::Status::UpstreamError, {}, {}, "upstream status " + std::to_string(res->status)};
    json doc = json::parse(res->body, nullptr, false);
    if (doc.is_discarded()) return {FetchResult::Status::UpstreamError, {}, {}, "upstream sent invalid JSON"};
    if (auto file = cache_file(package)) {
      auto tmp = *file;
      tmp += ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << res->body;
      }
      std::filesystem::rename(tmp, *file);
    }
    return {FetchResult::Status::Found, std::move(doc), {}, {}};
  }

  std::string base_;
  std::string prefix_;
  std::optional<std::filesystem::path> cache_dir_;
  mutable std::mutex mutex_;
  std::map<std::string, json> cache_;
  std::map<std::string, std::shared_future<FetchResult>> inflight_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
  std::atomic<std::size_t> upstream_fetches_{0};
};

// ---------------------------------------------------------------------------
// Request handling

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline Response json_response(int status, const json& body) { return Response{status, body.dump(), "application/json"}; }

inline Response error_response(int status, const std::string& message) {
  return json_response(status, json{{"error", message}});
}

struct TimeScopedRequest {
  Timestamp as_of;
  std::string package;
};

inline std::string percent_decode(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
        std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
      out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

/// Parses "/t/{asOf}/{package}". Returns an error Response for malformed
/// requests and nullopt/nullopt for paths outside the /t/ namespace.
inline std::pair<std::optional<TimeScopedRequest>, std::optional<Response>> parse_request_path(
    const std::string& path) {
  constexpr std::string_view prefix = "/t/";
  if (path.rfind(prefix, 0) != 0) return {std::nullopt, std::nullopt};
  std::string rest = path.substr(prefix.size());
  auto slash = rest.find('/');
  if (slash == std::string::npos) return {std::nullopt, error_response(404, "Not found")};
  auto as_of = try_parse_timestamp(percent_decode(rest.substr(0, slash)));
  if (!as_of) return {std::nullopt, error_response(400, "malformed timestamp")};
  std::string name = percent_decode(rest.substr(slash + 1));
  while (!name.empty() && name.back() == '/') name.pop_back();
  if (name.empty()) return {std::nullopt, error_response(404, "Not found")};
  // Scoped names keep one '/', unscoped names none; anything deeper is a
  // per-version endpoint we do not serve.
  auto slashes = std::count(name.begin(), name.end(), '/');
  if ((name.front() == '@' && slashes != 1) || (name.front() != '@' && slashes != 0))
    return {std::nullopt, error_response(404, "Not found")};
  return {TimeScopedRequest{*as_of, name}, std::nullopt};
}

class ProxyCore {
 public:
  explicit ProxyCore(std::shared_ptr<PackumentSource> source) : source_(std::move(source)) {}

  Response serve_packument(const TimeScopedRequest& req) {
    FetchResult fetched = source_->fetch(req.package);
    switch (fetched.status) {
      case FetchResult::Status::NotFound: return error_response(404, "Not found");
      case FetchResult::Status::Unavailable: return error_response(503, fetched.error);
      case FetchResult::Status::UpstreamError: return error_response(502, "upstream failure: " + fetched.error);
      case FetchResult::Status::Found: break;
    }
    auto filtered = filter_packument(fetched.packument, req.as_of, fetched.tag_events);
    if (!filtered) return error_response(404, "Not found");
    return json_response(200, *filtered);
  }

  Response serve_health() const {
    json status = source_->status();
    status["status"] = source_->healthy() ? "ok" : "unavailable";
    return json_response(source_->healthy() ? 200 : 503, status);
  }

  Response handle(const std::string& method, const std::string& path) {
    if (method != "GET" && method != "HEAD") return error_response(405, "method not allowed");
    if (path == "/-/health" || path == "/-/meta" || path == "/-/ping") return serve_health();
    auto [req, error] = parse_request_path(path);
    if (error) return *error;
    if (!req) return error_response(404, "Not found");
    return serve_packument(*req);
  }

 private:
  std::shared_ptr<PackumentSource> source_;
};

/// cpp-httplib front end. Responses are gzip-encoded when the client asks.
class ProxyServer {
 public:
  explicit ProxyServer(std::shared_ptr<ProxyCore> core) : core_(std::move(core)) {
    auto handler = [core = core_](const httplib::Request& req, httplib::Response& res) {
      Response r = core->handle(req.method, req.path);
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server_.Get(".*", handler);
    server_.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 405; });
    server_.Post(".*", [](const httplib::Request&, httplib::Response& res) {
      res.status = 405;
      res.set_content(R"({"error":"method not allowed"})", "application/json");
    });
    server_.Put(".*", [](const httplib::Request&, httplib::Response& res) {
      res.status = 405;
      res.set_content(R"({"error":"method not allowed"})", "application/json");
    });
  }

  /// Binds to an ephemeral port when port == 0; returns the bound port or -1.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    return server_.bind_to_port(host, port) ? port : -1;
  }

  /// Blocks until stop().
  bool listen_after_bind() { return server_.listen_after_bind(); }

  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  std::shared_ptr<ProxyCore> core_;
  httplib::Server server_;
};

}  // namespace npmhist::proxy

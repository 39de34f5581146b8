#pragma once

// Fixture helpers shared by the unit tests and the acceptance binary.

#include <zlib.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmhist/store.hpp"
#include "npmhist/time.hpp"

namespace fixture {

using nlohmann::json;
using npmhist::Timestamp;

// Day 0 is 2020-01-01T00:00:00Z.
inline Timestamp day(double d) {
  return npmhist::from_unix_millis(1577836800000LL + static_cast<std::int64_t>(d * 86400000.0));
}
inline Timestamp at_ms(std::int64_t ms) { return npmhist::from_unix_millis(1577836800000LL + ms); }
inline std::string iso(Timestamp t) { return npmhist::format_rfc3339(t); }

/// Builds a registry packument document.
class Packument {
 public:
  explicit Packument(std::string name) : name_(std::move(name)) {
    doc_ = {{"name", name_}, {"versions", json::object()}, {"time", json::object()}};
  }

  Packument& version(const std::string& v, Timestamp at, const std::map<std::string, std::string>& deps = {}) {
    json d = json::object();
    for (const auto& [k, c] : deps) d[k] = c;
    doc_["versions"][v] = {{"name", name_},
                           {"version", v},
                           {"dependencies", d},
                           {"dist", {{"tarball", "https://registry.example/" + name_ + "/-/" + name_ + "-" + v + ".tgz"}}}};
    doc_["time"][v] = iso(at);
    if (!doc_["time"].contains("created") || npmhist::parse_timestamp(doc_["time"]["created"].get<std::string>()) > at)
      doc_["time"]["created"] = iso(at);
    return *this;
  }

  Packument& tag(const std::string& tag, const std::string& v) {
    doc_["dist-tags"][tag] = v;
    return *this;
  }

  Packument& modified(Timestamp at) {
    doc_["time"]["modified"] = iso(at);
    return *this;
  }

  const json& doc() const { return doc_; }
  operator json() const { return doc_; }

 private:
  std::string name_;
  json doc_;
};

inline Timestamp far_future() { return npmhist::parse_timestamp("2100-01-01T00:00:00Z"); }

/// In-memory store holding the given packuments.
inline std::unique_ptr<npmhist::store::Store> make_store(const std::vector<json>& docs) {
  auto s = std::make_unique<npmhist::store::Store>();
  auto rep = s->ingest_changes(docs, far_future());
  if (!rep.issues.empty()) throw std::runtime_error("fixture ingest issue: " + rep.issues.front().reason);
  return s;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "npmhist") {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Minimal ustar writer + gzip, enough to build npm-style tarballs.

namespace detail {

inline void tar_entry(std::string& out, const std::string& path, const std::string& content, char type) {
  std::array<char, 512> h{};
  std::snprintf(h.data(), 100, "%s", path.c_str());
  std::snprintf(h.data() + 100, 8, "%07o", 0644);
  std::snprintf(h.data() + 108, 8, "%07o", 0);
  std::snprintf(h.data() + 116, 8, "%07o", 0);
  std::snprintf(h.data() + 124, 12, "%011llo", static_cast<unsigned long long>(content.size()));
  std::snprintf(h.data() + 136, 12, "%011o", 0);
  h[156] = type;
  std::memcpy(h.data() + 257, "ustar", 6);
  std::memcpy(h.data() + 263, "00", 2);
  std::memset(h.data() + 148, ' ', 8);
  unsigned sum = 0;
  for (char c : h) sum += static_cast<unsigned char>(c);
  std::snprintf(h.data() + 148, 8, "%06o", sum);
  h[155] = ' ';
  out.append(h.data(), h.size());
  out += content;
  out.append((512 - content.size() % 512) % 512, '\0');
}

}  // namespace detail

// Paths over 99 bytes get a GNU ././@LongLink record.
inline std::string tar(const std::vector<std::pair<std::string, std::string>>& files) {
  std::string out;
  for (const auto& [path, content] : files) {
    if (path.size() > 99) detail::tar_entry(out, "././@LongLink", path + '\0', 'L');
    detail::tar_entry(out, path, content, '0');
  }
  out.append(1024, '\0');
  return out;
}

inline std::string gzip(const std::string& data) {
  z_stream zs{};
  deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY);
  std::string out(deflateBound(&zs, data.size()) + 32, '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

/// npm-style .tgz with every entry under package/.
inline std::string npm_tarball(const std::vector<std::pair<std::string, std::string>>& files) {
  std::vector<std::pair<std::string, std::string>> prefixed;
  for (const auto& [p, c] : files) prefixed.emplace_back("package/" + p, c);
  return gzip(tar(prefixed));
}

}  // namespace fixture

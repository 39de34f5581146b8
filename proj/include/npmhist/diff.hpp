#pragma once

// Update content classification from two package tarballs.
//
// Archives are walked as streams (gzip inflate feeding a tar reader) and each
// regular file is reduced to a SHA-256 digest, so memory stays bounded by the
// largest package.json rather than the archive. Only package.json content is
// retained, to compare dependency fields structurally.

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmhist/semver.hpp"

namespace npmhist::diff {

using nlohmann::json;

class CorruptArchive : public std::runtime_error {
 public:
  CorruptArchive(std::string path, std::string reason)
      : std::runtime_error("corrupt archive " + path + ": " + reason), path_(std::move(path)), reason_(std::move(reason)) {}
  const std::string& path() const noexcept { return path_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string path_;
  std::string reason_;
};

enum class ChangeClass { CodeOnly, DepsOnly, Both, Neither };

inline constexpr std::array<ChangeClass, 4> kChangeClasses{ChangeClass::CodeOnly, ChangeClass::DepsOnly,
                                                           ChangeClass::Both, ChangeClass::Neither};

inline std::string_view to_string(ChangeClass c) {
  switch (c) {
    case ChangeClass::CodeOnly: return "code-only";
    case ChangeClass::DepsOnly: return "deps-only";
    case ChangeClass::Both: return "both";
    case ChangeClass::Neither: return "neither";
  }
  return "?";
}

inline std::optional<ChangeClass> change_class_from_string(std::string_view s) {
  for (auto c : kChangeClasses)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

inline ChangeClass class_of(bool code_changed, bool deps_changed) {
  if (code_changed && deps_changed) return ChangeClass::Both;
  if (code_changed) return ChangeClass::CodeOnly;
  if (deps_changed) return ChangeClass::DepsOnly;
  return ChangeClass::Neither;
}

enum class FileChange { Added, Removed, Modified };

inline std::string_view to_string(FileChange c) {
  switch (c) {
    case FileChange::Added: return "added";
    case FileChange::Removed: return "removed";
    case FileChange::Modified: return "modified";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Streaming primitives

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("SHA-256 initialisation failed");
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out += kHex[digest[i] >> 4];
      out += kHex[digest[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

/// Pulls decompressed bytes out of a gzip stream (concatenated members
/// allowed).
class GzipReader {
 public:
  GzipReader(std::istream& in, std::string label) : in_(in), label_(std::move(label)) {
    std::memset(&strm_, 0, sizeof strm_);
    if (inflateInit2(&strm_, 16 + MAX_WBITS) != Z_OK) throw CorruptArchive(label_, "zlib initialisation failed");
  }
  ~GzipReader() { inflateEnd(&strm_); }
  GzipReader(const GzipReader&) = delete;
  GzipReader& operator=(const GzipReader&) = delete;

  /// Reads up to n bytes; returns the count, 0 at the end of the stream.
  std::size_t read(char* out, std::size_t n) {
    std::size_t produced = 0;
    while (produced < n && !finished_) {
      if (strm_.avail_in == 0) {
        in_.read(input_.data(), static_cast<std::streamsize>(input_.size()));
        strm_.next_in = reinterpret_cast<Bytef*>(input_.data());
        strm_.avail_in = static_cast<uInt>(in_.gcount());
        if (strm_.avail_in == 0) {
          if (!seen_member_end_) throw CorruptArchive(label_, "truncated gzip stream");
          finished_ = true;
          break;
        }
      }
      strm_.next_out = reinterpret_cast<Bytef*>(out + produced);
      strm_.avail_out = static_cast<uInt>(n - produced);
      int rc = inflate(&strm_, Z_NO_FLUSH);
      produced = n - strm_.avail_out;
      seen_member_end_ = false;
      if (rc == Z_STREAM_END) {
        seen_member_end_ = true;
        if (inflateReset(&strm_) != Z_OK) throw CorruptArchive(label_, "zlib reset failed");
      } else if (rc != Z_OK && rc != Z_BUF_ERROR) {
        throw CorruptArchive(label_, std::string("gzip: ") + (strm_.msg ? strm_.msg : "inflate error"));
      } else if (rc == Z_BUF_ERROR && strm_.avail_in != 0 && strm_.avail_out != 0) {
        throw CorruptArchive(label_, "gzip: no progress");
      }
    }
    return produced;
  }

  /// Reads exactly n bytes or throws.
  void read_exact(char* out, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      std::size_t r = read(out + got, n - got);
      if (r == 0) throw CorruptArchive(label_, "unexpected end of archive");
      got += r;
    }
  }

 private:
  std::istream& in_;
  std::string label_;
  z_stream strm_;
  std::array<char, 64 * 1024> input_{};
  bool finished_ = false;
  bool seen_member_end_ = false;
};

struct ArchiveEntry {
  std::string digest;  // SHA-256 hex of the content
  std::uint64_t size = 0;
};

struct ArchiveContents {
  std::map<std::string, ArchiveEntry> files;  // normalized path -> entry
  std::optional<std::string> manifest;        // package.json bytes, when present
};

namespace detail {

inline std::uint64_t parse_octal(const char* field, std::size_t len, bool& ok) {
  // GNU base-256 for large values.
  if (len > 0 && (static_cast<unsigned char>(field[0]) & 0x80)) {
    std::uint64_t v = static_cast<unsigned char>(field[0]) & 0x7f;
    for (std::size_t i = 1; i < len; ++i) v = (v << 8) | static_cast<unsigned char>(field[i]);
    return v;
  }
  std::uint64_t v = 0;
  std::size_t i = 0;
  while (i < len && (field[i] == ' ' || field[i] == '\0')) ++i;
  for (; i < len && field[i] >= '0' && field[i] <= '7'; ++i) v = v * 8 + static_cast<unsigned>(field[i] - '0');
  for (; i < len; ++i)
    if (field[i] != ' ' && field[i] != '\0') ok = false;
  return v;
}

inline std::string field_string(const char* field, std::size_t len) {
  return std::string(field, strnlen(field, len));
}

inline bool checksum_ok(const std::array<char, 512>& h) {
  bool ok = true;
  std::uint64_t stored = parse_octal(h.data() + 148, 8, ok);
  if (!ok) return false;
  std::uint64_t unsigned_sum = 0;
  std::int64_t signed_sum = 0;
  for (std::size_t i = 0; i < 512; ++i) {
    char c = (i >= 148 && i < 156) ? ' ' : h[i];
    unsigned_sum += static_cast<unsigned char>(c);
    signed_sum += static_cast<signed char>(c);
  }
  return stored == unsigned_sum || static_cast<std::int64_t>(stored) == signed_sum;
}

// Values of "path" records in a pax extended header.
inline std::optional<std::string> pax_path(const std::string& data) {
  std::size_t pos = 0;
  std::optional<std::string> path;
  while (pos < data.size()) {
    std::size_t space = data.find(' ', pos);
    if (space == std::string::npos) break;
    std::size_t len = std::stoul(data.substr(pos, space - pos));
    if (len == 0 || pos + len > data.size()) break;
    std::string record = data.substr(space + 1, len - (space - pos) - 2);
    auto eq = record.find('=');
    if (eq != std::string::npos && record.substr(0, eq) == "path") path = record.substr(eq + 1);
    pos += len;
  }
  return path;
}

inline std::string clean_path(std::string p) {
  while (p.rfind("./", 0) == 0) p.erase(0, 2);
  while (!p.empty() && p.front() == '/') p.erase(0, 1);
  return p;
}

}  // namespace detail

/// Walks a gzip-compressed tar archive, hashing every regular file. Paths
/// lose the archive's single top-level directory ("package/" for registry
/// tarballs).
inline ArchiveContents read_archive(std::istream& in, const std::string& label) {
  GzipReader gz(in, label);
  std::map<std::string, ArchiveEntry> raw;
  std::map<std::string, std::string> manifests;  // raw path -> bytes for */package.json
  std::optional<std::string> long_name;
  std::array<char, 512> header{};
  std::vector<char> buffer(64 * 1024);
  bool saw_header = false;

  while (true) {
    std::size_t got = 0;
    while (got < 512) {
      std::size_t r = gz.read(header.data() + got, 512 - got);
      if (r == 0) break;
      got += r;
    }
    if (got == 0) {
      if (!saw_header) throw CorruptArchive(label, "empty archive");
      break;  // end without the two zero blocks; npm accepts this
    }
    if (got < 512) throw CorruptArchive(label, "truncated tar header");
    if (std::all_of(header.begin(), header.end(), [](char c) { return c == 0; })) break;
    if (!detail::checksum_ok(header)) throw CorruptArchive(label, "tar header checksum mismatch");
    saw_header = true;

    bool ok = true;
    std::uint64_t size = detail::parse_octal(header.data() + 124, 12, ok);
    if (!ok) throw CorruptArchive(label, "bad size field");
    char type = header[156];
    std::string name = detail::field_string(header.data(), 100);
    if (std::memcmp(header.data() + 257, "ustar", 5) == 0) {
      std::string prefix = detail::field_string(header.data() + 345, 155);
      if (!prefix.empty()) name = prefix + "/" + name;
    }
    std::uint64_t padded = (size + 511) / 512 * 512;

    bool regular = type == '0' || type == '\0' || type == '7';
    bool metadata = type == 'L' || type == 'x';
    if (metadata) {
      std::string data(size, '\0');
      gz.read_exact(data.data(), size);
      std::vector<char> pad(padded - size);
      gz.read_exact(pad.data(), pad.size());
      if (type == 'L') long_name = detail::field_string(data.data(), data.size());
      else if (auto p = detail::pax_path(data)) long_name = *p;
      continue;
    }
    if (long_name) {
      name = *long_name;
      long_name.reset();
    }
    if (!regular) {
      // Directories, links and devices carry no content of their own.
      std::uint64_t remaining = padded;
      while (remaining > 0) {
        std::size_t chunk = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, buffer.size()));
        gz.read_exact(buffer.data(), chunk);
        remaining -= chunk;
      }
      continue;
    }

    name = detail::clean_path(name);
    bool is_manifest_candidate = name.size() >= 12 && name.substr(name.size() - 12) == "package.json" &&
                                 std::count(name.begin(), name.end(), '/') <= 1;
    Sha256 hash;
    std::string manifest_bytes;
    std::uint64_t remaining = size;
    while (remaining > 0) {
      std::size_t chunk = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, buffer.size()));
      gz.read_exact(buffer.data(), chunk);
      hash.update(buffer.data(), chunk);
      if (is_manifest_candidate) manifest_bytes.append(buffer.data(), chunk);
      remaining -= chunk;
    }
    if (padded > size) gz.read_exact(buffer.data(), static_cast<std::size_t>(padded - size));
    raw[name] = ArchiveEntry{hash.hex(), size};
    if (is_manifest_candidate) manifests[name] = std::move(manifest_bytes);
  }

  // Strip a top-level directory shared by every file.
  std::optional<std::string> top;
  bool shared = !raw.empty();
  for (const auto& [path, _] : raw) {
    auto slash = path.find('/');
    if (slash == std::string::npos) {
      shared = false;
      break;
    }
    std::string first = path.substr(0, slash + 1);
    if (!top) top = first;
    else if (*top != first) {
      shared = false;
      break;
    }
  }
  ArchiveContents out;
  for (auto& [path, entry] : raw) {
    std::string key = shared ? path.substr(top->size()) : path;
    if (key == "package.json") {
      auto it = manifests.find(path);
      if (it != manifests.end()) out.manifest = it->second;
    }
    out.files[key] = std::move(entry);
  }
  return out;
}

inline ArchiveContents read_archive_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptArchive(path, "cannot open file");
  return read_archive(in, path);
}

inline ArchiveContents read_archive_bytes(const std::string& bytes, const std::string& label = "<memory>") {
  std::istringstream in(bytes);
  return read_archive(in, label);
}

// ---------------------------------------------------------------------------
// Classification

inline constexpr std::array<std::string_view, 4> kDependencyFields{"dependencies", "devDependencies",
                                                                   "peerDependencies", "optionalDependencies"};

inline bool is_code_path(std::string_view path) {
  static constexpr std::array<std::string_view, 4> exts{".js", ".ts", ".jsx", ".tsx"};
  auto dot = path.rfind('.');
  auto slash = path.rfind('/');
  if (dot == std::string_view::npos || (slash != std::string_view::npos && dot < slash)) return false;
  std::string ext(path.substr(dot));
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return std::find(exts.begin(), exts.end(), ext) != exts.end();
}

/// The dependency-bearing fields of a manifest; missing fields and
/// unparseable manifests read as empty objects.
inline json dependency_fields(const std::optional<std::string>& manifest) {
  json out = json::object();
  json parsed = manifest ? json::parse(*manifest, nullptr, false) : json(nullptr);
  for (auto field : kDependencyFields) {
    std::string key(field);
    if (parsed.is_object() && parsed.contains(key) && !parsed[key].is_null()) out[key] = parsed[key];
    else out[key] = json::object();
  }
  return out;
}

struct ChangedFile {
  std::string path;
  FileChange change;
};

struct ContentDiff {
  ChangeClass change_class = ChangeClass::Neither;
  bool code_changed = false;
  bool deps_changed = false;
  std::vector<ChangedFile> files;  // sorted by path
};

inline ContentDiff classify_contents(const ArchiveContents& from, const ArchiveContents& to) {
  ContentDiff d;
  auto a = from.files.begin();
  auto b = to.files.begin();
  auto note = [&](const std::string& path, FileChange c) {
    d.files.push_back({path, c});
    if (is_code_path(path)) d.code_changed = true;
  };
  while (a != from.files.end() || b != to.files.end()) {
    if (b == to.files.end() || (a != from.files.end() && a->first < b->first)) {
      note(a->first, FileChange::Removed);
      ++a;
    } else if (a == from.files.end() || b->first < a->first) {
      note(b->first, FileChange::Added);
      ++b;
    } else {
      if (a->second.digest != b->second.digest) note(a->first, FileChange::Modified);
      ++a;
      ++b;
    }
  }
  d.deps_changed = dependency_fields(from.manifest) != dependency_fields(to.manifest);
  d.change_class = class_of(d.code_changed, d.deps_changed);
  return d;
}

inline ContentDiff classify_update_contents(const std::string& from_tarball, const std::string& to_tarball) {
  return classify_contents(read_archive_file(from_tarball), read_archive_file(to_tarball));
}

inline json to_json(const ContentDiff& d) {
  json files = json::array();
  for (const auto& f : d.files) files.push_back(json{{"path", f.path}, {"change", to_string(f.change)}});
  return json{{"class", to_string(d.change_class)},
              {"codeChanged", d.code_changed},
              {"depsChanged", d.deps_changed},
              {"files", std::move(files)}};
}

// ---------------------------------------------------------------------------
// Per-package content distribution

struct ClassifiedUpdate {
  std::string package;
  semver::IncrementType increment;
  ChangeClass change_class;
};

struct ContentShare {
  std::string package;
  semver::IncrementType increment;
  std::size_t total = 0;
  std::map<ChangeClass, std::size_t> counts;

  double percent(ChangeClass c) const {
    auto it = counts.find(c);
    return total == 0 || it == counts.end() ? 0.0 : 100.0 * static_cast<double>(it->second) / total;
  }
};

/// One row per (package, increment type) that has updates; never pooled
/// across packages.
inline std::vector<ContentShare> content_distribution(const std::vector<ClassifiedUpdate>& updates) {
  std::map<std::pair<std::string, semver::IncrementType>, ContentShare> rows;
  for (const auto& u : updates) {
    auto& row = rows[{u.package, u.increment}];
    row.package = u.package;
    row.increment = u.increment;
    ++row.total;
    ++row.counts[u.change_class];
  }
  std::vector<ContentShare> out;
  for (auto& [_, row] : rows) out.push_back(std::move(row));
  return out;
}

}  // namespace npmhist::diff

#pragma once

// Package metadata and advisory store.
//
// On disk a store is a directory holding an append-only NDJSON log
// (records.ndjson) and an index (index.json) that maps each package to the
// byte offsets of its log lines. The log is the source of truth; the index
// is rebuilt whenever it disagrees with the log length.
//
// In memory the store publishes immutable Snapshots. A single writer
// (ingest_*) builds the next snapshot copy-on-write per package and swaps it
// in when the batch is complete, so readers always see a whole batch.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "npmhist/semver.hpp"
#include "npmhist/time.hpp"

namespace npmhist::store {

using nlohmann::json;

class UnknownPackage : public std::runtime_error {
 public:
  explicit UnknownPackage(const std::string& name)
      : std::runtime_error("unknown package: " + name), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class StoreUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VersionRecord {
  std::string package;
  semver::Version version;
  Timestamp published_at;
  std::map<std::string, semver::Constraint> dependencies;
  std::optional<std::string> tarball;
  bool deleted = false;

  bool same_content(const VersionRecord& o) const {
    if (package != o.package || !version.identical(o.version) ||
        published_at != o.published_at || tarball != o.tarball || deleted != o.deleted ||
        dependencies.size() != o.dependencies.size())
      return false;
    return std::equal(dependencies.begin(), dependencies.end(), o.dependencies.begin(),
                      [](const auto& a, const auto& b) {
                        return a.first == b.first && a.second.raw == b.second.raw;
                      });
  }
};

/// Publication order; ties broken by version order.
inline bool chronological_less(const VersionRecord& a, const VersionRecord& b) {
  if (a.published_at != b.published_at) return a.published_at < b.published_at;
  return semver::compare(a.version, b.version) < 0;
}

struct DistTagEvent {
  std::string tag;
  semver::Version version;
  Timestamp at;
};

struct PackageHistory {
  std::string package;
  std::vector<VersionRecord> records;  // chronological
  std::vector<DistTagEvent> dist_tag_events;
};

enum class Severity { Low, Moderate, High, Critical };

inline std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::Low: return "low";
    case Severity::Moderate: return "moderate";
    case Severity::High: return "high";
    case Severity::Critical: return "critical";
  }
  return "?";
}

inline std::optional<Severity> severity_from_string(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "low") return Severity::Low;
  if (s == "moderate" || s == "medium") return Severity::Moderate;
  if (s == "high") return Severity::High;
  if (s == "critical") return Severity::Critical;
  return std::nullopt;
}

struct Advisory {
  std::string id;
  std::string package;
  std::vector<semver::Interval> affected;
  std::vector<semver::Version> patched;  // sorted ascending
  Severity severity = Severity::Moderate;

  bool affects(const semver::Version& v) const {
    return std::any_of(affected.begin(), affected.end(),
                       [&](const semver::Interval& iv) { return iv.contains(v); });
  }

  /// Semver-minimal version inside the affected range (0.0.0 when the range
  /// is unbounded below).
  std::optional<semver::Version> minimal_affected() const {
    std::optional<semver::Version> best;
    for (const auto& iv : affected) {
      if (iv.empty()) continue;
      semver::Version lo = iv.lower.value_or(semver::Version{});
      if (!best || semver::compare(lo, *best) < 0) best = lo;
    }
    return best;
  }
};

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const semver::Interval& iv) {
  return json{{"lower", iv.lower ? json(iv.lower->render()) : json(nullptr)},
              {"upper", iv.upper ? json(iv.upper->render()) : json(nullptr)}};
}

inline semver::Interval interval_from_json(const json& j) {
  semver::Interval iv;
  if (j.contains("lower") && j["lower"].is_string())
    iv.lower = semver::parse_version(j["lower"].get<std::string>());
  if (j.contains("upper") && j["upper"].is_string())
    iv.upper = semver::parse_version(j["upper"].get<std::string>());
  return iv;
}

inline json to_json(const VersionRecord& r) {
  json deps = json::object();
  for (const auto& [name, c] : r.dependencies) deps[name] = c.raw;
  json j{{"kind", "version"},
         {"name", r.package},
         {"version", r.version.render()},
         {"publishedAt", format_rfc3339(r.published_at)},
         {"dependencies", std::move(deps)},
         {"deleted", r.deleted}};
  if (r.tarball) j["tarball"] = *r.tarball;
  return j;
}

inline VersionRecord version_record_from_json(const json& j) {
  VersionRecord r;
  r.package = j.at("name").get<std::string>();
  r.version = semver::parse_version(j.at("version").get<std::string>());
  r.published_at = parse_timestamp(j.at("publishedAt").get<std::string>());
  for (const auto& [name, c] : j.at("dependencies").items())
    r.dependencies.emplace(name, semver::parse_constraint(c.get<std::string>()));
  if (j.contains("tarball")) r.tarball = j["tarball"].get<std::string>();
  r.deleted = j.value("deleted", false);
  return r;
}

inline json to_json(const Advisory& a) {
  json affected = json::array();
  for (const auto& iv : a.affected) affected.push_back(to_json(iv));
  json patched = json::array();
  for (const auto& v : a.patched) patched.push_back(v.render());
  return json{{"kind", "advisory"},         {"id", a.id},
              {"name", a.package},          {"affected", std::move(affected)},
              {"patched", std::move(patched)}, {"severity", to_string(a.severity)}};
}

inline Advisory advisory_from_json(const json& j) {
  Advisory a;
  a.id = j.at("id").get<std::string>();
  a.package = j.at("name").get<std::string>();
  for (const auto& iv : j.at("affected")) a.affected.push_back(interval_from_json(iv));
  for (const auto& v : j.at("patched")) a.patched.push_back(semver::parse_version(v.get<std::string>()));
  a.severity = severity_from_string(j.at("severity").get<std::string>()).value_or(Severity::Moderate);
  return a;
}

inline bool same_advisory(const Advisory& a, const Advisory& b) { return to_json(a) == to_json(b); }

// ---------------------------------------------------------------------------
// Snapshots

struct PackageEntry {
  std::string name;
  std::vector<VersionRecord> records;  // chronological, tombstones included
  std::vector<DistTagEvent> tags;      // in arrival order
  std::optional<Timestamp> created;
  std::optional<Timestamp> modified;

  const VersionRecord* find(const semver::Version& v) const {
    for (const auto& r : records)
      if (semver::compare(r.version, v) == 0) return &r;
    return nullptr;
  }
};

class Snapshot {
 public:
  bool contains(const std::string& name) const { return packages_.count(name) != 0; }

  const PackageEntry& entry(const std::string& name) const {
    auto it = packages_.find(name);
    if (it == packages_.end()) throw UnknownPackage(name);
    return *it->second;
  }

  /// Live records with published_at <= t, plus tag events at or before t.
  PackageHistory history_as_of(const std::string& name, Timestamp t) const {
    const PackageEntry& e = entry(name);
    PackageHistory h{name, {}, {}};
    for (const auto& r : e.records)
      if (!r.deleted && r.published_at <= t) h.records.push_back(r);
    for (const auto& ev : e.tags)
      if (ev.at <= t) h.dist_tag_events.push_back(ev);
    return h;
  }

  /// Every live record regardless of time.
  PackageHistory history(const std::string& name) const {
    return history_as_of(name, Timestamp::max());
  }

  std::vector<std::string> package_names() const {
    std::vector<std::string> names;
    names.reserve(packages_.size());
    for (const auto& [name, _] : packages_) names.push_back(name);
    return names;
  }

  std::size_t package_count() const { return packages_.size(); }

  std::size_t version_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : packages_) n += e->records.size();
    return n;
  }

  std::vector<Advisory> advisories_for(const std::string& name) const {
    std::vector<Advisory> out;
    auto it = advisories_.find(name);
    if (it == advisories_.end()) return out;
    for (const auto& [_, a] : it->second) out.push_back(a);
    return out;
  }

  std::size_t advisory_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : advisories_) n += m.size();
    return n;
  }

  /// Publication time of the newest live record.
  std::optional<Timestamp> newest_record_time() const {
    std::optional<Timestamp> best;
    for (const auto& [_, e] : packages_)
      for (const auto& r : e->records)
        if (!r.deleted && (!best || r.published_at > *best)) best = r.published_at;
    return best;
  }

  const std::optional<json>& last_seq() const { return last_seq_; }

 private:
  friend class Store;
  std::map<std::string, std::shared_ptr<const PackageEntry>> packages_;
  // package -> advisory id -> advisory
  std::map<std::string, std::map<std::string, Advisory>> advisories_;
  std::optional<json> last_seq_;
};

// ---------------------------------------------------------------------------
// Ingestion reports

struct IngestIssue {
  std::string document;  // package name, or "#<index>" when the name is unusable
  std::string version;   // empty for document-level problems
  std::string reason;
};

struct IngestionReport {
  std::size_t documents = 0;
  std::size_t rejected_documents = 0;
  std::size_t inserted = 0;
  std::size_t updated = 0;
  std::size_t tombstoned = 0;
  std::size_t unchanged = 0;
  std::size_t skipped_versions = 0;
  std::size_t tag_events = 0;
  std::vector<IngestIssue> issues;

  bool clean() const { return issues.empty(); }
};

struct AdvisoryReport {
  std::size_t documents = 0;
  std::size_t ingested = 0;  // new or changed advisories
  std::size_t unchanged = 0;
  std::size_t skipped = 0;
  std::vector<IngestIssue> issues;
};

/// Splits a change stream into packument documents. Accepts a CouchDB
/// _changes response ({"results": [{seq, id, doc}...]}), a single change row,
/// or a bare packument. Rows without a doc but with "deleted": true become
/// {"name": id, "time": {"unpublished": ...}} markers.
inline std::vector<json> documents_from_change(const json& value, std::optional<json>* last_seq = nullptr) {
  std::vector<json> docs;
  auto take_row = [&](const json& row) {
    if (row.is_object() && row.contains("seq") && last_seq) *last_seq = row["seq"];
    if (row.is_object() && row.contains("doc") && row["doc"].is_object()) {
      docs.push_back(row["doc"]);
    } else if (row.is_object() && row.value("deleted", false) && row.contains("id")) {
      docs.push_back(json{{"name", row["id"]}, {"time", {{"unpublished", {{"deleted", true}}}}}});
    } else if (row.is_object() && row.contains("id") && !row.contains("name")) {
      // A change row without include_docs carries nothing to ingest.
    } else {
      docs.push_back(row);
    }
  };
  if (value.is_object() && value.contains("results") && value["results"].is_array()) {
    for (const auto& row : value["results"]) take_row(row);
    if (value.contains("last_seq") && last_seq) *last_seq = value["last_seq"];
  } else {
    take_row(value);
  }
  return docs;
}

// ---------------------------------------------------------------------------

class Store {
 public:
  /// In-memory store with no persistence.
  Store() : current_(std::make_shared<Snapshot>()) {}

  /// Opens (creating if needed) a persistent store directory.
  explicit Store(std::filesystem::path dir) : dir_(std::move(dir)), current_(std::make_shared<Snapshot>()) {
    std::error_code ec;
    std::filesystem::create_directories(*dir_, ec);
    if (ec) throw StoreUnavailable("cannot create store directory " + dir_->string() + ": " + ec.message());
    replay();
  }

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return current_;
  }

  bool persistent() const { return dir_.has_value(); }

  /// False when the backing log has disappeared from disk.
  bool healthy() const { return !dir_ || std::filesystem::exists(log_path()); }

  std::filesystem::path log_path() const { return *dir_ / "records.ndjson"; }
  std::filesystem::path index_path() const { return *dir_ / "index.json"; }

  /// Bytes dropped from an incomplete trailing log line when the store was opened.
  std::size_t recovered_bytes() const { return recovered_bytes_; }

  IngestionReport ingest_changes(std::span<const json> feed, Timestamp now = wall_clock_now()) {
    std::lock_guard writer(writer_mutex_);
    Batch batch(*snapshot());
    IngestionReport report;
    std::size_t index = 0;
    for (const json& change : feed) {
      std::optional<json> seq;
      for (const json& doc : documents_from_change(change, &seq)) {
        ingest_packument(batch, doc, index, now, report);
      }
      if (seq) batch.set_seq(*seq);
      ++index;
    }
    commit(batch);
    return report;
  }

  AdvisoryReport ingest_advisories(std::span<const json> documents) {
    std::lock_guard writer(writer_mutex_);
    Batch batch(*snapshot());
    AdvisoryReport report;
    std::size_t index = 0;
    for (const json& doc : documents) ingest_osv(batch, doc, index++, report);
    commit(batch);
    return report;
  }

  /// Reads one package straight from the log through the index, bypassing
  /// the in-memory snapshot.
  std::optional<PackageEntry> read_package_from_log(const std::string& name) const {
    if (!dir_) return std::nullopt;
    std::ifstream idx(index_path());
    if (!idx) return std::nullopt;
    json index = json::parse(idx, nullptr, false);
    if (index.is_discarded() || !index.contains("packages") || !index["packages"].contains(name))
      return std::nullopt;
    std::ifstream log(log_path(), std::ios::binary);
    PackageEntry entry;
    entry.name = name;
    for (const auto& off : index["packages"][name]) {
      log.seekg(off.get<std::streamoff>());
      std::string line;
      std::getline(log, line);
      apply_line(entry, json::parse(line));
    }
    return entry;
  }

  static Timestamp wall_clock_now() {
    return std::chrono::time_point_cast<Millis>(std::chrono::system_clock::now());
  }

 private:
  // Pending state for one ingestion call.
  class Batch {
   public:
    explicit Batch(const Snapshot& base) : next_(base) {}

    PackageEntry& mutable_entry(const std::string& name) {
      auto it = touched_.find(name);
      if (it != touched_.end()) return *it->second;
      auto fresh = std::make_shared<PackageEntry>();
      auto existing = next_.packages_.find(name);
      if (existing != next_.packages_.end()) {
        *fresh = *existing->second;
      } else {
        fresh->name = name;
      }
      touched_[name] = fresh;
      next_.packages_[name] = fresh;
      return *fresh;
    }

    const PackageEntry* find(const std::string& name) const {
      auto it = next_.packages_.find(name);
      return it == next_.packages_.end() ? nullptr : it->second.get();
    }

    void log(const std::string& package, json line) { lines_.emplace_back(package, std::move(line)); }

    void set_seq(const json& seq) {
      next_.last_seq_ = seq;
      log("", json{{"kind", "seq"}, {"seq", seq}});
    }

    Snapshot& next() { return next_; }
    std::vector<std::pair<std::string, json>>& lines() { return lines_; }

   private:
    Snapshot next_;
    std::map<std::string, std::shared_ptr<PackageEntry>> touched_;
    std::vector<std::pair<std::string, json>> lines_;
  };

  static void upsert_record(PackageEntry& e, VersionRecord r) {
    for (auto& existing : e.records) {
      if (semver::compare(existing.version, r.version) == 0) {
        existing = std::move(r);
        std::stable_sort(e.records.begin(), e.records.end(), chronological_less);
        return;
      }
    }
    auto pos = std::upper_bound(e.records.begin(), e.records.end(), r, chronological_less);
    e.records.insert(pos, std::move(r));
  }

  static void apply_line(PackageEntry& e, const json& line) {
    const std::string kind = line.at("kind").get<std::string>();
    if (kind == "version") {
      upsert_record(e, version_record_from_json(line));
    } else if (kind == "tag") {
      e.tags.push_back(DistTagEvent{line.at("tag").get<std::string>(),
                                    semver::parse_version(line.at("version").get<std::string>()),
                                    parse_timestamp(line.at("at").get<std::string>())});
    } else if (kind == "meta") {
      if (line.contains("created") && line["created"].is_string())
        e.created = parse_timestamp(line["created"].get<std::string>());
      if (line.contains("modified") && line["modified"].is_string())
        e.modified = parse_timestamp(line["modified"].get<std::string>());
    }
  }

  static void apply_line(Snapshot& s, const json& line) {
    const std::string kind = line.at("kind").get<std::string>();
    if (kind == "seq") {
      s.last_seq_ = line.at("seq");
      return;
    }
    if (kind == "advisory") {
      Advisory a = advisory_from_json(line);
      s.advisories_[a.package][a.id] = std::move(a);
      return;
    }
    const std::string name = line.at("name").get<std::string>();
    auto& slot = s.packages_[name];
    std::shared_ptr<PackageEntry> e;
    if (slot) {
      e = std::const_pointer_cast<PackageEntry>(slot);
    } else {
      e = std::make_shared<PackageEntry>();
      e->name = name;
      slot = e;
    }
    apply_line(*e, line);
  }

  void replay() {
    auto snap = std::make_shared<Snapshot>();
    std::map<std::string, std::vector<std::uint64_t>> offsets;
    std::uint64_t good_bytes = 0;
    {
      std::ifstream in(log_path(), std::ios::binary);
      if (!in && std::filesystem::exists(log_path()))
        throw StoreUnavailable("cannot read " + log_path().string());
      std::string line;
      std::uint64_t offset = 0;
      while (in && std::getline(in, line)) {
        bool complete = !in.eof();
        json parsed = json::parse(line, nullptr, false);
        if (!complete || parsed.is_discarded()) break;  // torn tail write
        try {
          apply_line(*snap, parsed);
        } catch (const std::exception& e) {
          throw StoreUnavailable("corrupt store log at byte " + std::to_string(offset) + ": " + e.what());
        }
        if (parsed.contains("name") && parsed["kind"] != "advisory")
          offsets[parsed["name"].get<std::string>()].push_back(offset);
        offset += line.size() + 1;
        good_bytes = offset;
      }
    }
    if (std::filesystem::exists(log_path())) {
      auto size = std::filesystem::file_size(log_path());
      if (size > good_bytes) {
        recovered_bytes_ = size - good_bytes;
        std::filesystem::resize_file(log_path(), good_bytes);
      }
    } else {
      std::ofstream touch(log_path(), std::ios::binary);
      if (!touch) throw StoreUnavailable("cannot create " + log_path().string());
    }
    offsets_ = std::move(offsets);
    log_bytes_ = good_bytes;
    ensure_index();
    std::lock_guard lock(snapshot_mutex_);
    current_ = std::move(snap);
  }

  void ensure_index() {
    std::ifstream idx(index_path());
    if (idx) {
      json index = json::parse(idx, nullptr, false);
      if (!index.is_discarded() && index.value("logBytes", std::uint64_t{0}) == log_bytes_) return;
    }
    write_index();
  }

  void write_index() {
    json packages = json::object();
    for (const auto& [name, offs] : offsets_) packages[name] = offs;
    json index{{"logBytes", log_bytes_}, {"packages", std::move(packages)}};
    auto tmp = index_path();
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << index.dump() << '\n';
      if (!out) throw StoreUnavailable("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, index_path());
  }

  void commit(Batch& batch) {
    if (dir_ && !batch.lines().empty()) {
      std::ofstream out(log_path(), std::ios::binary | std::ios::app);
      if (!out) throw StoreUnavailable("cannot append to " + log_path().string());
      for (const auto& [package, line] : batch.lines()) {
        std::string text = line.dump();
        if (!package.empty()) offsets_[package].push_back(log_bytes_);
        out << text << '\n';
        log_bytes_ += text.size() + 1;
      }
      out.flush();
      if (!out) throw StoreUnavailable("write failed on " + log_path().string());
      write_index();
    }
    auto next = std::make_shared<Snapshot>(std::move(batch.next()));
    std::lock_guard lock(snapshot_mutex_);
    current_ = std::move(next);
  }

  static std::string document_label(const json& doc, std::size_t index) {
    if (doc.is_object() && doc.contains("name") && doc["name"].is_string())
      return doc["name"].get<std::string>();
    return "#" + std::to_string(index);
  }

  void tombstone(Batch& batch, PackageEntry& e, const semver::Version& v, IngestionReport& report) {
    for (auto r : e.records) {
      if (semver::compare(r.version, v) != 0 || r.deleted) continue;
      r.deleted = true;
      batch.log(e.name, to_json(r));
      upsert_record(e, std::move(r));
      ++report.tombstoned;
      return;
    }
  }

  void ingest_packument(Batch& batch, const json& doc, std::size_t index, Timestamp now,
                        IngestionReport& report) {
    ++report.documents;
    const std::string label = document_label(doc, index);
    auto reject = [&](std::string reason) {
      ++report.rejected_documents;
      report.issues.push_back({label, "", std::move(reason)});
    };
    if (!doc.is_object()) return reject("document is not a JSON object");
    if (!doc.contains("name") || !doc["name"].is_string() || doc["name"].get<std::string>().empty())
      return reject("missing package name");
    const std::string name = doc["name"].get<std::string>();

    // Whole-package unpublish.
    if (doc.contains("time") && doc["time"].is_object() && doc["time"].contains("unpublished")) {
      if (const PackageEntry* existing = batch.find(name)) {
        std::vector<semver::Version> live;
        for (const auto& r : existing->records)
          if (!r.deleted) live.push_back(r.version);
        if (!live.empty()) {
          PackageEntry& e = batch.mutable_entry(name);
          for (const auto& v : live) tombstone(batch, e, v, report);
        }
      }
      return;
    }

    if (!doc.contains("versions") || !doc["versions"].is_object()) return reject("missing versions map");
    if (!doc.contains("time") || !doc["time"].is_object()) return reject("missing time map");
    const json& versions = doc["versions"];
    const json& times = doc["time"];

    auto skip = [&](const std::string& version, std::string reason) {
      ++report.skipped_versions;
      report.issues.push_back({name, version, std::move(reason)});
    };

    auto publish_time = [&](const std::string& key, const semver::Version& v,
                            std::string& why) -> std::optional<Timestamp> {
      const json* t = nullptr;
      if (times.contains(key)) t = &times[key];
      else if (times.contains(v.render())) t = &times[v.render()];
      if (!t) {
        why = "no publish time in time map";
        return std::nullopt;
      }
      if (!t->is_string()) {
        why = "publish time is not a string";
        return std::nullopt;
      }
      auto ts = try_parse_timestamp(t->get<std::string>());
      if (!ts) {
        why = "malformed publish time";
        return std::nullopt;
      }
      if (to_unix_millis(*ts) <= 0) {
        why = "publish time not positive";
        return std::nullopt;
      }
      if (*ts > now) {
        why = "publish time after ingestion time";
        return std::nullopt;
      }
      return ts;
    };

    std::vector<VersionRecord> candidates;
    for (const auto& [key, vdoc] : versions.items()) {
      auto v = semver::try_parse_version(key);
      if (!v) {
        skip(key, "malformed version");
        continue;
      }
      bool duplicate = std::any_of(candidates.begin(), candidates.end(),
                                   [&](const VersionRecord& r) { return r.version == *v; });
      if (duplicate) {
        skip(key, "duplicate version");
        continue;
      }
      std::string why;
      auto ts = publish_time(key, *v, why);
      if (!ts) {
        skip(key, why);
        continue;
      }
      VersionRecord r{name, *v, *ts, {}, std::nullopt, false};
      if (vdoc.is_object() && vdoc.contains("dependencies") && vdoc["dependencies"].is_object()) {
        for (const auto& [dep, c] : vdoc["dependencies"].items()) {
          if (c.is_string()) {
            r.dependencies.emplace(dep, semver::parse_constraint(c.get<std::string>()));
          } else {
            report.issues.push_back({name, key, "non-string constraint for " + dep + " dropped"});
          }
        }
      }
      if (vdoc.is_object() && vdoc.contains("dist") && vdoc["dist"].is_object() &&
          vdoc["dist"].contains("tarball") && vdoc["dist"]["tarball"].is_string())
        r.tarball = vdoc["dist"]["tarball"].get<std::string>();
      candidates.push_back(std::move(r));
    }

    // Versions listed in the time map but not in versions were unpublished.
    std::vector<VersionRecord> tombstones;
    for (const auto& [key, t] : times.items()) {
      if (key == "created" || key == "modified") continue;
      auto v = semver::try_parse_version(key);
      if (!v) continue;
      bool live = std::any_of(candidates.begin(), candidates.end(),
                              [&](const VersionRecord& r) { return r.version == *v; });
      if (live || versions.contains(key)) continue;
      std::string why;
      auto ts = publish_time(key, *v, why);
      if (!ts) continue;
      tombstones.push_back(VersionRecord{name, *v, *ts, {}, std::nullopt, true});
    }

    const PackageEntry* before = batch.find(name);
    bool changes = before == nullptr;
    auto differs = [&](const VersionRecord& r) {
      if (!before) return true;
      const VersionRecord* old = before->find(r.version);
      return !old || !old->same_content(r);
    };
    for (const auto& r : candidates) changes = changes || differs(r);
    for (const auto& r : tombstones) {
      const VersionRecord* old = before ? before->find(r.version) : nullptr;
      if (!old || !old->deleted) changes = true;
    }
    std::vector<semver::Version> vanished;
    if (before) {
      for (const auto& r : before->records) {
        if (r.deleted) continue;
        bool present = std::any_of(candidates.begin(), candidates.end(),
                                   [&](const VersionRecord& c) { return c.version == r.version; });
        bool skipped = versions.contains(r.version.render());
        if (!present && !skipped) vanished.push_back(r.version);
      }
    }
    changes = changes || !vanished.empty();

    std::optional<Timestamp> created, modified;
    if (times.contains("created") && times["created"].is_string())
      created = try_parse_timestamp(times["created"].get<std::string>());
    if (times.contains("modified") && times["modified"].is_string())
      modified = try_parse_timestamp(times["modified"].get<std::string>());
    bool meta_changed = !before || before->created != created || before->modified != modified;

    std::vector<DistTagEvent> new_tags;
    if (doc.contains("dist-tags") && doc["dist-tags"].is_object()) {
      Timestamp at = modified.value_or(now);
      if (!modified) {
        std::optional<Timestamp> newest;
        for (const auto& r : candidates)
          if (!newest || r.published_at > *newest) newest = r.published_at;
        if (newest) at = *newest;
      }
      for (const auto& [tag, target] : doc["dist-tags"].items()) {
        if (!target.is_string()) continue;
        auto v = semver::try_parse_version(target.get<std::string>());
        if (!v) {
          report.issues.push_back({name, "", "dist-tag " + tag + " names malformed version"});
          continue;
        }
        const DistTagEvent* last = nullptr;
        if (before)
          for (const auto& ev : before->tags)
            if (ev.tag == tag) last = &ev;
        if (!last || !last->version.identical(*v)) new_tags.push_back({tag, *v, at});
      }
    }

    if (!changes && !meta_changed && new_tags.empty()) {
      report.unchanged += candidates.size();
      return;
    }

    PackageEntry& e = batch.mutable_entry(name);
    for (auto& r : candidates) {
      const VersionRecord* old = e.find(r.version);
      if (old && old->same_content(r)) {
        ++report.unchanged;
        continue;
      }
      if (old) ++report.updated;
      else ++report.inserted;
      batch.log(name, to_json(r));
      upsert_record(e, std::move(r));
    }
    for (auto& r : tombstones) {
      const VersionRecord* old = e.find(r.version);
      if (old && old->deleted) continue;
      if (old) {
        tombstone(batch, e, r.version, report);
      } else {
        ++report.tombstoned;
        batch.log(name, to_json(r));
        upsert_record(e, std::move(r));
      }
    }
    for (const auto& v : vanished) tombstone(batch, e, v, report);
    if (meta_changed) {
      e.created = created;
      e.modified = modified;
      json line{{"kind", "meta"}, {"name", name}};
      line["created"] = created ? json(format_rfc3339(*created)) : json(nullptr);
      line["modified"] = modified ? json(format_rfc3339(*modified)) : json(nullptr);
      batch.log(name, std::move(line));
    }
    for (auto& ev : new_tags) {
      ++report.tag_events;
      batch.log(name, json{{"kind", "tag"},
                           {"name", name},
                           {"tag", ev.tag},
                           {"version", ev.version.render()},
                           {"at", format_rfc3339(ev.at)}});
      e.tags.push_back(std::move(ev));
    }
  }

  // OSV "ranges[].events" become half-open intervals: introduced opens an
  // interval, fixed closes it exclusively, last_affected closes it inclusively.
  static std::optional<std::vector<semver::Interval>> intervals_from_events(const json& events,
                                                                            std::vector<semver::Version>& fixed,
                                                                            std::string& why) {
    std::vector<semver::Interval> out;
    std::optional<semver::Interval> open;
    for (const auto& ev : events) {
      if (!ev.is_object() || ev.size() != 1) {
        why = "malformed range event";
        return std::nullopt;
      }
      const auto& [kind, value] = *ev.items().begin();
      if (!value.is_string()) {
        why = "range event value is not a string";
        return std::nullopt;
      }
      const std::string text = value.get<std::string>();
      if (kind == "limit") continue;
      std::optional<semver::Version> v;
      if (!(kind == "introduced" && text == "0")) {
        v = semver::try_parse_version(text);
        if (!v) {
          why = "malformed version \"" + text + "\" in range";
          return std::nullopt;
        }
      }
      if (kind == "introduced") {
        if (open) out.push_back(*open);
        open = semver::Interval{};
        open->lower = v;
      } else if (kind == "fixed" || kind == "last_affected") {
        if (!open) {
          why = kind + " without introduced";
          return std::nullopt;
        }
        open->upper = kind == "fixed" ? *v : semver::successor(*v);
        if (kind == "fixed") fixed.push_back(*v);
        out.push_back(*open);
        open.reset();
      } else {
        why = "unknown range event " + kind;
        return std::nullopt;
      }
    }
    if (open) out.push_back(*open);
    return out;
  }

  static Severity severity_of(const json& doc, const json& affected) {
    for (const json* src : {&affected, &doc}) {
      if (src->contains("database_specific") && (*src)["database_specific"].is_object()) {
        const auto& ds = (*src)["database_specific"];
        if (ds.contains("severity") && ds["severity"].is_string())
          if (auto s = severity_from_string(ds["severity"].get<std::string>())) return *s;
      }
    }
    if (doc.contains("severity") && doc["severity"].is_array()) {
      for (const auto& s : doc["severity"]) {
        if (!s.is_object() || !s.contains("score")) continue;
        double score = -1;
        if (s["score"].is_number()) score = s["score"].get<double>();
        else if (s["score"].is_string()) {
          try {
            std::size_t used = 0;
            std::string text = s["score"].get<std::string>();
            score = std::stod(text, &used);
            if (used != text.size()) score = -1;
          } catch (const std::exception&) {
          }
        }
        if (score >= 9.0) return Severity::Critical;
        if (score >= 7.0) return Severity::High;
        if (score >= 4.0) return Severity::Moderate;
        if (score >= 0.0) return Severity::Low;
      }
    }
    return Severity::Moderate;
  }

  void ingest_osv(Batch& batch, const json& doc, std::size_t index, AdvisoryReport& report) {
    ++report.documents;
    std::string label = doc.is_object() && doc.contains("id") && doc["id"].is_string()
                            ? doc["id"].get<std::string>()
                            : "#" + std::to_string(index);
    auto issue = [&](std::string pkg, std::string reason) {
      report.issues.push_back({label, std::move(pkg), std::move(reason)});
    };
    if (!doc.is_object() || !doc.contains("id") || !doc["id"].is_string()) {
      ++report.skipped;
      return issue("", "missing advisory id");
    }
    if (!doc.contains("affected") || !doc["affected"].is_array() || doc["affected"].empty()) {
      ++report.skipped;
      return issue("", "no affected packages");
    }
    for (const auto& aff : doc["affected"]) {
      if (!aff.is_object() || !aff.contains("package") || !aff["package"].is_object()) {
        ++report.skipped;
        issue("", "affected entry without package");
        continue;
      }
      const auto& pkg = aff["package"];
      std::string ecosystem = pkg.value("ecosystem", "");
      std::string name = pkg.value("name", "");
      if (ecosystem != "npm") {
        ++report.skipped;
        issue(name, "non-npm ecosystem \"" + ecosystem + "\"");
        continue;
      }
      if (name.empty()) {
        ++report.skipped;
        issue("", "missing package name");
        continue;
      }
      Advisory a{label, name, {}, {}, severity_of(doc, aff)};
      if (aff.contains("ranges") && aff["ranges"].is_array()) {
        for (const auto& range : aff["ranges"]) {
          std::string type = range.value("type", "");
          if (type != "SEMVER" && type != "ECOSYSTEM") {
            issue(name, "unsupported range type \"" + type + "\"");
            continue;
          }
          if (!range.contains("events") || !range["events"].is_array()) {
            issue(name, "range without events");
            continue;
          }
          std::string why;
          std::vector<semver::Version> fixed;
          auto ivs = intervals_from_events(range["events"], fixed, why);
          if (!ivs) {
            issue(name, why);
            continue;
          }
          a.affected.insert(a.affected.end(), ivs->begin(), ivs->end());
          a.patched.insert(a.patched.end(), fixed.begin(), fixed.end());
        }
      }
      if (aff.contains("versions") && aff["versions"].is_array()) {
        for (const auto& v : aff["versions"]) {
          auto parsed = v.is_string() ? semver::try_parse_version(v.get<std::string>()) : std::nullopt;
          if (!parsed) {
            issue(name, "malformed affected version");
            continue;
          }
          a.affected.push_back(semver::Interval{*parsed, semver::successor(*parsed), {}});
        }
      }
      if (a.affected.empty()) {
        ++report.skipped;
        issue(name, "no usable affected ranges");
        continue;
      }
      std::sort(a.patched.begin(), a.patched.end());
      a.patched.erase(std::unique(a.patched.begin(), a.patched.end()), a.patched.end());
      std::erase_if(a.patched, [&](const semver::Version& v) {
        if (!a.affects(v)) return false;
        issue(name, "patched version " + v.render() + " lies inside the affected range; dropped");
        return true;
      });

      auto& slot = batch.next().advisories_[name];
      auto it = slot.find(a.id);
      if (it != slot.end() && same_advisory(it->second, a)) {
        ++report.unchanged;
        continue;
      }
      ++report.ingested;
      batch.log("", to_json(a));
      slot[a.id] = std::move(a);
    }
  }

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex snapshot_mutex_;
  std::mutex writer_mutex_;
  std::shared_ptr<const Snapshot> current_;
  std::map<std::string, std::vector<std::uint64_t>> offsets_;
  std::uint64_t log_bytes_ = 0;
  std::size_t recovered_bytes_ = 0;
};

}  // namespace npmhist::store

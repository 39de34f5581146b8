#pragma once

// Store-wide batch operations shared by the command-line tool and the
// acceptance suite, plus the run manifest every CLI invocation writes.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "npmhist/diff.hpp"
#include "npmhist/miner.hpp"
#include "npmhist/semver.hpp"
#include "npmhist/store.hpp"
#include "npmhist/time.hpp"

namespace npmhist::pipeline {

using nlohmann::json;

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
/// to caller-owned slots indexed by i, which keeps output order independent
/// of scheduling.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct MineOptions {
  std::optional<Timestamp> as_of;
  bool with_security = true;
  unsigned jobs = 1;
  std::function<void(std::size_t done)> progress;
};

/// One report per package, in package-name order.
inline std::vector<miner::MiningReport> mine_store(const store::Snapshot& snapshot, const MineOptions& options) {
  auto names = snapshot.package_names();
  std::vector<miner::MiningReport> reports(names.size());
  std::atomic<std::size_t> done{0};
  parallel_for(names.size(), options.jobs, [&](std::size_t i) {
    auto history = options.as_of ? snapshot.history_as_of(names[i], *options.as_of) : snapshot.history(names[i]);
    reports[i] = miner::mine_updates(history);
    if (options.with_security) miner::annotate_security(reports[i], snapshot.advisories_for(names[i]));
    std::size_t d = ++done;
    if (options.progress) options.progress(d);
  });
  return reports;
}

inline void write_updates_ndjson(std::ostream& os, const std::vector<miner::MiningReport>& reports) {
  for (const auto& r : reports)
    for (const auto& u : r.updates) os << miner::to_json(u).dump() << '\n';
}

inline void write_rejections_ndjson(std::ostream& os, const std::vector<miner::MiningReport>& reports) {
  for (const auto& r : reports)
    if (r.rejected) os << json{{"package", r.package}, {"reason", r.rejection_reason.value_or("")}}.dump() << '\n';
}

struct ConstraintCounts {
  std::size_t constraints = 0;
  std::size_t unrecognized = 0;
  std::map<semver::Category, std::size_t> by_category;
};

/// One line per (package, version, dependency) over live records, in
/// package, chronological, dependency-name order.
inline ConstraintCounts write_constraints_ndjson(std::ostream& os, const store::Snapshot& snapshot, unsigned jobs = 1) {
  auto names = snapshot.package_names();
  std::vector<std::string> chunks(names.size());
  std::vector<ConstraintCounts> partial(names.size());
  parallel_for(names.size(), jobs, [&](std::size_t i) {
    std::string out;
    for (const auto& r : snapshot.entry(names[i]).records) {
      if (r.deleted) continue;
      for (const auto& [dep, c] : r.dependencies) {
        out += json{{"package", names[i]},
                    {"version", r.version.render()},
                    {"publishedAt", format_rfc3339(r.published_at)},
                    {"dependency", dep},
                    {"constraint", c.raw},
                    {"category", semver::to_string(c.category)},
                    {"recognized", c.recognized}}
                   .dump();
        out += '\n';
        ++partial[i].constraints;
        ++partial[i].by_category[c.category];
        if (!c.recognized) ++partial[i].unrecognized;
      }
    }
    chunks[i] = std::move(out);
  });
  ConstraintCounts total;
  for (std::size_t i = 0; i < names.size(); ++i) {
    os << chunks[i];
    total.constraints += partial[i].constraints;
    total.unrecognized += partial[i].unrecognized;
    for (const auto& [c, n] : partial[i].by_category) total.by_category[c] += n;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
  std::string subcommand;
  std::map<std::string, std::string> options;  // effective options, by name
  std::vector<std::string> input_paths;
  std::vector<std::string> output_paths;
  Timestamp started_at;
  Timestamp finished_at;
  std::map<std::string, long long> counters;
  int exit_code = 0;

  /// SHA-256 over the canonical (key-sorted) option map, so flag order does
  /// not matter.
  std::string config_hash() const {
    json canonical = json::object();
    canonical["subcommand"] = subcommand;
    canonical["options"] = options;
    return diff::sha256_hex(canonical.dump());
  }

  json to_json() const {
    return json{{"subcommand", subcommand},
                {"configHash", config_hash()},
                {"options", options},
                {"inputPaths", input_paths},
                {"outputPaths", output_paths},
                {"startedAt", format_rfc3339(started_at)},
                {"finishedAt", format_rfc3339(finished_at)},
                {"counters", counters},
                {"exitCode", exit_code}};
  }

  /// Write-then-rename so readers never see a partial manifest.
  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << to_json().dump(2) << '\n';
      if (!out) throw std::runtime_error("cannot write run manifest " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }
};

}  // namespace npmhist::pipeline

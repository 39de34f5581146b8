#pragma once

// Command-line front end: `npmhist <subcommand> [options]`.
//
// Exit codes: 0 success, 1 completed with data errors (reported), 2 usage
// error. Every subcommand writes a run manifest (options, config hash,
// inputs, outputs, counters); see --run-manifest.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "npmhist/analysis.hpp"
#include "npmhist/diff.hpp"
#include "npmhist/miner.hpp"
#include "npmhist/pipeline.hpp"
#include "npmhist/proxy.hpp"
#include "npmhist/report.hpp"
#include "npmhist/resolver.hpp"
#include "npmhist/semver.hpp"
#include "npmhist/store.hpp"
#include "npmhist/time.hpp"

namespace npmhist::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataErrors = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kStoreEnv = "NPMHIST_STORE";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

/// JSON values from a file: a single document, a JSON array of documents or
/// NDJSON. "-" reads standard input.
inline std::vector<json> read_json_values(const std::string& path, std::vector<std::string>& problems) {
  std::string text;
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  std::vector<json> out;
  json whole = json::parse(text, nullptr, false);
  if (!whole.is_discarded()) {
    if (whole.is_array()) {
      for (auto& v : whole) out.push_back(std::move(v));
    } else {
      out.push_back(std::move(whole));
    }
    return out;
  }
  std::istringstream lines(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(lines, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json v = json::parse(line, nullptr, false);
    if (v.is_discarded()) problems.push_back(path + ":" + std::to_string(number) + ": invalid JSON");
    else out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (const auto& p : inputs) {
    if (p != "-" && std::filesystem::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : std::filesystem::recursive_directory_iterator(p))
        if (e.is_regular_file() && (e.path().extension() == ".json" || e.path().extension() == ".ndjson"))
          found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  return files;
}

/// Output stream that is a file when a path is given, stdout otherwise.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
      if (!*file_) throw DataError("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

class Progress {
 public:
  Progress(std::string label, bool quiet) : label_(std::move(label)), quiet_(quiet) {}

  void update(const std::string& message, bool force = false) {
    if (quiet_) return;
    auto now = std::chrono::steady_clock::now();
    if (!force && now - last_ < std::chrono::seconds(1)) return;
    last_ = now;
    std::lock_guard lock(mutex_);
    std::cerr << "[" << label_ << "] " << message << "\n";
  }

 private:
  std::string label_;
  bool quiet_;
  std::chrono::steady_clock::time_point last_{};
  std::mutex mutex_;
};

inline Timestamp parse_time_flag(const std::string& flag, const std::string& value) {
  auto t = try_parse_timestamp(value);
  if (!t) throw UsageError(flag + ": malformed timestamp \"" + value + "\"");
  return *t;
}

inline std::map<std::string, semver::Constraint> constraints_of(const json& object) {
  std::map<std::string, semver::Constraint> out;
  if (!object.is_object()) return out;
  for (const auto& [name, c] : object.items())
    if (c.is_string()) out.emplace(name, semver::parse_constraint(c.get<std::string>()));
  return out;
}

}  // namespace detail

/// Shared state of one invocation.
struct Run {
  std::string store_path;
  std::string run_manifest_path;
  unsigned jobs = 1;
  bool quiet = false;
  pipeline::RunManifest manifest;
  int exit_code = kExitOk;

  std::unique_ptr<store::Store> open_store() const {
    if (store_path.empty()) throw UsageError("--store is required (or set " + std::string(kStoreEnv) + ")");
    return std::make_unique<store::Store>(std::filesystem::path(store_path));
  }

  void count(const std::string& name, long long delta = 1) { manifest.counters[name] += delta; }
  void set(const std::string& name, long long value) { manifest.counters[name] = value; }
  void output(const std::string& path) {
    if (!path.empty() && path != "-") manifest.output_paths.push_back(path);
  }
};

// ---------------------------------------------------------------------------
// Subcommands

struct IngestArgs {
  std::vector<std::string> inputs;
  std::string report;
  std::string now;
};

inline void cmd_ingest(Run& run, const IngestArgs& args) {
  auto store = run.open_store();
  std::optional<Timestamp> now;
  if (!args.now.empty()) now = detail::parse_time_flag("--now", args.now);
  detail::Progress progress("ingest", run.quiet);
  detail::Output report_out(args.report.empty() ? std::string() : args.report);
  run.output(args.report);
  bool issues = false;
  for (const auto& file : detail::expand_inputs(args.inputs)) {
    run.manifest.input_paths.push_back(file);
    std::vector<std::string> problems;
    auto values = detail::read_json_values(file, problems);
    for (const auto& p : problems) {
      issues = true;
      run.count("invalidLines");
      if (!args.report.empty()) report_out.stream() << json{{"file", file}, {"reason", p}}.dump() << '\n';
      else std::cerr << p << '\n';
    }
    constexpr std::size_t kBatch = 1000;
    for (std::size_t start = 0; start < values.size(); start += kBatch) {
      std::size_t end = std::min(values.size(), start + kBatch);
      std::span<const json> batch(values.data() + start, end - start);
      auto rep = now ? store->ingest_changes(batch, *now) : store->ingest_changes(batch);
      run.count("documents", rep.documents);
      run.count("rejectedDocuments", rep.rejected_documents);
      run.count("inserted", rep.inserted);
      run.count("updated", rep.updated);
      run.count("tombstoned", rep.tombstoned);
      run.count("unchanged", rep.unchanged);
      run.count("skippedVersions", rep.skipped_versions);
      run.count("tagEvents", rep.tag_events);
      for (const auto& issue : rep.issues) {
        issues = true;
        json line{{"file", file}, {"document", issue.document}, {"version", issue.version}, {"reason", issue.reason}};
        if (!args.report.empty()) report_out.stream() << line.dump() << '\n';
        else if (!run.quiet) std::cerr << "issue: " << line.dump() << '\n';
      }
      progress.update("documents " + std::to_string(run.manifest.counters["documents"]) + " inserted " +
                      std::to_string(run.manifest.counters["inserted"]));
    }
  }
  auto snap = store->snapshot();
  run.set("packages", static_cast<long long>(snap->package_count()));
  run.set("versions", static_cast<long long>(snap->version_count()));
  progress.update("done: " + std::to_string(run.manifest.counters["inserted"]) + " records inserted", true);
  if (issues) run.exit_code = kExitDataErrors;
}

struct AdvisoriesArgs {
  std::vector<std::string> inputs;
  std::string report;
};

inline void cmd_advisories(Run& run, const AdvisoriesArgs& args) {
  auto store = run.open_store();
  detail::Output report_out(args.report);
  run.output(args.report);
  std::vector<json> docs;
  bool issues = false;
  for (const auto& file : detail::expand_inputs(args.inputs)) {
    run.manifest.input_paths.push_back(file);
    std::vector<std::string> problems;
    auto values = detail::read_json_values(file, problems);
    for (const auto& p : problems) {
      issues = true;
      std::cerr << p << '\n';
    }
    for (auto& v : values) docs.push_back(std::move(v));
  }
  auto rep = store->ingest_advisories(docs);
  run.set("documents", static_cast<long long>(rep.documents));
  run.set("ingested", static_cast<long long>(rep.ingested));
  run.set("unchanged", static_cast<long long>(rep.unchanged));
  run.set("skipped", static_cast<long long>(rep.skipped));
  run.set("issues", static_cast<long long>(rep.issues.size()));
  for (const auto& issue : rep.issues) {
    json line{{"advisory", issue.document}, {"package", issue.version}, {"reason", issue.reason}};
    if (!args.report.empty()) report_out.stream() << line.dump() << '\n';
    else if (!run.quiet) std::cerr << "issue: " << line.dump() << '\n';
  }
  if (!run.quiet) std::cerr << "[advisories] ingested " << rep.ingested << " of " << rep.documents << " documents\n";
  if (issues || !rep.issues.empty()) run.exit_code = kExitDataErrors;
}

struct MineArgs {
  std::string out;
  std::string as_of;
  bool no_security = false;
  std::string distribution;
  std::string rejections;
};

inline void cmd_mine(Run& run, const MineArgs& args) {
  auto store = run.open_store();
  auto snap = store->snapshot();
  detail::Progress progress("mine", run.quiet);
  pipeline::MineOptions options;
  if (!args.as_of.empty()) options.as_of = detail::parse_time_flag("--as-of", args.as_of);
  options.with_security = !args.no_security;
  options.jobs = run.jobs;
  const std::size_t total = snap->package_count();
  options.progress = [&](std::size_t done) {
    progress.update("packages " + std::to_string(done) + "/" + std::to_string(total));
  };
  auto reports = pipeline::mine_store(*snap, options);

  detail::Output out(args.out);
  run.output(args.out);
  pipeline::write_updates_ndjson(out.stream(), reports);

  long long updates = 0, rejected = 0;
  for (const auto& r : reports) {
    updates += static_cast<long long>(r.updates.size());
    rejected += r.rejected ? 1 : 0;
    for (const auto& u : r.updates) {
      run.count(std::string("increment.") + std::string(semver::to_string(u.increment)));
      run.count(std::string("security.") + std::string(miner::to_string(u.security)));
    }
  }
  run.set("packages", static_cast<long long>(reports.size()));
  run.set("rejectedPackages", rejected);
  run.set("updatesMined", updates);

  if (!args.rejections.empty()) {
    detail::Output rej(args.rejections);
    run.output(args.rejections);
    pipeline::write_rejections_ndjson(rej.stream(), reports);
  }
  if (!args.distribution.empty()) {
    detail::Output dist(args.distribution);
    run.output(args.distribution);
    report::write_csv_row(dist.stream(), {"package", "segment", "updates", "bug", "minor", "major"});
    std::vector<std::pair<std::string, std::optional<miner::SecurityEffect>>> segments{
        {"all", std::nullopt},
        {"none", miner::SecurityEffect::None},
        {"introduces", miner::SecurityEffect::IntroducesVuln},
        {"patches", miner::SecurityEffect::PatchesVuln}};
    for (const auto& [label, segment] : segments)
      for (const auto& row : miner::update_type_distribution(reports, segment))
        report::write_csv_row(dist.stream(), {row.package, label, std::to_string(row.total),
                                              report::fixed(row.fraction(semver::IncrementType::Bug)),
                                              report::fixed(row.fraction(semver::IncrementType::Minor)),
                                              report::fixed(row.fraction(semver::IncrementType::Major))});
  }
  progress.update("mined " + std::to_string(updates) + " updates from " + std::to_string(reports.size()) +
                      " packages (" + std::to_string(rejected) + " rejected)",
                  true);
}

struct ClassifyArgs {
  std::string out;
  std::string by_year;
  int from_year = 1970;
  int to_year = 9999;
};

inline void cmd_classify(Run& run, const ClassifyArgs& args) {
  if (args.from_year > args.to_year) throw UsageError("--from-year must not exceed --to-year");
  auto store = run.open_store();
  auto snap = store->snapshot();
  detail::Output out(args.out);
  run.output(args.out);
  auto counts = pipeline::write_constraints_ndjson(out.stream(), *snap, run.jobs);
  run.set("constraints", static_cast<long long>(counts.constraints));
  run.set("unrecognized", static_cast<long long>(counts.unrecognized));
  for (const auto& [c, n] : counts.by_category)
    run.set(std::string("category.") + std::string(semver::to_string(c)), static_cast<long long>(n));
  if (!args.by_year.empty()) {
    detail::Output table(args.by_year);
    run.output(args.by_year);
    report::write_csv_row(table.stream(), {"year", "category", "count", "percent", "total"});
    for (const auto& row : analysis::constraint_usage_by_year(*snap, args.from_year, args.to_year))
      for (auto c : semver::kCategories)
        report::write_csv_row(table.stream(),
                              {std::to_string(row.year), std::string(semver::to_string(c)),
                               std::to_string(row.counts.count(c) ? row.counts.at(c) : 0),
                               report::fixed(row.percent(c)), std::to_string(row.total)});
  }
  if (!run.quiet) std::cerr << "[classify-constraints] " << counts.constraints << " constraints\n";
}

struct ServeArgs {
  std::string listen = "127.0.0.1:8080";
  std::string mode = "local";
  std::string upstream = "https://registry.npmjs.org";
  std::string cache_dir;
};

inline void cmd_serve(Run& run, const ServeArgs& args) {
  auto colon = args.listen.rfind(':');
  if (colon == std::string::npos) throw UsageError("--listen expects host:port");
  std::string host = args.listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(args.listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--listen expects host:port");
  }

  std::unique_ptr<store::Store> store;
  std::shared_ptr<proxy::PackumentSource> source;
  if (args.mode == "local") {
    store = run.open_store();
    source = std::make_shared<proxy::LocalSource>(*store);
  } else if (args.mode == "upstream") {
    std::optional<std::filesystem::path> cache;
    if (!args.cache_dir.empty()) cache = args.cache_dir;
    source = std::make_shared<proxy::UpstreamSource>(args.upstream, cache);
  } else {
    throw UsageError("--mode must be local or upstream");
  }
  auto core = std::make_shared<proxy::ProxyCore>(source);
  proxy::ProxyServer server(core);
  int bound = server.bind(host, port);
  if (bound < 0) throw DataError("cannot listen on " + args.listen);

  // Stop cleanly on SIGINT/SIGTERM: block them here and wait in a thread.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  std::cerr << "[serve] " << args.mode << " mode listening on http://" << host << ":" << bound << "/t/{asOf}/\n";
  server.listen_after_bind();
  if (waiter.joinable()) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  json status = source->status();
  if (status.contains("cacheEntries")) run.set("cacheEntries", status["cacheEntries"].get<long long>());
}

struct ResolveArgs {
  std::string as_of;
  std::string manifest;
  std::string package;
  bool include_dev = false;
  bool skip_non_interval = false;
  std::string out;
  std::string lockfile;
};

inline void cmd_resolve(Run& run, const ResolveArgs& args) {
  if (args.manifest.empty() == args.package.empty())
    throw UsageError("exactly one of --manifest or --package is required");
  Timestamp as_of = detail::parse_time_flag("--as-of", args.as_of);
  auto store = run.open_store();
  auto snap = store->snapshot();

  std::map<std::string, semver::Constraint> deps;
  std::string root;
  if (!args.manifest.empty()) {
    run.manifest.input_paths.push_back(args.manifest);
    std::ifstream in(args.manifest);
    if (!in) throw DataError("cannot open " + args.manifest);
    json manifest = json::parse(in, nullptr, false);
    if (!manifest.is_object()) throw DataError(args.manifest + " is not a JSON object");
    deps = detail::constraints_of(manifest.value("dependencies", json::object()));
    if (args.include_dev)
      for (auto& [k, v] : detail::constraints_of(manifest.value("devDependencies", json::object())))
        deps.insert_or_assign(k, v);
    root = args.manifest;
  } else {
    std::string name = args.package;
    std::optional<semver::Version> version;
    auto at = name.find('@', 1);
    if (at != std::string::npos) {
      version = semver::try_parse_version(name.substr(at + 1));
      if (!version) throw UsageError("--package: malformed version in \"" + args.package + "\"");
      name = name.substr(0, at);
    }
    if (!snap->contains(name)) throw DataError("unknown package " + name);
    const store::VersionRecord* chosen = nullptr;
    if (version) {
      chosen = snap->entry(name).find(*version);
      if (!chosen || chosen->deleted || chosen->published_at > as_of)
        throw DataError(name + "@" + version->render() + " was not published as of " + format_rfc3339(as_of));
    } else {
      chosen = analysis::latest_release(*snap, name, as_of);
      if (!chosen) throw DataError(name + " had no release as of " + format_rfc3339(as_of));
    }
    deps = chosen->dependencies;
    root = name + "@" + chosen->version.render();
  }

  auto graph = resolver::resolve(deps, as_of, *snap, root, resolver::Options{args.skip_non_interval});
  detail::Output out(args.out);
  run.output(args.out);
  for (const auto& line : resolver::to_ndjson(graph)) out.stream() << line.dump() << '\n';
  if (!args.lockfile.empty()) {
    detail::Output lock(args.lockfile);
    run.output(args.lockfile);
    lock.stream() << resolver::lockfile(graph).dump(2) << '\n';
  }
  run.set("nodes", static_cast<long long>(graph.nodes.size()));
  run.set("edges", static_cast<long long>(graph.edges.size()));
}

struct LagArgs {
  std::string as_of;
  std::vector<std::string> packages;
  std::string out;
  std::string summary;
};

inline void cmd_lag(Run& run, const LagArgs& args) {
  Timestamp as_of = detail::parse_time_flag("--as-of", args.as_of);
  auto store = run.open_store();
  auto snap = store->snapshot();
  std::vector<std::string> names = args.packages.empty() ? snap->package_names() : args.packages;
  for (const auto& n : names)
    if (!snap->contains(n)) throw DataError("unknown package " + n);

  struct Row {
    std::optional<analysis::LagResult> result;
    std::string root;
    std::string error;
  };
  std::vector<Row> rows(names.size());
  detail::Progress progress("lag", run.quiet);
  std::atomic<std::size_t> done{0};
  pipeline::parallel_for(names.size(), run.jobs, [&](std::size_t i) {
    const auto* latest = analysis::latest_release(*snap, names[i], as_of);
    if (latest && !latest->dependencies.empty()) {
      rows[i].root = names[i] + "@" + latest->version.render();
      try {
        auto g = resolver::resolve(latest->dependencies, latest->published_at, *snap, rows[i].root,
                                   resolver::Options{true});
        rows[i].result = analysis::compute_lag(g, *snap);
      } catch (const std::exception& e) {
        rows[i].error = e.what();
      }
    }
    progress.update("packages " + std::to_string(++done) + "/" + std::to_string(names.size()));
  });

  detail::Output out(args.out);
  run.output(args.out);
  std::unique_ptr<detail::Output> summary;
  if (!args.summary.empty()) {
    summary = std::make_unique<detail::Output>(args.summary);
    run.output(args.summary);
    report::write_csv_row(summary->stream(), {"package", "root", "resolvedAt", "dependencies", "outOfDate",
                                              "percentOutOfDate", "meanOutOfDateDays"});
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (!row.error.empty()) {
      run.count("unresolved");
      if (!run.quiet) std::cerr << "[lag] " << row.root << ": " << row.error << '\n';
      continue;
    }
    if (!row.result) continue;
    run.count("packages");
    const auto& r = *row.result;
    for (const auto& e : r.entries) {
      json line = analysis::to_json(e);
      line["root"] = r.root;
      line["tp"] = format_rfc3339(r.as_of);
      out.stream() << line.dump() << '\n';
    }
    run.count("dependencies", static_cast<long long>(r.summary.dependencies));
    run.count("outOfDate", static_cast<long long>(r.summary.out_of_date));
    if (summary)
      report::write_csv_row(summary->stream(),
                            {names[i], r.root, format_rfc3339(r.as_of), std::to_string(r.summary.dependencies),
                             std::to_string(r.summary.out_of_date), report::fixed(r.summary.percent_out_of_date),
                             r.summary.mean_out_of_date_days ? report::fixed(*r.summary.mean_out_of_date_days) : ""});
  }
}

struct FlowArgs {
  std::string updates;
  std::string before;
  std::vector<std::string> packages;
  std::size_t sample = 50;
  std::uint64_t seed = 1;
  int horizon_days = 90;
  bool frozen = false;
  std::string out;
  std::string summary;
};

inline void cmd_flow(Run& run, const FlowArgs& args) {
  if (args.horizon_days < 0) throw UsageError("--horizon-days must be non-negative");
  auto store = run.open_store();
  auto snap = store->snapshot();

  std::vector<miner::Update> updates;
  if (!args.updates.empty()) {
    run.manifest.input_paths.push_back(args.updates);
    std::vector<std::string> problems;
    for (const auto& v : detail::read_json_values(args.updates, problems)) updates.push_back(miner::update_from_json(v));
    if (!problems.empty()) throw DataError(problems.front());
    if (!args.before.empty()) {
      Timestamp cutoff = detail::parse_time_flag("--before", args.before);
      std::vector<miner::MiningReport> grouped;
      std::map<std::string, std::size_t> index;
      for (const auto& u : updates) {
        auto [it, fresh] = index.emplace(u.package, grouped.size());
        if (fresh) grouped.push_back({u.package, {}, false, std::nullopt});
        grouped[it->second].updates.push_back(u);
      }
      updates = analysis::latest_updates_before(grouped, cutoff);
    }
  } else {
    Timestamp cutoff = args.before.empty() ? Timestamp::max() : detail::parse_time_flag("--before", args.before);
    pipeline::MineOptions options;
    options.jobs = run.jobs;
    updates = analysis::latest_updates_before(pipeline::mine_store(*snap, options), cutoff);
  }
  if (!args.packages.empty())
    std::erase_if(updates, [&](const miner::Update& u) {
      return std::find(args.packages.begin(), args.packages.end(), u.package) == args.packages.end();
    });
  run.set("updates", static_cast<long long>(updates.size()));

  auto driver = analysis::flat_driver(*snap);
  analysis::FlowOptions options{args.horizon_days, args.frozen};
  std::vector<std::vector<analysis::FlowOutcome>> outcomes(updates.size());
  std::vector<long long> precondition_failures(updates.size(), 0);
  detail::Progress progress("flow", run.quiet);
  std::atomic<std::size_t> done{0};
  pipeline::parallel_for(updates.size(), run.jobs, [&](std::size_t i) {
    for (const auto& down : analysis::sample_downstreams(updates[i], *snap, driver, args.sample, args.seed + i)) {
      try {
        outcomes[i].push_back(analysis::classify_flow(updates[i], down, *snap, driver, options));
      } catch (const analysis::PreconditionViolated&) {
        ++precondition_failures[i];
      }
    }
    progress.update("updates " + std::to_string(++done) + "/" + std::to_string(updates.size()));
  });

  detail::Output out(args.out);
  run.output(args.out);
  std::map<std::pair<std::string, std::string>, long long> table;
  long long flows = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    run.count("preconditionFailures", precondition_failures[i]);
    for (const auto& f : outcomes[i]) {
      out.stream() << analysis::to_json(f).dump() << '\n';
      ++flows;
      run.count(std::string("category.") + std::string(analysis::to_string(f.category)));
      ++table[{std::string(analysis::to_string(f.category)), std::string(semver::to_string(f.upstream.increment))}];
    }
  }
  run.set("flows", flows);
  if (!args.summary.empty()) {
    detail::Output summary(args.summary);
    run.output(args.summary);
    report::write_csv_row(summary.stream(), {"category", "increment", "count", "percentOfFlows"});
    for (const auto& [key, n] : table)
      report::write_csv_row(summary.stream(), {key.first, key.second, std::to_string(n),
                                               report::fixed(flows ? 100.0 * n / flows : 0.0)});
  }
}

struct DiffArgs {
  std::string from;
  std::string to;
  std::string pairs;
  std::string out;
  std::string distribution;
};

inline void cmd_diff(Run& run, const DiffArgs& args) {
  bool single = !args.from.empty() || !args.to.empty();
  if (single == !args.pairs.empty()) throw UsageError("use either --from/--to or --pairs");
  if (single && (args.from.empty() || args.to.empty())) throw UsageError("--from and --to go together");
  detail::Output out(args.out);
  run.output(args.out);
  if (single) {
    run.manifest.input_paths = {args.from, args.to};
    try {
      auto d = diff::classify_update_contents(args.from, args.to);
      out.stream() << diff::to_json(d).dump() << '\n';
      run.count(std::string("class.") + std::string(diff::to_string(d.change_class)));
    } catch (const diff::CorruptArchive& e) {
      std::cerr << e.what() << '\n';
      run.count("corrupt");
      run.exit_code = kExitDataErrors;
    }
    return;
  }

  run.manifest.input_paths.push_back(args.pairs);
  std::vector<std::string> problems;
  auto lines = detail::read_json_values(args.pairs, problems);
  for (const auto& p : problems) std::cerr << p << '\n';
  if (!problems.empty()) run.exit_code = kExitDataErrors;

  struct Result {
    json line;
    std::optional<diff::ClassifiedUpdate> classified;
  };
  std::vector<Result> results(lines.size());
  pipeline::parallel_for(lines.size(), run.jobs, [&](std::size_t i) {
    const json& p = lines[i];
    json line{{"package", p.value("package", "")}, {"from", p.value("from", "")}, {"to", p.value("to", "")}};
    try {
      auto d = diff::classify_update_contents(p.at("fromTarball").get<std::string>(), p.at("toTarball").get<std::string>());
      line.update(diff::to_json(d));
      auto from = semver::try_parse_version(p.value("from", ""));
      auto to = semver::try_parse_version(p.value("to", ""));
      std::optional<semver::IncrementType> inc;
      if (p.contains("increment")) inc = semver::increment_type_from_string(p["increment"].get<std::string>());
      else if (from && to && *from < *to) inc = semver::increment_type(*from, *to);
      if (inc) {
        line["increment"] = semver::to_string(*inc);
        results[i].classified = diff::ClassifiedUpdate{p.value("package", ""), *inc, d.change_class};
      }
    } catch (const std::exception& e) {
      line["error"] = e.what();
    }
    results[i].line = std::move(line);
  });

  std::vector<diff::ClassifiedUpdate> classified;
  for (auto& r : results) {
    out.stream() << r.line.dump() << '\n';
    if (r.line.contains("error")) {
      run.count("errors");
      run.exit_code = kExitDataErrors;
      continue;
    }
    run.count("pairs");
    run.count("class." + r.line["class"].get<std::string>());
    if (r.classified) classified.push_back(*r.classified);
  }
  if (!args.distribution.empty()) {
    detail::Output dist(args.distribution);
    run.output(args.distribution);
    report::write_csv_row(dist.stream(), {"package", "increment", "updates", "code-only", "deps-only", "both", "neither"});
    for (const auto& row : diff::content_distribution(classified))
      report::write_csv_row(dist.stream(),
                            {row.package, std::string(semver::to_string(row.increment)), std::to_string(row.total),
                             report::fixed(row.percent(diff::ChangeClass::CodeOnly)),
                             report::fixed(row.percent(diff::ChangeClass::DepsOnly)),
                             report::fixed(row.percent(diff::ChangeClass::Both)),
                             report::fixed(row.percent(diff::ChangeClass::Neither))});
  }
}

struct ReportArgs {
  std::string lag_summary;
  std::string flow;
  std::string usage;
  std::string content;
  std::string out_dir;
};

namespace detail {

inline std::vector<std::map<std::string, std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::vector<std::map<std::string, std::string>> rows;
  if (!std::getline(in, line)) return rows;
  auto header = report::parse_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = report::parse_csv_line(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_text(Run& run, const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
  run.output(path.string());
  run.count("files");
}

inline std::string ecdf_csv(const std::vector<double>& values) {
  std::ostringstream os;
  report::write_csv_row(os, {"x", "F"});
  for (const auto& [x, f] : report::ecdf(values)) report::write_csv_row(os, {report::fixed(x), report::fixed(f)});
  return os.str();
}

}  // namespace detail

inline void cmd_report(Run& run, const ReportArgs& args) {
  if (args.lag_summary.empty() && args.flow.empty() && args.usage.empty() && args.content.empty())
    throw UsageError("report needs at least one of --lag-summary, --flow, --usage, --content");
  std::filesystem::path dir(args.out_dir);
  std::filesystem::create_directories(dir);

  if (!args.lag_summary.empty()) {
    run.manifest.input_paths.push_back(args.lag_summary);
    std::vector<double> percent, days;
    for (const auto& row : detail::read_csv(args.lag_summary)) {
      percent.push_back(std::stod(row.at("percentOutOfDate")));
      if (!row.at("meanOutOfDateDays").empty()) days.push_back(std::stod(row.at("meanOutOfDateDays")));
    }
    detail::write_text(run, dir / "lag-percent-ecdf.csv", detail::ecdf_csv(percent));
    detail::write_text(run, dir / "lag-percent-ecdf.svg",
                       report::ecdf_svg(percent, "Share of dependencies out of date", "percent out of date"));
    detail::write_text(run, dir / "lag-days-ecdf.csv", detail::ecdf_csv(days));
    detail::write_text(run, dir / "lag-days-ecdf.svg",
                       report::ecdf_svg(days, "Mean out-of-date time per package", "days"));
  }

  if (!args.flow.empty()) {
    run.manifest.input_paths.push_back(args.flow);
    std::vector<std::string> problems;
    std::map<std::pair<std::string, std::string>, double> counts;
    std::map<std::string, double> per_increment;
    std::vector<double> delayed_days;
    for (const auto& f : detail::read_json_values(args.flow, problems)) {
      std::string category = f.at("category").get<std::string>();
      std::string inc = f.at("upstream").at("increment").get<std::string>();
      counts[{inc, category}] += 1;
      per_increment[inc] += 1;
      if ((category == "delayed-with-intervention" || category == "delayed-middle-fix") && f["daysToUnblock"].is_number())
        delayed_days.push_back(f["daysToUnblock"].get<double>());
    }
    std::ostringstream csv;
    report::write_csv_row(csv, {"increment", "category", "flows", "percentOfIncrement"});
    std::map<std::pair<std::string, std::string>, double> percent;
    for (const auto& [key, n] : counts) {
      percent[key] = 100.0 * n / per_increment[key.first];
      report::write_csv_row(csv, {key.first, key.second, report::fixed(n, 0), report::fixed(percent[key])});
    }
    detail::write_text(run, dir / "flow-categories.csv", csv.str());
    std::vector<std::string> groups{"bug", "minor", "major"};
    std::vector<std::string> series{"instant-no-intervention", "delayed-with-intervention", "delayed-middle-fix",
                                    "deleted-dependency", "censored"};
    detail::write_text(run, dir / "flow-categories.svg",
                       report::bar_svg(groups, series, percent, "Update flow outcomes", "% of flows"));
    detail::write_text(run, dir / "delayed-days-ecdf.csv", detail::ecdf_csv(delayed_days));
    detail::write_text(run, dir / "delayed-days-ecdf.svg",
                       report::ecdf_svg(delayed_days, "Days until a blocked update flows", "days"));
  }

  if (!args.usage.empty()) {
    run.manifest.input_paths.push_back(args.usage);
    std::map<std::pair<std::string, std::string>, double> percent;
    std::set<std::string> years;
    for (const auto& row : detail::read_csv(args.usage)) {
      years.insert(row.at("year"));
      percent[{row.at("year"), row.at("category")}] = std::stod(row.at("percent"));
    }
    std::vector<std::string> series;
    for (auto c : semver::kCategories) series.emplace_back(semver::to_string(c));
    detail::write_text(run, dir / "constraints-over-time.svg",
                       report::bar_svg({years.begin(), years.end()}, series, percent,
                                       "Constraint categories by year", "% of constraints"));
  }

  if (!args.content.empty()) {
    run.manifest.input_paths.push_back(args.content);
    std::map<std::pair<std::string, std::string>, std::vector<double>> samples;
    std::vector<std::string> classes{"code-only", "deps-only", "both", "neither"};
    for (const auto& row : detail::read_csv(args.content))
      for (const auto& c : classes) samples[{row.at("increment"), c}].push_back(std::stod(row.at(c)));
    std::ostringstream csv;
    report::write_csv_row(csv, {"increment", "class", "packages", "q1", "median", "q3", "mean"});
    std::map<std::pair<std::string, std::string>, double> medians;
    for (const auto& [key, values] : samples) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= values.size();
      medians[key] = report::quantile(values, 0.5);
      report::write_csv_row(csv, {key.first, key.second, std::to_string(values.size()),
                                  report::fixed(report::quantile(values, 0.25)), report::fixed(medians[key]),
                                  report::fixed(report::quantile(values, 0.75)), report::fixed(mean)});
    }
    detail::write_text(run, dir / "contents-by-increment.csv", csv.str());
    detail::write_text(run, dir / "contents-by-increment.svg",
                       report::bar_svg({"bug", "minor", "major"}, classes, medians,
                                       "Median per-package share of update contents", "% of updates"));
  }
}

// ---------------------------------------------------------------------------

namespace detail {

inline void record_options(pipeline::RunManifest& manifest, const CLI::App& sub) {
  for (const CLI::Option* opt : sub.get_options()) {
    std::string name = opt->get_name();
    if (name == "--help" || name == "--run-manifest" || name.empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
    }
    manifest.options[name] = value;
  }
}

inline std::filesystem::path default_manifest_path(const std::string& subcommand, const std::string& out,
                                                   const std::string& store) {
  if (!out.empty() && out != "-") return out + ".run.json";
  if (!store.empty()) return std::filesystem::path(store) / "runs" / (subcommand + ".run.json");
  return "npmhist-" + subcommand + ".run.json";
}

}  // namespace detail

/// Entry point; returns the process exit code.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"Historical analysis of semantic versioning in npm-style registries", "npmhist"};
  app.require_subcommand(1);
  Run ctx;

  auto common = [&](CLI::App* sub, bool needs_store) {
    auto* store = sub->add_option("--store", ctx.store_path, "store directory")->envname(kStoreEnv);
    if (!needs_store) store->description("store directory (local mode)");
    sub->add_option("--jobs,-j", ctx.jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--run-manifest", ctx.run_manifest_path, "where to write the run manifest");
    sub->add_flag("--quiet,-q", ctx.quiet, "suppress progress output");
  };

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "ingest packuments or a CouchDB _changes feed");
  common(ingest_cmd, true);
  ingest_cmd->add_option("inputs", ingest.inputs, "files or directories (- for stdin)")->required();
  ingest_cmd->add_option("--report", ingest.report, "NDJSON file for validation issues");
  ingest_cmd->add_option("--now", ingest.now, "ingestion clock override (RFC 3339)")->group("");

  AdvisoriesArgs adv;
  auto* adv_cmd = app.add_subcommand("advisories", "import OSV advisories");
  common(adv_cmd, true);
  adv_cmd->add_option("inputs", adv.inputs, "OSV JSON files or directories")->required();
  adv_cmd->add_option("--report", adv.report, "NDJSON file for skipped advisories");

  MineArgs mine;
  auto* mine_cmd = app.add_subcommand("mine", "mine updates from every package history");
  common(mine_cmd, true);
  mine_cmd->add_option("--out,-o", mine.out, "updates NDJSON (default stdout)");
  mine_cmd->add_option("--as-of", mine.as_of, "only consider versions published by this time");
  mine_cmd->add_flag("--no-security", mine.no_security, "skip advisory-based security classification");
  mine_cmd->add_option("--distribution", mine.distribution, "per-package increment distribution CSV");
  mine_cmd->add_option("--rejections", mine.rejections, "NDJSON of rejected packages");

  ClassifyArgs classify;
  auto* classify_cmd = app.add_subcommand("classify-constraints", "classify every dependency constraint");
  common(classify_cmd, true);
  classify_cmd->add_option("--out,-o", classify.out, "constraints NDJSON (default stdout)");
  classify_cmd->add_option("--by-year", classify.by_year, "year x category CSV");
  classify_cmd->add_option("--from-year", classify.from_year)->capture_default_str();
  classify_cmd->add_option("--to-year", classify.to_year)->capture_default_str();

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "run the time-traveling registry proxy");
  common(serve_cmd, false);
  serve_cmd->add_option("--listen", serve.listen, "host:port")->capture_default_str();
  serve_cmd->add_option("--mode", serve.mode, "local or upstream")->capture_default_str()->check(CLI::IsMember({"local", "upstream"}));
  serve_cmd->add_option("--upstream", serve.upstream, "upstream registry URL")->capture_default_str();
  serve_cmd->add_option("--cache-dir", serve.cache_dir, "on-disk cache for upstream packuments");

  ResolveArgs resolve;
  auto* resolve_cmd = app.add_subcommand("resolve", "flat time-filtered dependency resolution");
  common(resolve_cmd, true);
  resolve_cmd->add_option("--as-of", resolve.as_of, "resolution time (RFC 3339 or unix ms)")->required();
  resolve_cmd->add_option("--manifest", resolve.manifest, "package.json to resolve");
  resolve_cmd->add_option("--package", resolve.package, "name or name@version from the store");
  resolve_cmd->add_flag("--include-dev", resolve.include_dev, "include the manifest's devDependencies");
  resolve_cmd->add_flag("--skip-non-interval", resolve.skip_non_interval, "ignore URL/tag dependencies");
  resolve_cmd->add_option("--out,-o", resolve.out, "graph NDJSON (default stdout)");
  resolve_cmd->add_option("--lockfile", resolve.lockfile, "lockfile-style summary JSON");

  LagArgs lag;
  auto* lag_cmd = app.add_subcommand("lag", "out-of-date dependencies of each package's latest release");
  common(lag_cmd, true);
  lag_cmd->add_option("--as-of", lag.as_of, "corpus cutoff (RFC 3339 or unix ms)")->required();
  lag_cmd->add_option("--package", lag.packages, "restrict to these packages");
  lag_cmd->add_option("--out,-o", lag.out, "per-dependency NDJSON (default stdout)");
  lag_cmd->add_option("--summary", lag.summary, "per-package CSV");

  FlowArgs flow;
  auto* flow_cmd = app.add_subcommand("flow", "follow updates into downstream packages");
  common(flow_cmd, true);
  flow_cmd->add_option("--updates", flow.updates, "updates NDJSON from `mine` (default: mine the store)");
  flow_cmd->add_option("--before", flow.before, "use each package's latest update before this time");
  flow_cmd->add_option("--package", flow.packages, "restrict to updates of these packages");
  flow_cmd->add_option("--sample", flow.sample, "downstream packages per update")->capture_default_str();
  flow_cmd->add_option("--seed", flow.seed, "sampling seed")->capture_default_str();
  flow_cmd->add_option("--horizon-days", flow.horizon_days, "days to follow each flow")->capture_default_str();
  flow_cmd->add_flag("--frozen", flow.frozen, "observe the pre-update downstream version only");
  flow_cmd->add_option("--out,-o", flow.out, "flow outcomes NDJSON (default stdout)");
  flow_cmd->add_option("--summary", flow.summary, "category x increment CSV");

  DiffArgs diff_args;
  auto* diff_cmd = app.add_subcommand("diff", "classify update contents from tarballs");
  common(diff_cmd, false);
  diff_cmd->add_option("--from", diff_args.from, "older tarball");
  diff_cmd->add_option("--to", diff_args.to, "newer tarball");
  diff_cmd->add_option("--pairs", diff_args.pairs, "NDJSON of {package, from, to, fromTarball, toTarball}");
  diff_cmd->add_option("--out,-o", diff_args.out, "classification NDJSON (default stdout)");
  diff_cmd->add_option("--distribution", diff_args.distribution, "per-package content distribution CSV");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "render CSV tables and SVG charts");
  common(report_cmd, false);
  report_cmd->add_option("--lag-summary", rep.lag_summary, "CSV from `lag --summary`");
  report_cmd->add_option("--flow", rep.flow, "NDJSON from `flow`");
  report_cmd->add_option("--usage", rep.usage, "CSV from `classify-constraints --by-year`");
  report_cmd->add_option("--content", rep.content, "CSV from `diff --distribution`");
  report_cmd->add_option("--out-dir", rep.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  ctx.manifest.subcommand = name;
  ctx.manifest.started_at = store::Store::wall_clock_now();
  detail::record_options(ctx.manifest, *sub);

  std::string out_path;
  if (name == "mine") out_path = mine.out;
  else if (name == "classify-constraints") out_path = classify.out;
  else if (name == "resolve") out_path = resolve.out;
  else if (name == "lag") out_path = lag.out;
  else if (name == "flow") out_path = flow.out;
  else if (name == "diff") out_path = diff_args.out;
  else if (name == "report") out_path = (std::filesystem::path(rep.out_dir) / "report").string();

  try {
    if (name == "ingest") cmd_ingest(ctx, ingest);
    else if (name == "advisories") cmd_advisories(ctx, adv);
    else if (name == "mine") cmd_mine(ctx, mine);
    else if (name == "classify-constraints") cmd_classify(ctx, classify);
    else if (name == "serve") cmd_serve(ctx, serve);
    else if (name == "resolve") cmd_resolve(ctx, resolve);
    else if (name == "lag") cmd_lag(ctx, lag);
    else if (name == "flow") cmd_flow(ctx, flow);
    else if (name == "diff") cmd_diff(ctx, diff_args);
    else if (name == "report") cmd_report(ctx, rep);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << sub->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    ctx.exit_code = kExitDataErrors;
  }

  ctx.manifest.finished_at = store::Store::wall_clock_now();
  ctx.manifest.exit_code = ctx.exit_code;
  try {
    auto path = ctx.run_manifest_path.empty()
                    ? detail::default_manifest_path(name, out_path, ctx.store_path)
                    : std::filesystem::path(ctx.run_manifest_path);
    ctx.manifest.write(path);
  } catch (const std::exception& e) {
    std::cerr << "warning: " << e.what() << '\n';
  }
  return ctx.exit_code;
}

}  // namespace npmhist::cli

#pragma once

// Collection pipeline: task files, easy-task pre-filter, capped dataset assembly with
// quarantine logs, manifest and integrity checks.

#include <openssl/evp.h>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "grmfilter/actors.hpp"
#include "grmfilter/core.hpp"
#include "grmfilter/detail/parallel.hpp"
#include "grmfilter/detail/random.hpp"
#include "grmfilter/errors.hpp"
#include "grmfilter/filtering.hpp"
#include "grmfilter/rubrics.hpp"

namespace grmfilter {

struct TaskSpec {
    std::string task_id;
    std::string task_statement;
    /// Agent-facing prompt; the task statement when absent.
    std::optional<std::string> initial_prompt;
    SideInfo side;
    /// Backend descriptor, e.g. {"backend": "sim", "seed": 7, "difficulty": 2}.
    Json environment = Json::object();

    std::string prompt() const { return initial_prompt.value_or(task_statement); }
};

inline Json to_json(const TaskSpec& t) {
    Json j{{"task_id", t.task_id}, {"task_statement", t.task_statement}};
    if (t.initial_prompt) j["initial_prompt"] = *t.initial_prompt;
    j["ground_truth_patch"] = t.side.ground_truth_patch;
    if (t.side.extra_notes) j["extra_notes"] = *t.side.extra_notes;
    j["environment"] = t.environment;
    return j;
}

inline TaskSpec task_from_json(const Json& j) {
    TaskSpec t;
    t.task_id = j.at("task_id").get<std::string>();
    if (t.task_id.empty()) throw DatasetError("task_id must be non-empty");
    t.task_statement = j.at("task_statement").get<std::string>();
    if (j.contains("initial_prompt")) t.initial_prompt = j.at("initial_prompt").get<std::string>();
    t.side.task_statement = t.task_statement;
    t.side.ground_truth_patch = j.value("ground_truth_patch", std::string());
    if (j.contains("extra_notes") && !j.at("extra_notes").is_null())
        t.side.extra_notes = j.at("extra_notes").get<std::string>();
    t.environment = j.value("environment", Json::object());
    return t;
}

namespace detail {

/// Calls fn(json, line_number) for every non-blank line; parse and schema errors carry the line.
template <class Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open '" + path + "'");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(Json::parse(line), n);
        } catch (const DatasetError&) {
            throw;
        } catch (const std::exception& e) {
            throw DatasetError(path + ": " + e.what(), n);
        }
    }
}

inline std::string to_hex(const unsigned char* data, std::size_t n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xF]);
    }
    return out;
}

}  // namespace detail

inline std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256: digest failed");
    return detail::to_hex(md, len);
}

inline std::string file_content_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open '" + path + "'");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    return "sha256:" + detail::to_hex(md, len);
}

inline std::vector<TaskSpec> read_tasks(const std::string& path) {
    std::vector<TaskSpec> tasks;
    std::set<std::string> seen;
    detail::for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        tasks.push_back(task_from_json(j));
        if (!seen.insert(tasks.back().task_id).second)
            throw DatasetError(path + ": duplicate task_id '" + tasks.back().task_id + "'", line);
    });
    return tasks;
}

inline void write_tasks(const std::string& path, const std::vector<TaskSpec>& tasks) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError("cannot write '" + path + "'");
    for (const auto& t : tasks) out << to_json(t).dump() << '\n';
    if (!out) throw DatasetError("write failed for '" + path + "'");
}

/// Reads a line-delimited trajectory file. With `expected_hash`, the file content hash must match.
inline std::vector<Trajectory> read_dataset(const std::string& path,
                                            const std::optional<std::string>& expected_hash = std::nullopt) {
    if (expected_hash) {
        auto actual = file_content_hash(path);
        if (actual != *expected_hash)
            throw DatasetError("integrity error: " + path + " hashes to " + actual + ", manifest says " + *expected_hash);
    }
    std::vector<Trajectory> out;
    detail::for_each_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(trajectory_from_json(j)); });
    return out;
}

// ---------------------------------------------------------------------------
// Actors per task
// ---------------------------------------------------------------------------

struct TaskActors {
    std::shared_ptr<const Policy> policy;
    std::unique_ptr<Environment> environment;
    /// May be null for baseline runs.
    std::shared_ptr<const Judge> judge;
};

/// Builds fresh actors for one rollout of a task. Called once per rollout, possibly from
/// several threads at once.
using ActorFactory = std::function<TaskActors(const TaskSpec&)>;

// ---------------------------------------------------------------------------
// Easy-task pre-filter
// ---------------------------------------------------------------------------

struct EasyFilterEntry {
    std::string task_id;
    /// Per-trial reward; nullopt for a trial that aborted or could not be evaluated.
    std::vector<std::optional<int>> trials;
    bool removed = false;
    /// "removed", "kept" or "unevaluated-kept".
    std::string status;
    std::vector<std::string> errors;
};

inline Json to_json(const EasyFilterEntry& e) {
    Json trials = Json::array();
    for (const auto& t : e.trials) trials.push_back(t ? Json(*t) : Json());
    Json j{{"task_id", e.task_id}, {"trials", std::move(trials)}, {"status", e.status}};
    if (!e.errors.empty()) j["errors"] = e.errors;
    return j;
}

struct EasyFilterResult {
    std::vector<TaskSpec> survivors;
    std::vector<EasyFilterEntry> log;
};

namespace detail {
inline constexpr std::uint64_t kEasyTag = 0x65617379ULL;
inline constexpr std::uint64_t kCollectTag = 0x636f6c6cULL;
}  // namespace detail

/// Runs `trials` baseline rollouts per task and removes tasks solved in every trial. Trials that
/// abort or cannot be evaluated keep the task.
inline EasyFilterResult filter_easy_tasks(const std::vector<TaskSpec>& tasks, const ActorFactory& factory,
                                          std::size_t trials, const RunConfig& cfg, std::size_t workers = 1) {
    if (trials < 1) throw ContractError("filter_easy_tasks: trials must be at least 1");
    RunConfig base = cfg;
    base.strategy = Strategy::baseline;
    base.candidates = 1;
    std::vector<EasyFilterEntry> log(tasks.size());
    detail::parallel_for(tasks.size(), workers, [&](std::size_t i) {
        const TaskSpec& task = tasks[i];
        EasyFilterEntry& e = log[i];
        e.task_id = task.task_id;
        for (std::size_t k = 0; k < trials; ++k) {
            std::uint64_t seed = grmfilter::detail::derive_seed(
                cfg.seed, {detail::kEasyTag, grmfilter::detail::fnv1a(task.task_id), k});
            try {
                TaskActors actors = factory(task);
                State s0{task.task_id, task.prompt(), {}};
                Trajectory t = rollout_baseline(s0, *actors.policy, *actors.environment, base, seed);
                e.trials.push_back(t.terminal_reward);
                if (!t.terminal_reward) e.errors.push_back("trial " + std::to_string(k) + ": reward unavailable");
            } catch (const RolloutAbort& ex) {
                e.trials.push_back(std::nullopt);
                e.errors.push_back("trial " + std::to_string(k) + ": " + ex.what());
            }
        }
        bool unevaluated = false, all_solved = true;
        for (const auto& r : e.trials) {
            if (!r) unevaluated = true;
            else if (*r != 1) all_solved = false;
        }
        e.removed = !unevaluated && all_solved;
        e.status = e.removed ? "removed" : unevaluated ? "unevaluated-kept" : "kept";
    });
    EasyFilterResult result;
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (!log[i].removed) result.survivors.push_back(tasks[i]);
    result.log = std::move(log);
    return result;
}

// ---------------------------------------------------------------------------
// Collection
// ---------------------------------------------------------------------------

struct CollectOptions {
    RunConfig run;
    std::size_t cap = 500;
    /// Rollouts per task per pass; a task stops early once one is accepted.
    std::size_t rollouts_per_task = 1;
    /// Passes over the tasks not yet accepted, until the cap is reached.
    std::size_t max_passes = 1;
    /// Tasks rolled out concurrently.
    std::size_t workers = 1;
    std::filesystem::path output_dir = "out";
    RubricSet turn_rubrics = default_turn_rubrics();
    RubricSet segment_rubrics = default_segment_rubrics();
    PromptTemplates templates;
    /// Stored verbatim in the manifest.
    Json config_snapshot = Json::object();
};

inline std::vector<std::string> collect_option_violations(const CollectOptions& o) {
    auto v = run_config_violations(o.run);
    if (o.cap < 1) v.push_back("cap must be a positive integer");
    if (o.rollouts_per_task < 1) v.push_back("rollouts_per_task must be at least 1");
    if (o.max_passes < 1) v.push_back("max_passes must be at least 1");
    if (o.workers < 1) v.push_back("workers must be at least 1");
    for (const auto& s : rubric_violations(o.turn_rubrics)) v.push_back("turn rubrics: " + s);
    for (const auto& s : rubric_violations(o.segment_rubrics)) v.push_back("segment rubrics: " + s);
    return v;
}

struct DatasetCounts {
    std::size_t tasks = 0;           ///< tasks in the input
    std::size_t tasks_attempted = 0; ///< tasks with at least one rollout started
    std::size_t rollouts = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t unevaluated = 0;
    std::size_t aborted = 0;
    std::size_t fallback_selections = 0;

    friend bool operator==(const DatasetCounts&, const DatasetCounts&) = default;
};

struct DatasetManifest {
    std::string dataset_path;  ///< relative to the manifest's directory
    DatasetCounts counts;
    std::size_t cap = 0;
    Json config = Json::object();
    std::string content_hash;
    bool cap_reached = false;
};

inline Json to_json(const DatasetManifest& m) {
    const auto& c = m.counts;
    return Json{{"dataset", m.dataset_path},
                {"counts",
                 {{"tasks", c.tasks},
                  {"tasks_attempted", c.tasks_attempted},
                  {"rollouts", c.rollouts},
                  {"accepted", c.accepted},
                  {"rejected", c.rejected},
                  {"unevaluated", c.unevaluated},
                  {"aborted", c.aborted},
                  {"fallback_selections", c.fallback_selections}}},
                {"cap", m.cap},
                {"cap_reached", m.cap_reached},
                {"config", m.config},
                {"content_hash", m.content_hash}};
}

inline DatasetManifest manifest_from_json(const Json& j) {
    DatasetManifest m;
    m.dataset_path = j.at("dataset").get<std::string>();
    const auto& c = j.at("counts");
    m.counts = DatasetCounts{c.at("tasks").get<std::size_t>(),       c.at("tasks_attempted").get<std::size_t>(),
                             c.at("rollouts").get<std::size_t>(),    c.at("accepted").get<std::size_t>(),
                             c.at("rejected").get<std::size_t>(),    c.at("unevaluated").get<std::size_t>(),
                             c.at("aborted").get<std::size_t>(),     c.at("fallback_selections").get<std::size_t>()};
    m.cap = j.at("cap").get<std::size_t>();
    m.cap_reached = j.value("cap_reached", false);
    m.config = j.value("config", Json::object());
    m.content_hash = j.at("content_hash").get<std::string>();
    return m;
}

inline constexpr const char* kDatasetFile = "accepted.jsonl";
inline constexpr const char* kRejectedFile = "rejected.jsonl";
inline constexpr const char* kUnevaluatedFile = "unevaluated.jsonl";
inline constexpr const char* kAbortedFile = "aborted.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kPartialSuffix = ".partial";

/// Writes `content` to `path` via a temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DatasetError("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) throw DatasetError("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

/// Reads a manifest and the dataset it names, checking the content hash.
inline std::pair<DatasetManifest, std::vector<Trajectory>> read_finalized(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw DatasetError("cannot open manifest '" + manifest_path.string() + "'");
    DatasetManifest m;
    try {
        m = manifest_from_json(Json::parse(in));
    } catch (const std::exception& e) {
        throw DatasetError("malformed manifest '" + manifest_path.string() + "': " + e.what());
    }
    auto data = manifest_path.parent_path() / m.dataset_path;
    auto records = read_dataset(data.string(), m.content_hash);
    return {std::move(m), std::move(records)};
}

namespace detail {

/// Line-delimited appender shared by worker threads.
class JsonlWriter {
public:
    explicit JsonlWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw DatasetError("cannot write '" + path.string() + "'");
    }

    void append(const Json& j) {
        std::lock_guard lock(mutex_);
        out_ << j.dump() << '\n';
        out_.flush();
        if (!out_) throw DatasetError("write failed for '" + path_.string() + "'");
    }

    void close() {
        std::lock_guard lock(mutex_);
        out_.close();
        if (out_.fail()) throw DatasetError("close failed for '" + path_.string() + "'");
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::mutex mutex_;
};

struct RolloutResult {
    std::optional<Trajectory> trajectory;
    std::string abort_reason;
    std::size_t attempt = 0;
};

}  // namespace detail

inline std::uint64_t rollout_seed(std::uint64_t root, const std::string& task_id, std::size_t pass, std::size_t attempt) {
    return grmfilter::detail::derive_seed(root,
                                          {detail::kCollectTag, grmfilter::detail::fnv1a(task_id), pass, attempt});
}

/// Runs the configured strategy over `tasks` and keeps trajectories with reward 1 until `cap`
/// records are written. Tasks are processed in batches of `workers`; results are committed in
/// task order, so output does not depend on the worker count.
inline DatasetManifest collect_dataset(const std::vector<TaskSpec>& tasks, const ActorFactory& factory,
                                       const CollectOptions& opts) {
    namespace fs = std::filesystem;
    auto violations = collect_option_violations(opts);
    if (!violations.empty()) throw ConfigError(std::move(violations));
    if (tasks.empty()) throw ContractError("collect_dataset: no tasks");

    const RunConfig& cfg = opts.run;
    const RubricSet& rubrics = cfg.strategy == Strategy::segment_level ? opts.segment_rubrics : opts.turn_rubrics;

    // Fail fast on capability mismatches, before any rollout runs.
    {
        TaskActors probe = factory(tasks.front());
        if (!probe.policy || !probe.environment) throw ContractError("actor factory returned an incomplete set");
        if (cfg.strategy != Strategy::baseline && !probe.judge)
            throw ConfigError({std::string(to_string(cfg.strategy)) + " requires a judge"});
        if (cfg.strategy == Strategy::segment_level && !probe.environment->capabilities().snapshot)
            throw CapabilityError("segment-level filtering requires a snapshot-capable environment (" +
                                  probe.environment->descriptor() + ")");
        if (cfg.strategy != Strategy::baseline && !opts.templates.allow_patch_free &&
            tasks.front().side.ground_truth_patch.empty())
            throw ConfigError({"task " + tasks.front().task_id +
                               " has no ground-truth patch and patch-free judging is disabled"});
    }

    fs::create_directories(opts.output_dir);
    const fs::path dataset_final = opts.output_dir / kDatasetFile;
    fs::path dataset_partial = dataset_final;
    dataset_partial += kPartialSuffix;
    std::error_code ec;
    fs::remove(dataset_final, ec);
    fs::remove(opts.output_dir / kManifestFile, ec);

    detail::JsonlWriter accepted(dataset_partial);
    detail::JsonlWriter rejected(opts.output_dir / kRejectedFile);
    detail::JsonlWriter unevaluated(opts.output_dir / kUnevaluatedFile);
    detail::JsonlWriter aborted(opts.output_dir / kAbortedFile);

    DatasetManifest manifest;
    manifest.cap = opts.cap;
    manifest.config = opts.config_snapshot;
    manifest.counts.tasks = tasks.size();
    std::vector<char> task_done(tasks.size(), 0);
    std::vector<char> task_started(tasks.size(), 0);

    auto run_task = [&](std::size_t ti, std::size_t pass) {
        const TaskSpec& task = tasks[ti];
        std::vector<detail::RolloutResult> results;
        for (std::size_t attempt = 0; attempt < opts.rollouts_per_task; ++attempt) {
            detail::RolloutResult r;
            r.attempt = attempt;
            try {
                TaskActors actors = factory(task);
                State s0{task.task_id, task.prompt(), {}};
                std::optional<GrmContext> grm;
                if (actors.judge) grm.emplace(GrmContext{*actors.judge, rubrics, task.side, opts.templates});
                r.trajectory = rollout(s0, *actors.policy, actors.environment, grm ? &*grm : nullptr, cfg,
                                       rollout_seed(cfg.seed, task.task_id, pass, attempt));
            } catch (const RolloutAbort& e) {
                r.abort_reason = e.what();
            }
            bool ok = r.trajectory && r.trajectory->terminal_reward && *r.trajectory->terminal_reward == 1;
            results.push_back(std::move(r));
            if (ok) break;
        }
        return results;
    };

    bool full = false;
    for (std::size_t pass = 0; pass < opts.max_passes && !full; ++pass) {
        std::vector<std::size_t> pending;
        for (std::size_t i = 0; i < tasks.size(); ++i)
            if (!task_done[i]) pending.push_back(i);
        for (std::size_t start = 0; start < pending.size() && !full; start += opts.workers) {
            std::size_t count = std::min(opts.workers, pending.size() - start);
            std::vector<std::vector<detail::RolloutResult>> batch(count);
            detail::parallel_for(count, opts.workers, [&](std::size_t k) { batch[k] = run_task(pending[start + k], pass); });
            for (std::size_t k = 0; k < count && !full; ++k) {
                std::size_t ti = pending[start + k];
                for (auto& r : batch[k]) {
                    if (full) break;
                    if (!task_started[ti]) {
                        task_started[ti] = 1;
                        ++manifest.counts.tasks_attempted;
                    }
                    ++manifest.counts.rollouts;
                    if (!r.trajectory) {
                        ++manifest.counts.aborted;
                        aborted.append(Json{{"task_id", tasks[ti].task_id},
                                            {"pass", pass},
                                            {"attempt", r.attempt},
                                            {"error", r.abort_reason}});
                        continue;
                    }
                    Trajectory& t = *r.trajectory;
                    manifest.counts.fallback_selections += t.provenance.fallbacks;
                    if (!t.terminal_reward) {
                        ++manifest.counts.unevaluated;
                        unevaluated.append(to_json(t));
                    } else if (accept(t)) {
                        ++manifest.counts.accepted;
                        accepted.append(to_json(t));
                        task_done[ti] = 1;
                        full = manifest.counts.accepted >= opts.cap;
                    } else {
                        ++manifest.counts.rejected;
                        rejected.append(to_json(t));
                    }
                }
            }
        }
    }

    accepted.close();
    rejected.close();
    unevaluated.close();
    aborted.close();
    fs::rename(dataset_partial, dataset_final);
    manifest.dataset_path = kDatasetFile;
    manifest.cap_reached = full;
    manifest.content_hash = file_content_hash(dataset_final.string());
    write_file_atomic(opts.output_dir / kManifestFile, to_json(manifest).dump(2) + "\n");
    return manifest;
}

}  // namespace grmfilter

#pragma once

// Deterministic, snapshot-capable bug-fixing simulator with a scripted policy and an
// oracle judge that scores candidates from simulator ground truth.
//
// Observation texts are fixed strings; the analyzer's default registry matches them.

#include <algorithm>
#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grmfilter/actors.hpp"
#include "grmfilter/core.hpp"
#include "grmfilter/detail/random.hpp"
#include "grmfilter/rubrics.hpp"

namespace grmfilter::sim {

inline constexpr const char* kSimVersion = "sim-1";

inline constexpr const char* kAgentSystemPrompt =
    "You are a software engineering agent working inside a Python repository. Resolve the issue "
    "below using the available tools, one tool call per turn:\n"
    "- execute_bash(command): run a shell command (ls, find, cat, grep, python, pytest)\n"
    "- view(path, view_range): show lines [start, end] of a file\n"
    "- str_replace(path, old_str, new_str): replace the first occurrence of old_str in a file\n"
    "- create(path, file_text): create a new file\n"
    "- finish(summary): end the episode\n"
    "Suggested workflow: run the existing tests, inspect the relevant files, create and run a "
    "reproduction script, fix the bug, re-run the tests and the reproduction script, write a more "
    "comprehensive test script, then finish.";

struct Location {
    std::string path;
    std::size_t line = 0;  ///< 0-based
    friend bool operator==(const Location&, const Location&) = default;
};

struct SimTask {
    std::uint64_t seed = 0;
    std::size_t difficulty = 0;
    std::string task_id;
    std::map<std::string, std::vector<std::string>> files;
    Location bug_location;
    std::string buggy_line;
    std::string correct_line;
    std::string function_name;
    std::vector<Location> decoys;
    std::string task_statement;
    std::string ground_truth_patch;

    std::string initial_prompt() const {
        return std::string(kAgentSystemPrompt) + "\n\n<issue>\n" + task_statement + "\n</issue>";
    }
};

namespace detail {

struct FunctionShape {
    const char* name;
    const char* lhs;
    const char* rhs;
    const char* good_op;
    const char* bad_op;
    const char* describe;
    long good_value;  // with lhs=6, rhs=3
    long bad_value;
};

inline constexpr std::array<FunctionShape, 6> kShapes{{
    {"total_price", "price", "tax", "+", "-", "sum", 9, 3},
    {"area", "width", "height", "*", "+", "product", 18, 9},
    {"ratio", "num", "den", "//", "*", "integer quotient", 2, 18},
    {"difference", "left", "right", "-", "+", "difference", 3, 9},
    {"scaled", "value", "factor", "*", "-", "scaled value", 18, 3},
    {"remaining", "budget", "spent", "-", "*", "remainder", 3, 18},
}};

inline constexpr std::array<const char*, 8> kModules{
    {"billing", "inventory", "metrics", "geometry", "scheduler", "ledger", "pricing", "shipping"}};

inline constexpr std::array<const char*, 6> kHelperNames{
    {"normalize", "clamp", "to_cents", "round_half", "is_positive", "identity"}};

/// The binary operator of a `return lhs OP rhs` line, with its surrounding spaces.
inline std::string operator_token(const std::string& line) {
    for (const char* op : {" // ", " * ", " - ", " + "})
        if (line.find(op) != std::string::npos) return op;
    return " ";
}

inline std::vector<std::string> helper_function(const char* name, std::uint64_t k) {
    return {std::string("def ") + name + "(value):",
            "    \"\"\"Internal helper.\"\"\"",
            "    return value * " + std::to_string(k % 5 + 1),
            ""};
}

}  // namespace detail

/// Deterministic in (seed, difficulty). One buggy line, `difficulty` decoy files.
inline SimTask make_task(std::uint64_t seed, std::size_t difficulty) {
    grmfilter::detail::Rng rng(grmfilter::detail::derive_seed(seed, {0x7461736bULL, difficulty}));
    const auto& shape = detail::kShapes[rng.below(detail::kShapes.size())];
    std::string module = detail::kModules[rng.below(detail::kModules.size())];

    SimTask t;
    t.seed = seed;
    t.difficulty = difficulty;
    t.task_id = "sim-" + std::to_string(seed) + "-d" + std::to_string(difficulty);
    t.function_name = shape.name;

    const std::string bug_path = "src/" + module + ".py";
    std::vector<std::string> lines{"\"\"\"" + module + " utilities.\"\"\"", ""};
    std::size_t helpers_before = 1 + rng.below(3);
    std::size_t helpers_after = rng.below(3);
    for (std::size_t h = 0; h < helpers_before; ++h) {
        auto f = detail::helper_function(detail::kHelperNames[(h + seed) % detail::kHelperNames.size()], rng.next());
        lines.insert(lines.end(), f.begin(), f.end());
    }
    std::string indent = "    ";
    t.correct_line = indent + "return " + shape.lhs + " " + shape.good_op + " " + shape.rhs;
    t.buggy_line = indent + "return " + shape.lhs + " " + shape.bad_op + " " + shape.rhs;
    lines.push_back(std::string("def ") + shape.name + "(" + shape.lhs + ", " + shape.rhs + "):");
    lines.push_back(std::string("    \"\"\"Return the ") + shape.describe + " of " + shape.lhs + " and " + shape.rhs +
                    ".\"\"\"");
    t.bug_location = Location{bug_path, lines.size()};
    lines.push_back(t.buggy_line);
    lines.push_back("");
    for (std::size_t h = 0; h < helpers_after; ++h) {
        auto f = detail::helper_function(detail::kHelperNames[(h + 3 + seed) % detail::kHelperNames.size()],
                                         rng.next());
        lines.insert(lines.end(), f.begin(), f.end());
    }
    t.files[bug_path] = lines;

    for (std::size_t d = 0; d < difficulty; ++d) {
        const auto& ds = detail::kShapes[rng.below(detail::kShapes.size())];
        std::string path = "src/" + module + "_util" + std::to_string(d + 1) + ".py";
        std::vector<std::string> dl{"\"\"\"Helpers for " + module + ".\"\"\"", "",
                                    std::string("def ") + ds.name + "_" + std::to_string(d + 1) + "(" + ds.lhs + ", " +
                                        ds.rhs + "):"};
        t.decoys.push_back(Location{path, dl.size()});
        dl.push_back(std::string("    return ") + ds.lhs + " " + ds.bad_op + " " + ds.rhs + "  # legacy behaviour");
        dl.push_back("");
        t.files[path] = std::move(dl);
    }

    t.task_statement = std::string("`") + shape.name + "` in `" + bug_path + "` returns the wrong result: " +
                       shape.name + "(6, 3) should return " + std::to_string(shape.good_value) + " but returns " +
                       std::to_string(shape.bad_value) + ".";
    std::string ln = std::to_string(t.bug_location.line + 1);
    t.ground_truth_patch = "diff --git a/" + bug_path + " b/" + bug_path + "\n--- a/" + bug_path + "\n+++ b/" +
                           bug_path + "\n@@ -" + ln + ",1 +" + ln + ",1 @@\n-" + t.buggy_line + "\n+" +
                           t.correct_line + "\n";
    return t;
}

// ---------------------------------------------------------------------------
// World state and tool semantics
// ---------------------------------------------------------------------------

namespace msg {
inline std::string path_missing(const std::string& p) {
    return "ERROR: The path " + p + " does not exist. Please provide a valid path.";
}
inline std::string no_such_file(const std::string& tool, const std::string& p) {
    return tool + ": " + p + ": No such file or directory";
}
inline std::string python_missing(const std::string& p) {
    return "python: can't open file '" + p + "': [Errno 2] No such file or directory";
}
inline std::string range_reversed(long a, long b) {
    return "ERROR: Invalid `view_range` parameter: [" + std::to_string(a) + ", " + std::to_string(b) +
           "]. Its first element `" + std::to_string(a) + "` should be less than or equal to its second element `" +
           std::to_string(b) + "` (start line exceeds end line).";
}
inline std::string range_out_of_bounds(long a, long b, std::size_t n) {
    return "ERROR: Invalid `view_range` parameter: [" + std::to_string(a) + ", " + std::to_string(b) +
           "]. It should be within the range of lines of the file: [1, " + std::to_string(n) + "].";
}
inline std::string range_malformed(const std::string& r) {
    return "ERROR: Invalid `view_range` parameter: " + r + ". It should be a list of two integers.";
}
inline std::string replace_missing(const std::string& old_str, const std::string& p) {
    return "ERROR: No replacement was performed, old_str `" + old_str + "` did not appear verbatim in " + p + ".";
}
}  // namespace msg

/// Mutable file state of one episode.
class SimWorld {
public:
    explicit SimWorld(std::shared_ptr<const SimTask> task) : task_(std::move(task)), files_(task_->files) {}

    const SimTask& task() const noexcept { return *task_; }
    const std::map<std::string, std::vector<std::string>>& files() const noexcept { return files_; }

    /// Bug fixed: the correct line is present and the buggy one is gone.
    bool fixed() const {
        auto it = files_.find(task_->bug_location.path);
        if (it == files_.end()) return false;
        const auto& lines = it->second;
        bool has_good = std::find(lines.begin(), lines.end(), task_->correct_line) != lines.end();
        bool has_bad = std::find(lines.begin(), lines.end(), task_->buggy_line) != lines.end();
        return has_good && !has_bad;
    }

    /// The buggy line was replaced by something other than the correct line.
    bool broken() const {
        auto it = files_.find(task_->bug_location.path);
        if (it == files_.end()) return true;
        const auto& lines = it->second;
        return std::find(lines.begin(), lines.end(), task_->correct_line) == lines.end() &&
               std::find(lines.begin(), lines.end(), task_->buggy_line) == lines.end();
    }

    /// Error category the action would produce, without executing it.
    std::optional<ErrorTag> predict_error(const Action& a) const {
        SimWorld copy = *this;
        return copy.apply(a).error_tag;
    }

    Observation apply(const Action& a) {
        switch (a.kind) {
            case ActionKind::finish: return Observation::finish();
            case ActionKind::null: throw ContractError("sim: null action");
            default: break;
        }
        if (a.tool_name == "view") return view(*a.argument("path"), a.argument("view_range"));
        if (a.tool_name == "str_replace")
            return replace(*a.argument("path"), *a.argument("old_str"), *a.argument("new_str"));
        if (a.tool_name == "create") return create(*a.argument("path"), *a.argument("file_text"));
        const std::string* cmd = a.argument("command");
        return bash(cmd ? *cmd : a.raw_text);
    }

private:
    static std::string join(const std::vector<std::string>& lines) {
        std::string out;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (i) out += '\n';
            out += lines[i];
        }
        return out;
    }

    static std::vector<std::string> split(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : text) {
            if (c == '\n') {
                out.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        out.push_back(cur);
        return out;
    }

    static std::string numbered(const std::vector<std::string>& lines, std::size_t from, std::size_t to) {
        std::string out;
        for (std::size_t i = from; i <= to; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%6zu\t", i);
            out += buf + lines[i - 1];
            if (i != to) out += '\n';
        }
        return out;
    }

    static std::string normalize(std::string p) {
        while (p.rfind("./", 0) == 0) p.erase(0, 2);
        if (p.rfind("/repo/", 0) == 0) p.erase(0, 6);
        return p;
    }

    bool is_dir(const std::string& p) const {
        if (p.empty() || p == "." || p == "/repo") return true;
        std::string prefix = p.back() == '/' ? p : p + "/";
        return std::any_of(files_.begin(), files_.end(), [&](const auto& kv) { return kv.first.rfind(prefix, 0) == 0; });
    }

    Observation view(const std::string& raw_path, const std::string* range) {
        std::string p = normalize(raw_path);
        auto it = files_.find(p);
        if (it == files_.end()) {
            if (is_dir(p)) return Observation::text(listing(p));
            return Observation::text(msg::path_missing(raw_path), ErrorTag::path_not_found);
        }
        const auto& lines = it->second;
        long a = 1;
        long b = static_cast<long>(lines.size());
        if (range) {
            static const std::regex re(R"(^\s*\[?\s*(-?\d+)\s*,\s*(-?\d+)\s*\]?\s*$)");
            std::smatch m;
            if (!std::regex_match(*range, m, re))
                return Observation::text(msg::range_malformed(*range), ErrorTag::invalid_view_range);
            a = std::stol(m[1]);
            b = std::stol(m[2]);
            if (b == -1) b = static_cast<long>(lines.size());
            if (a > b) return Observation::text(msg::range_reversed(a, b), ErrorTag::invalid_view_range);
            if (a < 1 || b > static_cast<long>(lines.size()))
                return Observation::text(msg::range_out_of_bounds(a, b, lines.size()), ErrorTag::invalid_view_range);
        }
        return Observation::text("Here's the result of running `cat -n` on " + p + ":\n" +
                                 numbered(lines, static_cast<std::size_t>(a), static_cast<std::size_t>(b)));
    }

    Observation replace(const std::string& raw_path, const std::string& old_str, const std::string& new_str) {
        std::string p = normalize(raw_path);
        auto it = files_.find(p);
        if (it == files_.end()) return Observation::text(msg::path_missing(raw_path), ErrorTag::path_not_found);
        std::string text = join(it->second);
        auto pos = old_str.empty() ? std::string::npos : text.find(old_str);
        if (pos == std::string::npos)
            return Observation::text(msg::replace_missing(old_str, p), ErrorTag::replace_failed);
        text.replace(pos, old_str.size(), new_str);
        it->second = split(text);
        return Observation::text("The file " + p + " has been edited successfully.");
    }

    Observation create(const std::string& raw_path, const std::string& body) {
        std::string p = normalize(raw_path);
        if (files_.count(p))
            return Observation::text("ERROR: File already exists at: " + p +
                                         ". Cannot overwrite files using command `create`.",
                                     ErrorTag::other_error);
        files_[p] = split(body);
        return Observation::text("File created successfully at: " + p);
    }

    std::string listing(const std::string& dir) const {
        std::string prefix = (dir.empty() || dir == "." || dir == "/repo") ? "" : (dir.back() == '/' ? dir : dir + "/");
        std::string out;
        for (const auto& [path, _] : files_) {
            if (path.rfind(prefix, 0) != 0) continue;
            if (!out.empty()) out += '\n';
            out += "./" + path;
        }
        return out.empty() ? "(empty)" : out;
    }

    Observation run_tests() const {
        if (fixed()) return Observation::text("============================= 12 passed in 0.04s =============================");
        const auto& t = *task_;
        return Observation::text("FAILED tests/test_" + t.function_name + ".py::test_" + t.function_name +
                                 " - AssertionError: " + t.function_name + "(6, 3) returned a wrong value\n"
                                 "========================= 1 failed, 11 passed in 0.04s =========================");
    }

    Observation run_script(const std::string& raw_path) const {
        std::string p = normalize(raw_path);
        if (!files_.count(p)) return Observation::text(msg::python_missing(raw_path), ErrorTag::path_not_found);
        if (p.rfind("src/", 0) == 0) return Observation::text("(no output)");
        if (fixed()) return Observation::text(p + ": all checks passed");
        return Observation::text("Traceback (most recent call last):\n  File \"" + p +
                                 "\", line 4, in <module>\nAssertionError: " + task_->function_name +
                                 "(6, 3) returned a wrong value");
    }

    Observation bash(const std::string& raw) {
        std::string cmd = raw;
        // `cd <dir> && rest` runs rest.
        static const std::regex cd_re(R"(^\s*cd\s+(\S+)\s*&&\s*([\s\S]*)$)");
        std::smatch m;
        while (std::regex_match(cmd, m, cd_re)) {
            std::string dir = normalize(m[1]);
            if (!is_dir(dir)) return Observation::text("bash: cd: " + std::string(m[1]) + ": No such file or directory",
                                                       ErrorTag::path_not_found);
            cmd = m[2];
        }
        std::istringstream ss(cmd);
        std::vector<std::string> argv;
        for (std::string w; ss >> w;) argv.push_back(w);
        if (argv.empty()) return Observation::text("bash: empty command", ErrorTag::other_error);
        const std::string& prog = argv[0];

        if (cmd.find("pytest") != std::string::npos || cmd.find("unittest") != std::string::npos) return run_tests();
        if ((prog == "python" || prog == "python3") && argv.size() == 2) return run_script(argv[1]);
        if (prog == "ls" || prog == "find") {
            std::string target = ".";
            for (std::size_t i = 1; i < argv.size(); ++i)
                if (argv[i][0] != '-') {
                    target = normalize(argv[i]);
                    break;
                }
            if (!is_dir(target) && !files_.count(target))
                return Observation::text(prog + ": cannot access '" + target + "': No such file or directory",
                                         ErrorTag::path_not_found);
            return Observation::text(files_.count(target) ? "./" + target : listing(target));
        }
        if (prog == "cat" && argv.size() == 2) {
            std::string p = normalize(argv[1]);
            auto it = files_.find(p);
            if (it == files_.end()) return Observation::text(msg::no_such_file("cat", argv[1]), ErrorTag::path_not_found);
            std::string body = join(it->second);
            return Observation::text(body.empty() ? "(empty file)" : body);
        }
        if (prog == "grep" && argv.size() >= 2) {
            std::string needle;
            for (std::size_t i = 1; i < argv.size(); ++i)
                if (argv[i][0] != '-') {
                    needle = argv[i];
                    break;
                }
            if (needle.size() >= 2 && (needle.front() == '"' || needle.front() == '\'')) needle = needle.substr(1, needle.size() - 2);
            std::string out;
            for (const auto& [path, lines] : files_)
                for (std::size_t i = 0; i < lines.size(); ++i)
                    if (!needle.empty() && lines[i].find(needle) != std::string::npos) {
                        if (!out.empty()) out += '\n';
                        out += "./" + path + ":" + std::to_string(i + 1) + ":" + lines[i];
                    }
            return Observation::text(out.empty() ? "(no matches)" : out);
        }
        return Observation::text("bash: " + prog + ": command not found", ErrorTag::other_error);
    }

    std::shared_ptr<const SimTask> task_;
    std::map<std::string, std::vector<std::string>> files_;
};

/// Replays every real action of the trajectory on a fresh world and checks the fix.
inline RewardOutcome sim_reward(const SimTask& task, const Trajectory& trajectory) {
    SimWorld world(std::make_shared<const SimTask>(task));
    for (const auto& s : trajectory.steps) {
        if (s.is_null() || s.action.kind == ActionKind::finish) break;
        world.apply(s.action);
    }
    bool ok = world.fixed();
    return RewardOutcome{ok ? 1 : 0, ok ? "tests pass" : "FAILED test_" + task.function_name};
}

struct SimEnvOptions {
    bool snapshot = true;
    bool deterministic = true;
    /// Makes the reward harness fail (used to exercise the unevaluated path).
    bool broken_reward = false;
};

/// Environment backed by SimWorld. In nondeterministic mode test runs report a run-dependent
/// duration, so equal actions on different instances can yield different observations.
class SimEnvironment final : public Environment {
public:
    SimEnvironment(std::shared_ptr<const SimTask> task, SimEnvOptions options = {})
        : world_(std::move(task)), options_(options), jitter_(jitter_seed()) {}

    std::string descriptor() const override { return std::string(kSimVersion) + ":" + world_.task().task_id; }

    EnvironmentCapabilities capabilities() const override { return {options_.deterministic, options_.snapshot}; }

    const SimWorld& world() const noexcept { return world_; }

protected:
    Observation do_execute(const State&, const Action& action) override {
        Observation o = world_.apply(action);
        if (!options_.deterministic && o.raw_text.find(" in 0.04s ") != std::string::npos) {
            char buf[32];
            std::snprintf(buf, sizeof buf, " in 0.%02llus ", static_cast<unsigned long long>(jitter_.below(100)));
            o.raw_text.replace(o.raw_text.find(" in 0.04s "), 10, buf);
        }
        return o;
    }

    RewardOutcome do_terminal_reward(const Trajectory&) const override {
        if (options_.broken_reward) throw RewardEvaluationError(descriptor() + ": simulated test-harness failure");
        bool ok = world_.fixed();
        return RewardOutcome{ok ? 1 : 0, ok ? "tests pass" : "FAILED test_" + world_.task().function_name};
    }

    std::unique_ptr<Environment> clone() const override {
        if (!options_.snapshot) return Environment::clone();
        std::unique_ptr<SimEnvironment> copy(new SimEnvironment(*this));
        copy->copy_episode_flags_from(*this);
        return copy;
    }

private:
    SimEnvironment(const SimEnvironment& other)
        : Environment(), world_(other.world_), options_(other.options_), jitter_(jitter_seed()) {}

    static std::uint64_t jitter_seed() {
        static std::atomic<std::uint64_t> serial{0};
        return grmfilter::detail::splitmix64(serial.fetch_add(1));
    }

    SimWorld world_;
    SimEnvOptions options_;
    grmfilter::detail::Rng jitter_;
};

// ---------------------------------------------------------------------------
// Ideal workflow
// ---------------------------------------------------------------------------

enum class Stage : std::size_t {
    run_tests,
    inspect,
    create_repro,
    run_repro,
    fix,
    rerun_tests,
    rerun_repro,
    create_comprehensive,
    run_comprehensive,
    finish,
    done,
};

inline constexpr std::size_t kStageCount = static_cast<std::size_t>(Stage::done);
inline constexpr const char* kReproScript = "reproduce_error.py";
inline constexpr const char* kComprehensiveScript = "comprehensive_tests.py";

inline Action workflow_action(const SimTask& task, Stage stage) {
    const auto& bug = task.bug_location.path;
    switch (stage) {
        case Stage::run_tests:
        case Stage::rerun_tests: return make_action("execute_bash", {{"command", "python -m pytest tests/ -q"}});
        case Stage::inspect: {
            auto n = task.files.at(bug).size();
            return make_action("view", {{"path", bug}, {"view_range", "[1, " + std::to_string(n) + "]"}});
        }
        case Stage::create_repro: {
            std::string mod = bug.substr(4, bug.size() - 7);
            return make_action("create", {{"path", kReproScript},
                                          {"file_text", "from src." + mod + " import " + task.function_name +
                                                            "\n\nresult = " + task.function_name +
                                                            "(6, 3)\nprint(result)\nassert result == expected, result\n"}});
        }
        case Stage::run_repro:
        case Stage::rerun_repro: return make_action("execute_bash", {{"command", std::string("python ") + kReproScript}});
        case Stage::fix:
            return make_action("str_replace", {{"path", bug}, {"old_str", task.buggy_line}, {"new_str", task.correct_line}});
        case Stage::create_comprehensive: {
            std::string mod = bug.substr(4, bug.size() - 7);
            return make_action("create", {{"path", kComprehensiveScript},
                                          {"file_text", "from src." + mod + " import " + task.function_name +
                                                            "\n\nfor a, b in [(6, 3), (0, 1), (10, 5), (-4, 2)]:\n"
                                                            "    " + task.function_name + "(a, b)\nprint('ok')\n"}});
        }
        case Stage::run_comprehensive:
            return make_action("execute_bash", {{"command", std::string("python ") + kComprehensiveScript}});
        case Stage::finish:
        case Stage::done: return make_finish("Fixed " + task.function_name + " and verified with tests.");
    }
    return make_finish();
}

inline bool same_call(const Action& a, const Action& b) {
    return a.tool_name == b.tool_name && a.arguments == b.arguments;
}

/// First stage of the ideal workflow not yet completed, scanning the history in order.
/// A stage completes when its action appears and succeeds.
inline Stage workflow_progress(const SimTask& task, const std::vector<Step>& history) {
    std::size_t p = 0;
    for (const auto& s : history) {
        if (p >= kStageCount || s.is_null()) break;
        if (same_call(s.action, workflow_action(task, static_cast<Stage>(p))) && !s.observation.error_tag) ++p;
    }
    return static_cast<Stage>(p);
}

// ---------------------------------------------------------------------------
// Scripted policy
// ---------------------------------------------------------------------------

enum class Noise : std::size_t { redundant_view, bad_path, invalid_view_range, malformed_edit, repeat_last };
inline constexpr std::size_t kNoiseCount = 5;

inline std::string_view to_string(Noise n) {
    switch (n) {
        case Noise::redundant_view: return "redundant_view";
        case Noise::bad_path: return "bad_path";
        case Noise::invalid_view_range: return "invalid_view_range";
        case Noise::malformed_edit: return "malformed_edit";
        case Noise::repeat_last: return "repeat_last";
    }
    return "redundant_view";
}

struct ScriptedPolicyConfig {
    /// Probability that a candidate is the workflow-optimal next action.
    double competence = 0.6;
    /// Probabilities over Noise entries, in enum order.
    std::array<double, kNoiseCount> noise_menu{0.2, 0.2, 0.2, 0.2, 0.2};
    std::uint64_t seed = 0;

    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (!(competence >= 0.0 && competence <= 1.0)) out.push_back("policy.competence must be in [0, 1]");
        double sum = 0.0;
        for (double p : noise_menu) {
            if (p < 0.0) out.push_back("policy.noise_menu entries must be non-negative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) out.push_back("policy.noise_menu must sum to 1");
        return out;
    }
};

inline Action noise_action(const SimTask& task, const std::vector<Step>& history, Noise kind,
                           grmfilter::detail::Rng& rng) {
    const auto& bug = task.bug_location.path;
    auto bug_lines = static_cast<long>(task.files.at(bug).size());
    switch (kind) {
        case Noise::repeat_last:
            if (!history.empty()) {
                const Action& last = history.back().action;
                return make_action(last.tool_name, last.arguments);
            }
            [[fallthrough]];
        case Noise::redundant_view: {
            auto it = task.files.begin();
            std::advance(it, static_cast<long>(rng.below(task.files.size())));
            auto n = static_cast<long>(it->second.size());
            long a = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(n)));
            long b = a + static_cast<long>(rng.below(static_cast<std::uint64_t>(n - a + 1)));
            return make_action("view", {{"path", it->first},
                                        {"view_range", "[" + std::to_string(a) + ", " + std::to_string(b) + "]"}});
        }
        case Noise::bad_path: {
            std::string mod = bug.substr(4, bug.size() - 7);
            std::array<std::string, 3> missing{"tests/test_" + mod + ".py", "src/" + mod + "_helpers.py",
                                               "lib/" + mod + ".py"};
            const auto& p = missing[rng.below(missing.size())];
            if (rng.coin()) return make_action("view", {{"path", p}});
            return make_action("execute_bash", {{"command", "cat " + p}});
        }
        case Noise::invalid_view_range: {
            long hi = 2 + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::max(1L, bug_lines - 1))));
            long lo = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(hi - 1)));
            return make_action("view", {{"path", bug},
                                        {"view_range", "[" + std::to_string(hi) + ", " + std::to_string(lo) + "]"}});
        }
        case Noise::malformed_edit: {
            if (rng.coin()) {
                // Matches, but writes a third operator: the file ends up neither buggy nor fixed.
                std::string wrong = task.buggy_line;
                for (const char* op : {" // ", " * ", " - ", " + "}) {
                    auto pos = task.buggy_line.find(detail::operator_token(task.buggy_line));
                    if (pos == std::string::npos) break;
                    std::string cand = task.buggy_line;
                    cand.replace(pos, detail::operator_token(task.buggy_line).size(), op);
                    if (cand != task.buggy_line && cand != task.correct_line) {
                        wrong = cand;
                        break;
                    }
                }
                return make_action("str_replace", {{"path", bug}, {"old_str", task.buggy_line}, {"new_str", wrong}});
            }
            std::string wrong = task.buggy_line.substr(4);  // dropped indentation plus a stray token
            wrong = "  " + wrong + " ;";
            return make_action("str_replace", {{"path", bug}, {"old_str", wrong}, {"new_str", task.correct_line}});
        }
    }
    return make_finish();
}

/// Seeded simulator policy bound to one task. Candidate k draws from derive_seed(seed, {k});
/// with temperature 0 all candidates share one draw.
class ScriptedPolicy final : public Policy {
public:
    ScriptedPolicy(std::shared_ptr<const SimTask> task, ScriptedPolicyConfig cfg, SamplingParams params = {})
        : task_(std::move(task)), cfg_(cfg), params_(params) {
        auto v = cfg_.violations();
        if (!v.empty()) throw ConfigError(std::move(v));
        if (params_.temperature < 0.0) throw ConfigError({"policy.temperature must be non-negative"});
    }

    std::string descriptor() const override { return "scripted:" + task_->task_id; }

    std::vector<Action> sample(const State& state, std::size_t n, std::uint64_t seed) const override {
        std::vector<Action> out;
        out.reserve(n);
        Stage stage = workflow_progress(*task_, state.history);
        for (std::size_t k = 0; k < n; ++k) {
            std::uint64_t s = grmfilter::detail::derive_seed(seed ^ cfg_.seed, {params_.temperature == 0.0 ? 0 : k});
            grmfilter::detail::Rng rng(s);
            if (rng.uniform() < cfg_.competence) {
                out.push_back(workflow_action(*task_, stage));
                continue;
            }
            double u = rng.uniform();
            std::size_t pick = kNoiseCount - 1;
            double acc = 0.0;
            for (std::size_t i = 0; i < kNoiseCount; ++i) {
                acc += cfg_.noise_menu[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
            out.push_back(noise_action(*task_, state.history, static_cast<Noise>(pick), rng));
        }
        return out;
    }

private:
    std::shared_ptr<const SimTask> task_;
    ScriptedPolicyConfig cfg_;
    SamplingParams params_;
};

// ---------------------------------------------------------------------------
// Oracle judge
// ---------------------------------------------------------------------------

struct OracleJudgment {
    std::vector<std::array<int, 4>> scores;
    std::vector<double> utilities;
    std::string verdict_text;
};

/// Scores candidates from simulator ground truth with four rubric proxies (workflow, information
/// gain, proximity to the buggy file, error avoidance), weighted by the rubric weights. Reads the
/// structured side channel of the request, not the prose.
class OracleJudge final : public Judge {
public:
    OracleJudge(std::shared_ptr<const SimTask> task, std::vector<double> weights)
        : task_(std::move(task)), weights_(std::move(weights)) {
        if (weights_.size() != 4) throw ConfigError({"oracle judge needs exactly 4 rubric weights"});
    }

    std::string descriptor() const override { return "oracle:" + task_->task_id; }

    std::string judge(const JudgeRequest& request) const override {
        return request.purpose == JudgePurpose::turn ? judge_turn(request).verdict_text : judge_pair(request).verdict_text;
    }

    /// Rubric proxy scores of one unexecuted action in `world` after `history`.
    std::array<int, 4> score_action(const SimWorld& world, const std::vector<Step>& history, const Action& a) const {
        const SimTask& t = *task_;
        Stage stage = workflow_progress(t, history);
        bool optimal = stage != Stage::done && same_call(a, workflow_action(t, stage));
        bool fixing = a.tool_name == "str_replace" && a.argument("path") && *a.argument("path") == t.bug_location.path &&
                      a.argument("old_str") && *a.argument("old_str") == t.buggy_line && a.argument("new_str") &&
                      *a.argument("new_str") == t.correct_line;
        bool repeat = !history.empty() && same_call(a, history.back().action);
        bool error = world.predict_error(a).has_value();

        if (a.kind == ActionKind::finish) {
            if (optimal) return {4, 4, 4, 4};
            if (!world.fixed()) return {0, 0, 0, 0};
            return {1, 2, 2, 4};
        }
        if (optimal) return {4, 4, 4, 4};
        if (fixing && !error) return {2, 4, 4, 4};
        if (a.tool_name == "str_replace" && !error) {
            SimWorld after = world;
            after.apply(a);
            if (after.broken() && !world.broken()) return {0, 0, 0, 0};
        }
        int proximity = 2;
        if (const std::string* p = a.argument("path")) {
            if (*p == t.bug_location.path) proximity = 4;
            else if (std::any_of(t.decoys.begin(), t.decoys.end(), [&](const Location& d) { return d.path == *p; }))
                proximity = 0;
        }
        int workflow = error ? 0 : 1;
        int info = error || repeat ? 0 : (a.kind == ActionKind::file_view && proximity == 4 ? 2 : 1);
        int strategy = error ? 0 : proximity;
        int control = error ? 0 : (repeat ? 1 : 4);
        return {workflow, info, strategy, control};
    }

    OracleJudgment judge_turn(const JudgeRequest& request) const {
        SimWorld world = replay(request.prefix.history);
        OracleJudgment j;
        for (const auto& cand : request.candidates) {
            if (cand.size() != 1) throw ContractError("oracle: turn candidates must be single steps");
            auto s = score_action(world, request.prefix.history, cand.front().action);
            j.scores.push_back(s);
            j.utilities.push_back(weighted_score(s, weights_));
        }
        std::size_t winner = select_turn_winner(j.utilities);
        std::string text;
        for (std::size_t i = 0; i < j.scores.size(); ++i) {
            const auto& s = j.scores[i];
            char buf[160];
            std::snprintf(buf, sizeof buf, "ACTION %zu SCORES: %d, %d, %d, %d\nACTION %zu weighted total: %.2f\n", i + 1,
                          s[0], s[1], s[2], s[3], i + 1, j.utilities[i]);
            text += buf;
        }
        text += "\nACTION " + std::to_string(winner + 1) + " WINS";
        j.verdict_text = std::move(text);
        return j;
    }

    /// Utility of an executed segment: sum of per-step weighted scores, replayed in order.
    double segment_utility(const std::vector<Step>& prefix, const std::vector<Step>& segment) const {
        SimWorld world = replay(prefix);
        std::vector<Step> history = prefix;
        double total = 0.0;
        for (const auto& s : segment) {
            total += weighted_score(score_action(world, history, s.action), weights_);
            if (s.action.kind != ActionKind::finish) world.apply(s.action);
            history.push_back(s);
        }
        return total;
    }

    OracleJudgment judge_pair(const JudgeRequest& request) const {
        if (request.candidates.size() != 2) throw ContractError("oracle: pair request needs two segments");
        OracleJudgment j;
        for (const auto& seg : request.candidates) j.utilities.push_back(segment_utility(request.prefix.history, seg));
        char buf[160];
        std::snprintf(buf, sizeof buf, "TRAJECTORY 1 utility: %.2f\nTRAJECTORY 2 utility: %.2f\n\n%s", j.utilities[0],
                      j.utilities[1], j.utilities[0] >= j.utilities[1] ? "YES" : "NO");
        j.verdict_text = buf;
        return j;
    }

private:
    SimWorld replay(const std::vector<Step>& history) const {
        SimWorld world(task_);
        for (const auto& s : history) {
            if (s.is_null() || s.action.kind == ActionKind::finish) break;
            world.apply(s.action);
        }
        return world;
    }

    std::shared_ptr<const SimTask> task_;
    std::vector<double> weights_;
};

}  // namespace grmfilter::sim

#pragma once

// Agent/environment interaction model: actions, observations, states,
// trajectories, the concatenation transition and horizon padding.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grmfilter/errors.hpp"

namespace grmfilter {

using Json = nlohmann::ordered_json;

enum class ActionKind { command, file_view, file_edit, create_file, run_script, finish, null };

enum class ErrorTag { path_not_found, invalid_view_range, replace_failed, other_error };

inline constexpr std::string_view kNullToolName = "<null>";
inline constexpr std::string_view kFinishObservationText = "[finish acknowledged]";

inline std::string_view to_string(ActionKind k) {
    switch (k) {
        case ActionKind::command: return "command";
        case ActionKind::file_view: return "file_view";
        case ActionKind::file_edit: return "file_edit";
        case ActionKind::create_file: return "create_file";
        case ActionKind::run_script: return "run_script";
        case ActionKind::finish: return "finish";
        case ActionKind::null: return "null";
    }
    return "null";
}

inline std::string_view to_string(ErrorTag t) {
    switch (t) {
        case ErrorTag::path_not_found: return "path_not_found";
        case ErrorTag::invalid_view_range: return "invalid_view_range";
        case ErrorTag::replace_failed: return "replace_failed";
        case ErrorTag::other_error: return "other_error";
    }
    return "other_error";
}

inline ActionKind action_kind_from_string(std::string_view s) {
    for (auto k : {ActionKind::command, ActionKind::file_view, ActionKind::file_edit,
                   ActionKind::create_file, ActionKind::run_script, ActionKind::finish,
                   ActionKind::null})
        if (to_string(k) == s) return k;
    throw ContractError("unknown action kind '" + std::string(s) + "'");
}

inline ErrorTag error_tag_from_string(std::string_view s) {
    for (auto t : {ErrorTag::path_not_found, ErrorTag::invalid_view_range,
                   ErrorTag::replace_failed, ErrorTag::other_error})
        if (to_string(t) == s) return t;
    throw ContractError("unknown error tag '" + std::string(s) + "'");
}

/// Ordered key -> value argument list of a tool call.
using Arguments = std::vector<std::pair<std::string, std::string>>;

struct Action {
    ActionKind kind = ActionKind::null;
    std::string raw_text;
    std::string tool_name = std::string(kNullToolName);
    Arguments arguments;

    bool is_null() const noexcept { return kind == ActionKind::null; }

    const std::string* argument(std::string_view key) const {
        for (const auto& [k, v] : arguments)
            if (k == key) return &v;
        return nullptr;
    }

    friend bool operator==(const Action&, const Action&) = default;
};

struct Observation {
    std::string raw_text;
    bool is_null = true;
    std::optional<ErrorTag> error_tag;

    static Observation null() { return {}; }
    static Observation text(std::string raw, std::optional<ErrorTag> tag = std::nullopt) {
        if (raw.empty() && !tag) throw ContractError("non-null observation needs text or an error tag");
        return Observation{std::move(raw), false, tag};
    }
    static Observation finish() { return text(std::string(kFinishObservationText)); }

    friend bool operator==(const Observation&, const Observation&) = default;
};

struct Step {
    Action action;
    Observation observation;

    static Step null() { return {}; }
    bool is_null() const noexcept { return action.is_null(); }

    friend bool operator==(const Step&, const Step&) = default;
};

// ---------------------------------------------------------------------------
// Tool-call text format
//
//   <function=NAME>
//   <parameter=KEY>VALUE</parameter>
//   ...
//   </function>
//
// Tools: execute_bash(command), view(path, view_range "[a, b]"),
// str_replace(path, old_str, new_str), create(path, file_text), finish([summary]).
// ---------------------------------------------------------------------------

inline std::string render_tool_call(std::string_view tool, const Arguments& args) {
    std::string out = "<function=" + std::string(tool) + ">\n";
    for (const auto& [k, v] : args) out += "<parameter=" + k + ">" + v + "</parameter>\n";
    out += "</function>";
    return out;
}

namespace detail {

inline bool is_python_script_invocation(std::string_view command) {
    static const std::regex re(R"(^\s*python3?\s+[^\s;&|<>-][^\s;&|<>]*\.py\s*$)");
    return std::regex_match(command.begin(), command.end(), re);
}

inline std::optional<ActionKind> kind_for_tool(std::string_view tool, const Arguments& args) {
    auto has_only = [&](std::initializer_list<std::string_view> required,
                        std::initializer_list<std::string_view> optional = {}) {
        for (auto r : required)
            if (std::none_of(args.begin(), args.end(), [&](const auto& kv) { return kv.first == r; }))
                return false;
        for (const auto& kv : args) {
            bool ok = std::find(required.begin(), required.end(), kv.first) != required.end() ||
                      std::find(optional.begin(), optional.end(), kv.first) != optional.end();
            if (!ok) return false;
        }
        return true;
    };
    if (tool == "execute_bash" && has_only({"command"})) {
        return is_python_script_invocation(args.front().second) ? ActionKind::run_script
                                                                : ActionKind::command;
    }
    if (tool == "view" && has_only({"path"}, {"view_range"})) return ActionKind::file_view;
    if (tool == "str_replace" && has_only({"path", "old_str", "new_str"})) return ActionKind::file_edit;
    if (tool == "create" && has_only({"path", "file_text"})) return ActionKind::create_file;
    if (tool == "finish" && has_only({}, {"summary"})) return ActionKind::finish;
    return std::nullopt;
}

}  // namespace detail

/// Builds a well-formed action for a known tool. Throws ContractError on an unknown tool
/// or a bad argument set.
inline Action make_action(std::string tool, Arguments args) {
    auto kind = detail::kind_for_tool(tool, args);
    if (!kind) throw ContractError("malformed tool call for '" + tool + "'");
    Action a;
    a.kind = *kind;
    a.raw_text = render_tool_call(tool, args);
    a.tool_name = std::move(tool);
    a.arguments = std::move(args);
    return a;
}

inline Action make_finish(std::optional<std::string> summary = std::nullopt) {
    Arguments args;
    if (summary) args.emplace_back("summary", *summary);
    return make_action("finish", std::move(args));
}

/// Parses a full assistant turn. The first <function=...> block is the tool call; anything
/// around it is kept in raw_text. Malformed or unknown calls become a shell command carrying
/// the raw text, which the environment answers with an error observation.
inline Action parse_action(std::string raw) {
    static const std::regex fn_re(R"(<function=([A-Za-z_][A-Za-z0-9_]*)>([\s\S]*?)</function>)");
    static const std::regex param_re(R"(<parameter=([A-Za-z_][A-Za-z0-9_]*)>([\s\S]*?)</parameter>)");

    Action fallback;
    fallback.kind = ActionKind::command;
    fallback.tool_name = "execute_bash";
    fallback.arguments = {{"command", raw}};

    std::smatch m;
    if (!std::regex_search(raw, m, fn_re)) {
        fallback.raw_text = std::move(raw);
        return fallback;
    }
    std::string tool = m[1];
    std::string body = m[2];
    Arguments args;
    for (auto it = std::sregex_iterator(body.begin(), body.end(), param_re);
         it != std::sregex_iterator(); ++it) {
        args.emplace_back((*it)[1], (*it)[2]);
    }
    auto kind = detail::kind_for_tool(tool, args);
    if (!kind) {
        fallback.raw_text = std::move(raw);
        return fallback;
    }
    return Action{*kind, std::move(raw), std::move(tool), std::move(args)};
}

// ---------------------------------------------------------------------------
// States and trajectories
// ---------------------------------------------------------------------------

struct State {
    std::string task_id;
    std::string initial_prompt;
    std::vector<Step> history;

    /// 1-based step index t; the state belongs to S_t.
    std::size_t step_index() const noexcept { return history.size() + 1; }

    bool finished() const noexcept {
        return !history.empty() && history.back().action.kind == ActionKind::finish;
    }

    friend bool operator==(const State&, const State&) = default;
};

/// Returns state ∘ action ∘ observation. The input is untouched.
inline State transition(const State& state, Action action, Observation observation) {
    if (std::any_of(state.history.begin(), state.history.end(),
                    [](const Step& s) { return s.is_null(); }))
        throw ContractError("transition: state history contains null steps");
    if (state.finished() && !action.is_null())
        throw ContractError("transition: cannot append an action after finish");
    State next = state;
    next.history.push_back(Step{std::move(action), std::move(observation)});
    return next;
}

inline bool is_terminal(const State& state, std::size_t horizon) noexcept {
    return state.history.size() >= horizon || state.finished();
}

/// Strategy and selection record of a rollout. `records` holds one JSON object per
/// selection decision (GRM verdicts, fallbacks, final-block rewards).
struct Provenance {
    std::string strategy;
    std::size_t candidates = 1;
    std::size_t segment_length = 0;
    std::size_t horizon = 0;
    std::uint64_t seed = 0;
    std::size_t fallbacks = 0;
    Json records = Json::array();

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Trajectory {
    std::string task_id;
    std::string initial_prompt;
    std::vector<Step> steps;
    std::size_t real_length = 0;
    std::optional<int> terminal_reward;
    Provenance provenance;

    std::size_t horizon() const noexcept { return steps.size(); }

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Pads `partial` with null steps to exactly `horizon` entries. A list that already carries a
/// contiguous null suffix is accepted, which makes the operation idempotent.
inline std::vector<Step> pad_to_horizon(std::vector<Step> partial, std::size_t horizon) {
    if (horizon == 0) throw ContractError("pad_to_horizon: horizon must be positive");
    if (partial.size() > horizon)
        throw ContractError("pad_to_horizon: horizon overflow (" + std::to_string(partial.size()) +
                            " steps > T=" + std::to_string(horizon) + ")");
    bool seen_null = false;
    bool seen_finish = false;
    for (const auto& s : partial) {
        if (s.is_null()) {
            seen_null = true;
            continue;
        }
        if (seen_null) throw ContractError("pad_to_horizon: real step after a null step");
        if (seen_finish) throw ContractError("pad_to_horizon: real step after finish");
        seen_finish = s.action.kind == ActionKind::finish;
    }
    partial.resize(horizon, Step::null());
    return partial;
}

inline std::size_t count_real_steps(const std::vector<Step>& steps) noexcept {
    return static_cast<std::size_t>(
        std::count_if(steps.begin(), steps.end(), [](const Step& s) { return !s.is_null(); }));
}

/// Pads the state's history into a trajectory. The reward is attached later.
inline Trajectory make_trajectory(const State& state, std::size_t horizon, Provenance provenance = {}) {
    Trajectory t;
    t.task_id = state.task_id;
    t.initial_prompt = state.initial_prompt;
    t.real_length = count_real_steps(state.history);
    t.steps = pad_to_horizon(state.history, horizon);
    t.provenance = std::move(provenance);
    t.provenance.horizon = horizon;
    return t;
}

/// Checks the trajectory invariants: contiguous null suffix, finish last, reward binary.
inline void validate(const Trajectory& t) {
    std::size_t real = count_real_steps(t.steps);
    if (real != t.real_length) throw ContractError("trajectory: real_length mismatch");
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        if ((i < real) == t.steps[i].is_null())
            throw ContractError("trajectory: null steps must form a contiguous suffix");
        if (t.steps[i].action.kind == ActionKind::finish && i + 1 != real)
            throw ContractError("trajectory: finish must be the last real step");
    }
    if (t.terminal_reward && *t.terminal_reward != 0 && *t.terminal_reward != 1)
        throw ContractError("trajectory: terminal reward must be 0 or 1");
}

// ---------------------------------------------------------------------------
// Line-delimited JSON schema. Field order is fixed for byte-stable output.
// ---------------------------------------------------------------------------

inline Json to_json(const Action& a) {
    Json args = Json::object();
    for (const auto& [k, v] : a.arguments) args[k] = v;
    return Json{{"kind", to_string(a.kind)},
                {"raw_text", a.raw_text},
                {"tool_name", a.tool_name},
                {"arguments", std::move(args)}};
}

inline Json to_json(const Observation& o) {
    return Json{{"raw_text", o.raw_text},
                {"is_null", o.is_null},
                {"error_tag", o.error_tag ? Json(to_string(*o.error_tag)) : Json(nullptr)}};
}

inline Json to_json(const Step& s) {
    return Json{{"action", to_json(s.action)}, {"observation", to_json(s.observation)}};
}

inline Json to_json(const Provenance& p) {
    return Json{{"strategy", p.strategy},   {"N", p.candidates},
                {"L", p.segment_length},    {"T", p.horizon},
                {"seed", p.seed},           {"fallbacks", p.fallbacks},
                {"records", p.records}};
}

inline Json to_json(const Trajectory& t) {
    Json steps = Json::array();
    for (const auto& s : t.steps) steps.push_back(to_json(s));
    return Json{{"task_id", t.task_id},
                {"initial_prompt", t.initial_prompt},
                {"steps", std::move(steps)},
                {"real_length", t.real_length},
                {"terminal_reward", t.terminal_reward ? Json(*t.terminal_reward) : Json(nullptr)},
                {"provenance", to_json(t.provenance)}};
}

inline Action action_from_json(const Json& j) {
    Action a;
    a.kind = action_kind_from_string(j.at("kind").get<std::string>());
    a.raw_text = j.at("raw_text").get<std::string>();
    a.tool_name = j.at("tool_name").get<std::string>();
    for (const auto& [k, v] : j.at("arguments").items()) a.arguments.emplace_back(k, v.get<std::string>());
    if (a.is_null() != (a.raw_text.empty() && a.tool_name == kNullToolName))
        throw ContractError("action: null kind must pair with empty text and the null tool");
    return a;
}

inline Observation observation_from_json(const Json& j) {
    Observation o;
    o.raw_text = j.at("raw_text").get<std::string>();
    o.is_null = j.at("is_null").get<bool>();
    if (const auto& tag = j.at("error_tag"); !tag.is_null())
        o.error_tag = error_tag_from_string(tag.get<std::string>());
    if (o.is_null != (o.raw_text.empty() && !o.error_tag))
        throw ContractError("observation: is_null inconsistent with contents");
    return o;
}

inline Provenance provenance_from_json(const Json& j) {
    Provenance p;
    p.strategy = j.at("strategy").get<std::string>();
    p.candidates = j.at("N").get<std::size_t>();
    p.segment_length = j.at("L").get<std::size_t>();
    p.horizon = j.at("T").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.fallbacks = j.at("fallbacks").get<std::size_t>();
    p.records = j.at("records");
    return p;
}

inline Trajectory trajectory_from_json(const Json& j) {
    Trajectory t;
    t.task_id = j.at("task_id").get<std::string>();
    t.initial_prompt = j.at("initial_prompt").get<std::string>();
    for (const auto& s : j.at("steps"))
        t.steps.push_back(Step{action_from_json(s.at("action")), observation_from_json(s.at("observation"))});
    t.real_length = j.at("real_length").get<std::size_t>();
    if (const auto& r = j.at("terminal_reward"); !r.is_null()) t.terminal_reward = r.get<int>();
    t.provenance = provenance_from_json(j.at("provenance"));
    validate(t);
    return t;
}

}  // namespace grmfilter

#pragma once

// Run configuration: JSON document with built-in defaults, dotted-path overrides, aggregated
// validation, and construction of actors from the configured backends.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "grmfilter/analyzer.hpp"
#include "grmfilter/dataset.hpp"
#include "grmfilter/filtering.hpp"
#include "grmfilter/gateway.hpp"
#include "grmfilter/rubrics.hpp"
#include "grmfilter/sim_tasks.hpp"

namespace grmfilter {

/// Every recognised key with its default. Keys whose default is null take a string or null.
inline Json default_config() {
    return Json::parse(R"({
  "strategy": "turn_level",
  "N": 3,
  "L": 5,
  "T": 20,
  "seed": null,
  "workers": 1,
  "branch_workers": 1,
  "judge_retries": 2,
  "fallback_policy": "uniform_random",
  "cap": 500,
  "rollouts_per_task": 1,
  "max_passes": 1,
  "tasks": null,
  "output_dir": "out",
  "rubrics": {"turn": null, "segment": null},
  "templates": {"turn": null, "pair": null, "allow_patch_free": false},
  "policy": {
    "backend": "scripted",
    "competence": 0.6,
    "noise_menu": [0.2, 0.2, 0.2, 0.2, 0.2],
    "temperature": 1.0,
    "max_tokens": 4096
  },
  "judge": {"backend": "oracle", "temperature": 0.0, "max_tokens": 8192},
  "environment": {"backend": "sim", "snapshot": true, "deterministic": true, "broken_reward": false},
  "gateway": {
    "url": null,
    "model": null,
    "api_key_env": "GRMFILTER_API_KEY",
    "timeout_s": 120.0,
    "retries": 3,
    "backoff_ms": 500
  },
  "easy_filter": {"trials": 5},
  "analyzer": {"registry": null},
  "sim": {"tasks": 200, "first_seed": 0, "difficulty_max": 3}
})");
}

namespace detail {

inline void merge_into(Json& base, const Json& src, const std::string& prefix, std::vector<std::string>& errors) {
    for (const auto& [k, v] : src.items()) {
        std::string key = prefix.empty() ? k : prefix + "." + k;
        if (!base.contains(k)) {
            errors.push_back("unknown config key '" + key + "'");
            continue;
        }
        Json& slot = base[k];
        if (slot.is_object()) {
            if (!v.is_object()) errors.push_back("config key '" + key + "' must be an object");
            else merge_into(slot, v, key, errors);
        } else {
            slot = v;
        }
    }
}

/// Value of a --set override: JSON when it parses, a plain string otherwise.
inline Json override_value(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error&) {
        return Json(text);
    }
}

}  // namespace detail

/// Merges `file` over the defaults, then applies `key=value` overrides in order (last wins).
/// Unknown keys and malformed overrides are collected into `problems` when given, else thrown
/// together as one ConfigError.
inline Json resolve_config(const std::optional<Json>& file, const std::vector<std::string>& overrides,
                           std::vector<std::string>* problems = nullptr) {
    Json cfg = default_config();
    std::vector<std::string> errors;
    if (file) {
        if (!file->is_object()) errors.push_back("config document must be a JSON object");
        else detail::merge_into(cfg, *file, "", errors);
    }
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) {
            errors.push_back("override '" + ov + "' is not of the form key=value");
            continue;
        }
        std::string path = ov.substr(0, eq);
        Json* slot = &cfg;
        std::size_t start = 0;
        bool ok = true;
        while (true) {
            auto dot = path.find('.', start);
            std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (!slot->is_object() || !slot->contains(part)) {
                ok = false;
                break;
            }
            slot = &(*slot)[part];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        if (!ok || slot->is_object()) {
            errors.push_back("unknown config key '" + path + "'");
            continue;
        }
        *slot = detail::override_value(ov.substr(eq + 1));
    }
    if (problems) problems->insert(problems->end(), errors.begin(), errors.end());
    else if (!errors.empty()) throw ConfigError(std::move(errors));
    return cfg;
}

inline Json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
    try {
        return Json::parse(in, nullptr, true, true);
    } catch (const Json::parse_error& e) {
        throw ConfigError({"config file '" + path + "': " + e.what()});
    }
}

struct AppConfig {
    Json document;
    CollectOptions collect;
    std::optional<std::string> tasks_path;
    std::string policy_backend;
    std::string judge_backend;
    std::string environment_backend;
    sim::SimActorOptions sim_actors;
    SamplingParams judge_sampling;
    std::optional<GatewayConfig> gateway;
    std::size_t easy_trials = 5;
    std::optional<std::string> registry_path;
    std::size_t sim_task_count = 200;
    std::uint64_t sim_first_seed = 0;
    std::size_t sim_difficulty_max = 3;

    const RubricSet& active_rubrics() const {
        return collect.run.strategy == Strategy::segment_level ? collect.segment_rubrics : collect.turn_rubrics;
    }
};

namespace detail {

/// Typed field access that records type errors instead of throwing.
class Reader {
public:
    Reader(const Json& doc, std::vector<std::string>& errors) : doc_(doc), errors_(errors) {}

    const Json* find(const std::string& path) const {
        const Json* j = &doc_;
        std::size_t start = 0;
        while (true) {
            auto dot = path.find('.', start);
            j = &j->at(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
            if (dot == std::string::npos) return j;
            start = dot + 1;
        }
    }

    template <class T>
    T get(const std::string& path, T fallback) {
        const Json& j = *find(path);
        try {
            if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
                if (!(j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0))) throw std::invalid_argument("");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!j.is_boolean()) throw std::invalid_argument("");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!j.is_number()) throw std::invalid_argument("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!j.is_string()) throw std::invalid_argument("");
            }
            return j.get<T>();
        } catch (const std::exception&) {
            errors_.push_back("config key '" + path + "' has the wrong type (" + j.dump() + ")");
            return fallback;
        }
    }

    std::optional<std::string> optional_string(const std::string& path) {
        const Json& j = *find(path);
        if (j.is_null()) return std::nullopt;
        if (!j.is_string()) {
            errors_.push_back("config key '" + path + "' must be a string or null");
            return std::nullopt;
        }
        return j.get<std::string>();
    }

private:
    const Json& doc_;
    std::vector<std::string>& errors_;
};

}  // namespace detail

/// Full static validation of a resolved document. Every violation is reported at once,
/// after any `earlier` problems found while resolving the document.
inline AppConfig validate_config(const Json& doc, std::vector<std::string> earlier = {}) {
    std::vector<std::string> errors = std::move(earlier);
    detail::Reader r(doc, errors);
    AppConfig c;
    c.document = doc;

    RunConfig& run = c.collect.run;
    auto strategy = strategy_from_string(r.get<std::string>("strategy", "baseline"));
    if (!strategy) errors.push_back("unknown strategy " + doc.at("strategy").dump());
    run.strategy = strategy.value_or(Strategy::baseline);
    run.candidates = r.get<std::size_t>("N", 3);
    run.segment_length = r.get<std::size_t>("L", 5);
    run.horizon = r.get<std::size_t>("T", 20);
    if (!doc.at("seed").is_null()) run.seed = r.get<std::uint64_t>("seed", 0);
    run.judge_retries = r.get<std::size_t>("judge_retries", 2);
    run.fallback_policy = r.get<std::string>("fallback_policy", "uniform_random");
    run.branch_workers = r.get<std::size_t>("branch_workers", 1);
    c.collect.cap = r.get<std::size_t>("cap", 500);
    c.collect.rollouts_per_task = r.get<std::size_t>("rollouts_per_task", 1);
    c.collect.max_passes = r.get<std::size_t>("max_passes", 1);
    c.collect.workers = r.get<std::size_t>("workers", 1);
    c.collect.output_dir = r.get<std::string>("output_dir", "out");
    c.tasks_path = r.optional_string("tasks");

    auto load_rubric_set = [&](const char* key, RubricSet& into) {
        if (auto path = r.optional_string(key)) {
            try {
                into = load_rubrics_file(*path);
            } catch (const ConfigError& e) {
                for (const auto& v : e.violations()) errors.push_back(std::string(key) + ": " + v);
            }
        }
    };
    load_rubric_set("rubrics.turn", c.collect.turn_rubrics);
    load_rubric_set("rubrics.segment", c.collect.segment_rubrics);
    auto load_template = [&](const char* key, std::string& into) {
        if (auto path = r.optional_string(key)) {
            try {
                into = read_text_file(*path);
            } catch (const std::exception& e) {
                errors.push_back(std::string(key) + ": " + e.what());
            }
        }
    };
    load_template("templates.turn", c.collect.templates.turn);
    load_template("templates.pair", c.collect.templates.pair);
    c.collect.templates.allow_patch_free = r.get<bool>("templates.allow_patch_free", false);

    for (auto& v : collect_option_violations(c.collect)) errors.push_back(std::move(v));

    c.policy_backend = r.get<std::string>("policy.backend", "scripted");
    c.judge_backend = r.get<std::string>("judge.backend", "oracle");
    c.environment_backend = r.get<std::string>("environment.backend", "sim");
    if (c.policy_backend != "scripted" && c.policy_backend != "gateway")
        errors.push_back("policy.backend must be 'scripted' or 'gateway'");
    if (c.judge_backend != "oracle" && c.judge_backend != "gateway")
        errors.push_back("judge.backend must be 'oracle' or 'gateway'");
    if (c.environment_backend != "sim")
        errors.push_back("environment.backend '" + c.environment_backend +
                         "' is not available in this build (supported: sim)");

    auto& sp = c.sim_actors;
    sp.policy.competence = r.get<double>("policy.competence", 0.6);
    const Json& menu = doc.at("policy").at("noise_menu");
    if (!menu.is_array() || menu.size() != sim::kNoiseCount) {
        errors.push_back("policy.noise_menu must list 5 probabilities (redundant_view, bad_path, "
                         "invalid_view_range, malformed_edit, repeat_last)");
    } else {
        for (std::size_t i = 0; i < menu.size(); ++i) {
            if (!menu[i].is_number()) errors.push_back("policy.noise_menu entries must be numbers");
            else sp.policy.noise_menu[i] = menu[i].get<double>();
        }
    }
    for (auto& v : sp.policy.violations()) errors.push_back(std::move(v));
    sp.sampling.temperature = r.get<double>("policy.temperature", 1.0);
    sp.sampling.max_response_length = r.get<std::size_t>("policy.max_tokens", 4096);
    if (sp.sampling.temperature < 0) errors.push_back("policy.temperature must be non-negative");
    sp.environment.snapshot = r.get<bool>("environment.snapshot", true);
    sp.environment.deterministic = r.get<bool>("environment.deterministic", true);
    sp.environment.broken_reward = r.get<bool>("environment.broken_reward", false);
    c.judge_sampling.temperature = r.get<double>("judge.temperature", 0.0);
    c.judge_sampling.max_response_length = r.get<std::size_t>("judge.max_tokens", 8192);

    if (run.strategy == Strategy::segment_level && c.environment_backend == "sim" && !sp.environment.snapshot)
        errors.push_back("segment_level requires a snapshot-capable environment (environment.snapshot is false)");

    if (c.policy_backend == "gateway" || c.judge_backend == "gateway") {
        GatewayConfig g;
        g.url = r.optional_string("gateway.url").value_or("");
        g.model = r.optional_string("gateway.model").value_or("");
        g.api_key_env = r.get<std::string>("gateway.api_key_env", "GRMFILTER_API_KEY");
        g.timeout_s = r.get<double>("gateway.timeout_s", 120.0);
        g.retries = r.get<std::size_t>("gateway.retries", 3);
        g.backoff_ms = r.get<std::size_t>("gateway.backoff_ms", 500);
        for (auto& v : gateway_violations(g)) errors.push_back(std::move(v));
        c.gateway = g;
    }

    c.easy_trials = r.get<std::size_t>("easy_filter.trials", 5);
    if (c.easy_trials < 1) errors.push_back("easy_filter.trials must be at least 1");
    c.registry_path = r.optional_string("analyzer.registry");
    if (c.registry_path) {
        try {
            PatternRegistry::from_file(*c.registry_path);
        } catch (const ConfigError& e) {
            for (const auto& v : e.violations()) errors.push_back("analyzer.registry: " + v);
        }
    }
    c.sim_task_count = r.get<std::size_t>("sim.tasks", 200);
    c.sim_first_seed = r.get<std::uint64_t>("sim.first_seed", 0);
    c.sim_difficulty_max = r.get<std::size_t>("sim.difficulty_max", 3);

    if (!errors.empty()) throw ConfigError(std::move(errors));
    c.sim_actors.judge_weights = c.active_rubrics().weights();
    return c;
}

/// Actor factory for the configured backends. Gateway calls are audited to `audit`.
inline ActorFactory make_actor_factory(const AppConfig& c, std::shared_ptr<AuditLog> audit) {
    ActorFactory sim_factory = sim::make_sim_factory(c.sim_actors);
    if (c.policy_backend == "scripted" && c.judge_backend == "oracle") return sim_factory;

    std::shared_ptr<const ChatClient> client;
    if (c.gateway) client = std::make_shared<const ChatClient>(*c.gateway, std::move(audit));
    std::shared_ptr<const Policy> gw_policy;
    std::shared_ptr<const Judge> gw_judge;
    if (c.policy_backend == "gateway") gw_policy = std::make_shared<const GatewayPolicy>(client, c.sim_actors.sampling);
    if (c.judge_backend == "gateway") gw_judge = std::make_shared<const GatewayJudge>(client, c.judge_sampling);
    return [sim_factory, gw_policy, gw_judge](const TaskSpec& spec) {
        TaskActors a = sim_factory(spec);
        if (gw_policy) a.policy = gw_policy;
        if (gw_judge) a.judge = gw_judge;
        return a;
    };
}

inline PatternRegistry registry_for(const AppConfig& c) {
    return c.registry_path ? PatternRegistry::from_file(*c.registry_path) : PatternRegistry::defaults();
}

}  // namespace grmfilter

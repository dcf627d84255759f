#pragma once

// Glue between the simulator and the collection pipeline: task specs for simulated tasks and
// an actor factory building scripted policy, simulated environment and oracle judge.

#include <memory>
#include <string>
#include <vector>

#include "grmfilter/dataset.hpp"
#include "grmfilter/simenv.hpp"

namespace grmfilter::sim {

inline TaskSpec to_task_spec(const SimTask& t) {
    TaskSpec spec;
    spec.task_id = t.task_id;
    spec.task_statement = t.task_statement;
    spec.initial_prompt = t.initial_prompt();
    spec.side.task_statement = t.task_statement;
    spec.side.ground_truth_patch = t.ground_truth_patch;
    spec.environment = Json{{"backend", "sim"}, {"version", kSimVersion}, {"seed", t.seed}, {"difficulty", t.difficulty}};
    return spec;
}

/// Tasks for seeds first_seed .. first_seed + count - 1, difficulty cycling through 0..difficulty_max.
inline std::vector<TaskSpec> generate_tasks(std::size_t count, std::uint64_t first_seed = 0,
                                            std::size_t difficulty_max = 3) {
    std::vector<TaskSpec> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(to_task_spec(make_task(first_seed + i, i % (difficulty_max + 1))));
    return out;
}

/// Rebuilds the simulated task named by a spec's environment descriptor.
inline std::shared_ptr<const SimTask> task_for_spec(const TaskSpec& spec) {
    const Json& env = spec.environment;
    if (env.value("backend", std::string()) != "sim")
        throw ConfigError({"task " + spec.task_id + ": environment backend is not 'sim'"});
    if (env.contains("version") && env.at("version").get<std::string>() != kSimVersion)
        throw ConfigError({"task " + spec.task_id + ": simulator version " + env.at("version").dump() +
                           " does not match " + kSimVersion});
    auto task = std::make_shared<const SimTask>(
        make_task(env.at("seed").get<std::uint64_t>(), env.value("difficulty", std::size_t{0})));
    return task;
}

struct SimActorOptions {
    ScriptedPolicyConfig policy;
    SamplingParams sampling;
    SimEnvOptions environment;
    /// Oracle judge rubric weights; empty means no judge (baseline only).
    std::vector<double> judge_weights{0.25, 0.25, 0.25, 0.25};
};

/// Per-task overrides of the environment options come from the spec's environment descriptor
/// ("snapshot", "deterministic", "broken_reward").
inline ActorFactory make_sim_factory(SimActorOptions opts) {
    return [opts](const TaskSpec& spec) {
        auto task = task_for_spec(spec);
        SimEnvOptions env_opts = opts.environment;
        const Json& env = spec.environment;
        env_opts.snapshot = env.value("snapshot", env_opts.snapshot);
        env_opts.deterministic = env.value("deterministic", env_opts.deterministic);
        env_opts.broken_reward = env.value("broken_reward", env_opts.broken_reward);
        TaskActors actors;
        actors.policy = std::make_shared<const ScriptedPolicy>(task, opts.policy, opts.sampling);
        actors.environment = std::make_unique<SimEnvironment>(task, env_opts);
        if (!opts.judge_weights.empty()) actors.judge = std::make_shared<const OracleJudge>(task, opts.judge_weights);
        return actors;
    };
}

}  // namespace grmfilter::sim

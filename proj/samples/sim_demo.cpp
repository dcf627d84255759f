// Turn-level filtering on one simulated task, printing the trajectory and the judge's picks.

#include <cstdio>
#include <memory>

#include "grmfilter/filtering.hpp"
#include "grmfilter/simenv.hpp"

using namespace grmfilter;

int main() {
    auto task = std::make_shared<const sim::SimTask>(sim::make_task(7, 1));
    sim::ScriptedPolicy policy(task, {});
    sim::SimEnvironment env(task);
    RubricSet rubrics = default_turn_rubrics();
    sim::OracleJudge judge(task, rubrics.weights());
    SideInfo side{task->ground_truth_patch, task->task_statement, std::nullopt};
    PromptTemplates templates;
    GrmContext grm{judge, rubrics, side, templates};

    RunConfig cfg;
    cfg.strategy = Strategy::turn_level;
    cfg.candidates = 3;
    cfg.horizon = 20;

    State s0{task->task_id, task->initial_prompt(), {}};
    Trajectory t = rollout_turn_level(s0, policy, env, grm, cfg, 42);

    std::printf("%s: %s\n\n", task->task_id.c_str(), task->task_statement.c_str());
    for (std::size_t i = 0; i < t.real_length; ++i) {
        const auto& rec = t.provenance.records[i];
        std::printf("step %zu (picked %zu of %zu): %s %s\n", i + 1, rec["selected"].get<std::size_t>() + 1,
                    rec["candidates"].size(), t.steps[i].action.tool_name.c_str(),
                    t.steps[i].observation.error_tag ? "[error]" : "");
    }
    std::printf("\nreal_length=%zu reward=%d\n", t.real_length, t.terminal_reward.value_or(-1));
    return 0;
}

#pragma once

// Rollout strategies: plain rollout (baseline), turn-level GRM selection over unexecuted
// candidate actions, and segment-level selection over executed continuations on
// snapshot-restored branches.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grmfilter/actors.hpp"
#include "grmfilter/core.hpp"
#include "grmfilter/detail/parallel.hpp"
#include "grmfilter/detail/random.hpp"
#include "grmfilter/rubrics.hpp"

namespace grmfilter {

enum class Strategy { baseline, turn_level, segment_level };

inline std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::baseline: return "baseline";
        case Strategy::turn_level: return "turn_level";
        case Strategy::segment_level: return "segment_level";
    }
    return "baseline";
}

inline std::optional<Strategy> strategy_from_string(std::string_view s) {
    for (auto v : {Strategy::baseline, Strategy::turn_level, Strategy::segment_level})
        if (to_string(v) == s) return v;
    return std::nullopt;
}

struct RunConfig {
    Strategy strategy = Strategy::baseline;
    std::size_t candidates = 3;      ///< N
    std::size_t segment_length = 5;  ///< L
    std::size_t horizon = 20;        ///< T
    std::uint64_t seed = 0;
    std::size_t judge_retries = 2;
    /// Only "uniform_random" is defined.
    std::string fallback_policy = "uniform_random";
    /// Threads for branch rollouts and pair judgments inside one task.
    std::size_t branch_workers = 1;
};

inline std::vector<std::string> run_config_violations(const RunConfig& c) {
    std::vector<std::string> out;
    if (c.horizon < 1) out.push_back("T must be a positive integer");
    if (c.candidates < 1) out.push_back("N must be a positive integer");
    if (c.strategy != Strategy::baseline && c.candidates < 2)
        out.push_back(std::string(to_string(c.strategy)) + " requires N >= 2");
    if (c.strategy == Strategy::segment_level && (c.segment_length < 1 || c.segment_length > c.horizon))
        out.push_back("segment_level requires 1 <= L <= T (L=" + std::to_string(c.segment_length) +
                      ", T=" + std::to_string(c.horizon) + ")");
    if (c.fallback_policy != "uniform_random")
        out.push_back("unknown fallback_policy '" + c.fallback_policy + "'");
    if (c.branch_workers < 1) out.push_back("branch worker budget must be at least 1");
    return out;
}

/// Block lengths min(L, T - bL) for b = 0 .. ceil(T/L) - 1.
inline std::vector<std::size_t> partition_horizon(std::size_t horizon, std::size_t segment) {
    if (segment < 1 || segment > horizon)
        throw ContractError("partition_horizon: need 1 <= L <= T (L=" + std::to_string(segment) +
                            ", T=" + std::to_string(horizon) + ")");
    std::vector<std::size_t> blocks;
    for (std::size_t start = 0; start < horizon; start += segment) blocks.push_back(std::min(segment, horizon - start));
    return blocks;
}

/// Inputs shared by the GRM-guided strategies.
struct GrmContext {
    const Judge& judge;
    const RubricSet& rubrics;
    const SideInfo& side;
    const PromptTemplates& templates;
};

struct SegmentCandidate {
    std::vector<Step> steps;
    /// Branch environment positioned after the segment.
    std::unique_ptr<Environment> branch;
    bool terminated_early = false;
};

namespace detail {

inline constexpr std::uint64_t kStepTag = 0x73746570ULL;
inline constexpr std::uint64_t kFallbackTag = 0x66616c6cULL;
inline constexpr std::uint64_t kSegmentTag = 0x7365676dULL;
inline constexpr std::uint64_t kTournamentTag = 0x746f7572ULL;
inline constexpr std::uint64_t kFinalTag = 0x66696e61ULL;

inline Json raw_texts(const std::vector<Action>& actions) {
    Json arr = Json::array();
    for (const auto& a : actions) arr.push_back(a.raw_text);
    return arr;
}

inline Json raw_texts(const std::vector<Step>& steps) {
    Json arr = Json::array();
    for (const auto& s : steps) arr.push_back(s.action.raw_text);
    return arr;
}

inline Provenance provenance_for(const RunConfig& cfg, std::uint64_t seed) {
    Provenance p;
    p.strategy = std::string(to_string(cfg.strategy));
    p.candidates = cfg.strategy == Strategy::baseline ? 1 : cfg.candidates;
    p.segment_length = cfg.strategy == Strategy::segment_level ? cfg.segment_length : 0;
    p.horizon = cfg.horizon;
    p.seed = seed;
    return p;
}

/// Pads, then evaluates the verifiable reward. A harness failure leaves the reward absent and
/// records why.
inline Trajectory finalize(const State& state, const Environment& env, std::size_t horizon, Provenance prov) {
    Trajectory t = make_trajectory(state, horizon, std::move(prov));
    try {
        t.terminal_reward = env.terminal_reward(t).value;
    } catch (const RewardEvaluationError& e) {
        t.provenance.records.push_back(Json{{"kind", "reward_error"}, {"detail", e.what()}});
    }
    return t;
}

/// Calls the judge, parsing with `parse`; retries on verdict errors. Returns nullopt when every
/// attempt failed. Raw outputs and parse errors land in `record`.
template <class Parse>
auto judge_with_retries(const Judge& judge, const JudgeRequest& request, std::size_t retries, Parse parse,
                        Json& record) -> std::optional<decltype(parse(std::string{}))> {
    Json raws = Json::array();
    Json errors = Json::array();
    std::optional<decltype(parse(std::string{}))> result;
    for (std::size_t attempt = 0; attempt <= retries && !result; ++attempt) {
        std::string raw = judge.judge(request);
        raws.push_back(raw);
        try {
            result = parse(raw);
        } catch (const VerdictError& e) {
            errors.push_back(e.what());
        }
    }
    record["verdicts"] = std::move(raws);
    if (!errors.empty()) record["verdict_errors"] = std::move(errors);
    return result;
}

}  // namespace detail

/// Plain policy rollout until finish or the horizon, padded, reward attached.
inline Trajectory rollout_baseline(const State& initial, const Policy& policy, Environment& env, const RunConfig& cfg,
                                   std::uint64_t seed) {
    Provenance prov = detail::provenance_for(cfg, seed);
    prov.strategy = "baseline";
    prov.candidates = 1;
    State state = initial;
    while (!is_terminal(state, cfg.horizon)) {
        std::size_t t = state.step_index();
        auto cands = sample_candidates(policy, state, 1, cfg.horizon,
                                       grmfilter::detail::derive_seed(seed, {detail::kStepTag, t}));
        prov.records.push_back(Json{{"kind", "single"}, {"step", t}, {"candidates", detail::raw_texts(cands)}});
        Observation o = env.execute(state, cands.front());
        state = transition(state, std::move(cands.front()), std::move(o));
    }
    return detail::finalize(state, env, cfg.horizon, std::move(prov));
}

/// At every step: N candidates from the same state, the GRM picks one before anything is
/// executed, only the pick runs. With N = 1 no judge call is made and the rollout matches
/// rollout_baseline step for step.
inline Trajectory rollout_turn_level(const State& initial, const Policy& policy, Environment& env,
                                     const GrmContext& grm, const RunConfig& cfg, std::uint64_t seed) {
    if (cfg.candidates < 1) throw ContractError("rollout_turn_level: N must be at least 1");
    Provenance prov = detail::provenance_for(cfg, seed);
    prov.strategy = "turn_level";
    const auto weights = grm.rubrics.weights();
    State state = initial;
    while (!is_terminal(state, cfg.horizon)) {
        std::size_t t = state.step_index();
        auto cands = sample_candidates(policy, state, cfg.candidates, cfg.horizon,
                                       grmfilter::detail::derive_seed(seed, {detail::kStepTag, t}));
        Json record{{"kind", cands.size() == 1 ? "single" : "turn"}, {"step", t},
                    {"candidates", detail::raw_texts(cands)}};
        std::size_t selected = 0;
        if (cands.size() > 1) {
            JudgeRequest req;
            req.purpose = JudgePurpose::turn;
            req.prompt = assemble_turn_prompt(state, cands, grm.side, grm.rubrics, grm.templates);
            req.prefix = state;
            for (const auto& c : cands) req.candidates.push_back({Step{c, Observation::null()}});
            auto verdict = detail::judge_with_retries(
                grm.judge, req, cfg.judge_retries,
                [&](const std::string& raw) { return parse_turn_verdict(raw, cands.size(), weights); }, record);
            if (verdict) {
                selected = verdict->winner_index - 1;
                if (!verdict->weighted_totals.empty()) {
                    record["weighted_totals"] = verdict->weighted_totals;
                    if (select_turn_winner(verdict->weighted_totals) != selected) record["totals_contradict"] = true;
                }
                record["fallback"] = false;
            } else {
                grmfilter::detail::Rng rng(grmfilter::detail::derive_seed(seed, {detail::kFallbackTag, t}));
                selected = rng.below(cands.size());
                record["fallback"] = true;
                ++prov.fallbacks;
            }
        }
        record["selected"] = selected;
        prov.records.push_back(std::move(record));
        Observation o = env.execute(state, cands[selected]);
        state = transition(state, std::move(cands[selected]), std::move(o));
    }
    return detail::finalize(state, env, cfg.horizon, std::move(prov));
}

/// Rolls one continuation of up to `length` steps on a branch restored from `snap`.
inline SegmentCandidate rollout_segment(const State& prefix, const Policy& policy, const SnapshotHandle& snap,
                                        std::size_t length, std::size_t horizon, std::uint64_t seed) {
    SegmentCandidate seg;
    seg.branch = restore(snap);
    State branch_state = prefix;
    for (std::size_t l = 0; l < length && !is_terminal(branch_state, horizon); ++l) {
        auto a = sample_candidates(policy, branch_state, 1, horizon, grmfilter::detail::derive_seed(seed, {l}));
        Observation o = seg.branch->execute(branch_state, a.front());
        seg.steps.push_back(Step{a.front(), o});
        branch_state = transition(branch_state, std::move(a.front()), std::move(o));
    }
    seg.terminated_early = branch_state.finished();
    return seg;
}

/// Block-wise branching: N continuations per block on restored branches, pairwise GRM
/// tournament for every block but the last, max verifiable reward for the last block.
/// `env` is the mainline environment; it is replaced by the adopted branch when the
/// environment is deterministic.
inline Trajectory rollout_segment_level(const State& initial, const Policy& policy, std::unique_ptr<Environment>& env,
                                        const GrmContext& grm, const RunConfig& cfg, std::uint64_t seed) {
    if (!env->capabilities().snapshot)
        throw CapabilityError("segment-level filtering requires a snapshot-capable environment (" + env->descriptor() +
                              ")");
    const auto blocks = partition_horizon(cfg.horizon, cfg.segment_length);
    const bool deterministic = env->capabilities().deterministic;
    Provenance prov = detail::provenance_for(cfg, seed);
    prov.strategy = "segment_level";
    State state = initial;
    std::size_t block_start = 0;

    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const bool final_block = b + 1 == blocks.size();
        SnapshotHandle snap = env->snapshot();
        std::vector<SegmentCandidate> segs(cfg.candidates);
        grmfilter::detail::parallel_for(segs.size(), cfg.branch_workers, [&](std::size_t n) {
            segs[n] = rollout_segment(state, policy, snap, blocks[b], cfg.horizon,
                                      grmfilter::detail::derive_seed(seed, {detail::kSegmentTag, b, n}));
        });

        Json record{{"block", b}, {"start_step", block_start + 1}};
        Json cand_json = Json::array();
        for (const auto& s : segs) cand_json.push_back(detail::raw_texts(s.steps));
        record["candidates"] = std::move(cand_json);

        std::size_t selected = 0;
        if (final_block) {
            record["kind"] = "final_reward";
            std::vector<int> rewards;
            for (const auto& s : segs) {
                std::vector<Step> hist = state.history;
                hist.insert(hist.end(), s.steps.begin(), s.steps.end());
                Trajectory branch_traj = make_trajectory(State{state.task_id, state.initial_prompt, hist}, cfg.horizon);
                try {
                    rewards.push_back(s.branch->terminal_reward(branch_traj).value);
                } catch (const RewardEvaluationError&) {
                    rewards.push_back(-1);
                }
            }
            int best = *std::max_element(rewards.begin(), rewards.end());
            if (best > 0) {
                selected = static_cast<std::size_t>(std::find(rewards.begin(), rewards.end(), best) - rewards.begin());
                record["random"] = false;
            } else {
                grmfilter::detail::Rng rng(grmfilter::detail::derive_seed(seed, {detail::kFinalTag, b}));
                selected = rng.below(segs.size());
                record["random"] = true;
            }
            record["rewards"] = rewards;
        } else {
            record["kind"] = "tournament";
            const std::size_t n = segs.size();
            std::vector<Json> pair_records(n * n);
            std::vector<char> pair_fallback(n * n, 0);
            const std::uint64_t tseed = grmfilter::detail::derive_seed(seed, {detail::kTournamentTag, b});
            auto pair_judge = [&](std::size_t first, std::size_t second) {
                JudgeRequest req;
                req.purpose = JudgePurpose::pair;
                req.prompt = assemble_pair_prompt(state, segs[first].steps, segs[second].steps, grm.side, grm.rubrics,
                                                  grm.templates);
                req.prefix = state;
                req.candidates = {segs[first].steps, segs[second].steps};
                Json rec{{"first", first}, {"second", second}};
                auto verdict = detail::judge_with_retries(grm.judge, req, cfg.judge_retries, parse_pair_verdict, rec);
                bool first_wins;
                if (verdict) {
                    first_wins = verdict->first_wins;
                } else {
                    grmfilter::detail::Rng rng(grmfilter::detail::derive_seed(tseed, {detail::kFallbackTag, first, second}));
                    first_wins = rng.coin();
                    pair_fallback[std::min(first, second) * n + std::max(first, second)] = 1;
                }
                rec["fallback"] = !verdict.has_value();
                rec["first_wins"] = first_wins;
                pair_records[std::min(first, second) * n + std::max(first, second)] = std::move(rec);
                return first_wins;
            };
            auto result = run_pairwise_tournament(n, pair_judge, tseed, cfg.branch_workers);
            Json pairs = Json::array();
            for (const auto& o : result.outcomes) {
                pairs.push_back(std::move(pair_records[o.a * n + o.b]));
                if (pair_fallback[o.a * n + o.b]) ++prov.fallbacks;
            }
            record["pairs"] = std::move(pairs);
            record["wins"] = result.wins;
            selected = result.winner;
        }
        record["selected"] = selected;

        SegmentCandidate& chosen = segs[selected];
        if (deterministic) {
            record["adoption"] = "snapshot";
            for (auto& s : chosen.steps) state = transition(state, s.action, s.observation);
            env = std::move(chosen.branch);
        } else {
            record["adoption"] = "reexecute";
            Json divergent = Json::array();
            for (std::size_t i = 0; i < chosen.steps.size(); ++i) {
                const auto& s = chosen.steps[i];
                Observation o = env->execute(state, s.action);
                if (!(o == s.observation)) divergent.push_back(block_start + i + 1);
                state = transition(state, s.action, std::move(o));
            }
            record["divergent_steps"] = std::move(divergent);
        }
        prov.records.push_back(std::move(record));
        block_start += blocks[b];
        if (chosen.terminated_early) break;
    }
    return detail::finalize(state, *env, cfg.horizon, std::move(prov));
}

/// Runs the strategy selected in `cfg`. `grm` is required for the GRM-guided strategies.
inline Trajectory rollout(const State& initial, const Policy& policy, std::unique_ptr<Environment>& env,
                          const GrmContext* grm, const RunConfig& cfg, std::uint64_t seed) {
    switch (cfg.strategy) {
        case Strategy::baseline: return rollout_baseline(initial, policy, *env, cfg, seed);
        case Strategy::turn_level:
            if (!grm) throw ContractError("turn-level rollout needs a judge");
            return rollout_turn_level(initial, policy, *env, *grm, cfg, seed);
        case Strategy::segment_level:
            if (!grm) throw ContractError("segment-level rollout needs a judge");
            return rollout_segment_level(initial, policy, env, *grm, cfg, seed);
    }
    throw ContractError("unknown strategy");
}

/// True iff the terminal reward is 1. Unevaluated trajectories are a contract violation.
inline bool accept(const Trajectory& t) {
    if (!t.terminal_reward) throw ContractError("accept: trajectory " + t.task_id + " has no terminal reward");
    return *t.terminal_reward == 1;
}

}  // namespace grmfilter

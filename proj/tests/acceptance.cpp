// Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "grmfilter/analyzer.hpp"
#include "grmfilter/dataset.hpp"
#include "grmfilter/filtering.hpp"
#include "grmfilter/sim_tasks.hpp"
#include "prompt_fixture.hpp"

using namespace grmfilter;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Json> lines_of(const fs::path& p) {
    std::vector<Json> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(Json::parse(line));
    return out;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("grmfilter_acceptance_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

class RecordingJudge final : public Judge {
public:
    explicit RecordingJudge(std::shared_ptr<const Judge> inner) : inner_(std::move(inner)) {}
    std::string descriptor() const override { return "recording"; }
    std::string judge(const JudgeRequest& r) const override {
        {
            std::lock_guard lock(mutex_);
            requests.push_back(r);
        }
        return inner_->judge(r);
    }
    mutable std::vector<JudgeRequest> requests;

private:
    std::shared_ptr<const Judge> inner_;
    mutable std::mutex mutex_;
};

class AbortingPolicy final : public Policy {
public:
    std::string descriptor() const override { return "aborting"; }
    std::vector<Action> sample(const State&, std::size_t, std::uint64_t) const override {
        throw RolloutAbort("policy endpoint unreachable");
    }
};

RunConfig run_config(Strategy s, std::size_t n, std::size_t l, std::size_t t, std::uint64_t seed) {
    RunConfig c;
    c.strategy = s;
    c.candidates = n;
    c.segment_length = l;
    c.horizon = t;
    c.seed = seed;
    return c;
}

bool padded_ok(const Trajectory& t, std::size_t horizon) {
    if (t.steps.size() != horizon) return false;
    std::size_t real = 0;
    while (real < t.steps.size() && !t.steps[real].is_null()) ++real;
    for (std::size_t i = real; i < t.steps.size(); ++i)
        if (!t.steps[i].is_null()) return false;
    return real == t.real_length && real >= 1;
}

// ---------------------------------------------------------------------------

Outcome turn_selection_exactness() {
    Outcome o;
    std::mt19937_64 gen(2024);
    const std::vector<double> weights{0.25, 0.25, 0.25, 0.25};
    std::size_t agree = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n = 2 + gen() % 5;
        std::vector<double> totals;
        std::vector<int> sums;
        for (std::size_t c = 0; c < n; ++c) {
            std::array<int, 4> s{};
            for (auto& x : s) x = static_cast<int>(gen() % 5);
            totals.push_back(weighted_score(s, weights));
            sums.push_back(s[0] + s[1] + s[2] + s[3]);
        }
        // Equal weights: comparing integer sums is exact.
        std::size_t best = 0;
        for (std::size_t c = 0; c < n; ++c)
            if (sums[c] > sums[best]) best = c;
        agree += select_turn_winner(totals) == best;
    }
    o.require(agree == 1000, std::to_string(agree) + "/1000 agree");
    if (o.pass) o.detail = "1000/1000 agree";
    return o;
}

Outcome tournament_exactness() {
    Outcome o;
    std::size_t checked = 0;
    auto check = [&](std::size_t n, const std::vector<bool>& lower_wins, std::uint64_t seed) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
        auto index = [&](std::size_t a, std::size_t b) {
            return std::find(pairs.begin(), pairs.end(), std::make_pair(a, b)) - pairs.begin();
        };
        std::size_t calls = 0;
        auto judge = [&](std::size_t first, std::size_t second) {
            ++calls;
            std::size_t a = std::min(first, second), b = std::max(first, second);
            return lower_wins[index(a, b)] == (first == a);
        };
        auto r = run_pairwise_tournament(n, judge, seed);
        std::vector<std::size_t> wins(n, 0);
        for (std::size_t k = 0; k < pairs.size(); ++k) ++wins[lower_wins[k] ? pairs[k].first : pairs[k].second];
        std::size_t best = 0;  // most wins, lowest index on ties
        for (std::size_t i = 1; i < n; ++i)
            if (wins[i] > wins[best]) best = i;
        ++checked;
        o.require(r.winner == best && r.wins == wins, "winner mismatch at N=" + std::to_string(n));
        o.require(calls == n * (n - 1) / 2 && r.judge_calls == calls, "call count mismatch at N=" + std::to_string(n));
    };
    for (std::size_t n = 1; n <= 5; ++n) {
        std::size_t p = n * (n - 1) / 2;
        for (std::size_t mask = 0; mask < (std::size_t{1} << p); ++mask) {
            std::vector<bool> lw(p);
            for (std::size_t k = 0; k < p; ++k) lw[k] = (mask >> k) & 1;
            check(n, lw, mask);
        }
    }
    std::mt19937_64 gen(6);
    for (int s = 0; s < 10000; ++s) {
        std::vector<bool> lw(15);
        for (std::size_t k = 0; k < 15; ++k) lw[k] = gen() & 1;
        check(6, lw, gen());
    }
    if (o.pass) o.detail = std::to_string(checked) + " outcome assignments";
    return o;
}

Outcome partition_law() {
    Outcome o;
    for (std::size_t t = 1; t <= 100; ++t)
        for (std::size_t l = 1; l <= t; ++l) {
            auto blocks = partition_horizon(t, l);
            std::size_t sum = 0;
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                o.require(blocks[b] == std::min(l, t - b * l), "block length (" + std::to_string(t) + "," +
                                                                   std::to_string(l) + ")");
                sum += blocks[b];
            }
            o.require(sum == t, "sum");
            o.require(blocks.size() == (t + l - 1) / l, "count");
        }
    o.require(partition_horizon(20, 7) == std::vector<std::size_t>{7, 7, 6}, "(20,7)");
    o.require(partition_horizon(20, 5) == std::vector<std::size_t>{5, 5, 5, 5}, "(20,5)");
    if (o.pass) o.detail = "5050 (T, L) pairs";
    return o;
}

Outcome contract_suite() {
    Outcome o;
    std::size_t random_finals = 0, reward_finals = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto task = std::make_shared<const sim::SimTask>(sim::make_task(seed, seed % 4));
        sim::ScriptedPolicyConfig pc;
        pc.competence = 0.2 + 0.15 * static_cast<double>(seed % 5);
        sim::ScriptedPolicy policy(task, pc);
        auto oracle = std::make_shared<const sim::OracleJudge>(task, default_turn_rubrics().weights());
        SideInfo side{task->ground_truth_patch, task->task_statement, std::nullopt};
        State s0{task->task_id, task->initial_prompt(), {}};
        const std::size_t horizon = 20;
        std::string tag = " (episode " + std::to_string(seed) + ")";

        // (a) N = 1 turn-level equals baseline.
        {
            sim::SimEnvironment e1(task), e2(task);
            RecordingJudge judge(oracle);
            GrmContext grm{judge, default_turn_rubrics(), side, {}};
            auto base = rollout_baseline(s0, policy, e1, run_config(Strategy::baseline, 1, 5, horizon, seed), seed);
            auto one = rollout_turn_level(s0, policy, e2, grm, run_config(Strategy::turn_level, 1, 5, horizon, seed), seed);
            o.require(base.steps == one.steps && base.terminal_reward == one.terminal_reward, "(a) N=1 differs" + tag);
            o.require(judge.requests.empty(), "(a) judge called with N=1" + tag);
            o.require(padded_ok(base, horizon) && padded_ok(one, horizon), "(d) padding" + tag);
        }
        // (b) turn-level prompts carry no candidate observations.
        {
            sim::SimEnvironment env(task);
            RecordingJudge judge(oracle);
            GrmContext grm{judge, default_turn_rubrics(), side, {}};
            auto t = rollout_turn_level(s0, policy, env, grm, run_config(Strategy::turn_level, 3, 5, horizon, seed), seed);
            o.require(padded_ok(t, horizon), "(d) padding" + tag);
            for (const auto& req : judge.requests) {
                auto pos = req.prompt.find("=== CANDIDATE ACTIONS ===");
                o.require(pos != std::string::npos, "(b) no candidate section" + tag);
                if (pos == std::string::npos) break;
                std::string tail = req.prompt.substr(pos);
                o.require(tail.find("OBSERVATION") == std::string::npos, "(b) observation in candidates" + tag);
                // What each candidate would have produced must not leak into the candidate section.
                sim::SimWorld world(task);
                for (const auto& h : req.prefix.history)
                    if (h.action.kind != ActionKind::finish) world.apply(h.action);
                for (const auto& c : req.candidates) {
                    o.require(c.front().observation.is_null, "(b) candidate carries an observation" + tag);
                    if (c.front().action.kind == ActionKind::finish) continue;
                    sim::SimWorld probe = world;
                    auto obs = probe.apply(c.front().action).raw_text;
                    if (obs.size() >= 24 && obs.find("edited successfully") == std::string::npos &&
                        obs.find("created successfully") == std::string::npos)
                        o.require(tail.find(obs) == std::string::npos, "(b) execution result leaked" + tag);
                }
            }
        }
        // (c) segment-level: no judge calls in the final block, max-reward selection.
        {
            auto env = std::unique_ptr<Environment>(new sim::SimEnvironment(task));
            RecordingJudge judge(oracle);
            GrmContext grm{judge, default_segment_rubrics(), side, {}};
            auto cfg = run_config(Strategy::segment_level, 3, 5, horizon, seed);
            auto t = rollout_segment_level(s0, policy, env, grm, cfg, seed);
            o.require(padded_ok(t, horizon), "(d) padding" + tag);
            std::size_t tournaments = 0;
            for (const auto& r : t.provenance.records) {
                if (r["kind"] == "tournament") {
                    ++tournaments;
                    continue;
                }
                if (r["kind"] != "final_reward") continue;
                o.require(r["block"] == 3, "(c) final record not in last block" + tag);
                std::size_t final_start = r["start_step"].get<std::size_t>() - 1;
                for (const auto& req : judge.requests)
                    o.require(req.prefix.history.size() < final_start, "(c) judge called in final block" + tag);
                auto rewards = r["rewards"].get<std::vector<int>>();
                auto it = std::find(rewards.begin(), rewards.end(), 1);
                if (it != rewards.end()) {
                    ++reward_finals;
                    o.require(r["selected"].get<long>() == it - rewards.begin() && r["random"] == false,
                              "(c) not the first max-reward branch" + tag);
                    o.require(t.terminal_reward == 1, "(c) reward 1 branch not adopted" + tag);
                } else {
                    ++random_finals;
                    o.require(r["random"] == true, "(c) all-zero final not random" + tag);
                    auto env2 = std::unique_ptr<Environment>(new sim::SimEnvironment(task));
                    auto again = rollout_segment_level(s0, policy, env2, grm, cfg, seed);
                    o.require(again.provenance.records.back()["selected"] == r["selected"],
                              "(c) random pick not seeded" + tag);
                }
            }
            o.require(judge.requests.size() <= 3 * tournaments + 3 * 3 * tournaments,
                      "(c) judge call count" + tag);
        }
    }
    o.require(random_finals > 0 && reward_finals > 0, "final-block cases not both exercised");
    if (o.pass)
        o.detail = "200/200 episodes; final blocks: " + std::to_string(reward_finals) + " by reward, " +
                   std::to_string(random_finals) + " seeded random";
    return o;
}

Outcome acceptance_purity() {
    Outcome o;
    auto tasks = sim::generate_tasks(40);
    for (std::size_t i = 0; i < tasks.size(); i += 5) tasks[i].environment["broken_reward"] = true;
    sim::SimActorOptions so;
    so.policy.competence = 0.25;
    auto base = sim::make_sim_factory(so);
    ActorFactory factory = [&](const TaskSpec& spec) {
        TaskActors a = base(spec);
        if (spec.task_id.find("-7-") != std::string::npos) a.policy = std::make_shared<const AbortingPolicy>();
        return a;
    };
    auto dir = scratch("purity");
    CollectOptions opts;
    opts.run = run_config(Strategy::turn_level, 3, 5, 20, 11);
    opts.output_dir = dir;
    opts.rollouts_per_task = 2;
    auto m = collect_dataset(tasks, factory, opts);
    auto [manifest, records] = read_finalized(dir / kManifestFile);
    for (const auto& t : records) o.require(t.terminal_reward == 1, "dataset record without reward 1");
    auto rej = lines_of(dir / kRejectedFile);
    auto une = lines_of(dir / kUnevaluatedFile);
    for (const auto& j : rej) o.require(j["terminal_reward"] == 0, "rejected log holds a non-zero reward");
    for (const auto& j : une) o.require(j["terminal_reward"].is_null(), "unevaluated log holds a reward");
    o.require(records.size() == m.counts.accepted && rej.size() == m.counts.rejected && une.size() == m.counts.unevaluated,
              "counts disagree with files");
    o.require(m.counts.accepted > 0 && m.counts.rejected > 0 && m.counts.unevaluated > 0 && m.counts.aborted > 0,
              "run did not produce every outcome");
    if (o.pass) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "accepted=%zu rejected=%zu unevaluated=%zu aborted=%zu", m.counts.accepted,
                      m.counts.rejected, m.counts.unevaluated, m.counts.aborted);
        o.detail = buf;
    }
    return o;
}

Outcome easy_filter_rule() {
    Outcome o;
    auto tasks = sim::generate_tasks(20);
    RunConfig cfg;
    cfg.seed = 3;
    sim::SimActorOptions perfect_opts;
    perfect_opts.policy.competence = 1.0;
    auto perfect = sim::make_sim_factory(perfect_opts);
    auto all = filter_easy_tasks(tasks, perfect, 5, cfg);
    o.require(all.survivors.empty(), std::to_string(all.survivors.size()) + " solvable tasks survived");

    sim::SimActorOptions hopeless_opts;
    hopeless_opts.policy.competence = 0.0;
    auto hopeless = sim::make_sim_factory(hopeless_opts);
    std::map<std::string, std::size_t> calls;
    std::mutex mutex;
    ActorFactory once = [&](const TaskSpec& spec) {
        std::size_t k;
        {
            std::lock_guard lock(mutex);
            k = calls[spec.task_id]++;
        }
        return k == grmfilter::detail::fnv1a(spec.task_id) % 5 ? hopeless(spec) : perfect(spec);
    };
    auto none = filter_easy_tasks(tasks, once, 5, cfg);
    o.require(none.survivors.size() == tasks.size(), "a task failing once was removed");
    for (const auto& e : none.log) {
        std::size_t solved = std::count(e.trials.begin(), e.trials.end(), std::optional<int>(1));
        o.require(solved == 4, "trial outcomes not 4/5 for " + e.task_id);
    }
    if (o.pass) o.detail = "5/5 solved: 20 of 20 removed; 4/5 solved: 0 of 20 removed";
    return o;
}

Outcome analyzer_fidelity() {
    Outcome o;
    const std::string dir = std::string(GRMFILTER_TEST_DATA) + "/fixtures/";
    auto corpus = read_dataset(dir + "analyzer_corpus.jsonl");
    Json labels = Json::parse(slurp(dir + "analyzer_labels.json"));
    auto reg = PatternRegistry::defaults();
    std::array<bool, kBehaviorCount> seen_behavior{};
    std::array<bool, 3> seen_category{};
    for (const auto& t : corpus) {
        const auto& want = labels["trajectories"].at(t.task_id);
        auto flags = detect_behaviors(t, reg);
        for (std::size_t b = 0; b < kBehaviorCount; ++b) {
            const auto& list = want["behaviors"];
            bool expected = std::find(list.begin(), list.end(), std::string(kBehaviorNames[b])) != list.end();
            o.require(flags.flags[b] == expected, t.task_id + " " + std::string(kBehaviorNames[b]));
            seen_behavior[b] = seen_behavior[b] || expected;
        }
        auto errs = detect_errors(t, reg);
        for (std::size_t i = 0; i < errs.size(); ++i) {
            auto key = std::to_string(i);
            bool labelled = want["errors"].contains(key);
            o.require(labelled == errs[i].has_value(), t.task_id + " step " + key);
            if (labelled && errs[i]) {
                o.require(to_string(*errs[i]) == want["errors"][key].get<std::string>(), t.task_id + " step " + key);
                for (std::size_t c = 0; c < 3; ++c) seen_category[c] = seen_category[c] || kErrorCategories[c] == *errs[i];
            }
        }
    }
    auto r = corpus_metrics(corpus, reg);
    const auto& w = labels["corpus"];
    auto r3 = [](double v) { return std::round(v * 1000.0) / 1000.0; };
    o.require(r3(r.task_level_error_rate) == w["task_level_error_rate"].get<double>(), "task-level rate");
    o.require(r3(r.turn_level_error_rate) == w["turn_level_error_rate"].get<double>(), "turn-level rate");
    o.require(r3(r.average_turns) == w["average_turns"].get<double>(), "average turns");
    for (std::size_t b = 0; b < kBehaviorCount; ++b)
        o.require(r3(r.behavior_ratio[b]) == w["behaviors"][std::string(kBehaviorNames[b])].get<double>(),
                  "behavior ratio " + std::string(kBehaviorNames[b]));
    o.require(std::all_of(seen_behavior.begin(), seen_behavior.end(), [](bool b) { return b; }) &&
                  std::all_of(seen_category.begin(), seen_category.end(), [](bool b) { return b; }),
              "fixture does not cover every class");
    if (o.pass) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu trajectories; task-level %.3f, turn-level %.3f, avg turns %.3f",
                      corpus.size(), r.task_level_error_rate, r.turn_level_error_rate, r.average_turns);
        o.detail = buf;
    }
    return o;
}

Outcome prompt_goldens() {
    using namespace grmfilter::testing_support;
    Outcome o;
    const std::string dir = std::string(GRMFILTER_TEST_DATA) + "/golden/";
    PromptFixture f;
    auto turn = turn_prompt(f);
    auto pair = pair_prompt(f);
    auto empty = empty_history_prompt(f);
    o.require(!slurp(dir + kTurnGolden).empty() && turn == slurp(dir + kTurnGolden), "turn prompt differs");
    o.require(!slurp(dir + kPairGolden).empty() && pair == slurp(dir + kPairGolden), "pair prompt differs");
    o.require(!slurp(dir + kEmptyHistoryGolden).empty() && empty == slurp(dir + kEmptyHistoryGolden),
              "empty-history prompt differs");
    o.require(turn.find("ACTION i WINS") != std::string::npos, "literal 'ACTION i WINS' missing");
    auto in_order = [](const std::string& p, std::vector<std::string> marks) {
        std::size_t pos = 0;
        for (const auto& m : marks) {
            pos = p.find(m, pos);
            if (pos == std::string::npos) return false;
        }
        return true;
    };
    o.require(in_order(turn, {"**Your role as an evaluation expert**", "=== USER INSTRUCTION ===",
                              "=== GROUND-TRUTH GIT PATCH ===", "=== CONVERSATION HISTORY ===",
                              "**Step-by-Step Evaluation Instructions**", "=== CANDIDATE ACTIONS ===",
                              "Step 3: Evaluate One by One and Output Conclusion"}),
              "turn prompt section order");
    o.require(in_order(pair, {"**Your role as an evaluation expert**", "=== USER INSTRUCTION ===",
                              "=== GROUND-TRUTH GIT PATCH ===", "=== CONVERSATION HISTORY ===",
                              "**Step-by-Step Evaluation Instructions**", "=== TRAJECTORIES ===",
                              "Step 3: Output Your Evaluation Result"}),
              "pair prompt section order");
    if (o.pass) o.detail = "3 goldens byte-identical";
    return o;
}

Outcome cli_determinism() {
    Outcome o;
    auto dir = scratch("determinism");
    auto run = [&](const std::string& args) {
        std::string cmd = "cd '" + dir.string() + "' && '" + std::string(GRMFILTER_CLI) + "' " + args + " > /dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    o.require(run("sim generate -n 60 -o tasks.jsonl") == 0, "sim generate failed");
    for (const char* strategy : {"turn_level", "segment_level"}) {
        std::string common = std::string("collect --set tasks=tasks.jsonl --set strategy=") + strategy + " --seed 123";
        o.require(run(common + " -o a_" + strategy) == 0 && run(common + " -o b_" + strategy) == 0, "collect failed");
        auto ma = Json::parse(slurp(dir / ("a_" + std::string(strategy)) / kManifestFile));
        auto mb = Json::parse(slurp(dir / ("b_" + std::string(strategy)) / kManifestFile));
        o.require(ma["content_hash"] == mb["content_hash"], std::string(strategy) + ": manifest hashes differ");
        for (const char* f : {kDatasetFile, kRejectedFile, kUnevaluatedFile, kAbortedFile})
            o.require(slurp(dir / ("a_" + std::string(strategy)) / f) == slurp(dir / ("b_" + std::string(strategy)) / f),
                      std::string(strategy) + ": " + f + " differs");
    }
    if (o.pass) o.detail = "turn_level and segment_level runs byte-identical";
    return o;
}

struct ArmStats {
    double acceptance = 0, mean_length = 0, error_rate = 0;
    std::size_t accepted = 0, evaluated = 0;
};

ArmStats run_arm(Strategy s, const std::vector<TaskSpec>& tasks, const fs::path& dir) {
    sim::SimActorOptions so;
    so.policy.competence = 0.6;
    CollectOptions opts;
    opts.run = run_config(s, s == Strategy::baseline ? 1 : 3, 5, 20, 0);
    opts.output_dir = dir;
    opts.workers = 4;
    auto m = collect_dataset(tasks, sim::make_sim_factory(so), opts);
    auto records = read_finalized(dir / kManifestFile).second;
    ArmStats a;
    a.accepted = m.counts.accepted;
    a.evaluated = m.counts.accepted + m.counts.rejected;
    a.acceptance = static_cast<double>(a.accepted) / static_cast<double>(a.evaluated);
    auto report = corpus_metrics(records, PatternRegistry::defaults());
    a.mean_length = report.average_turns;
    a.error_rate = report.turn_level_error_rate;
    return a;
}

Outcome directional() {
    Outcome o;
    auto tasks = sim::generate_tasks(200, 0);
    auto base = run_arm(Strategy::baseline, tasks, scratch("dir_baseline"));
    std::string detail;
    auto fmt = [](const char* name, const ArmStats& a) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s acc=%.3f len=%.2f err=%.3f", name, a.acceptance, a.mean_length, a.error_rate);
        return std::string(buf);
    };
    detail = fmt("baseline", base);
    for (auto [s, name] : {std::pair{Strategy::turn_level, "turn"}, std::pair{Strategy::segment_level, "segment"}}) {
        auto arm = run_arm(s, tasks, scratch(std::string("dir_") + name));
        o.require(arm.acceptance >= base.acceptance, std::string(name) + ": acceptance below baseline");
        o.require(arm.mean_length <= base.mean_length, std::string(name) + ": longer accepted trajectories");
        o.require(arm.error_rate <= base.error_rate, std::string(name) + ": higher turn-level error rate");
        detail += "; " + fmt(name, arm);
    }
    if (o.pass) o.detail = detail;
    else o.detail += " [" + detail + "]";
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
        double budget_s;
    };
    const std::vector<Criterion> criteria{
        {"turn-level selection exactness", turn_selection_exactness, 1.0},
        {"pairwise tournament exactness", tournament_exactness, 10.0},
        {"horizon partition law", partition_law, 1.0},
        {"algorithm contracts on 200 simulator episodes", contract_suite, 0.0},
        {"dataset acceptance purity", acceptance_purity, 0.0},
        {"easy-task filter rule", easy_filter_rule, 0.0},
        {"analyzer fidelity on hand-labeled fixture", analyzer_fidelity, 0.0},
        {"prompt golden files", prompt_goldens, 0.0},
        {"collect determinism", cli_determinism, 0.0},
        {"directional end-to-end (seed 0, 200 tasks)", directional, 120.0},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& c = criteria[i];
        auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            o.pass = false;
            char buf[96];
            std::snprintf(buf, sizeof buf, "%s (took %.2fs, budget %.0fs)", o.detail.c_str(), secs, c.budget_s);
            o.detail = buf;
        }
        failures += !o.pass;
        std::printf("%s  %2zu. %s: %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", i + 1, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::error_code ec;
    fs::remove_all(fs::temp_directory_path() / ("grmfilter_acceptance_" + std::to_string(::getpid())), ec);
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}

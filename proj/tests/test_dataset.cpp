#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include "grmfilter/dataset.hpp"
#include "grmfilter/sim_tasks.hpp"

using namespace grmfilter;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("grmfilter_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

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

class AbortingPolicy final : public Policy {
public:
    std::string descriptor() const override { return "aborting"; }
    std::vector<Action> sample(const State&, std::size_t, std::uint64_t) const override {
        throw RolloutAbort("policy endpoint unreachable");
    }
};

sim::SimActorOptions sim_options(double competence) {
    sim::SimActorOptions o;
    o.policy.competence = competence;
    return o;
}

CollectOptions collect_options(const fs::path& dir, Strategy s = Strategy::turn_level) {
    CollectOptions o;
    o.run.strategy = s;
    o.run.candidates = s == Strategy::baseline ? 1 : 3;
    o.run.seed = 42;
    o.output_dir = dir;
    return o;
}

}  // namespace

TEST(Hash, KnownVectors) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    auto dir = fresh_dir("hash");
    std::ofstream(dir / "empty").close();
    EXPECT_EQ(file_content_hash((dir / "empty").string()),
              "sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Tasks, WriteReadRoundTrip) {
    auto dir = fresh_dir("tasks");
    auto tasks = sim::generate_tasks(5);
    tasks[2].side.extra_notes = "check negative inputs";
    write_tasks((dir / "t.jsonl").string(), tasks);
    auto back = read_tasks((dir / "t.jsonl").string());
    ASSERT_EQ(back.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(back[i].task_id, tasks[i].task_id);
        EXPECT_EQ(back[i].prompt(), tasks[i].prompt());
        EXPECT_EQ(back[i].side.ground_truth_patch, tasks[i].side.ground_truth_patch);
        EXPECT_EQ(back[i].environment, tasks[i].environment);
    }
    EXPECT_EQ(back[2].side.extra_notes, "check negative inputs");
}

TEST(Tasks, ErrorsCarryLineNumbers) {
    auto dir = fresh_dir("task_errors");
    auto check = [&](const std::string& body, std::size_t line) {
        std::ofstream(dir / "t.jsonl", std::ios::trunc) << body;
        try {
            read_tasks((dir / "t.jsonl").string());
            ADD_FAILURE() << "no error for:\n" << body;
        } catch (const DatasetError& e) {
            EXPECT_EQ(e.line(), line) << e.what();
        }
    };
    std::string good = R"({"task_id":"a","task_statement":"x"})";
    check(good + "\n{not json}\n", 2);
    check(good + "\n\n" + R"({"task_statement":"no id"})" + "\n", 3);
    check(good + "\n" + good + "\n", 2);
    check(good + "\n" + R"({"task_id":"b","task_sta)", 2);  // truncated last line
    EXPECT_THROW(read_tasks((dir / "missing.jsonl").string()), DatasetError);
}

TEST(Collect, CapIsExactWithAnyWorkerCount) {
    auto tasks = sim::generate_tasks(60);
    for (std::size_t workers : {1, 4}) {
        auto dir = fresh_dir("cap" + std::to_string(workers));
        auto o = collect_options(dir);
        o.cap = 7;
        o.workers = workers;
        auto m = collect_dataset(tasks, sim::make_sim_factory(sim_options(0.9)), o);
        EXPECT_EQ(m.counts.accepted, 7u);
        EXPECT_TRUE(m.cap_reached);
        EXPECT_EQ(lines_of(dir / kDatasetFile).size(), 7u);
        EXPECT_LT(m.counts.tasks_attempted, tasks.size());
    }
}

TEST(Collect, HopelessPolicyYieldsEmptyDataset) {
    auto dir = fresh_dir("empty");
    auto m = collect_dataset(sim::generate_tasks(10), sim::make_sim_factory(sim_options(0.0)), collect_options(dir));
    EXPECT_EQ(m.counts.accepted, 0u);
    EXPECT_EQ(m.counts.rejected, 10u);
    EXPECT_FALSE(m.cap_reached);
    EXPECT_TRUE(fs::exists(dir / kDatasetFile));
    EXPECT_EQ(fs::file_size(dir / kDatasetFile), 0u);
    EXPECT_EQ(m.content_hash, "sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_FALSE(fs::exists(dir / (std::string(kDatasetFile) + kPartialSuffix)));
}

TEST(Collect, PurityAcrossAllOutcomes) {
    // Mix of solvable tasks, reward-harness failures and aborting policies.
    auto tasks = sim::generate_tasks(40);
    for (std::size_t i = 0; i < tasks.size(); i += 5) tasks[i].environment["broken_reward"] = true;
    auto base = sim::make_sim_factory(sim_options(0.25));
    ActorFactory factory = [&](const TaskSpec& spec) {
        TaskActors a = base(spec);
        if (spec.task_id.find("-7-") != std::string::npos || spec.task_id.find("-13-") != std::string::npos)
            a.policy = std::make_shared<const AbortingPolicy>();
        return a;
    };
    auto dir = fresh_dir("purity");
    auto o = collect_options(dir);
    o.rollouts_per_task = 2;
    auto m = collect_dataset(tasks, factory, o);

    auto acc = lines_of(dir / kDatasetFile);
    auto rej = lines_of(dir / kRejectedFile);
    auto une = lines_of(dir / kUnevaluatedFile);
    auto abo = lines_of(dir / kAbortedFile);
    EXPECT_EQ(acc.size(), m.counts.accepted);
    EXPECT_EQ(rej.size(), m.counts.rejected);
    EXPECT_EQ(une.size(), m.counts.unevaluated);
    EXPECT_EQ(abo.size(), m.counts.aborted);
    EXPECT_EQ(m.counts.rollouts, acc.size() + rej.size() + une.size() + abo.size());
    EXPECT_GT(acc.size(), 0u);
    EXPECT_GT(rej.size(), 0u);
    EXPECT_EQ(une.size(), 16u);  // 8 tasks x 2 attempts, never accepted
    EXPECT_EQ(abo.size(), 4u);

    for (const auto& j : acc) {
        auto t = trajectory_from_json(j);
        EXPECT_NO_THROW(validate(t));
        ASSERT_TRUE(t.terminal_reward);
        EXPECT_EQ(*t.terminal_reward, 1);
        // Re-derive the reward from the recorded actions alone.
        auto task = sim::task_for_spec(*std::find_if(tasks.begin(), tasks.end(),
                                                    [&](const TaskSpec& s) { return s.task_id == t.task_id; }));
        EXPECT_EQ(sim::sim_reward(*task, t).value, 1);
        EXPECT_EQ(t.horizon(), o.run.horizon);
    }
    for (const auto& j : rej) EXPECT_EQ(j["terminal_reward"], 0);
    for (const auto& j : une) EXPECT_TRUE(j["terminal_reward"].is_null());

    // Attempts stop at the first acceptance.
    std::map<std::string, std::size_t> attempts, accepted;
    for (const auto& j : rej) ++attempts[j["task_id"]];
    for (const auto& j : acc) ++accepted[j["task_id"]];
    for (const auto& [id, n] : accepted) {
        EXPECT_EQ(n, 1u);
        EXPECT_LE(attempts[id], 1u);
    }
}

TEST(Collect, DeterministicAndWorkerIndependent) {
    auto tasks = sim::generate_tasks(25);
    std::vector<std::string> hashes, rejected;
    for (std::size_t workers : {1, 1, 3, 8}) {
        auto dir = fresh_dir("det" + std::to_string(hashes.size()));
        auto o = collect_options(dir, Strategy::segment_level);
        o.workers = workers;
        o.run.branch_workers = workers;
        auto m = collect_dataset(tasks, sim::make_sim_factory(sim_options(0.6)), o);
        hashes.push_back(m.content_hash);
        rejected.push_back(slurp(dir / kRejectedFile));
        EXPECT_EQ(file_content_hash((dir / kDatasetFile).string()), m.content_hash);
    }
    for (std::size_t i = 1; i < hashes.size(); ++i) {
        EXPECT_EQ(hashes[i], hashes[0]);
        EXPECT_EQ(rejected[i], rejected[0]);
    }
}

TEST(Collect, LaterPassesOnlyRetryUnacceptedTasks) {
    auto tasks = sim::generate_tasks(20);
    auto dir1 = fresh_dir("pass1");
    auto dir2 = fresh_dir("pass2");
    auto o = collect_options(dir1, Strategy::baseline);
    auto one = collect_dataset(tasks, sim::make_sim_factory(sim_options(0.4)), o);
    o.output_dir = dir2;
    o.max_passes = 3;
    auto three = collect_dataset(tasks, sim::make_sim_factory(sim_options(0.4)), o);
    EXPECT_GE(three.counts.accepted, one.counts.accepted);
    // The first pass is shared, so the single-pass dataset is a prefix of the longer run.
    auto a = slurp(dir1 / kDatasetFile);
    EXPECT_EQ(slurp(dir2 / kDatasetFile).substr(0, a.size()), a);
    std::map<std::string, int> seen;
    for (const auto& j : lines_of(dir2 / kDatasetFile)) EXPECT_EQ(++seen[j["task_id"]], 1);
    EXPECT_EQ(three.counts.rollouts, three.counts.accepted + three.counts.rejected);
}

TEST(Collect, ManifestRoundTripAndIntegrity) {
    auto dir = fresh_dir("manifest");
    auto o = collect_options(dir);
    o.config_snapshot = Json{{"strategy", "turn_level"}};
    auto m = collect_dataset(sim::generate_tasks(10), sim::make_sim_factory(sim_options(0.6)), o);
    auto [back, records] = read_finalized(dir / kManifestFile);
    EXPECT_EQ(back.content_hash, m.content_hash);
    EXPECT_EQ(back.counts.accepted, records.size());
    EXPECT_EQ(back.config, o.config_snapshot);

    std::ofstream(dir / kDatasetFile, std::ios::app) << "\n";
    try {
        read_finalized(dir / kManifestFile);
        ADD_FAILURE() << "tampered dataset accepted";
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("integrity error"), std::string::npos);
    }
}

TEST(Collect, SchemaInvalidRecordReportsLine) {
    auto dir = fresh_dir("schema");
    auto o = collect_options(dir);
    collect_dataset(sim::generate_tasks(6), sim::make_sim_factory(sim_options(0.9)), o);
    auto recs = lines_of(dir / kDatasetFile);
    ASSERT_GE(recs.size(), 2u);
    recs[1]["real_length"] = 999;
    {
        std::ofstream out(dir / "bad.jsonl");
        for (const auto& j : recs) out << j.dump() << "\n";
    }
    try {
        read_dataset((dir / "bad.jsonl").string());
        ADD_FAILURE() << "schema error not detected";
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(Collect, CapabilityAndConfigErrorsFailFast) {
    auto tasks = sim::generate_tasks(3);
    auto dir = fresh_dir("fail_fast");
    auto opts = sim_options(0.6);
    opts.environment.snapshot = false;
    EXPECT_THROW(collect_dataset(tasks, sim::make_sim_factory(opts), collect_options(dir, Strategy::segment_level)),
                 CapabilityError);
    EXPECT_FALSE(fs::exists(dir / kAbortedFile));

    auto no_judge = sim_options(0.6);
    no_judge.judge_weights.clear();
    EXPECT_THROW(collect_dataset(tasks, sim::make_sim_factory(no_judge), collect_options(dir)), ConfigError);

    auto o = collect_options(dir);
    o.cap = 0;
    o.workers = 0;
    try {
        collect_dataset(tasks, sim::make_sim_factory(sim_options(0.6)), o);
        ADD_FAILURE();
    } catch (const ConfigError& e) {
        EXPECT_GE(e.violations().size(), 2u);
    }
}

TEST(EasyFilter, RemovesOnlyTasksSolvedEveryTime) {
    auto tasks = sim::generate_tasks(4);
    // Per-task scripts of trial outcomes: solved, one failure, harness failure, abort.
    std::map<std::string, std::size_t> calls;
    std::mutex mutex;
    auto perfect = sim::make_sim_factory(sim_options(1.0));
    auto hopeless = sim::make_sim_factory(sim_options(0.0));
    ActorFactory factory = [&](const TaskSpec& spec) {
        std::size_t k;
        {
            std::lock_guard lock(mutex);
            k = calls[spec.task_id]++;
        }
        if (spec.task_id == tasks[1].task_id && k == 3) return hopeless(spec);
        if (spec.task_id == tasks[2].task_id && k == 1) {
            TaskSpec broken = spec;
            broken.environment["broken_reward"] = true;
            return perfect(broken);
        }
        TaskActors a = perfect(spec);
        if (spec.task_id == tasks[3].task_id && k == 4) a.policy = std::make_shared<const AbortingPolicy>();
        return a;
    };
    RunConfig cfg;
    auto r = filter_easy_tasks(tasks, factory, 5, cfg);
    ASSERT_EQ(r.log.size(), 4u);
    EXPECT_EQ(r.log[0].status, "removed");
    EXPECT_EQ(r.log[1].status, "kept");
    EXPECT_EQ(r.log[2].status, "unevaluated-kept");
    EXPECT_EQ(r.log[3].status, "unevaluated-kept");
    EXPECT_EQ(r.log[1].trials, (std::vector<std::optional<int>>{1, 1, 1, 0, 1}));
    EXPECT_FALSE(r.log[3].trials[4]);
    EXPECT_EQ(r.log[3].errors.size(), 1u);
    ASSERT_EQ(r.survivors.size(), 3u);
    EXPECT_EQ(r.survivors[0].task_id, tasks[1].task_id);
}

TEST(EasyFilter, SingleTrialAndWorkerIndependence) {
    auto tasks = sim::generate_tasks(30);
    RunConfig cfg;
    cfg.seed = 9;
    auto factory = sim::make_sim_factory(sim_options(0.7));
    auto a = filter_easy_tasks(tasks, factory, 1, cfg, 1);
    auto b = filter_easy_tasks(tasks, factory, 1, cfg, 6);
    ASSERT_EQ(a.log.size(), b.log.size());
    std::size_t removed = 0;
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].trials, b.log[i].trials);
        EXPECT_EQ(a.log[i].removed, a.log[i].trials[0] == 1);
        removed += a.log[i].removed;
    }
    EXPECT_EQ(a.survivors.size(), tasks.size() - removed);
    EXPECT_THROW(filter_easy_tasks(tasks, factory, 0, cfg), ContractError);
}

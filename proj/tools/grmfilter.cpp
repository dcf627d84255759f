// grmfilter: collect GRM-filtered trajectory datasets, pre-filter easy tasks, analyze corpora.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "grmfilter/analyzer.hpp"
#include "grmfilter/config.hpp"
#include "grmfilter/dataset.hpp"
#include "grmfilter/sim_tasks.hpp"

namespace fs = std::filesystem;
using namespace grmfilter;

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "Override a config key: dotted.path=value (repeatable, last wins)");
    cmd->add_option("--seed", o.seed, "Root seed for all randomness");
    cmd->add_option("-o,--out", o.out, "Output directory (overrides output_dir)");
}

/// Resolves and validates the configuration. The seed comes from --seed, else the config,
/// else a fresh draw that is printed so the run can be repeated.
AppConfig resolve(const CommonOptions& o) {
    std::optional<Json> file;
    if (!o.config_path.empty()) file = load_config_file(o.config_path);
    std::vector<std::string> overrides = o.overrides;
    if (!o.out.empty()) overrides.push_back("output_dir=" + Json(o.out).dump());
    std::vector<std::string> problems;
    Json doc = resolve_config(file, overrides, &problems);
    if (o.seed) {
        doc["seed"] = *o.seed;
    } else if (doc.at("seed").is_null()) {
        std::random_device rd;
        std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32 | rd()) >> 1;
        doc["seed"] = s;
        std::printf("seed: %llu (drawn)\n", static_cast<unsigned long long>(s));
        std::fflush(stdout);
    }
    return validate_config(doc, std::move(problems));
}

std::vector<TaskSpec> load_tasks(const AppConfig& c) {
    if (c.tasks_path) return read_tasks(*c.tasks_path);
    return sim::generate_tasks(c.sim_task_count, c.sim_first_seed, c.sim_difficulty_max);
}

void write_snapshot(const AppConfig& c) {
    fs::create_directories(c.collect.output_dir);
    write_file_atomic(c.collect.output_dir / "config.json", c.document.dump(2) + "\n");
}

void print_summary(const DatasetManifest& m, const fs::path& dir) {
    const auto& k = m.counts;
    std::printf("collect: accepted=%zu rejected=%zu unevaluated=%zu aborted=%zu fallback_selections=%zu "
                "rollouts=%zu hash=%s manifest=%s\n",
                k.accepted, k.rejected, k.unevaluated, k.aborted, k.fallback_selections, k.rollouts,
                m.content_hash.c_str(), (dir / kManifestFile).string().c_str());
}

DatasetManifest run_collect(AppConfig c) {
    auto tasks = load_tasks(c);
    write_snapshot(c);
    std::shared_ptr<AuditLog> audit;
    if (c.gateway) audit = std::make_shared<AuditLog>((c.collect.output_dir / "audit.jsonl").string());
    c.collect.config_snapshot = c.document;
    auto manifest = collect_dataset(tasks, make_actor_factory(c, audit), c.collect);
    print_summary(manifest, c.collect.output_dir);
    return manifest;
}

int cmd_collect(const CommonOptions& o) {
    run_collect(resolve(o));
    return 0;
}

int cmd_easy_filter(const CommonOptions& o, std::optional<std::size_t> trials) {
    AppConfig c = resolve(o);
    if (trials) {
        if (*trials < 1) throw ConfigError({"--trials must be at least 1"});
        c.easy_trials = *trials;
    }
    auto tasks = load_tasks(c);
    write_snapshot(c);
    std::shared_ptr<AuditLog> audit;
    if (c.gateway) audit = std::make_shared<AuditLog>((c.collect.output_dir / "audit.jsonl").string());
    auto result = filter_easy_tasks(tasks, make_actor_factory(c, audit), c.easy_trials, c.collect.run, c.collect.workers);
    auto survivors = c.collect.output_dir / "tasks.filtered.jsonl";
    write_tasks(survivors.string(), result.survivors);
    std::ofstream log(c.collect.output_dir / "easy_filter_log.jsonl", std::ios::binary | std::ios::trunc);
    for (const auto& e : result.log) log << to_json(e).dump() << '\n';
    if (result.survivors.empty()) std::fprintf(stderr, "warning: no tasks survived the easy-task filter\n");
    std::printf("easy-filter: trials=%zu tasks=%zu removed=%zu kept=%zu survivors=%s\n", c.easy_trials, tasks.size(),
                tasks.size() - result.survivors.size(), result.survivors.size(), survivors.string().c_str());
    return 0;
}

/// "name=path" or a bare path (named after its parent directory or stem).
std::pair<std::string, std::string> split_named(const std::string& arg) {
    auto eq = arg.find('=');
    if (eq != std::string::npos) return {arg.substr(0, eq), arg.substr(eq + 1)};
    fs::path p(arg);
    std::string name = p.stem().string();
    if ((name == "accepted" || name == "manifest") && p.has_parent_path()) name = p.parent_path().filename().string();
    return {name, arg};
}

std::vector<Trajectory> load_corpus(const std::string& path) {
    if (fs::path(path).filename() == kManifestFile) return read_finalized(path).second;
    return read_dataset(path);
}

void emit_reports(const std::vector<std::pair<std::string, CorpusReport>>& reports, const fs::path& out) {
    if (!out.empty()) {
        fs::create_directories(out);
        for (const auto& [name, r] : reports)
            write_file_atomic(out / ("report_" + name + ".json"), to_json(r).dump(2) + "\n");
    }
    auto table = compare_reports(reports);
    std::string text = render_text(table);
    std::fputs(text.c_str(), stdout);
    if (!out.empty() && reports.size() >= 2) {
        write_file_atomic(out / "comparison.json", to_json(table).dump(2) + "\n");
        write_file_atomic(out / "comparison.txt", text);
    }
}

int cmd_analyze(const std::vector<std::string>& inputs, const std::string& registry_path, const std::string& out) {
    auto registry = registry_path.empty() ? PatternRegistry::defaults() : PatternRegistry::from_file(registry_path);
    std::vector<std::pair<std::string, CorpusReport>> reports;
    for (const auto& arg : inputs) {
        auto [name, path] = split_named(arg);
        auto corpus = load_corpus(path);
        if (corpus.empty()) throw DatasetError(path + ": no trajectories to analyze");
        reports.emplace_back(name, corpus_metrics(corpus, registry));
    }
    emit_reports(reports, out);
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
    std::vector<std::pair<std::string, CorpusReport>> reports;
    for (const auto& arg : inputs) {
        auto [name, path] = split_named(arg);
        if (name.rfind("report_", 0) == 0) name = name.substr(7);
        std::ifstream in(path);
        if (!in) throw DatasetError("cannot open report '" + path + "'");
        reports.emplace_back(name, corpus_report_from_json(Json::parse(in)));
    }
    emit_reports(reports, out);
    return 0;
}

int cmd_sim_generate(std::size_t count, std::uint64_t first_seed, std::size_t difficulty_max, const std::string& out) {
    auto tasks = sim::generate_tasks(count, first_seed, difficulty_max);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_tasks(out, tasks);
    std::printf("sim generate: %zu tasks -> %s\n", tasks.size(), out.c_str());
    return 0;
}

/// Collects one dataset per strategy under <out>/<strategy>/ and compares the accepted corpora.
int cmd_sim_run(const CommonOptions& o, const std::vector<std::string>& strategies) {
    AppConfig base = resolve(o);
    const fs::path root = base.collect.output_dir;
    std::vector<std::pair<std::string, CorpusReport>> reports;
    auto registry = registry_for(base);
    for (const auto& name : strategies) {
        Json doc = base.document;
        doc["strategy"] = name;
        doc["output_dir"] = (root / name).string();
        AppConfig c = validate_config(doc);
        auto m = run_collect(c);
        if (m.counts.accepted == 0) {
            std::printf("%s: no accepted trajectories, skipped in comparison\n", name.c_str());
            continue;
        }
        auto corpus = read_finalized(c.collect.output_dir / kManifestFile).second;
        reports.emplace_back(name, corpus_metrics(corpus, registry));
    }
    if (!reports.empty()) emit_reports(reports, root);
    return 0;
}

int cmd_validate(const CommonOptions& o) {
    AppConfig c = resolve(o);
    std::printf("config OK: strategy=%s N=%zu L=%zu T=%zu seed=%llu\n",
                std::string(to_string(c.collect.run.strategy)).c_str(), c.collect.run.candidates,
                c.collect.run.segment_length, c.collect.run.horizon,
                static_cast<unsigned long long>(c.collect.run.seed));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GRM-guided trajectory filtering for software-engineering agents"};
    app.require_subcommand(1);

    CommonOptions collect_opts;
    auto* collect = app.add_subcommand("collect", "Roll out tasks and write the accepted-trajectory dataset");
    add_common(collect, collect_opts);

    CommonOptions easy_opts;
    std::optional<std::size_t> trials;
    auto* easy = app.add_subcommand("easy-filter", "Drop tasks the base policy solves in every trial");
    add_common(easy, easy_opts);
    easy->add_option("--trials", trials, "Baseline trials per task (default from config, 5)");

    std::vector<std::string> analyze_inputs;
    std::string analyze_registry, analyze_out;
    auto* analyze = app.add_subcommand("analyze", "Behaviour and error statistics of one or more datasets");
    analyze->add_option("inputs", analyze_inputs, "Dataset files or manifests, optionally name=path")->required();
    analyze->add_option("--registry", analyze_registry, "Pattern registry JSON")->check(CLI::ExistingFile);
    analyze->add_option("-o,--out", analyze_out, "Directory for report files");

    std::vector<std::string> report_inputs;
    std::string report_out;
    auto* report = app.add_subcommand("report", "Comparison table from saved report files");
    report->add_option("inputs", report_inputs, "Report JSON files, optionally name=path")->required();
    report->add_option("-o,--out", report_out, "Directory for the comparison table");

    auto* sim_cmd = app.add_subcommand("sim", "Simulator tasks and seeded experiments");
    sim_cmd->require_subcommand(1);
    std::size_t gen_count = 200, gen_difficulty = 3;
    std::uint64_t gen_first = 0;
    std::string gen_out = "tasks.jsonl";
    auto* gen = sim_cmd->add_subcommand("generate", "Write a simulator task file");
    gen->add_option("-n,--count", gen_count, "Number of tasks");
    gen->add_option("--first-seed", gen_first, "Seed of the first task");
    gen->add_option("--difficulty-max", gen_difficulty, "Difficulty cycles through 0..max");
    gen->add_option("-o,--out", gen_out, "Output task file");
    CommonOptions run_opts;
    std::vector<std::string> run_strategies{"baseline", "turn_level", "segment_level"};
    auto* run = sim_cmd->add_subcommand("run", "Collect with several strategies and compare the corpora");
    add_common(run, run_opts);
    run->add_option("--strategies", run_strategies, "Strategies to run")->delimiter(',');

    CommonOptions validate_opts;
    auto* validate = app.add_subcommand("validate-config", "Check a configuration without running anything");
    add_common(validate, validate_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*collect) return cmd_collect(collect_opts);
        if (*easy) return cmd_easy_filter(easy_opts, trials);
        if (*analyze) return cmd_analyze(analyze_inputs, analyze_registry, analyze_out);
        if (*report) return cmd_report(report_inputs, report_out);
        if (*gen) return cmd_sim_generate(gen_count, gen_first, gen_difficulty, gen_out);
        if (*run) return cmd_sim_run(run_opts, run_strategies);
        if (*validate) return cmd_validate(validate_opts);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const CapabilityError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitError;
    }
    return kExitError;
}

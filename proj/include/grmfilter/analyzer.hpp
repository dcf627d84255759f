#pragma once

// Behaviour detection, error classification and corpus statistics over trajectory sets.

#include <array>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "grmfilter/core.hpp"
#include "grmfilter/embedded_assets.hpp"
#include "grmfilter/errors.hpp"

namespace grmfilter {

enum class Behavior : std::size_t { created_test, created_repro, ran_test, ran_repro };
inline constexpr std::size_t kBehaviorCount = 4;

inline constexpr std::array<std::string_view, kBehaviorCount> kBehaviorNames{"created_test", "created_repro",
                                                                              "ran_test", "ran_repro"};

/// Error categories counted by the analyzer, in classification priority order.
inline constexpr std::array<ErrorTag, 3> kErrorCategories{ErrorTag::path_not_found, ErrorTag::invalid_view_range,
                                                          ErrorTag::replace_failed};

struct BehaviorFlags {
    std::array<bool, kBehaviorCount> flags{};

    bool operator[](Behavior b) const noexcept { return flags[static_cast<std::size_t>(b)]; }
    bool created_test() const noexcept { return (*this)[Behavior::created_test]; }
    bool created_repro() const noexcept { return (*this)[Behavior::created_repro]; }
    bool ran_test() const noexcept { return (*this)[Behavior::ran_test]; }
    bool ran_repro() const noexcept { return (*this)[Behavior::ran_repro]; }

    friend bool operator==(const BehaviorFlags&, const BehaviorFlags&) = default;
};

/// Named keyword patterns (ECMAScript, case-insensitive).
class PatternRegistry {
public:
    struct Entry {
        std::string source;
        std::regex compiled;
    };

    static PatternRegistry from_json(const Json& doc) {
        PatternRegistry r;
        std::vector<std::string> errors;
        r.version_ = doc.value("version", std::string("unversioned"));
        auto compile = [&](const Json& list, std::string_view name, std::vector<Entry>& out) {
            if (!list.is_array() || list.empty()) {
                errors.push_back("pattern class '" + std::string(name) + "' must be a non-empty list");
                return;
            }
            for (const auto& p : list) {
                try {
                    out.push_back(Entry{p.get<std::string>(),
                                        std::regex(p.get<std::string>(), std::regex::ECMAScript | std::regex::icase)});
                } catch (const std::exception& e) {
                    errors.push_back("pattern class '" + std::string(name) + "': bad pattern " + p.dump() + ": " +
                                     e.what());
                }
            }
        };
        const Json& behaviors = doc.contains("behaviors") ? doc.at("behaviors") : Json::object();
        for (std::size_t i = 0; i < kBehaviorCount; ++i) {
            auto name = std::string(kBehaviorNames[i]);
            compile(behaviors.contains(name) ? behaviors.at(name) : Json(), name, r.behaviors_[i]);
        }
        for (const auto& [k, _] : behaviors.items())
            if (std::find(kBehaviorNames.begin(), kBehaviorNames.end(), k) == kBehaviorNames.end())
                errors.push_back("unknown behavior class '" + k + "'");
        const Json& errs = doc.contains("errors") ? doc.at("errors") : Json::object();
        for (std::size_t i = 0; i < kErrorCategories.size(); ++i) {
            auto name = std::string(to_string(kErrorCategories[i]));
            compile(errs.contains(name) ? errs.at(name) : Json(), name, r.errors_[i]);
        }
        for (const auto& [k, _] : errs.items())
            if (std::none_of(kErrorCategories.begin(), kErrorCategories.end(),
                             [&](ErrorTag t) { return to_string(t) == k; }))
                errors.push_back("unknown error category '" + k + "'");
        if (!errors.empty()) throw ConfigError(std::move(errors));
        return r;
    }

    static PatternRegistry defaults() { return from_json(Json::parse(assets::kDefaultRegistryJson)); }

    static PatternRegistry from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError({"cannot open registry file '" + path + "'"});
        try {
            return from_json(Json::parse(in));
        } catch (const Json::parse_error& e) {
            throw ConfigError({"registry file '" + path + "': " + e.what()});
        }
    }

    const std::string& version() const noexcept { return version_; }
    const std::vector<Entry>& behavior(Behavior b) const { return behaviors_[static_cast<std::size_t>(b)]; }
    /// Index follows kErrorCategories.
    const std::vector<Entry>& error(std::size_t category) const { return errors_.at(category); }

private:
    std::string version_;
    std::array<std::vector<Entry>, kBehaviorCount> behaviors_;
    std::array<std::vector<Entry>, 3> errors_;
};

namespace detail {

inline bool any_match(const std::vector<PatternRegistry::Entry>& entries, const std::string& text) {
    for (const auto& e : entries)
        if (std::regex_search(text, e.compiled)) return true;
    return false;
}

/// Raw text plus the canonical rendering of the parsed call, so patterns see the arguments too.
inline std::string match_subject(const Action& a) {
    return a.raw_text + "\n" + render_tool_call(a.tool_name, a.arguments);
}

}  // namespace detail

inline BehaviorFlags detect_behaviors(const Trajectory& t, const PatternRegistry& registry) {
    BehaviorFlags f;
    for (const auto& s : t.steps) {
        if (s.is_null()) continue;
        std::string subject = detail::match_subject(s.action);
        for (std::size_t b = 0; b < kBehaviorCount; ++b)
            if (!f.flags[b] && detail::any_match(registry.behavior(static_cast<Behavior>(b)), subject)) f.flags[b] = true;
    }
    return f;
}

/// Category of one step: the environment's tag when present, else observation-text patterns in
/// priority order (path, view range, replace). other_error and clean steps yield nullopt.
inline std::optional<ErrorTag> classify_step(const Step& s, const PatternRegistry& registry) {
    if (s.is_null() || s.observation.is_null) return std::nullopt;
    if (s.observation.error_tag) {
        auto tag = *s.observation.error_tag;
        if (tag == ErrorTag::other_error) return std::nullopt;
        return tag;
    }
    for (std::size_t i = 0; i < kErrorCategories.size(); ++i)
        if (detail::any_match(registry.error(i), s.observation.raw_text)) return kErrorCategories[i];
    return std::nullopt;
}

/// One entry per step (null steps included, always nullopt).
inline std::vector<std::optional<ErrorTag>> detect_errors(const Trajectory& t, const PatternRegistry& registry) {
    std::vector<std::optional<ErrorTag>> out;
    out.reserve(t.steps.size());
    for (const auto& s : t.steps) out.push_back(classify_step(s, registry));
    return out;
}

struct CategoryStats {
    std::size_t steps = 0;         ///< steps carrying the category
    std::size_t trajectories = 0;  ///< trajectories with at least one such step
};

struct CorpusReport {
    std::size_t trajectory_count = 0;
    std::size_t real_steps = 0;
    std::size_t error_steps = 0;
    std::size_t trajectories_with_error = 0;
    std::array<double, kBehaviorCount> behavior_ratio{};
    double task_level_error_rate = 0.0;
    double turn_level_error_rate = 0.0;
    double average_turns = 0.0;
    std::array<CategoryStats, 3> categories{};
    std::string registry_version;
};

inline CorpusReport corpus_metrics(const std::vector<Trajectory>& corpus, const PatternRegistry& registry) {
    if (corpus.empty()) throw ContractError("corpus_metrics: empty corpus");
    CorpusReport r;
    r.trajectory_count = corpus.size();
    r.registry_version = registry.version();
    std::array<std::size_t, kBehaviorCount> behavior_counts{};
    for (const auto& t : corpus) {
        auto flags = detect_behaviors(t, registry);
        for (std::size_t b = 0; b < kBehaviorCount; ++b) behavior_counts[b] += flags.flags[b];
        auto errs = detect_errors(t, registry);
        std::array<bool, 3> seen{};
        bool any = false;
        for (const auto& e : errs) {
            if (!e) continue;
            any = true;
            ++r.error_steps;
            for (std::size_t c = 0; c < 3; ++c)
                if (kErrorCategories[c] == *e) {
                    ++r.categories[c].steps;
                    seen[c] = true;
                }
        }
        for (std::size_t c = 0; c < 3; ++c) r.categories[c].trajectories += seen[c];
        r.trajectories_with_error += any;
        r.real_steps += count_real_steps(t.steps);
    }
    const double n = static_cast<double>(corpus.size());
    for (std::size_t b = 0; b < kBehaviorCount; ++b) r.behavior_ratio[b] = behavior_counts[b] / n;
    r.task_level_error_rate = r.trajectories_with_error / n;
    r.turn_level_error_rate = r.real_steps ? static_cast<double>(r.error_steps) / r.real_steps : 0.0;
    r.average_turns = r.real_steps / n;
    return r;
}

inline Json to_json(const CorpusReport& r) {
    Json behaviors = Json::object();
    for (std::size_t b = 0; b < kBehaviorCount; ++b) behaviors[std::string(kBehaviorNames[b])] = r.behavior_ratio[b];
    Json cats = Json::object();
    for (std::size_t c = 0; c < 3; ++c)
        cats[std::string(to_string(kErrorCategories[c]))] =
            Json{{"steps", r.categories[c].steps}, {"trajectories", r.categories[c].trajectories}};
    return Json{{"trajectory_count", r.trajectory_count},
                {"real_steps", r.real_steps},
                {"error_steps", r.error_steps},
                {"trajectories_with_error", r.trajectories_with_error},
                {"behaviors", std::move(behaviors)},
                {"task_level_error_rate", r.task_level_error_rate},
                {"turn_level_error_rate", r.turn_level_error_rate},
                {"average_turns", r.average_turns},
                {"error_categories", std::move(cats)},
                {"registry_version", r.registry_version}};
}

inline CorpusReport corpus_report_from_json(const Json& j) {
    CorpusReport r;
    r.trajectory_count = j.at("trajectory_count").get<std::size_t>();
    r.real_steps = j.at("real_steps").get<std::size_t>();
    r.error_steps = j.at("error_steps").get<std::size_t>();
    r.trajectories_with_error = j.at("trajectories_with_error").get<std::size_t>();
    for (std::size_t b = 0; b < kBehaviorCount; ++b)
        r.behavior_ratio[b] = j.at("behaviors").at(std::string(kBehaviorNames[b])).get<double>();
    r.task_level_error_rate = j.at("task_level_error_rate").get<double>();
    r.turn_level_error_rate = j.at("turn_level_error_rate").get<double>();
    r.average_turns = j.at("average_turns").get<double>();
    for (std::size_t c = 0; c < 3; ++c) {
        const auto& cj = j.at("error_categories").at(std::string(to_string(kErrorCategories[c])));
        r.categories[c] = {cj.at("steps").get<std::size_t>(), cj.at("trajectories").get<std::size_t>()};
    }
    r.registry_version = j.value("registry_version", std::string());
    return r;
}

// ---------------------------------------------------------------------------
// Comparison tables
// ---------------------------------------------------------------------------

struct ComparisonTable {
    enum class Unit { ratio, turns, count };

    struct Row {
        std::string metric;
        Unit unit = Unit::ratio;
        std::vector<double> values;
        /// values[i] - values[0] for i >= 1; empty with a single column.
        std::vector<double> deltas;
    };

    std::vector<std::string> columns;
    std::vector<Row> rows;
};

inline ComparisonTable compare_reports(const std::vector<std::pair<std::string, CorpusReport>>& reports) {
    if (reports.empty()) throw ContractError("compare_reports: no reports");
    using Unit = ComparisonTable::Unit;
    ComparisonTable table;
    for (const auto& [name, _] : reports) table.columns.push_back(name);
    auto add = [&](std::string metric, Unit unit, auto get) {
        ComparisonTable::Row row{std::move(metric), unit, {}, {}};
        for (const auto& [_, r] : reports) row.values.push_back(get(r));
        for (std::size_t i = 1; i < row.values.size(); ++i) row.deltas.push_back(row.values[i] - row.values[0]);
        table.rows.push_back(std::move(row));
    };
    add("Create Test", Unit::ratio, [](const CorpusReport& r) { return r.behavior_ratio[0]; });
    add("Create Repro. Script", Unit::ratio, [](const CorpusReport& r) { return r.behavior_ratio[1]; });
    add("Run Test", Unit::ratio, [](const CorpusReport& r) { return r.behavior_ratio[2]; });
    add("Run Repro. Script", Unit::ratio, [](const CorpusReport& r) { return r.behavior_ratio[3]; });
    add("Error Rate (Task-Level)", Unit::ratio, [](const CorpusReport& r) { return r.task_level_error_rate; });
    add("Error Rate (Turn-Level)", Unit::ratio, [](const CorpusReport& r) { return r.turn_level_error_rate; });
    add("Avg. Turns", Unit::turns, [](const CorpusReport& r) { return r.average_turns; });
    for (std::size_t c = 0; c < 3; ++c) {
        add("Error Steps: " + std::string(to_string(kErrorCategories[c])), Unit::count,
            [c](const CorpusReport& r) { return static_cast<double>(r.categories[c].steps); });
    }
    add("Trajectories", Unit::count, [](const CorpusReport& r) { return static_cast<double>(r.trajectory_count); });
    return table;
}

inline Json to_json(const ComparisonTable& t) {
    Json rows = Json::array();
    for (const auto& r : t.rows) {
        Json row{{"metric", r.metric},
                 {"unit", r.unit == ComparisonTable::Unit::ratio ? "ratio"
                          : r.unit == ComparisonTable::Unit::turns ? "turns"
                                                                   : "count"},
                 {"values", r.values}};
        if (!r.deltas.empty()) row["deltas"] = r.deltas;
        rows.push_back(std::move(row));
    }
    return Json{{"columns", t.columns}, {"rows", std::move(rows)}};
}

namespace detail {

inline std::string format_cell(double v, ComparisonTable::Unit unit, bool delta) {
    char buf[48];
    switch (unit) {
        case ComparisonTable::Unit::ratio:
            std::snprintf(buf, sizeof buf, delta ? "%+.1fpp" : "%.1f%%", v * 100.0);
            break;
        case ComparisonTable::Unit::turns: std::snprintf(buf, sizeof buf, delta ? "%+.2f" : "%.2f", v); break;
        case ComparisonTable::Unit::count: std::snprintf(buf, sizeof buf, delta ? "%+.0f" : "%.0f", v); break;
    }
    return buf;
}

}  // namespace detail

/// Aligned plain-text rendering. Delta columns are relative to the first column.
inline std::string render_text(const ComparisonTable& t) {
    std::vector<std::string> header{"Metric"};
    for (const auto& c : t.columns) header.push_back(c);
    for (std::size_t i = 1; i < t.columns.size(); ++i) header.push_back("Δ " + t.columns[i]);

    std::vector<std::vector<std::string>> cells{header};
    for (const auto& r : t.rows) {
        std::vector<std::string> line{r.metric};
        for (double v : r.values) line.push_back(detail::format_cell(v, r.unit, false));
        for (double d : r.deltas) line.push_back(detail::format_cell(d, r.unit, true));
        cells.push_back(std::move(line));
    }
    // Display width: count UTF-8 lead bytes only.
    auto width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s) w += (c & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));

    std::string out;
    auto emit = [&](const std::vector<std::string>& line) {
        for (std::size_t i = 0; i < line.size(); ++i) {
            std::string pad(widths[i] - width(line[i]), ' ');
            out += i == 0 ? line[i] + pad : " | " + pad + line[i];
        }
        out += "\n";
    };
    emit(cells.front());
    std::size_t total = 0;
    for (auto w : widths) total += w;
    out += std::string(total + 3 * (widths.size() - 1), '-') + "\n";
    for (std::size_t i = 1; i < cells.size(); ++i) emit(cells[i]);
    return out;
}

}  // namespace grmfilter

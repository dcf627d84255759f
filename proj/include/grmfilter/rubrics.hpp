#pragma once

// Rubric configuration, GRM prompt assembly, verdict parsing, weighted scoring
// and the pairwise tournament.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "grmfilter/core.hpp"
#include "grmfilter/detail/parallel.hpp"
#include "grmfilter/detail/random.hpp"
#include "grmfilter/embedded_assets.hpp"
#include "grmfilter/errors.hpp"

namespace grmfilter {

inline constexpr double kRubricWeightTolerance = 1e-9;

struct Rubric {
    std::string id;
    std::string title;
    std::string body;
    double weight = 0.0;
};

struct RubricSet {
    std::vector<Rubric> rubrics;

    std::size_t size() const noexcept { return rubrics.size(); }

    std::vector<double> weights() const {
        std::vector<double> w;
        for (const auto& r : rubrics) w.push_back(r.weight);
        return w;
    }
};

/// Returns every rule the set violates; empty when valid.
inline std::vector<std::string> rubric_violations(const RubricSet& set) {
    std::vector<std::string> out;
    if (set.rubrics.empty()) out.push_back("rubric set is empty");
    std::set<std::string> ids;
    double sum = 0.0;
    for (const auto& r : set.rubrics) {
        if (r.id.empty()) out.push_back("rubric with empty id");
        if (!ids.insert(r.id).second) out.push_back("duplicate rubric id '" + r.id + "'");
        if (!(r.weight > 0.0 && r.weight <= 1.0))
            out.push_back("rubric '" + r.id + "' weight " + std::to_string(r.weight) + " outside (0, 1]");
        sum += r.weight;
    }
    if (!set.rubrics.empty() && std::abs(sum - 1.0) > kRubricWeightTolerance) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "rubric weights sum to %.12g, expected 1 within tolerance %g", sum,
                      kRubricWeightTolerance);
        out.emplace_back(buf);
    }
    return out;
}

/// Accepts either {"rubrics": [...]} or a bare array of {id, title, weight, body}.
/// Weights are validated, never renormalised.
inline RubricSet load_rubrics(const Json& doc) {
    const Json& arr = doc.is_object() ? doc.at("rubrics") : doc;
    if (!arr.is_array()) throw ConfigError({"rubric document must be an array or {\"rubrics\": [...]}"});
    RubricSet set;
    std::vector<std::string> errors;
    for (const auto& item : arr) {
        try {
            set.rubrics.push_back(Rubric{item.at("id").get<std::string>(), item.at("title").get<std::string>(),
                                         item.at("body").get<std::string>(), item.at("weight").get<double>()});
        } catch (const Json::exception& e) {
            errors.push_back(std::string("malformed rubric entry: ") + e.what());
        }
    }
    auto v = rubric_violations(set);
    errors.insert(errors.end(), v.begin(), v.end());
    if (!errors.empty()) throw ConfigError(std::move(errors));
    return set;
}

inline RubricSet load_rubrics_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open rubric file '" + path + "'"});
    try {
        return load_rubrics(Json::parse(in));
    } catch (const Json::parse_error& e) {
        throw ConfigError({"rubric file '" + path + "': " + e.what()});
    }
}

inline RubricSet default_turn_rubrics() { return load_rubrics(Json::parse(assets::kTurnRubricsJson)); }
inline RubricSet default_segment_rubrics() { return load_rubrics(Json::parse(assets::kSegmentRubricsJson)); }

struct SideInfo {
    std::string ground_truth_patch;
    std::string task_statement;
    std::optional<std::string> extra_notes;
};

struct PromptTemplates {
    std::string turn{assets::kTurnPromptTemplate};
    std::string pair{assets::kPairPromptTemplate};
    /// Allows judging without a ground-truth patch.
    bool allow_patch_free = false;
};

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError({"cannot open '" + path + "'"});
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Prompt assembly
// ---------------------------------------------------------------------------

namespace detail {

/// Replaces {name} placeholders from `values`; other braces are left alone.
inline std::string fill_template(std::string_view tmpl,
                                 const std::vector<std::pair<std::string_view, std::string>>& values) {
    std::string out;
    out.reserve(tmpl.size() * 2);
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i);
            if (close != std::string_view::npos) {
                auto name = tmpl.substr(i + 1, close - i - 1);
                bool replaced = false;
                for (const auto& [k, v] : values) {
                    if (k == name) {
                        out += v;
                        replaced = true;
                        break;
                    }
                }
                if (replaced) {
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

inline std::string percent(double weight) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", weight * 100.0);
    return buf;
}

inline void append_step(std::string& out, std::size_t index, const Step& s, bool with_observation) {
    out += "[Step " + std::to_string(index) + "]\nACTION:\n" + s.action.raw_text + "\n";
    if (with_observation) out += "OBSERVATION:\n" + s.observation.raw_text + "\n";
}

}  // namespace detail

inline std::string render_rubrics(const RubricSet& rubrics) {
    std::string out;
    for (std::size_t i = 0; i < rubrics.size(); ++i) {
        const auto& r = rubrics.rubrics[i];
        if (i) out += "\n";
        out += "Rubric " + std::to_string(i + 1) + ": " + r.title + " (Weight: " + detail::percent(r.weight) +
               "%)\n\n" + r.body + "\n";
    }
    return out;
}

inline std::string render_history(const State& state) {
    if (state.history.empty()) return "(no actions have been taken yet)\n";
    std::string out;
    for (std::size_t i = 0; i < state.history.size(); ++i) {
        if (i) out += "\n";
        detail::append_step(out, i + 1, state.history[i], true);
    }
    return out;
}

namespace detail {

inline std::string render_instruction(const State& state, const SideInfo& side) {
    std::string out = state.initial_prompt;
    if (!side.task_statement.empty() && state.initial_prompt.find(side.task_statement) == std::string::npos)
        out += "\n\n" + side.task_statement;
    if (side.extra_notes && !side.extra_notes->empty()) out += "\n\nNotes:\n" + *side.extra_notes;
    return out;
}

inline std::string render_patch(const SideInfo& side, const PromptTemplates& templates) {
    if (side.ground_truth_patch.empty()) {
        if (!templates.allow_patch_free)
            throw ContractError("ground-truth patch is empty and patch-free judging is not enabled");
        return "(no ground-truth patch provided)";
    }
    return side.ground_truth_patch;
}

}  // namespace detail

/// Turn-level prompt: instruction, patch, history, rubrics, then the unexecuted candidates.
/// Candidates never carry observations.
inline std::string assemble_turn_prompt(const State& state, std::span<const Action> candidates, const SideInfo& side,
                                        const RubricSet& rubrics, const PromptTemplates& templates = {}) {
    if (candidates.size() < 2) throw ContractError("assemble_turn_prompt: need at least 2 candidates");
    std::string cands;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i) cands += "\n";
        cands += "--- ACTION " + std::to_string(i + 1) + " ---\n" + candidates[i].raw_text + "\n";
    }
    return detail::fill_template(templates.turn, {{"candidate_count", std::to_string(candidates.size())},
                                                  {"instruction", detail::render_instruction(state, side)},
                                                  {"patch", detail::render_patch(side, templates)},
                                                  {"history", render_history(state)},
                                                  {"rubrics", render_rubrics(rubrics)},
                                                  {"candidates", cands}});
}

/// Pair prompt: both segments embedded with their observations, first then second.
inline std::string assemble_pair_prompt(const State& prefix, std::span<const Step> first, std::span<const Step> second,
                                        const SideInfo& side, const RubricSet& rubrics,
                                        const PromptTemplates& templates = {}) {
    if (first.empty() || second.empty()) throw ContractError("assemble_pair_prompt: empty segment");
    std::string cands;
    std::size_t base = prefix.history.size();
    auto segment = [&](std::size_t which, std::span<const Step> steps) {
        cands += "--- TRAJECTORY " + std::to_string(which) + " ---\n";
        for (std::size_t i = 0; i < steps.size(); ++i) detail::append_step(cands, base + i + 1, steps[i], true);
    };
    segment(1, first);
    cands += "\n";
    segment(2, second);
    return detail::fill_template(templates.pair, {{"candidate_count", "2"},
                                                  {"instruction", detail::render_instruction(prefix, side)},
                                                  {"patch", detail::render_patch(side, templates)},
                                                  {"history", render_history(prefix)},
                                                  {"rubrics", render_rubrics(rubrics)},
                                                  {"candidates", cands}});
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

struct TurnVerdict {
    /// scores[c][r]: candidate c, rubric r. Empty when the judge did not report scores.
    std::vector<std::vector<int>> scores;
    /// Weighted totals, present only when scores were parsed for every candidate.
    std::vector<double> weighted_totals;
    /// 1-based, as written by the judge.
    std::size_t winner_index = 0;
    std::string raw_text;
};

struct PairVerdict {
    bool first_wins = false;
    std::string raw_text;
};

/// Σ score_i · weight_i.
inline double weighted_score(std::span<const int> scores, std::span<const double> weights) {
    if (scores.size() != weights.size())
        throw ContractError("weighted_score: " + std::to_string(scores.size()) + " scores vs " +
                            std::to_string(weights.size()) + " weights");
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) total += scores[i] * weights[i];
    return total;
}

/// Argmax with lowest-index ties.
inline std::size_t select_turn_winner(std::span<const double> totals) {
    if (totals.empty()) throw ContractError("select_turn_winner: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < totals.size(); ++i)
        if (totals[i] > totals[best]) best = i;
    return best;
}

/// Takes the last "ACTION i WINS" line. Per-candidate "ACTION i SCORES: a, b, ..." lines are
/// read when present; weighted totals are filled in when `weights` covers every candidate.
inline TurnVerdict parse_turn_verdict(const std::string& raw, std::size_t n,
                                      std::span<const double> weights = {}) {
    static const std::regex win_re(R"(ACTION\s+(\d+)\s+WINS)");
    static const std::regex score_re(R"(ACTION\s+(\d+)\s+SCORES?\s*:\s*([0-4](?:\s*,\s*[0-4])*))");
    static const std::regex digit_re(R"([0-4])");

    TurnVerdict v;
    v.raw_text = raw;
    std::optional<std::string> last;
    for (auto it = std::sregex_iterator(raw.begin(), raw.end(), win_re); it != std::sregex_iterator(); ++it)
        last = (*it)[1];
    if (!last) throw VerdictError(VerdictError::Kind::unparseable, "no 'ACTION i WINS' conclusion found");
    std::size_t idx = 0;
    try {
        idx = std::stoul(*last);
    } catch (const std::exception&) {
        throw VerdictError(VerdictError::Kind::out_of_range, "winner index '" + *last + "' is not a valid number");
    }
    if (idx < 1 || idx > n)
        throw VerdictError(VerdictError::Kind::out_of_range,
                           "winner index " + std::to_string(idx) + " outside [1, " + std::to_string(n) + "]");
    v.winner_index = idx;

    std::vector<std::vector<int>> scores(n);
    for (auto it = std::sregex_iterator(raw.begin(), raw.end(), score_re); it != std::sregex_iterator(); ++it) {
        std::size_t c = 0;
        try {
            c = std::stoul((*it)[1]);
        } catch (const std::exception&) {
            continue;
        }
        if (c < 1 || c > n) continue;
        std::string list = (*it)[2];
        std::vector<int> s;
        for (auto d = std::sregex_iterator(list.begin(), list.end(), digit_re); d != std::sregex_iterator(); ++d)
            s.push_back(std::stoi(d->str()));
        scores[c - 1] = std::move(s);  // last report per candidate wins
    }
    bool complete = std::all_of(scores.begin(), scores.end(), [](const auto& s) { return !s.empty(); });
    if (complete) {
        v.scores = std::move(scores);
        if (!weights.empty() && std::all_of(v.scores.begin(), v.scores.end(),
                                            [&](const auto& s) { return s.size() == weights.size(); })) {
            for (const auto& s : v.scores) v.weighted_totals.push_back(weighted_score(s, weights));
        }
    }
    return v;
}

/// Last word-bounded YES/NO, case-insensitive.
inline PairVerdict parse_pair_verdict(const std::string& raw) {
    static const std::regex re(R"(\b(yes|no)\b)", std::regex::icase);
    std::optional<std::string> last;
    for (auto it = std::sregex_iterator(raw.begin(), raw.end(), re); it != std::sregex_iterator(); ++it)
        last = (*it)[1];
    if (!last) throw VerdictError(VerdictError::Kind::unparseable, "no YES/NO token found");
    char c = (*last)[0];
    return PairVerdict{c == 'y' || c == 'Y', raw};
}

// ---------------------------------------------------------------------------
// Pairwise tournament
// ---------------------------------------------------------------------------

/// Judges candidates `first` and `second`, shown in that order. Returns true iff `first` wins.
using PairJudgeFn = std::function<bool(std::size_t first, std::size_t second)>;

struct PairOutcome {
    std::size_t a = 0;  ///< lower index of the pair
    std::size_t b = 0;
    bool a_shown_first = true;
    std::size_t winner = 0;
};

struct TournamentResult {
    std::size_t winner = 0;
    std::vector<std::size_t> wins;
    std::vector<PairOutcome> outcomes;
    std::size_t judge_calls = 0;
};

/// Presentation order of pair (a, b), a < b. Fixed by the seed.
inline bool pair_shown_in_order(std::uint64_t seed, std::size_t a, std::size_t b) noexcept {
    return !detail::Rng(detail::derive_seed(seed, {0x7061697275ULL, a, b})).coin();
}

/// Every unordered pair is judged exactly once; the candidate with the most wins is returned,
/// lowest index on ties. Pair judgments may run on up to `workers` threads.
inline TournamentResult run_pairwise_tournament(std::size_t n, const PairJudgeFn& judge, std::uint64_t seed,
                                                std::size_t workers = 1) {
    if (n == 0) throw ContractError("run_pairwise_tournament: no candidates");
    TournamentResult result;
    result.wins.assign(n, 0);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) result.outcomes.push_back({a, b, pair_shown_in_order(seed, a, b), 0});

    detail::parallel_for(result.outcomes.size(), workers, [&](std::size_t k) {
        auto& o = result.outcomes[k];
        std::size_t first = o.a_shown_first ? o.a : o.b;
        std::size_t second = o.a_shown_first ? o.b : o.a;
        o.winner = judge(first, second) ? first : second;
    });

    for (const auto& o : result.outcomes) ++result.wins[o.winner];
    result.judge_calls = result.outcomes.size();
    for (std::size_t i = 1; i < n; ++i)
        if (result.wins[i] > result.wins[result.winner]) result.winner = i;
    return result;
}

}  // namespace grmfilter

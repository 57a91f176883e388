/*
 * Copyright 2026 The ctrla Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctrla/errors.hpp"
#include "ctrla/orchestrator.hpp"
#include "ctrla/text.hpp"

namespace ctrla {

namespace detail {

inline void require_golds(const std::vector<std::string>& golds, const char* who) {
    if (golds.empty()) throw PreconditionError(std::string(who) + ": empty gold list");
}

inline std::string containment_normalize(std::string_view s) { return text::collapse_whitespace(text::to_lower(s)); }

inline double f1_single(const std::string& pred, const std::string& gold) {
    const auto p = text::split_whitespace(text::squad_normalize(pred));
    const auto g = text::split_whitespace(text::squad_normalize(gold));
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    std::unordered_map<std::string, int> counts;
    for (const auto& t : g) ++counts[t];
    int common = 0;
    for (const auto& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(p.size());
    const double recall = static_cast<double>(common) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

/// Normalized prediction contains some normalized gold (lowercase,
/// whitespace collapsed).
inline bool accuracy_contains(std::string_view prediction, const std::vector<std::string>& golds) {
    detail::require_golds(golds, "accuracy_contains");
    const auto p = detail::containment_normalize(prediction);
    return std::any_of(golds.begin(), golds.end(), [&](const std::string& g) {
        return p.find(detail::containment_normalize(g)) != std::string::npos;
    });
}

inline bool exact_match(std::string_view prediction, const std::vector<std::string>& golds) {
    detail::require_golds(golds, "exact_match");
    const auto p = text::squad_normalize(prediction);
    return std::any_of(golds.begin(), golds.end(),
                       [&](const std::string& g) { return p == text::squad_normalize(g); });
}

/// Max over golds of multiset token F1 after SQuAD normalization.
inline double token_f1(std::string_view prediction, const std::vector<std::string>& golds) {
    detail::require_golds(golds, "token_f1");
    double best = 0.0;
    for (const auto& g : golds) best = std::max(best, detail::f1_single(std::string(prediction), g));
    return best;
}

inline constexpr std::string_view kDefaultAnswerPattern = "so the answer is";

/// Text after the last case-insensitive occurrence of `pattern`, up to the
/// end of that sentence. Without a match, the last sentence of the answer.
inline std::string extract_answer(std::string_view answer, std::string_view pattern = kDefaultAnswerPattern) {
    const auto lowered = text::to_lower(answer);
    const auto needle = text::to_lower(pattern);
    auto cut_sentence = [](std::string_view s) {
        s = text::trim(s);
        if (!s.empty() && s.front() == ':') s = text::trim(s.substr(1));
        const auto end = s.find_first_of(".!?\n");
        return std::string(text::trim(s.substr(0, end)));
    };
    if (!needle.empty()) {
        const auto pos = lowered.rfind(needle);
        if (pos != std::string::npos) return cut_sentence(answer.substr(pos + needle.size()));
    }
    std::vector<std::string> sentences;
    std::string cur;
    for (char c : answer) {
        cur.push_back(c);
        if (c == '.' || c == '!' || c == '?' || c == '\n') {
            if (!text::trim(cur).empty()) sentences.push_back(cur);
            cur.clear();
        }
    }
    if (!text::trim(cur).empty()) sentences.push_back(cur);
    if (sentences.empty()) return {};
    return std::string(text::trim(sentences.back()));
}

enum class Metric { acc, em, f1 };

inline std::string to_string(Metric m) {
    switch (m) {
        case Metric::acc: return "acc";
        case Metric::em: return "em";
        case Metric::f1: return "f1";
    }
    return "unknown";
}

inline std::set<Metric> parse_metrics(std::string_view csv) {
    std::set<Metric> out;
    std::string cur;
    auto flush = [&] {
        const auto t = std::string(text::trim(cur));
        cur.clear();
        if (t.empty()) return;
        if (t == "acc") out.insert(Metric::acc);
        else if (t == "em") out.insert(Metric::em);
        else if (t == "f1") out.insert(Metric::f1);
        else throw ConfigError("metrics", "unknown metric '" + t + "'");
    };
    for (char c : csv) {
        if (c == ',') flush();
        else cur.push_back(c);
    }
    flush();
    if (out.empty()) throw ConfigError("metrics", "no metrics selected");
    return out;
}

struct EvalOptions {
    /// acc always scores the full answer; em and f1 score the extracted span
    /// when `extract` is set.
    bool extract = true;
    std::string answer_pattern{kDefaultAnswerPattern};
};

/// Report JSON: {"aggregate": {metric: mean, "freq": mean retrievals, "n"},
/// "per_example": [{"id", "prediction", "retrievals", metric...}]} with rows
/// sorted by id.
inline json evaluate(const std::vector<AnswerTrace>& traces, const std::vector<QAExample>& dataset,
                     const std::set<Metric>& metrics, const EvalOptions& opts = {}) {
    std::map<std::string, const QAExample*> by_id;
    for (const auto& ex : dataset) by_id[ex.example_id] = &ex;

    std::vector<const AnswerTrace*> ordered;
    for (const auto& t : traces) {
        if (!by_id.count(t.example_id)) throw MissingExample("trace references unknown example '" + t.example_id + "'");
        ordered.push_back(&t);
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const AnswerTrace* a, const AnswerTrace* b) { return a->example_id < b->example_id; });

    std::map<Metric, double> sums;
    double freq_sum = 0.0;
    json rows = json::array();
    for (const auto* t : ordered) {
        const auto& golds = by_id.at(t->example_id)->gold_answers;
        const std::string span = opts.extract ? extract_answer(t->answer, opts.answer_pattern) : t->answer;
        json row{{"id", t->example_id}, {"prediction", t->answer}, {"retrievals", t->retrieval_count}};
        if (opts.extract) row["extracted"] = span;
        for (Metric m : metrics) {
            double v = 0.0;
            switch (m) {
                case Metric::acc: v = accuracy_contains(t->answer, golds) ? 1.0 : 0.0; break;
                case Metric::em: v = exact_match(span, golds) ? 1.0 : 0.0; break;
                case Metric::f1: v = token_f1(span, golds); break;
            }
            sums[m] += v;
            row[to_string(m)] = v;
        }
        freq_sum += t->retrieval_count;
        rows.push_back(std::move(row));
    }
    const double n = static_cast<double>(ordered.size());
    json agg{{"n", ordered.size()}, {"freq", ordered.empty() ? 0.0 : freq_sum / n}};
    for (Metric m : metrics) agg[to_string(m)] = ordered.empty() ? 0.0 : sums[m] / n;
    return {{"aggregate", agg}, {"per_example", rows}};
}

}  // namespace ctrla

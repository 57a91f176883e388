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

#include <optional>
#include <string>
#include <vector>

#include "ctrla/backend.hpp"
#include "ctrla/confidence.hpp"
#include "ctrla/text.hpp"

namespace ctrla {

/// A segment with unconfident new-information tokens removed.
struct MaskedSegment {
    std::vector<std::string> tokens;
    std::vector<bool> kept;
    std::string rendered;  // kept tokens joined by single spaces

    std::vector<std::size_t> kept_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (kept[i]) out.push_back(i);
        }
        return out;
    }
};

inline MaskedSegment make_masked(std::vector<std::string> tokens, std::vector<bool> kept) {
    MaskedSegment m{std::move(tokens), std::move(kept), {}};
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < m.tokens.size(); ++i) {
        if (m.kept[i]) parts.push_back(m.tokens[i]);
    }
    m.rendered = text::join(parts, " ");
    return m;
}

/// Drops token k iff it is new information and its scaled confidence is
/// negative. Everything else is kept in order.
inline MaskedSegment mask_segment(const std::vector<std::string>& segment_tokens,
                                  const std::vector<double>& confidence, std::string_view question,
                                  std::string_view previous_output, const text::StopwordSet& stopwords) {
    if (confidence.size() != segment_tokens.size()) {
        throw LengthMismatch("mask_segment: " + std::to_string(segment_tokens.size()) + " tokens but " +
                             std::to_string(confidence.size()) + " scores");
    }
    std::vector<bool> kept(segment_tokens.size(), true);
    for (std::size_t k : new_information_tokens(segment_tokens, question, previous_output, stopwords)) {
        if (confidence[k] < 0.0) kept[k] = false;
    }
    return make_masked(segment_tokens, std::move(kept));
}

/// Question, a space, then the masked segment (question alone when nothing
/// is kept, masked text alone when the question is empty).
inline std::string formulate_caq(std::string_view question, const MaskedSegment& masked) {
    if (masked.rendered.empty()) return std::string(question);
    if (question.empty()) return masked.rendered;
    return std::string(question) + " " + masked.rendered;
}

// Few-shot templates ------------------------------------------------------

inline constexpr std::string_view kDefaultTvqTemplate =
    R"(Write one search query that would find documents to verify the draft answer sentence. Use the question and the draft as references. Output only the query.

Question: Who was the first person to walk on the moon?
Draft: The first person to walk on the moon was Buzz Aldrin in 1969.
Query: first person to walk on the Moon 1969 Apollo 11

Question: What is the capital of Australia?
Draft: The capital of Australia is Sydney, its largest city.
Query: capital city of Australia

Question: When did Henry Feilden enter politics?
Draft: Henry Feilden became a Member of Parliament in 1880.
Query: When did Henry Feilden enter politics?

Question: Who composed the opera Carmen?
Draft: Carmen was composed by Giuseppe Verdi.
Query: composer of the opera Carmen

Question: What language is spoken in Brazil?
Draft: The official language of Brazil is Spanish.
Query: official language of Brazil

Question: {question}
Draft: {segment}
Query:)";

inline constexpr std::string_view kDefaultQueryRewriteTemplate =
    R"(The previous search query did not retrieve documents that answer the question. Rewrite it as a different, more specific search query. Output only the new query.

Question: Who was the first person to walk on the moon?
Previous query: moon walk
New query: Apollo 11 first astronaut to step on the Moon

Question: What is the capital of Australia?
Previous query: Australia city
New query: capital city of Australia Canberra

Question: Which party did Henry Feilden represent?
Previous query: Henry Feilden
New query: Henry Feilden Conservative MP constituency

Question: Who composed the opera Carmen?
Previous query: Carmen
New query: Carmen opera 1875 composer

Question: What language is spoken in Brazil?
Previous query: Brazil speaking
New query: official language of Brazil Portuguese

Question: {question}
Previous query: {previous_query}
New query:)";

inline constexpr int kAuxiliaryMaxTokens = 64;

/// First non-empty line, trimmed, with one layer of surrounding quotes removed.
inline std::string first_query_line(std::string_view generated) {
    std::string_view rest = generated;
    while (!rest.empty()) {
        const auto nl = rest.find('\n');
        auto line = text::trim(rest.substr(0, nl));
        rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
        if (line.empty()) continue;
        if (line.size() >= 2 && ((line.front() == '"' && line.back() == '"') ||
                                 (line.front() == '\'' && line.back() == '\''))) {
            line = text::trim(line.substr(1, line.size() - 2));
        }
        if (!line.empty()) return std::string(line);
    }
    return {};
}

/// Generated validation query; falls back to CAQ with every token kept.
inline std::string formulate_tvq(std::string_view question, std::string_view segment, GeneratorBackend& generator,
                                 std::string_view tmpl = kDefaultTvqTemplate) {
    const auto prompt = text::fill_template(std::string(tmpl), {{"question", std::string(question)},
                                                                {"segment", std::string(segment)}});
    auto query = first_query_line(generate_plain_text(generator, prompt, kAuxiliaryMaxTokens));
    if (!query.empty()) return query;
    auto tokens = text::split_whitespace(segment);
    return formulate_caq(question, make_masked(tokens, std::vector<bool>(tokens.size(), true)));
}

/// Rewritten query for the refusal loop; falls back to the question.
inline std::string rewrite_query(std::string_view question, std::string_view previous_query,
                                 GeneratorBackend& generator, std::string_view tmpl = kDefaultQueryRewriteTemplate) {
    if (text::trim(previous_query).empty()) throw PreconditionError("rewrite_query: empty previous query");
    const auto prompt = text::fill_template(std::string(tmpl), {{"question", std::string(question)},
                                                                {"previous_query", std::string(previous_query)}});
    auto query = first_query_line(generate_plain_text(generator, prompt, kAuxiliaryMaxTokens));
    return query.empty() ? std::string(question) : query;
}

}  // namespace ctrla

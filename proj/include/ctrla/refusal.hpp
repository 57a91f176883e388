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

#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ctrla/backend.hpp"
#include "ctrla/core.hpp"
#include "ctrla/query_formulation.hpp"
#include "ctrla/retrieval.hpp"

namespace ctrla {

struct RefusalVerdict {
    enum class Kind { none, internal_refusal, irrelevant_docs };

    Kind kind = Kind::none;
    std::optional<std::string> matched_pattern;

    explicit operator bool() const noexcept { return kind != Kind::none; }
};

inline std::string to_string(RefusalVerdict::Kind k) {
    switch (k) {
        case RefusalVerdict::Kind::none: return "none";
        case RefusalVerdict::Kind::internal_refusal: return "internal_refusal";
        case RefusalVerdict::Kind::irrelevant_docs: return "irrelevant_docs";
    }
    return "unknown";
}

/// Case-insensitive substring patterns, in two sections.
struct RefusalPatterns {
    std::vector<std::string> internal_refusal;
    std::vector<std::string> irrelevant_docs;
};

inline constexpr std::string_view kDefaultRefusalPatterns = R"(# refusal patterns v1
# Case-insensitive substrings. [irrelevant_docs] is consulted only when
# retrieved documents are in the prompt, and wins over [internal_refusal].
[internal_refusal]
i don't know
i do not know
i am not sure
i'm not sure
insufficient information
not enough information
i cannot answer
i can't answer
i am unable to answer
additional information is needed
more information is needed
[irrelevant_docs]
irrelevant
does not mention
do not mention
not relevant to
does not provide information
do not provide information
no relevant information
)";

/// Lines under `[internal_refusal]` / `[irrelevant_docs]` headers; blank
/// lines and `#` comments are ignored.
inline RefusalPatterns parse_refusal_patterns(std::string_view content) {
    RefusalPatterns p;
    std::vector<std::string>* section = nullptr;
    std::istringstream in{std::string(content)};
    std::string line;
    while (std::getline(in, line)) {
        auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (t == "[internal_refusal]") {
            section = &p.internal_refusal;
        } else if (t == "[irrelevant_docs]") {
            section = &p.irrelevant_docs;
        } else if (t.front() == '[') {
            throw FormatError("refusal patterns: unknown section " + std::string(t));
        } else {
            if (!section) throw FormatError("refusal patterns: pattern before any section");
            section->push_back(text::to_lower(t));
        }
    }
    return p;
}

inline RefusalPatterns default_refusal_patterns() { return parse_refusal_patterns(kDefaultRefusalPatterns); }

inline RefusalPatterns load_refusal_patterns(const std::string& path) {
    return parse_refusal_patterns(text::read_file(path));
}

namespace detail {

/// Lowercase with typographic apostrophes folded to ASCII.
inline std::string fold_for_matching(std::string_view s) {
    std::string out = text::to_lower(s);
    const std::string curly = "\xE2\x80\x99";
    for (std::size_t pos = 0; (pos = out.find(curly, pos)) != std::string::npos;) out.replace(pos, curly.size(), "'");
    return out;
}

}  // namespace detail

inline RefusalVerdict detect_refusal(std::string_view segment, bool docs_in_context,
                                     const RefusalPatterns& patterns) {
    const auto folded = detail::fold_for_matching(segment);
    if (docs_in_context) {
        for (const auto& p : patterns.irrelevant_docs) {
            if (folded.find(p) != std::string::npos) return {RefusalVerdict::Kind::irrelevant_docs, p};
        }
    }
    for (const auto& p : patterns.internal_refusal) {
        if (folded.find(p) != std::string::npos) return {RefusalVerdict::Kind::internal_refusal, p};
    }
    return {};
}

inline RefusalVerdict detect_refusal(std::string_view segment, bool docs_in_context) {
    static const RefusalPatterns defaults = default_refusal_patterns();
    return detect_refusal(segment, docs_in_context, defaults);
}

/// A generated segment together with its per-token confidence scores.
struct SegmentDraft {
    std::vector<std::string> tokens;
    std::string text;
    std::vector<double> scaled;  // one per token; empty when unmonitored
    std::vector<std::size_t> new_info;
    SegmentEnd end;
};

/// Callbacks the refusal loop needs from its host session.
struct RefusalHooks {
    /// Fresh query from the configured strategy for a refusal draft.
    std::function<std::string(const SegmentDraft&)> formulate;
    /// Regenerates the current segment, with the given documents in context
    /// or from internal knowledge only when nullopt.
    std::function<SegmentDraft(const std::optional<std::vector<Document>>&)> regenerate;
};

struct RefusalOutcome {
    SegmentDraft segment;
    int attempts = 0;
    bool fallback = false;  // K attempts failed, answered without documents
    std::optional<std::string> last_query;
    std::vector<std::string> last_doc_ids;
};

/// Bounded retrieve-rewrite-regenerate loop. At most `max_attempts`
/// retrievals, then one unconditional regeneration without documents. Log
/// entries are committed to the session only when the loop completes.
inline RefusalOutcome handle_refusal(SessionState& session, const SegmentDraft& segment,
                                     std::optional<std::string> current_query, GeneratorBackend& generator,
                                     const Retriever& retriever, const RefusalHooks& hooks,
                                     const EngineConfig& config, const RefusalPatterns& patterns,
                                     bool docs_in_context, std::string_view rewrite_template =
                                                               kDefaultQueryRewriteTemplate) {
    RefusalVerdict verdict = detect_refusal(segment.text, docs_in_context, patterns);
    if (!verdict) throw PreconditionError("handle_refusal: segment is not a refusal");

    RefusalOutcome out{segment, 0, false, std::nullopt, {}};
    std::vector<RetrievalLogEntry> pending;
    std::optional<std::vector<Document>> docs_in_session;
    while (verdict && out.attempts < config.max_refusal_attempts) {
        ++out.attempts;
        const std::string query = current_query
                                      ? rewrite_query(session.question(), *current_query, generator, rewrite_template)
                                      : hooks.formulate(out.segment);
        auto docs = retriever.retrieve(query, static_cast<std::size_t>(config.top_k));
        RetrievalLogEntry entry{verdict.kind == RefusalVerdict::Kind::irrelevant_docs ? TriggerKind::refusal_docs
                                                                                      : TriggerKind::refusal_internal,
                                query,
                                {}};
        for (const auto& d : docs) entry.doc_ids.push_back(d.doc_id);
        out.last_doc_ids = entry.doc_ids;
        pending.push_back(std::move(entry));
        out.segment = hooks.regenerate(docs);
        docs_in_session = std::move(docs);
        verdict = detect_refusal(out.segment.text, true, patterns);
        // Later attempts refine the query that just failed.
        current_query = query;
        out.last_query = query;
    }
    if (verdict) {
        out.segment = hooks.regenerate(std::nullopt);
        out.fallback = true;
        docs_in_session.reset();
    }
    for (auto& e : pending) session.log_retrieval(std::move(e));
    session.set_current_docs(docs_in_session.value_or(std::vector<Document>{}));
    return out;
}

}  // namespace ctrla

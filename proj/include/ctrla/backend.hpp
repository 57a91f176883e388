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

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctrla/core.hpp"
#include "ctrla/steering.hpp"

namespace ctrla {

struct StopPolicy {
    enum class Kind { sentence_end, max_tokens, either };

    Kind kind = Kind::sentence_end;
    int max_tokens = 0;  // used by max_tokens and either

    static StopPolicy sentence_end() { return {Kind::sentence_end, 0}; }
    static StopPolicy max(int n) { return {Kind::max_tokens, n}; }
    static StopPolicy either(int n) { return {Kind::either, n}; }

    bool stops_at_sentence() const noexcept { return kind != Kind::max_tokens; }
    bool has_budget() const noexcept { return kind != Kind::sentence_end; }

    void validate() const {
        if (has_budget() && max_tokens < 1) throw PreconditionError("stop policy: max_tokens must be >= 1");
    }
};

/// True when the token closes a sentence: its last non-blank character is
/// '.', '!' or '?', or it contains a newline.
inline bool ends_sentence(std::string_view token) {
    if (token.find('\n') != std::string_view::npos) return true;
    auto t = text::trim(token);
    if (t.empty()) return false;
    const char c = t.back();
    return c == '.' || c == '!' || c == '?';
}

struct GenerationRequest {
    std::string prompt;
    std::optional<SteeringConfig> steering;
    const LayerwiseFeature* monitor_feature = nullptr;  // non-owning
    LayerRange monitor_layers{};
    StopPolicy stop = StopPolicy::sentence_end();
    bool want_frames = false;
};

enum class StopReason { sentence_end, max_tokens, exhausted, cancelled };

inline std::string to_string(StopReason r) {
    switch (r) {
        case StopReason::sentence_end: return "sentence_end";
        case StopReason::max_tokens: return "max_tokens";
        case StopReason::exhausted: return "exhausted";
        case StopReason::cancelled: return "cancelled";
    }
    return "unknown";
}

/// Segment-complete marker.
struct SegmentEnd {
    StopReason reason = StopReason::exhausted;
    bool end_of_answer = false;
    int token_count = 0;
};

/// Receives streamed tokens in order; returning false cancels generation.
using TokenSink = std::function<bool(const TokenEvent&)>;

struct ModelInfo {
    std::string model_id;
    int hidden_dim = 0;
    int layer_count = 0;
};

/// What every language-model provider must implement. Decoding is greedy;
/// there are no sampling knobs.
class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;

    virtual ModelInfo info() const = 0;
    virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(const std::vector<std::string>& tokens) const = 0;

    /// Teacher-forced encoding: one frame per token of `text`.
    virtual std::vector<HiddenFrame> encode(std::string_view text) = 0;

    /// Streams one segment into `sink` and returns the completion marker.
    virtual SegmentEnd generate_segment(const GenerationRequest& request, const TokenSink& sink) = 0;
};

struct CollectedSegment {
    std::vector<TokenEvent> events;
    SegmentEnd end;

    std::vector<std::string> token_texts() const {
        std::vector<std::string> out;
        out.reserve(events.size());
        for (const auto& e : events) out.push_back(e.token_text());
        return out;
    }
};

inline CollectedSegment collect_segment(GeneratorBackend& backend, const GenerationRequest& request) {
    CollectedSegment out;
    out.end = backend.generate_segment(request, [&](const TokenEvent& e) {
        out.events.push_back(e);
        return true;
    });
    return out;
}

/// Generates without steering or monitoring and returns the text.
inline std::string generate_plain_text(GeneratorBackend& backend, std::string prompt, int max_tokens) {
    GenerationRequest req;
    req.prompt = std::move(prompt);
    req.stop = StopPolicy::max(max_tokens);
    auto seg = collect_segment(backend, req);
    return backend.detokenize(seg.token_texts());
}

/// Stable 64-bit FNV-1a, used for token ids and prompt keys.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace ctrla

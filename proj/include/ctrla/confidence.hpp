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
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ctrla/core.hpp"
#include "ctrla/text.hpp"

namespace ctrla {

inline constexpr double kZClip = 3.0;
inline constexpr double kMinStd = 1e-12;

/// Mean over (monitor_range intersected with feature layers) of the token's
/// projection onto the feature. Streamed projections are preferred; the frame
/// is used for any monitored layer they do not cover.
inline double project_token(const TokenEvent& event, const LayerwiseFeature& feature,
                            const LayerRange& monitor_range) {
    double sum = 0.0;
    int used = 0;
    for (std::size_t i = 0; i < feature.layers().size(); ++i) {
        const int layer = feature.layers()[i];
        if (!monitor_range.contains(layer)) continue;
        if (event.projections()) {
            auto it = event.projections()->find(layer);
            if (it != event.projections()->end()) {
                sum += it->second;
                ++used;
                continue;
            }
        }
        if (event.frame()) {
            if (const Vector* rep = event.frame()->rep(layer)) {
                sum += dot(*rep, feature.vectors()[i]);
                ++used;
            }
        }
    }
    if (used == 0) {
        throw MissingLayers("token '" + event.token_text() + "' carries no monitored layer in [" +
                            std::to_string(monitor_range.first) + ", " +
                            std::to_string(monitor_range.last) + "]");
    }
    return sum / used;
}

/// Appends `new_raw` to the session history and returns its clipped
/// z-score against that history, minus tau. Histories shorter than two or
/// with (near) zero spread score z = 0.
inline double scale_score(ConfidenceTrace& trace, double new_raw, double tau) {
    const std::size_t n = trace.observe(new_raw);
    double z = 0.0;
    const double sd = std::sqrt(trace.variance());
    if (n >= 2 && sd >= kMinStd) {
        z = std::clamp((new_raw - trace.mean()) / sd, -kZClip, kZClip);
    }
    return z - tau;
}

/// Indices of tokens that are non-empty after normalization, not stopwords,
/// and absent from both the question and the previous output.
inline std::vector<std::size_t> new_information_tokens(const std::vector<std::string>& segment_tokens,
                                                       std::string_view question,
                                                       std::string_view previous_output,
                                                       const text::StopwordSet& stopwords) {
    auto seen = text::normalized_vocabulary(question);
    seen.merge(text::normalized_vocabulary(previous_output));
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < segment_tokens.size(); ++k) {
        const auto norm = text::normalize_token(segment_tokens[k]);
        if (norm.empty() || stopwords.contains(norm) || seen.contains(norm)) continue;
        out.push_back(k);
    }
    return out;
}

/// True iff some new-information token has a strictly negative scaled score.
/// `scaled` holds the segment's scores indexed like the segment tokens.
inline bool should_retrieve(const std::vector<double>& scaled, const std::vector<std::size_t>& new_info) {
    for (std::size_t k : new_info) {
        if (k >= scaled.size()) throw PreconditionError("should_retrieve: index outside the trace");
        if (scaled[k] < 0.0) return true;
    }
    return false;
}

/// Trace-level overload: `offset` is the position of the segment's first
/// token within the trace records.
inline bool should_retrieve(const ConfidenceTrace& trace, std::size_t offset,
                            const std::vector<std::size_t>& new_info) {
    std::vector<double> scaled;
    for (std::size_t i = offset; i < trace.records().size(); ++i) scaled.push_back(trace.records()[i].scaled);
    return should_retrieve(scaled, new_info);
}

}  // namespace ctrla

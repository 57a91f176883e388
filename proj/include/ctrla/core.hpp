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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctrla/errors.hpp"
#include "ctrla/linalg.hpp"
#include "ctrla/text.hpp"

namespace ctrla {

using json = nlohmann::json;

/// Inclusive range of 0-based layer indices.
struct LayerRange {
    int first = 0;
    int last = 0;

    bool contains(int layer) const noexcept { return layer >= first && layer <= last; }
    int size() const noexcept { return last >= first ? last - first + 1 : 0; }

    /// Layers numbered "5th to 18th" in prose map to {4, 17}.
    static LayerRange from_one_based(int first, int last) { return {first - 1, last - 1}; }

    friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

/// "A..B" with 1-based inclusive bounds, or a single "A".
inline LayerRange parse_layer_span(std::string_view s) {
    auto number = [&](std::string_view part) {
        part = text::trim(part);
        int v = 0;
        const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc{} || end != part.data() + part.size() || v < 1) {
            throw ConfigError("layers", "expected A..B with 1-based layers, got '" + std::string(s) + "'");
        }
        return v;
    };
    const auto dots = s.find("..");
    const int first = number(s.substr(0, dots));
    const int last = dots == std::string_view::npos ? first : number(s.substr(dots + 2));
    if (last < first) throw ConfigError("layers", "empty range '" + std::string(s) + "'");
    return LayerRange::from_one_based(first, last);
}

enum class FeatureKind { honesty, confidence };

inline std::string to_string(FeatureKind k) {
    return k == FeatureKind::honesty ? "honesty" : "confidence";
}

inline FeatureKind parse_feature_kind(std::string_view s) {
    if (s == "honesty") return FeatureKind::honesty;
    if (s == "confidence") return FeatureKind::confidence;
    throw FormatError("unknown feature kind '" + std::string(s) + "'");
}

inline constexpr double kUnitNormTolerance = 1e-6;

/// One unit direction per layer. Immutable once constructed.
class LayerwiseFeature {
public:
    LayerwiseFeature(std::string model_id, int hidden_dim, FeatureKind kind,
                     std::vector<int> layers, std::vector<Vector> vectors,
                     std::string sign_convention)
        : model_id_(std::move(model_id)),
          hidden_dim_(hidden_dim),
          kind_(kind),
          layers_(std::move(layers)),
          vectors_(std::move(vectors)),
          sign_convention_(std::move(sign_convention)) {
        if (hidden_dim_ <= 0) throw ValidationError("feature: hidden_dim must be positive");
        if (layers_.size() != vectors_.size()) {
            throw ValidationError("feature: layers/vectors count mismatch");
        }
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (layers_[i] < 0) throw ValidationError("feature: negative layer index");
            if (i > 0 && layers_[i] <= layers_[i - 1]) {
                throw ValidationError("feature: layer indices must be strictly increasing");
            }
            if (vectors_[i].size() != static_cast<std::size_t>(hidden_dim_)) {
                throw DimMismatch("feature: vector for layer " + std::to_string(layers_[i]) +
                                  " has length " + std::to_string(vectors_[i].size()));
            }
            if (std::abs(norm(vectors_[i]) - 1.0) > kUnitNormTolerance) {
                throw ValidationError("feature: vector for layer " + std::to_string(layers_[i]) +
                                      " is not unit norm");
            }
        }
    }

    const std::string& model_id() const noexcept { return model_id_; }
    int hidden_dim() const noexcept { return hidden_dim_; }
    FeatureKind kind() const noexcept { return kind_; }
    const std::vector<int>& layers() const noexcept { return layers_; }
    const std::vector<Vector>& vectors() const noexcept { return vectors_; }
    const std::string& sign_convention() const noexcept { return sign_convention_; }

    bool has_layer(int layer) const { return std::binary_search(layers_.begin(), layers_.end(), layer); }

    /// Direction at `layer`, or nullptr when the feature does not cover it.
    const Vector* vector_for(int layer) const {
        auto it = std::lower_bound(layers_.begin(), layers_.end(), layer);
        if (it == layers_.end() || *it != layer) return nullptr;
        return &vectors_[static_cast<std::size_t>(it - layers_.begin())];
    }

    friend bool operator==(const LayerwiseFeature&, const LayerwiseFeature&) = default;

private:
    std::string model_id_;
    int hidden_dim_;
    FeatureKind kind_;
    std::vector<int> layers_;
    std::vector<Vector> vectors_;
    std::string sign_convention_;
};

/// Per-layer representations of one token.
class HiddenFrame {
public:
    HiddenFrame() = default;
    HiddenFrame(std::int64_t token_id, std::string token_text, std::map<int, Vector> reps)
        : token_id_(token_id), token_text_(std::move(token_text)), reps_(std::move(reps)) {
        std::optional<std::size_t> dim;
        for (const auto& [layer, v] : reps_) {
            if (layer < 0) throw ValidationError("frame: negative layer index");
            if (dim && *dim != v.size()) throw DimMismatch("frame: layers disagree on hidden_dim");
            dim = v.size();
        }
    }

    std::int64_t token_id() const noexcept { return token_id_; }
    const std::string& token_text() const noexcept { return token_text_; }
    const std::map<int, Vector>& reps() const noexcept { return reps_; }

    int hidden_dim() const noexcept {
        return reps_.empty() ? 0 : static_cast<int>(reps_.begin()->second.size());
    }

    const Vector* rep(int layer) const {
        auto it = reps_.find(layer);
        return it == reps_.end() ? nullptr : &it->second;
    }

    friend bool operator==(const HiddenFrame&, const HiddenFrame&) = default;

private:
    std::int64_t token_id_ = 0;
    std::string token_text_;
    std::map<int, Vector> reps_;
};

/// Relative agreement required between streamed projections and frame dot products.
inline constexpr double kProjectionTolerance = 1e-4;

inline bool projection_agrees(double projected, double recomputed) {
    const double scale = std::max({std::abs(projected), std::abs(recomputed), 1.0});
    return std::abs(projected - recomputed) <= kProjectionTolerance * scale;
}

/// One generated or encoded token. Carries per-layer projection scalars, a
/// full frame, or both.
class TokenEvent {
public:
    using Projections = std::map<int, double>;

    /// When both projections and frame are given and `monitor` is non-null,
    /// every projection must match the frame's dot product with the monitor
    /// feature at that layer.
    TokenEvent(std::int64_t token_id, std::string token_text, std::optional<Projections> projections,
               std::optional<HiddenFrame> frame, const LayerwiseFeature* monitor = nullptr)
        : token_id_(token_id),
          token_text_(std::move(token_text)),
          projections_(std::move(projections)),
          frame_(std::move(frame)) {
        if (!projections_ && !frame_) {
            throw ValidationError("token event: needs projections or a frame");
        }
        if (projections_ && frame_ && monitor) {
            for (const auto& [layer, p] : *projections_) {
                const Vector* rep = frame_->rep(layer);
                const Vector* dir = monitor->vector_for(layer);
                if (!rep || !dir) continue;
                const double d = dot(*rep, *dir);
                if (!projection_agrees(p, d)) {
                    throw ValidationError("token event: projection at layer " + std::to_string(layer) +
                                          " disagrees with frame (" + std::to_string(p) + " vs " +
                                          std::to_string(d) + ")");
                }
            }
        }
    }

    std::int64_t token_id() const noexcept { return token_id_; }
    const std::string& token_text() const noexcept { return token_text_; }
    const std::optional<Projections>& projections() const noexcept { return projections_; }
    const std::optional<HiddenFrame>& frame() const noexcept { return frame_; }

    friend bool operator==(const TokenEvent&, const TokenEvent&) = default;

private:
    std::int64_t token_id_;
    std::string token_text_;
    std::optional<Projections> projections_;
    std::optional<HiddenFrame> frame_;
};

struct Document {
    std::string doc_id;
    std::string title;
    std::string text;

    friend bool operator==(const Document&, const Document&) = default;
};

enum class QueryStrategy { caq, tvq };

inline std::string to_string(QueryStrategy s) { return s == QueryStrategy::caq ? "caq" : "tvq"; }

inline QueryStrategy parse_query_strategy(std::string_view s) {
    const auto lower = text::to_lower(s);
    if (lower == "caq") return QueryStrategy::caq;
    if (lower == "tvq") return QueryStrategy::tvq;
    throw FormatError("unknown query strategy '" + std::string(s) + "'");
}

/// Engine knobs. Layer ranges are 0-based here; the JSON form uses 1-based
/// layer numbers (see `engine_config_from_json`).
struct EngineConfig {
    double lambda = 0.3;
    double tau = 0.0;
    LayerRange steer_layers = LayerRange::from_one_based(5, 18);
    LayerRange monitor_layers = LayerRange::from_one_based(10, 25);
    int top_k = 5;
    int max_refusal_attempts = 3;
    int max_tokens = 256;
    QueryStrategy query_strategy = QueryStrategy::caq;
    std::string stopword_set_id{text::kDefaultStopwordSetId};
    std::uint64_t random_seed = 0;
    bool confidence_trigger = true;
    bool refusal_handling = true;

    friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

/// Returns `config` unchanged when every invariant holds for a model with
/// `model_layer_count` layers; otherwise throws ConfigError naming the field.
inline EngineConfig validate_config(const EngineConfig& config, int model_layer_count) {
    auto check_range = [&](const LayerRange& r, const char* field) {
        if (r.first < 0 || r.last < r.first || r.last >= model_layer_count) {
            throw ConfigError(field, "range [" + std::to_string(r.first) + ", " + std::to_string(r.last) +
                                         "] not within [0, " + std::to_string(model_layer_count) + ")");
        }
    };
    if (model_layer_count <= 0) throw ConfigError("model_layer_count", "must be positive");
    if (!std::isfinite(config.lambda)) throw ConfigError("lambda", "must be finite");
    if (!std::isfinite(config.tau)) throw ConfigError("tau", "must be finite");
    check_range(config.steer_layers, "steer_layers");
    check_range(config.monitor_layers, "monitor_layers");
    if (config.top_k < 1) throw ConfigError("top_k", "must be >= 1");
    if (config.max_refusal_attempts < 1) throw ConfigError("max_refusal_attempts", "must be >= 1");
    if (config.max_tokens < 1) throw ConfigError("max_tokens", "must be >= 1");
    return config;
}

// Confidence trace --------------------------------------------------------

struct ConfidenceRecord {
    std::string token_text;
    double raw = 0.0;     // mean-pooled projection
    double scaled = 0.0;  // clipped running z-score minus tau
    bool is_new_information = false;
    bool is_confident = false;

    friend bool operator==(const ConfidenceRecord&, const ConfidenceRecord&) = default;
};

/// Session-wide history of raw scores with running mean/variance, plus the
/// per-token records. Both only grow.
class ConfidenceTrace {
public:
    /// Welford update; returns the new history length.
    std::size_t observe(double raw) {
        ++count_;
        const double delta = raw - mean_;
        mean_ += delta / static_cast<double>(count_);
        m2_ += delta * (raw - mean_);
        history_.push_back(raw);
        return count_;
    }

    void append(ConfidenceRecord record) { records_.push_back(std::move(record)); }

    std::size_t count() const noexcept { return count_; }
    double mean() const noexcept { return mean_; }
    /// Population variance of the history.
    double variance() const noexcept { return count_ ? m2_ / static_cast<double>(count_) : 0.0; }
    const std::vector<double>& history() const noexcept { return history_; }
    const std::vector<ConfidenceRecord>& records() const noexcept { return records_; }

private:
    std::size_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
    std::vector<double> history_;
    std::vector<ConfidenceRecord> records_;
};

// Session state -----------------------------------------------------------

enum class TriggerKind { confidence, refusal_internal, refusal_docs };

inline std::string to_string(TriggerKind k) {
    switch (k) {
        case TriggerKind::confidence: return "confidence";
        case TriggerKind::refusal_internal: return "refusal_internal";
        case TriggerKind::refusal_docs: return "refusal_docs";
    }
    return "unknown";
}

inline TriggerKind parse_trigger_kind(std::string_view s) {
    if (s == "confidence") return TriggerKind::confidence;
    if (s == "refusal_internal") return TriggerKind::refusal_internal;
    if (s == "refusal_docs") return TriggerKind::refusal_docs;
    throw FormatError("unknown trigger kind '" + std::string(s) + "'");
}

struct RetrievalLogEntry {
    TriggerKind kind;
    std::string query;
    std::vector<std::string> doc_ids;

    friend bool operator==(const RetrievalLogEntry&, const RetrievalLogEntry&) = default;
};

/// Mutable state of one question session. Segments and the retrieval log
/// are append-only.
class SessionState {
public:
    SessionState(std::string question, std::string instruction, int token_budget)
        : question_(std::move(question)), instruction_(std::move(instruction)), token_budget_(token_budget) {}

    const std::string& question() const noexcept { return question_; }
    const std::string& instruction() const noexcept { return instruction_; }
    const std::vector<std::string>& segments() const noexcept { return segments_; }
    const std::vector<Document>& current_docs() const noexcept { return current_docs_; }
    const std::vector<RetrievalLogEntry>& retrieval_log() const noexcept { return retrieval_log_; }
    ConfidenceTrace& trace() noexcept { return trace_; }
    const ConfidenceTrace& trace() const noexcept { return trace_; }
    int token_budget() const noexcept { return token_budget_; }

    /// Finalized output so far, segments joined by single spaces.
    std::string previous_output() const { return text::join(segments_, " "); }

    void append_segment(std::string segment) { segments_.push_back(std::move(segment)); }
    void set_current_docs(std::vector<Document> docs) { current_docs_ = std::move(docs); }
    void log_retrieval(RetrievalLogEntry entry) { retrieval_log_.push_back(std::move(entry)); }
    void consume_tokens(int n) { token_budget_ = std::max(0, token_budget_ - n); }

private:
    std::string question_;
    std::string instruction_;
    std::vector<std::string> segments_;
    std::vector<Document> current_docs_;
    ConfidenceTrace trace_;
    std::vector<RetrievalLogEntry> retrieval_log_;
    int token_budget_;
};

// JSON --------------------------------------------------------------------

inline json to_json(const LayerwiseFeature& f) {
    json j;
    j["model_id"] = f.model_id();
    j["hidden_dim"] = f.hidden_dim();
    j["kind"] = to_string(f.kind());
    j["layers"] = f.layers();
    j["sign_convention"] = f.sign_convention();
    j["vectors"] = f.vectors();
    return j;
}

inline LayerwiseFeature feature_from_json(const json& j) {
    try {
        return LayerwiseFeature(j.at("model_id").get<std::string>(), j.at("hidden_dim").get<int>(),
                                parse_feature_kind(j.at("kind").get<std::string>()),
                                j.at("layers").get<std::vector<int>>(),
                                j.at("vectors").get<std::vector<Vector>>(),
                                j.at("sign_convention").get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError(std::string("feature json: ") + e.what());
    }
}

inline constexpr std::string_view kFeatureFileExtension = ".ctrlafeat.json";

inline void save_feature(const LayerwiseFeature& f, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << to_json(f).dump() << '\n';
}

inline LayerwiseFeature load_feature(const std::string& path) {
    try {
        return feature_from_json(json::parse(text::read_file(path)));
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
}

inline json to_json(const HiddenFrame& f) {
    json reps = json::object();
    for (const auto& [layer, v] : f.reps()) reps[std::to_string(layer)] = v;
    return {{"token_id", f.token_id()}, {"token_text", f.token_text()}, {"reps", reps}};
}

inline HiddenFrame frame_from_json(const json& j) {
    std::map<int, Vector> reps;
    for (const auto& [k, v] : j.at("reps").items()) reps.emplace(std::stoi(k), v.get<Vector>());
    return HiddenFrame(j.at("token_id").get<std::int64_t>(), j.at("token_text").get<std::string>(),
                       std::move(reps));
}

inline json to_json(const TokenEvent& e) {
    json j{{"token_id", e.token_id()}, {"token_text", e.token_text()}};
    if (e.projections()) {
        json p = json::object();
        for (const auto& [layer, v] : *e.projections()) p[std::to_string(layer)] = v;
        j["projections"] = p;
    }
    if (e.frame()) j["frame"] = to_json(*e.frame());
    return j;
}

inline TokenEvent token_event_from_json(const json& j) {
    std::optional<TokenEvent::Projections> proj;
    if (j.contains("projections")) {
        proj.emplace();
        for (const auto& [k, v] : j["projections"].items()) proj->emplace(std::stoi(k), v.get<double>());
    }
    std::optional<HiddenFrame> frame;
    if (j.contains("frame")) frame = frame_from_json(j["frame"]);
    return TokenEvent(j.at("token_id").get<std::int64_t>(), j.at("token_text").get<std::string>(),
                      std::move(proj), std::move(frame));
}

inline json to_json(const Document& d) { return {{"id", d.doc_id}, {"title", d.title}, {"text", d.text}}; }

inline Document document_from_json(const json& j) {
    Document d{j.at("id").get<std::string>(), j.value("title", std::string{}), j.at("text").get<std::string>()};
    if (d.doc_id.empty()) throw ValidationError("document: empty id");
    return d;
}

inline std::vector<Document> load_corpus_jsonl(const std::string& path) {
    std::vector<Document> docs;
    std::size_t lineno = 0;
    for (const auto& line : text::read_lines(path)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            docs.push_back(document_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return docs;
}

inline json to_json(const RetrievalLogEntry& e) {
    return {{"kind", to_string(e.kind)}, {"query", e.query}, {"doc_ids", e.doc_ids}};
}

inline RetrievalLogEntry retrieval_log_entry_from_json(const json& j) {
    return {parse_trigger_kind(j.at("kind").get<std::string>()), j.at("query").get<std::string>(),
            j.at("doc_ids").get<std::vector<std::string>>()};
}

inline json to_json(const ConfidenceRecord& r) {
    return {{"token", r.token_text},
            {"raw", r.raw},
            {"scaled", r.scaled},
            {"new_info", r.is_new_information},
            {"confident", r.is_confident}};
}

inline ConfidenceRecord confidence_record_from_json(const json& j) {
    return {j.at("token").get<std::string>(), j.at("raw").get<double>(), j.at("scaled").get<double>(),
            j.at("new_info").get<bool>(), j.at("confident").get<bool>()};
}

/// JSON form of EngineConfig. Layer ranges are written 1-based, as
/// `[first, last]`, matching how layer numbers are usually quoted.
inline json to_json(const EngineConfig& c) {
    return {{"lambda", c.lambda},
            {"tau", c.tau},
            {"steer_layers", {c.steer_layers.first + 1, c.steer_layers.last + 1}},
            {"monitor_layers", {c.monitor_layers.first + 1, c.monitor_layers.last + 1}},
            {"top_k", c.top_k},
            {"max_refusal_attempts", c.max_refusal_attempts},
            {"max_tokens", c.max_tokens},
            {"query_strategy", to_string(c.query_strategy)},
            {"stopword_set_id", c.stopword_set_id},
            {"random_seed", c.random_seed},
            {"confidence_trigger", c.confidence_trigger},
            {"refusal_handling", c.refusal_handling}};
}

/// Missing keys keep their defaults.
inline EngineConfig engine_config_from_json(const json& j) {
    EngineConfig c;
    auto range = [&](const char* key, LayerRange& dst) {
        if (!j.contains(key)) return;
        const auto& r = j.at(key);
        if (!r.is_array() || r.size() != 2) throw ConfigError(key, "expected [first, last] (1-based)");
        dst = LayerRange::from_one_based(r[0].get<int>(), r[1].get<int>());
    };
    try {
        c.lambda = j.value("lambda", c.lambda);
        c.tau = j.value("tau", c.tau);
        range("steer_layers", c.steer_layers);
        range("monitor_layers", c.monitor_layers);
        c.top_k = j.value("top_k", c.top_k);
        c.max_refusal_attempts = j.value("max_refusal_attempts", c.max_refusal_attempts);
        c.max_tokens = j.value("max_tokens", c.max_tokens);
        if (j.contains("query_strategy")) {
            c.query_strategy = parse_query_strategy(j.at("query_strategy").get<std::string>());
        }
        c.stopword_set_id = j.value("stopword_set_id", c.stopword_set_id);
        c.random_seed = j.value("random_seed", c.random_seed);
        c.confidence_trigger = j.value("confidence_trigger", c.confidence_trigger);
        c.refusal_handling = j.value("refusal_handling", c.refusal_handling);
    } catch (const json::exception& e) {
        throw FormatError(std::string("engine config: ") + e.what());
    }
    return c;
}

}  // namespace ctrla

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
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctrla/backend.hpp"
#include "ctrla/core.hpp"
#include "ctrla/linalg.hpp"

namespace ctrla {

/// Contrastive instruction prefixes; a statement is appended after one space.
struct InstructionPair {
    std::string positive;
    std::string negative;
};

inline InstructionPair honesty_instructions() {
    return {"[INST] Pretend you're an honest person making statements about the world. [/INST]",
            "[INST] Pretend you're a dishonest person making statements about the world. [/INST]"};
}

inline InstructionPair confidence_instructions() {
    return {"[INST] Pretend you're a confident person making statements about the world. [/INST]",
            "[INST] Pretend you're an unconfident person making statements about the world. [/INST]"};
}

inline InstructionPair instructions_for(FeatureKind kind) {
    return kind == FeatureKind::honesty ? honesty_instructions() : confidence_instructions();
}

/// Reads {"honesty": {"positive", "negative"}, "confidence": {...}}.
inline InstructionPair load_instructions(const std::string& path, FeatureKind kind) {
    try {
        const auto j = json::parse(text::read_file(path)).at(to_string(kind));
        return {j.at("positive").get<std::string>(), j.at("negative").get<std::string>()};
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

/// Half-open token range [start, end).
struct TokenSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - start; }
    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

/// A statement under both instruction polarities. The statement occupies a
/// span of equal length in both prompts; the start offsets differ only when
/// the two instruction prefixes tokenize to different lengths.
struct ContrastivePair {
    std::string statement;
    std::string positive_text;
    std::string negative_text;
    TokenSpan positive_span;
    TokenSpan negative_span;
};

inline constexpr int kDefaultMaxStatementTokens = 64;
inline constexpr int kDefaultSampleSize = 1024;

namespace detail {

/// Unbiased integer in [0, bound) from a standard engine, independent of the
/// standard library's distribution implementation.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

inline TokenSpan statement_span(const GeneratorBackend& tok, const std::string& prefix,
                                const std::string& full, const std::vector<std::string>& stmt_tokens) {
    const auto prefix_tokens = tok.tokenize(prefix);
    const auto full_tokens = tok.tokenize(full);
    const TokenSpan span{prefix_tokens.size(), prefix_tokens.size() + stmt_tokens.size()};
    if (span.end != full_tokens.size() ||
        !std::equal(stmt_tokens.begin(), stmt_tokens.end(), full_tokens.begin() + static_cast<long>(span.start))) {
        throw SpanError("statement tokens are not a suffix of the prompt tokens: '" + full + "'");
    }
    return span;
}

}  // namespace detail

/// Pairs each sampled statement with both instructions. Exactly
/// min(sample_size, statements.size()) pairs, chosen by seeded uniform
/// sampling without replacement and returned in input order.
inline std::vector<ContrastivePair> build_contrastive_pairs(const std::vector<std::string>& statements,
                                                            const InstructionPair& instructions,
                                                            int max_statement_tokens, int sample_size,
                                                            std::uint64_t seed,
                                                            const GeneratorBackend& tokenizer) {
    if (sample_size < 0) throw PreconditionError("sample_size must be non-negative");
    if (max_statement_tokens < 1) throw PreconditionError("max_statement_tokens must be >= 1");
    if (sample_size == 0) return {};
    if (statements.empty()) throw EmptyInput("no statements to pair");

    const std::size_t n = statements.size();
    const std::size_t m = std::min(static_cast<std::size_t>(sample_size), n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (m < n) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + detail::bounded(rng, n - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(m);
        std::sort(idx.begin(), idx.end());
    }

    std::vector<ContrastivePair> pairs;
    pairs.reserve(m);
    for (std::size_t i : idx) {
        auto tokens = tokenizer.tokenize(statements[i]);
        if (tokens.size() > static_cast<std::size_t>(max_statement_tokens)) {
            tokens.resize(static_cast<std::size_t>(max_statement_tokens));
        }
        ContrastivePair p;
        p.statement = tokenizer.detokenize(tokens);
        const auto stmt_tokens = tokenizer.tokenize(p.statement);
        p.positive_text = instructions.positive + " " + p.statement;
        p.negative_text = instructions.negative + " " + p.statement;
        p.positive_span = detail::statement_span(tokenizer, instructions.positive, p.positive_text, stmt_tokens);
        p.negative_span = detail::statement_span(tokenizer, instructions.negative, p.negative_text, stmt_tokens);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

/// Per-layer multisets of contrastive vectors. Insertion order is irrelevant
/// to extraction, which canonicalizes before reducing.
class ContrastiveVectorSet {
public:
    ContrastiveVectorSet(std::vector<int> layers, int hidden_dim)
        : layers_(std::move(layers)), hidden_dim_(hidden_dim), vectors_(layers_.size()) {}

    const std::vector<int>& layers() const noexcept { return layers_; }
    int hidden_dim() const noexcept { return hidden_dim_; }
    const std::vector<Vector>& at(std::size_t layer_slot) const { return vectors_.at(layer_slot); }
    std::size_t per_layer_count() const noexcept { return vectors_.empty() ? 0 : vectors_.front().size(); }

    /// One contribution per layer, aligned with layers().
    void add(std::vector<Vector> per_layer) {
        if (per_layer.size() != layers_.size()) throw LengthMismatch("contrastive set: layer count");
        for (std::size_t i = 0; i < per_layer.size(); ++i) {
            if (per_layer[i].size() != static_cast<std::size_t>(hidden_dim_)) {
                throw DimMismatch("contrastive set: vector length");
            }
            vectors_[i].push_back(std::move(per_layer[i]));
        }
    }

private:
    std::vector<int> layers_;
    int hidden_dim_;
    std::vector<std::vector<Vector>> vectors_;
};

/// Teacher-forces both prompts of every pair and records, for each statement
/// token and each requested layer, r+ - r-.
inline ContrastiveVectorSet collect_contrastive_vectors(const std::vector<ContrastivePair>& pairs,
                                                        GeneratorBackend& encoder,
                                                        const std::vector<int>& layer_set) {
    if (pairs.empty()) throw EmptyInput("no contrastive pairs");
    if (layer_set.empty()) throw EmptyInput("empty layer set");
    ContrastiveVectorSet out(layer_set, encoder.info().hidden_dim);
    for (const auto& pair : pairs) {
        if (pair.positive_span.size() != pair.negative_span.size()) {
            throw SpanError("positive and negative statement spans differ in length");
        }
        const auto pos = encoder.encode(pair.positive_text);
        const auto neg = encoder.encode(pair.negative_text);
        if (pair.positive_span.end > pos.size() || pair.negative_span.end > neg.size()) {
            throw SpanError("statement span exceeds encoded length for '" + pair.statement + "'");
        }
        for (std::size_t k = 0; k < pair.positive_span.size(); ++k) {
            const auto& fp = pos[pair.positive_span.start + k];
            const auto& fn = neg[pair.negative_span.start + k];
            std::vector<Vector> per_layer;
            per_layer.reserve(layer_set.size());
            for (int layer : layer_set) {
                const Vector* a = fp.rep(layer);
                const Vector* b = fn.rep(layer);
                if (!a || !b) throw MissingLayers("encoder did not return layer " + std::to_string(layer));
                Vector d(*a);
                axpy(-1.0, *b, d);
                per_layer.push_back(std::move(d));
            }
            out.add(std::move(per_layer));
        }
    }
    return out;
}

inline constexpr std::string_view kSignConvention =
    "unit first principal component of mean-centered contrastive vectors; "
    "sign chosen so the mean uncentered contrastive vector projects positively";

/// Unit direction of the first principal component at one layer, signed so
/// that the mean raw vector has a positive projection on it.
inline Vector principal_direction(std::vector<Vector> vectors, PowerIterationOptions opts = {}) {
    if (vectors.size() < 2) throw DegenerateData("need at least two contrastive vectors per layer");
    std::sort(vectors.begin(), vectors.end());
    const std::size_t dim = vectors.front().size();
    Vector mean(dim, 0.0);
    double raw_sq = 0.0;
    for (const auto& v : vectors) {
        axpy(1.0, v, mean);
        raw_sq += dot(v, v);
    }
    const double inv_n = 1.0 / static_cast<double>(vectors.size());
    for (double& x : mean) x *= inv_n;
    raw_sq *= inv_n;

    double spread = 0.0;
    std::vector<Vector> centered;
    centered.reserve(vectors.size());
    for (const auto& v : vectors) {
        Vector c(v);
        axpy(-1.0, mean, c);
        spread += dot(c, c);
        centered.push_back(std::move(c));
    }
    spread *= inv_n;
    if (spread <= 1e-20 * std::max(1.0, raw_sq)) {
        throw DegenerateData("contrastive vectors have zero variance");
    }

    Vector dir = dominant_eigenvector(centered, opts).vector;
    if (dot(mean, dir) < 0.0) {
        for (double& x : dir) x = -x;
    }
    return normalized(dir);
}

inline LayerwiseFeature extract_direction(const ContrastiveVectorSet& set, FeatureKind kind,
                                          std::string model_id = "unknown") {
    std::vector<Vector> dirs;
    dirs.reserve(set.layers().size());
    for (std::size_t i = 0; i < set.layers().size(); ++i) {
        try {
            dirs.push_back(principal_direction(set.at(i)));
        } catch (const DegenerateData& e) {
            throw DegenerateData("layer " + std::to_string(set.layers()[i]) + ": " + e.what());
        }
    }
    return LayerwiseFeature(std::move(model_id), set.hidden_dim(), kind, set.layers(), std::move(dirs),
                            std::string(kSignConvention));
}

/// Plain text (one statement per line) or JSONL with {"statement": ...}.
/// Blank lines are skipped.
inline std::vector<std::string> load_statements(const std::string& path) {
    std::vector<std::string> out;
    const auto lines = text::read_lines(path);
    auto first = std::find_if(lines.begin(), lines.end(), [](const auto& l) { return !text::trim(l).empty(); });
    const bool jsonl = path.ends_with(".jsonl") || (first != lines.end() && text::trim(*first).front() == '{');
    for (const auto& line : lines) {
        auto t = text::trim(line);
        if (t.empty()) continue;
        if (jsonl) {
            try {
                out.push_back(json::parse(t).at("statement").get<std::string>());
            } catch (const json::exception& e) {
                throw FormatError(path + ": " + e.what());
            }
        } else {
            out.emplace_back(t);
        }
    }
    return out;
}

}  // namespace ctrla

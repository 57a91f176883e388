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

#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "ctrla/backend.hpp"

namespace ctrla {

/// One scripted output token: either per-layer projection values or full
/// synthetic representations.
struct ToyToken {
    std::string text;
    std::map<int, double> projections;  // layer -> value
    std::map<int, Vector> reps;         // layer -> representation
};

struct ToyEntry {
    enum class Match { literal, hash, contains };

    Match match = Match::literal;
    std::string key;                    // literal (whitespace-collapsed) or "fnv1a64:<hex>"
    std::vector<std::string> contains;  // every needle must occur in the raw prompt
    std::vector<ToyToken> tokens;
    bool end = false;                   // last segment of the answer
};

/// Desk-scale stand-in for a language model.
///
/// Encoding: a token at position k has, at every layer l, the representation
///   onehot(id mod hidden_dim) + sum over concept words w at positions <= k of gain(token) * c_w(l)
/// where gain(token) = 1 + jitter * ((id mod 7) - 3) / 3. With zero jitter the
/// difference between two prompts that differ only in one concept word is the
/// same for every later token.
///
/// Generation: prompts are matched against entries. Literal and hash keys are
/// looked up first (on the whitespace-collapsed prompt), then `contains`
/// rules in file order.
struct ToyScript {
    std::string model_id = "toy-8x4";
    int hidden_dim = 8;
    int layer_count = 4;
    double gain_jitter = 0.0;
    std::map<std::string, std::vector<Vector>> concepts;  // normalized word -> per-layer vector
    std::vector<ToyEntry> entries;

    /// Built-in concept lexicon: honest/dishonest and confident/unconfident
    /// are opposite signs of two fixed per-layer directions.
    static std::map<std::string, std::vector<Vector>> default_concepts(int hidden_dim, int layer_count) {
        std::map<std::string, std::vector<Vector>> out;
        std::vector<Vector> honest, confident;
        for (int l = 0; l < layer_count; ++l) {
            Vector h(static_cast<std::size_t>(hidden_dim)), c(static_cast<std::size_t>(hidden_dim));
            for (int j = 0; j < hidden_dim; ++j) {
                h[static_cast<std::size_t>(j)] = std::cos(0.7 * j + 0.3 * l);
                c[static_cast<std::size_t>(j)] = std::sin(1.3 * j + 0.5 * l + 0.2);
            }
            honest.push_back(scaled(normalized(h), 0.5));
            confident.push_back(scaled(normalized(c), 0.5));
        }
        auto neg = [](const std::vector<Vector>& vs) {
            std::vector<Vector> out;
            for (const auto& v : vs) out.push_back(scaled(v, -1.0));
            return out;
        };
        out["honest"] = honest;
        out["dishonest"] = neg(honest);
        out["confident"] = confident;
        out["unconfident"] = neg(confident);
        return out;
    }
};

inline std::string prompt_hash_key(std::string_view prompt) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                  static_cast<unsigned long long>(fnv1a64(text::collapse_whitespace(prompt))));
    return buf;
}

inline ToyScript toy_script_from_json(const json& j) {
    ToyScript s;
    try {
        s.model_id = j.value("model_id", s.model_id);
        s.hidden_dim = j.value("hidden_dim", s.hidden_dim);
        s.layer_count = j.value("layer_count", s.layer_count);
        if (s.hidden_dim <= 0 || s.layer_count <= 0) throw FormatError("toy script: bad dimensions");
        const json enc = j.value("encoder", json::object());
        s.gain_jitter = enc.value("gain_jitter", 0.0);
        if (enc.contains("concepts")) {
            for (const auto& [word, layers] : enc["concepts"].items()) {
                auto vs = layers.get<std::vector<Vector>>();
                if (vs.size() != static_cast<std::size_t>(s.layer_count)) {
                    throw FormatError("toy script: concept '" + word + "' needs one vector per layer");
                }
                for (const auto& v : vs) {
                    if (v.size() != static_cast<std::size_t>(s.hidden_dim)) {
                        throw DimMismatch("toy script: concept '" + word + "' vector length");
                    }
                }
                s.concepts[text::normalize_token(word)] = std::move(vs);
            }
        } else {
            s.concepts = ToyScript::default_concepts(s.hidden_dim, s.layer_count);
        }
        for (const auto& e : j.value("entries", json::array())) {
            ToyEntry entry;
            if (e.contains("key")) {
                entry.match = ToyEntry::Match::literal;
                entry.key = text::collapse_whitespace(e["key"].get<std::string>());
            } else if (e.contains("hash")) {
                entry.match = ToyEntry::Match::hash;
                entry.key = e["hash"].get<std::string>();
            } else if (e.contains("contains")) {
                entry.match = ToyEntry::Match::contains;
                entry.contains = e["contains"].get<std::vector<std::string>>();
            } else {
                throw FormatError("toy script: entry needs key, hash or contains");
            }
            entry.end = e.value("end", false);
            for (const auto& t : e.at("tokens")) {
                ToyToken tok;
                tok.text = t.at("text").get<std::string>();
                if (t.contains("proj")) {
                    const auto& p = t["proj"];
                    if (p.is_number()) {
                        for (int l = 0; l < s.layer_count; ++l) tok.projections[l] = p.get<double>();
                    } else {
                        for (const auto& [k, v] : p.items()) tok.projections[std::stoi(k)] = v.get<double>();
                    }
                }
                if (t.contains("reps")) {
                    for (const auto& [k, v] : t["reps"].items()) {
                        auto rep = v.get<Vector>();
                        if (rep.size() != static_cast<std::size_t>(s.hidden_dim)) {
                            throw DimMismatch("toy script: rep length for token '" + tok.text + "'");
                        }
                        tok.reps[std::stoi(k)] = std::move(rep);
                    }
                }
                for (int l = 0; l < s.layer_count; ++l) {
                    if (!tok.projections.contains(l) && !tok.reps.contains(l)) {
                        throw FormatError("toy script: token '" + tok.text + "' has no value for layer " +
                                          std::to_string(l));
                    }
                }
                entry.tokens.push_back(std::move(tok));
            }
            s.entries.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("toy script: ") + e.what());
    }
    return s;
}

inline ToyScript load_toy_script(const std::string& path) {
    try {
        return toy_script_from_json(json::parse(text::read_file(path)));
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
}

class ToyBackend final : public GeneratorBackend {
public:
    explicit ToyBackend(ToyScript script = {}) : script_(std::move(script)) {
        if (script_.concepts.empty()) {
            script_.concepts = ToyScript::default_concepts(script_.hidden_dim, script_.layer_count);
        }
        for (std::size_t i = 0; i < script_.entries.size(); ++i) {
            const auto& e = script_.entries[i];
            if (e.match == ToyEntry::Match::literal) literal_.emplace(e.key, i);
            if (e.match == ToyEntry::Match::hash) hashed_.emplace(e.key, i);
        }
    }

    const ToyScript& script() const noexcept { return script_; }

    ModelInfo info() const override { return {script_.model_id, script_.hidden_dim, script_.layer_count}; }

    std::vector<std::string> tokenize(std::string_view text) const override {
        return text::split_whitespace(text);
    }

    /// Space-joined, except that pure-punctuation tokens attach to the left.
    std::string detokenize(const std::vector<std::string>& tokens) const override {
        std::string out;
        for (const auto& t : tokens) {
            const bool attach = !t.empty() && text::normalize_token(t).empty() &&
                                t.find('\n') == std::string::npos && !out.empty();
            if (!out.empty() && !attach) out += ' ';
            out += t;
        }
        return out;
    }

    static std::int64_t token_id(std::string_view tok) {
        return static_cast<std::int64_t>(fnv1a64(tok) & 0x7fffffffULL);
    }

    std::vector<HiddenFrame> encode(std::string_view text) override {
        if (text::trim(text).empty()) throw PreconditionError("encode: empty text");
        const auto tokens = tokenize(text);
        const auto dim = static_cast<std::size_t>(script_.hidden_dim);
        std::vector<const std::vector<Vector>*> active;
        std::vector<HiddenFrame> frames;
        frames.reserve(tokens.size());
        for (const auto& tok : tokens) {
            auto cit = script_.concepts.find(text::normalize_token(tok));
            if (cit != script_.concepts.end()) active.push_back(&cit->second);
            const auto id = token_id(tok);
            const double gain = 1.0 + script_.gain_jitter * (static_cast<double>(id % 7) - 3.0) / 3.0;
            std::map<int, Vector> reps;
            for (int l = 0; l < script_.layer_count; ++l) {
                Vector r(dim, 0.0);
                r[static_cast<std::size_t>(id) % dim] = 1.0;
                for (const auto* cv : active) axpy(gain, (*cv)[static_cast<std::size_t>(l)], r);
                reps.emplace(l, std::move(r));
            }
            frames.emplace_back(id, tok, std::move(reps));
        }
        return frames;
    }

    SegmentEnd generate_segment(const GenerationRequest& request, const TokenSink& sink) override {
        request.stop.validate();
        const ToyEntry& entry = lookup(request.prompt);
        {
            std::lock_guard lock(mutex_);
            prompts_.push_back(request.prompt);
        }
        const auto* monitor = request.monitor_feature;
        if (monitor && monitor->hidden_dim() != script_.hidden_dim) {
            throw DimMismatch("toy backend: monitor feature hidden_dim mismatch");
        }
        if (request.steering && request.steering->feature().hidden_dim() != script_.hidden_dim) {
            throw DimMismatch("toy backend: steering feature hidden_dim mismatch");
        }

        SegmentEnd end;
        for (std::size_t i = 0; i < entry.tokens.size(); ++i) {
            const ToyToken& tok = entry.tokens[i];
            HiddenFrame frame = synthesize_frame(tok, monitor);
            if (request.steering) frame = apply_steering(frame, *request.steering);

            std::optional<TokenEvent::Projections> proj;
            proj.emplace();
            if (monitor) {
                for (std::size_t li = 0; li < monitor->layers().size(); ++li) {
                    const int layer = monitor->layers()[li];
                    if (!request.monitor_layers.contains(layer)) continue;
                    if (const Vector* rep = frame.rep(layer)) {
                        (*proj)[layer] = dot(*rep, monitor->vectors()[li]);
                    }
                }
            }
            std::optional<HiddenFrame> carried;
            if (request.want_frames) carried = std::move(frame);
            TokenEvent ev(token_id(tok.text), tok.text, std::move(proj), std::move(carried), monitor);

            ++end.token_count;
            if (!sink(ev)) {
                end.reason = StopReason::cancelled;
                return end;
            }
            const bool last = i + 1 == entry.tokens.size();
            if (request.stop.stops_at_sentence() && ends_sentence(tok.text)) {
                end.reason = StopReason::sentence_end;
                end.end_of_answer = last && entry.end;
                return end;
            }
            if (request.stop.has_budget() && end.token_count >= request.stop.max_tokens) {
                end.reason = StopReason::max_tokens;
                end.end_of_answer = last && entry.end;
                return end;
            }
        }
        end.reason = StopReason::exhausted;
        end.end_of_answer = entry.end;
        return end;
    }

    /// Every prompt passed to generate_segment, in call order.
    std::vector<std::string> prompts_seen() const {
        std::lock_guard lock(mutex_);
        return prompts_;
    }

    void clear_prompts() {
        std::lock_guard lock(mutex_);
        prompts_.clear();
    }

private:
    const ToyEntry& lookup(const std::string& prompt) const {
        const auto collapsed = text::collapse_whitespace(prompt);
        if (auto it = literal_.find(collapsed); it != literal_.end()) return script_.entries[it->second];
        if (auto it = hashed_.find(prompt_hash_key(prompt)); it != hashed_.end()) {
            return script_.entries[it->second];
        }
        for (const auto& e : script_.entries) {
            if (e.match != ToyEntry::Match::contains) continue;
            bool all = true;
            for (const auto& needle : e.contains) {
                if (prompt.find(needle) == std::string::npos) {
                    all = false;
                    break;
                }
            }
            if (all) return e;
        }
        throw UnknownPrompt("toy backend: no script entry for prompt (" + prompt_hash_key(prompt) + ")");
    }

    /// Scripted representations are used as-is. Projection-only tokens get
    /// rep = p * v at each layer the monitor feature covers, so that the
    /// unsteered projection reproduces the scripted value exactly.
    HiddenFrame synthesize_frame(const ToyToken& tok, const LayerwiseFeature* monitor) const {
        std::map<int, Vector> reps;
        const auto dim = static_cast<std::size_t>(script_.hidden_dim);
        for (int l = 0; l < script_.layer_count; ++l) {
            if (auto it = tok.reps.find(l); it != tok.reps.end()) {
                reps.emplace(l, it->second);
                continue;
            }
            const Vector* dir = monitor ? monitor->vector_for(l) : nullptr;
            auto p = tok.projections.find(l);
            if (dir && p != tok.projections.end()) {
                reps.emplace(l, scaled(*dir, p->second));
            } else {
                reps.emplace(l, Vector(dim, 0.0));
            }
        }
        return HiddenFrame(token_id(tok.text), tok.text, std::move(reps));
    }

    ToyScript script_;
    std::map<std::string, std::size_t> literal_;
    std::map<std::string, std::size_t> hashed_;
    mutable std::mutex mutex_;
    std::vector<std::string> prompts_;
};

}  // namespace ctrla

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

#include <gtest/gtest.h>

#include <cmath>

#include "ctrla/toy_backend.hpp"

using namespace ctrla;

namespace {

json toks(const std::string& s, double p) {
    json out = json::array();
    for (const auto& w : text::split_whitespace(s)) out.push_back({{"text", w}, {"proj", p}});
    return out;
}

ToyBackend scripted() {
    return ToyBackend(toy_script_from_json(json{
        {"entries",
         json::array({
             {{"key", "literal   prompt"}, {"tokens", toks("Lit one.", 0.5)}, {"end", true}},
             {{"hash", prompt_hash_key("hashed prompt")}, {"tokens", toks("Hashed.", 0.5)}},
             {{"contains", {"two", "sentences"}}, {"tokens", toks("One two. Three four.", 0.25)}, {"end", true}},
             {{"contains", {"prompt"}}, {"tokens", toks("Fallback.", 0.0)}},
         })}}));
}

// Independent copy of the toy "honest" concept direction at layer l.
Vector honest_direction(int l) {
    Vector v(8);
    double n2 = 0.0;
    for (int j = 0; j < 8; ++j) {
        v[static_cast<std::size_t>(j)] = std::cos(0.7 * j + 0.3 * l);
        n2 += v[static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(j)];
    }
    for (auto& x : v) x *= 0.5 / std::sqrt(n2);
    return v;
}

LayerwiseFeature unit_feature(FeatureKind kind = FeatureKind::confidence) {
    std::vector<Vector> vs;
    for (int l = 0; l < 4; ++l) {
        Vector v(8, 0.0);
        v[static_cast<std::size_t>(l)] = 1.0;
        vs.push_back(v);
    }
    return LayerwiseFeature("toy-8x4", 8, kind, {0, 1, 2, 3}, vs, "s");
}

GenerationRequest request(std::string prompt, StopPolicy stop = StopPolicy::sentence_end()) {
    GenerationRequest r;
    r.prompt = std::move(prompt);
    r.stop = stop;
    return r;
}

}  // namespace

TEST(ToyEncode, ClosedFormWithoutJitter) {
    ToyBackend b;
    const auto frames = b.encode("Pretend you are an honest person");
    ASSERT_EQ(frames.size(), 6u);
    for (std::size_t k = 0; k < frames.size(); ++k) {
        const auto id = ToyBackend::token_id(frames[k].token_text());
        EXPECT_EQ(frames[k].token_id(), id);
        for (int l = 0; l < 4; ++l) {
            Vector expected(8, 0.0);
            expected[static_cast<std::size_t>(id % 8)] = 1.0;
            if (k >= 4) {
                const auto h = honest_direction(l);
                for (std::size_t j = 0; j < 8; ++j) expected[j] += h[j];
            }
            const auto& got = *frames[k].rep(l);
            for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(got[j], expected[j], 1e-12);
        }
    }
}

TEST(ToyEncode, ContrastCancelsSharedTokens) {
    ToyBackend b;
    const auto a = b.encode("be honest about the sky").back();
    const auto d = b.encode("be dishonest about the sky").back();
    for (int l = 0; l < 4; ++l) {
        const auto h = honest_direction(l);
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR((*a.rep(l))[j] - (*d.rep(l))[j], 2.0 * h[j], 1e-12);
    }
}

TEST(ToyEncode, JitterScalesConceptContribution) {
    ToyScript s;
    s.gain_jitter = 0.5;
    ToyBackend b(s);
    const auto frames = b.encode("honest x");
    const auto id = ToyBackend::token_id("x");
    const double gain = 1.0 + 0.5 * (static_cast<double>(id % 7) - 3.0) / 3.0;
    const auto h = honest_direction(2);
    Vector expected(8, 0.0);
    expected[static_cast<std::size_t>(id % 8)] = 1.0;
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR((*frames[1].rep(2))[j], expected[j] + gain * h[j], 1e-12);
}

TEST(ToyEncode, DeterministicAndRejectsEmpty) {
    ToyBackend b;
    EXPECT_EQ(b.encode("a b c"), b.encode("a b c"));
    EXPECT_THROW(b.encode("   "), PreconditionError);
}

TEST(ToyDetokenize, AttachesPunctuation) {
    ToyBackend b;
    EXPECT_EQ(b.detokenize({"Hello", ",", "world", "."}), "Hello, world.");
    EXPECT_EQ(b.tokenize("  a  b\tc "), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(ToyGenerate, MatchOrderLiteralHashContains) {
    auto b = scripted();
    EXPECT_EQ(collect_segment(b, request("literal prompt")).token_texts(), (std::vector<std::string>{"Lit", "one."}));
    EXPECT_EQ(collect_segment(b, request("hashed   prompt")).token_texts(), (std::vector<std::string>{"Hashed."}));
    EXPECT_EQ(collect_segment(b, request("another prompt")).token_texts(), (std::vector<std::string>{"Fallback."}));
    EXPECT_THROW(collect_segment(b, request("nothing")), UnknownPrompt);
    EXPECT_EQ(b.prompts_seen().size(), 3u);
}

TEST(ToyGenerate, StopPolicies) {
    auto b = scripted();
    auto seg = collect_segment(b, request("two sentences"));
    EXPECT_EQ(seg.token_texts(), (std::vector<std::string>{"One", "two."}));
    EXPECT_EQ(seg.end.reason, StopReason::sentence_end);
    EXPECT_FALSE(seg.end.end_of_answer);

    seg = collect_segment(b, request("two sentences", StopPolicy::max(3)));
    EXPECT_EQ(seg.end.token_count, 3);
    EXPECT_EQ(seg.end.reason, StopReason::max_tokens);

    seg = collect_segment(b, request("two sentences", StopPolicy::either(1)));
    EXPECT_EQ(seg.end.token_count, 1);
    EXPECT_EQ(seg.end.reason, StopReason::max_tokens);

    seg = collect_segment(b, request("two sentences", StopPolicy::max(10)));
    EXPECT_EQ(seg.end.token_count, 4);
    EXPECT_EQ(seg.end.reason, StopReason::exhausted);
    EXPECT_TRUE(seg.end.end_of_answer);

    seg = collect_segment(b, request("literal prompt"));
    EXPECT_EQ(seg.end.reason, StopReason::sentence_end);
    EXPECT_TRUE(seg.end.end_of_answer);

    EXPECT_THROW(collect_segment(b, request("two sentences", StopPolicy::max(0))), PreconditionError);
}

TEST(ToyGenerate, MonitorReproducesScriptedProjection) {
    auto b = scripted();
    const auto f = unit_feature();
    auto r = request("two sentences");
    r.monitor_feature = &f;
    r.monitor_layers = {1, 2};
    r.want_frames = true;
    const auto seg = collect_segment(b, r);
    for (const auto& e : seg.events) {
        ASSERT_TRUE(e.projections());
        EXPECT_EQ(e.projections()->size(), 2u);
        for (const auto& [layer, p] : *e.projections()) {
            EXPECT_NEAR(p, 0.25, 1e-12);
            EXPECT_NEAR(dot(*e.frame()->rep(layer), *f.vector_for(layer)), p, 1e-12);
        }
    }
}

TEST(ToyGenerate, SteeringShiftsProjectionByLambda) {
    auto b = scripted();
    const auto f = unit_feature();
    auto r = request("two sentences");
    r.monitor_feature = &f;
    r.monitor_layers = {0, 3};
    r.steering.emplace(f, 0.3, LayerRange{2, 3});
    const auto inc = collect_segment(b, r);
    r.steering.emplace(f, 0.3, LayerRange{2, 3}, SteerDirection::decrease);
    const auto dec = collect_segment(b, r);
    const auto& p = *inc.events[0].projections();
    EXPECT_NEAR(p.at(0), 0.25, 1e-12);
    EXPECT_NEAR(p.at(1), 0.25, 1e-12);
    EXPECT_NEAR(p.at(2), 0.55, 1e-12);
    EXPECT_NEAR(p.at(3), 0.55, 1e-12);
    EXPECT_NEAR(dec.events[0].projections()->at(3), -0.05, 1e-12);
}

TEST(ToyGenerate, RejectsForeignFeatureDimension) {
    auto b = scripted();
    const LayerwiseFeature small("m", 2, FeatureKind::confidence, {0}, {{1, 0}}, "s");
    auto r = request("two sentences");
    r.monitor_feature = &small;
    EXPECT_THROW(collect_segment(b, r), DimMismatch);
}

TEST(ToyGenerate, SinkCanCancel) {
    auto b = scripted();
    int seen = 0;
    const auto end = b.generate_segment(request("two sentences"), [&](const TokenEvent&) { return ++seen < 1; });
    EXPECT_EQ(seen, 1);
    EXPECT_EQ(end.reason, StopReason::cancelled);
    EXPECT_EQ(end.token_count, 1);
}

TEST(ToyScriptFormat, Validation) {
    EXPECT_THROW(toy_script_from_json(json{{"entries", {{{"tokens", toks("a", 0)}}}}}), FormatError);
    EXPECT_THROW(toy_script_from_json(json{{"entries", {{{"key", "k"}, {"tokens", {{{"text", "a"}}}}}}}}),
                 FormatError);
    EXPECT_THROW(toy_script_from_json(json{{"hidden_dim", 0}}), FormatError);
    EXPECT_THROW(toy_script_from_json(
                     json{{"entries", {{{"key", "k"}, {"tokens", {{{"text", "a"}, {"reps", {{"0", {1, 2}}}}}}}}}}}),
                 DimMismatch);
}

TEST(PromptHashKey, CollapsesWhitespace) {
    EXPECT_EQ(prompt_hash_key("a  b\n"), prompt_hash_key("a b"));
    EXPECT_EQ(prompt_hash_key("a b").rfind("fnv1a64:", 0), 0u);
    EXPECT_EQ(fnv1a64(""), 14695981039346656037ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(EndsSentence, Punctuation) {
    EXPECT_TRUE(ends_sentence("done."));
    EXPECT_TRUE(ends_sentence("what?"));
    EXPECT_TRUE(ends_sentence("x\n"));
    EXPECT_FALSE(ends_sentence("e.g"));
    EXPECT_FALSE(ends_sentence(""));
}

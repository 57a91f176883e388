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

#include <memory>
#include <string>
#include <vector>

#include "ctrla/eval.hpp"
#include "ctrla/feature_extraction.hpp"
#include "ctrla/orchestrator.hpp"
#include "ctrla/retrieval.hpp"
#include "ctrla/toy_backend.hpp"
#include "ctrla/web_search.hpp"

namespace ctrla::testing {

inline std::string source_path(const std::string& rel) { return std::string(CTRLA_SOURCE_DIR) + "/" + rel; }

inline ToyScript benchmark_script() { return load_toy_script(source_path("data/toy/toy_script.json")); }

inline std::vector<QAExample> benchmark_dataset() { return load_dataset_jsonl(source_path("data/toy/qa20.jsonl")); }

inline std::shared_ptr<const SearchIndex> benchmark_index() {
    return std::make_shared<const SearchIndex>(build_index(load_corpus_jsonl(source_path("data/toy/corpus50.jsonl"))));
}

/// Honesty and confidence features extracted from the demo statements with
/// the toy encoder of `script`, over all of its layers.
inline FeaturePair toy_features(const ToyScript& script) {
    ToyBackend backend(script);
    const auto statements = load_statements(source_path("data/statements_demo.txt"));
    std::vector<int> layers;
    for (int l = 0; l < script.layer_count; ++l) layers.push_back(l);
    auto extract = [&](FeatureKind kind) {
        const auto pairs = build_contrastive_pairs(statements, instructions_for(kind), kDefaultMaxStatementTokens,
                                                   kDefaultSampleSize, 0, backend);
        return extract_direction(collect_contrastive_vectors(pairs, backend, layers), kind, script.model_id);
    };
    return {extract(FeatureKind::honesty), extract(FeatureKind::confidence)};
}

inline EngineConfig toy_config() {
    return engine_config_from_json(json::parse(text::read_file(source_path("data/toy/engine_config.json"))));
}

inline std::string toy_instruction() {
    return task_instruction(parse_task_profiles(text::read_file(source_path("data/task_profiles.json"))), "toy");
}

// Golden sessions ---------------------------------------------------------

struct GoldenCase {
    std::string name;
    AnswerTrace trace;
    std::vector<std::string> prompts;  // every prompt the backend received
};

/// Benchmark question without a gap: two confident segments.
inline GoldenCase golden_no_trigger(const FeaturePair& features) {
    ToyBackend backend(benchmark_script());
    LocalRetriever retriever(benchmark_index());
    Engine engine(toy_config(), backend, retriever, features);
    auto t = engine.answer("What color is the flag of Quorra?", toy_instruction(), "q04");
    return {"no_trigger", std::move(t), backend.prompts_seen()};
}

/// Benchmark question with a planted gap in its second segment.
inline GoldenCase golden_planted_gap(const FeaturePair& features) {
    ToyBackend backend(benchmark_script());
    LocalRetriever retriever(benchmark_index());
    Engine engine(toy_config(), backend, retriever, features);
    auto t = engine.answer("Which city hosts the Selm Festival?", toy_instruction(), "q15");
    return {"planted_gap", std::move(t), backend.prompts_seen()};
}

inline constexpr const char* kRefusalQuestion = "Who built the Harlow Lighthouse?";
inline constexpr const char* kRefusalAnswerDoc = "The Harlow Lighthouse was built in 1841 by the engineer Edith Crane.";

/// Refuses from memory, then sees two irrelevant retrievals before the
/// third rewritten query finds the answer document.
inline ToyScript refusal_script() {
    const std::string q = std::string("Question: ") + kRefusalQuestion + "\n";
    auto toks = [](const std::string& s, double p) {
        json out = json::array();
        for (const auto& w : text::split_whitespace(s)) out.push_back({{"text", w}, {"proj", p}});
        return out;
    };
    const json script{
        {"encoder", {{"gain_jitter", 0.5}}},
        {"entries",
         json::array({
             {{"contains", {"Previous query: Who built the Harlow Lighthouse? I don't know.\nNew query:"}},
              {"tokens", toks("Harlow Lighthouse history", 0.0)}},
             {{"contains", {"Previous query: Harlow Lighthouse history\nNew query:"}},
              {"tokens", toks("\"Harlow Lighthouse engineer\"", 0.0)}},
             {{"contains", {q, "Document [", kRefusalAnswerDoc}},
              {"tokens", toks("The Harlow Lighthouse was built by Edith Crane.", 1.0)},
              {"end", true}},
             {{"contains", {q, "Document ["}}, {"tokens", toks("The documents do not mention the builder.", 1.0)}},
             {{"contains", {q + "Answer:"}}, {"tokens", toks("I don't know.", 1.0)}, {"end", true}},
         })}};
    return toy_script_from_json(script);
}

inline FixtureWebSearch refusal_retriever() {
    const json irrelevant1{{"id", "w-1"}, {"title", "Harlow"}, {"text", "Harlow is a market town with a museum."}};
    const json irrelevant2{{"id", "w-2"}, {"title", "Lighthouses"}, {"text", "Lighthouses guide ships at night."}};
    const json answer{{"id", "w-3"}, {"title", "Harlow Lighthouse"}, {"text", kRefusalAnswerDoc}};
    return FixtureWebSearch(json{{"results",
                                  {{"Who built the Harlow Lighthouse? I don't know.", {irrelevant1}},
                                   {"Harlow Lighthouse history", {irrelevant2, irrelevant1}},
                                   {"Harlow Lighthouse engineer", {answer, irrelevant2}}}}});
}

inline GoldenCase golden_refusal_loop(const FeaturePair& features) {
    ToyBackend backend(refusal_script());
    const auto retriever = refusal_retriever();
    auto config = toy_config();
    config.max_refusal_attempts = 3;
    Engine engine(config, backend, retriever, features);
    auto t = engine.answer(kRefusalQuestion, toy_instruction(), "refusal");
    return {"refusal_loop", std::move(t), backend.prompts_seen()};
}

inline std::vector<GoldenCase> golden_cases(const FeaturePair& features) {
    std::vector<GoldenCase> out;
    out.push_back(golden_no_trigger(features));
    out.push_back(golden_planted_gap(features));
    out.push_back(golden_refusal_loop(features));
    return out;
}

inline std::string golden_path(const std::string& name) { return source_path("tests/golden/" + name + ".json"); }

/// Trace plus the prompts the backend saw, pretty-printed.
inline std::string golden_bytes(const GoldenCase& c) {
    return json{{"trace", to_json(c.trace)}, {"prompts", c.prompts}}.dump(1) + "\n";
}

}  // namespace ctrla::testing

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

#include <filesystem>
#include <fstream>

#include "../common/toy_fixtures.hpp"
#include "ctrla/orchestrator.hpp"

using namespace ctrla;
using namespace ctrla::testing;

namespace {

const FeaturePair& features() {
    static const FeaturePair f = toy_features(benchmark_script());
    return f;
}

struct FailingRetriever final : Retriever {
    std::string name() const override { return "down"; }
    std::vector<Document> retrieve(std::string_view, std::size_t) const override { throw RetrieverError("offline"); }
};

}  // namespace

TEST(Prompt, RendersDocumentsInstructionAndPrevious) {
    const std::vector<Document> docs{{"d1", "T1", "one"}, {"d2", "T2", "two"}};
    EXPECT_EQ(render_generation_prompt(kDefaultGenerationTemplate, docs, "Be brief.", "Why?", "So far."),
              "Document [1] (T1): one\nDocument [2] (T2): two\n\nBe brief.\n\nQuestion: Why?\nAnswer: So far.");
    EXPECT_EQ(render_generation_prompt(kDefaultGenerationTemplate, {}, "I", "Q", ""), "I\n\nQuestion: Q\nAnswer:");
}

TEST(Prompt, ShippedTemplatesMatchBuiltIns) {
    EXPECT_EQ(text::read_file(source_path("data/templates/generation.txt")), kDefaultGenerationTemplate);
    EXPECT_EQ(text::read_file(source_path("data/templates/tvq.txt")), kDefaultTvqTemplate);
    EXPECT_EQ(text::read_file(source_path("data/templates/query_rewrite.txt")), kDefaultQueryRewriteTemplate);
    EXPECT_EQ(parse_task_profiles(text::read_file(source_path("data/task_profiles.json"))),
              parse_task_profiles(kDefaultTaskProfiles));
}

TEST(TaskProfiles, LookupAndUnknown) {
    const auto p = parse_task_profiles(kDefaultTaskProfiles);
    EXPECT_EQ(task_instruction(p, "toy"), "Answer the question in one or two sentences.");
    EXPECT_TRUE(p.contains("popqa"));
    EXPECT_THROW(task_instruction(p, "nope"), ConfigError);
}

TEST(Engine, GoldenSessionsAreStable) {
    for (const auto& c : golden_cases(features())) {
        SCOPED_TRACE(c.name);
        EXPECT_EQ(golden_bytes(c), text::read_file(golden_path(c.name)));
        EXPECT_EQ(verify_trace(c.trace), "");
    }
}

TEST(Engine, FirstGenerationHasNoDocuments) {
    const auto c = golden_planted_gap(features());
    ASSERT_FALSE(c.prompts.empty());
    EXPECT_EQ(c.prompts.front().find("Document ["), std::string::npos);
    EXPECT_EQ(c.trace.segments.at(0).retrievals, 0);
    EXPECT_TRUE(c.trace.segments.at(1).confidence_triggered);
    EXPECT_NE(c.trace.answer.find("Valecrest"), std::string::npos);
    // The documents of a triggered segment do not leak into the next prompt.
    for (std::size_t i = 1; i < c.prompts.size(); ++i) {
        if (c.prompts[i - 1].find("Document [") != std::string::npos) {
            EXPECT_EQ(c.prompts[i].find("Document ["), std::string::npos);
        }
    }
}

TEST(Engine, TriggerDisabledKeepsDraft) {
    ToyBackend backend(benchmark_script());
    LocalRetriever retriever(benchmark_index());
    auto config = toy_config();
    config.confidence_trigger = false;
    Engine engine(config, backend, retriever, features());
    const auto t = engine.answer("Which city hosts the Selm Festival?", toy_instruction(), "q15");
    EXPECT_EQ(t.retrieval_count, 0);
    EXPECT_NE(t.answer.find("Dorrin"), std::string::npos);
}

TEST(Engine, TvqUsesTheBackendQuery) {
    ToyBackend backend(benchmark_script());
    LocalRetriever retriever(benchmark_index());
    auto config = toy_config();
    config.query_strategy = QueryStrategy::tvq;
    Engine engine(config, backend, retriever, features());
    const auto t = engine.answer("Which city hosts the Selm Festival?", toy_instruction(), "q15");
    ASSERT_EQ(t.retrieval_log.size(), 1u);
    EXPECT_EQ(t.retrieval_log[0].query, "Selm Festival Which city hosts the Selm Festival");
    EXPECT_EQ(t.retrieval_log[0].doc_ids.front(), "doc-q15");
    EXPECT_NE(t.answer.find("Valecrest"), std::string::npos);
}

TEST(Engine, RetrieverFailureAbortsWithPartialTrace) {
    ToyBackend backend(benchmark_script());
    FailingRetriever retriever;
    Engine engine(toy_config(), backend, retriever, features());
    try {
        engine.answer("Which city hosts the Selm Festival?", toy_instruction(), "q15");
        FAIL() << "expected SessionAborted";
    } catch (const SessionAborted& e) {
        EXPECT_EQ(e.cause(), SessionAborted::Cause::retriever);
        const auto& t = e.partial();
        ASSERT_EQ(t.segments.size(), 1u);
        EXPECT_EQ(t.answer, "The Selm Festival is held every summer.");
        EXPECT_EQ(t.error, std::optional<std::string>("offline"));
        EXPECT_EQ(verify_trace(t), "");
    }
}

TEST(Engine, UnknownPromptAbortsAsBackendFailure) {
    ToyBackend backend(benchmark_script());
    LocalRetriever retriever(benchmark_index());
    Engine engine(toy_config(), backend, retriever, features());
    try {
        engine.answer("Not in the script?", toy_instruction(), "x");
        FAIL() << "expected SessionAborted";
    } catch (const SessionAborted& e) {
        EXPECT_EQ(e.cause(), SessionAborted::Cause::backend);
        EXPECT_TRUE(e.partial().segments.empty());
    }
}

TEST(Engine, TokenBudgetBoundsTheAnswer) {
    ToyBackend backend(benchmark_script());
    LocalRetriever retriever(benchmark_index());
    auto config = toy_config();
    config.max_tokens = 3;
    Engine engine(config, backend, retriever, features());
    const auto t = engine.answer("What color is the flag of Quorra?", toy_instruction(), "q04");
    EXPECT_EQ(t.token_count, 3);
    EXPECT_EQ(t.answer, "The flag of");
}

TEST(Engine, RejectsMismatchedFeatures) {
    ToyBackend backend(benchmark_script());
    LocalRetriever retriever(benchmark_index());
    const LayerwiseFeature small("m", 2, FeatureKind::honesty, {0, 1, 2, 3}, {{1, 0}, {1, 0}, {1, 0}, {1, 0}}, "s");
    EXPECT_THROW(Engine(toy_config(), backend, retriever, FeaturePair{small, features().confidence}), DimMismatch);
}

TEST(RunDataset, ParallelMatchesSerialAndIsSorted) {
    auto dataset = benchmark_dataset();
    std::reverse(dataset.begin(), dataset.end());
    LocalRetriever retriever(benchmark_index());
    const auto script = benchmark_script();
    const BackendFactory factory = [&] { return std::make_unique<ToyBackend>(script); };
    const auto serial = run_dataset(dataset, toy_instruction(), toy_config(), factory, retriever, features(), {}, 1);
    const auto parallel = run_dataset(dataset, toy_instruction(), toy_config(), factory, retriever, features(), {}, 4);
    ASSERT_EQ(serial.size(), 20u);
    EXPECT_EQ(serial.front().example_id, "q01");
    EXPECT_EQ(serial.back().example_id, "q20");
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_EQ(to_json(serial[i]), to_json(parallel[i]));
        EXPECT_EQ(verify_trace(serial[i]), "");
    }
}

TEST(RunDataset, AbortedExamplesKeepPartialTraces) {
    const std::vector<QAExample> dataset{{"q15", "Which city hosts the Selm Festival?", {"Valecrest"}},
                                         {"q04", "What color is the flag of Quorra?", {"green"}}};
    FailingRetriever retriever;
    const auto script = benchmark_script();
    const auto out = run_dataset(
        dataset, toy_instruction(), toy_config(), [&] { return std::make_unique<ToyBackend>(script); }, retriever,
        features());
    ASSERT_EQ(out.size(), 2u);
    EXPECT_FALSE(out[0].error);
    EXPECT_TRUE(out[1].error);
}

TEST(TraceJson, RoundTripAndJsonl) {
    const auto c = golden_refusal_loop(features());
    const auto j = to_json(c.trace);
    EXPECT_EQ(to_json(answer_trace_from_json(j)), j);
    const auto path = (std::filesystem::temp_directory_path() / "ctrla_traces_test.jsonl").string();
    {
        std::ofstream out(path);
        out << j.dump() << "\n\n" << j.dump() << "\n";
    }
    const auto back = load_traces_jsonl(path);
    std::filesystem::remove(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(to_json(back[1]), j);
}

TEST(TraceJson, RefusalLoopShape) {
    const auto t = golden_refusal_loop(features()).trace;
    ASSERT_EQ(t.segments.size(), 1u);
    const auto& s = t.segments[0];
    EXPECT_EQ(s.trigger_kind, "refusal_internal");
    EXPECT_EQ(s.refusal_attempts, 3);
    EXPECT_FALSE(s.refusal_fallback);
    EXPECT_EQ(s.doc_ids.front(), "w-3");
    EXPECT_EQ(t.answer, "The Harlow Lighthouse was built by Edith Crane.");
}

TEST(VerifyTrace, DetectsTampering) {
    const auto good = golden_planted_gap(features()).trace;
    ASSERT_EQ(verify_trace(good), "");
    auto t = good;
    t.retrieval_count += 1;
    EXPECT_NE(verify_trace(t), "");
    t = good;
    t.answer += " extra";
    EXPECT_NE(verify_trace(t), "");
    t = good;
    t.retrieval_log.clear();
    EXPECT_NE(verify_trace(t), "");
    t = good;
    t.segments[0].final_text = "changed";
    EXPECT_NE(verify_trace(t), "");
    t = good;
    t.segments[1].retrievals = 2;
    EXPECT_NE(verify_trace(t), "");
}

TEST(Dataset, LoadsAndValidates) {
    const auto ds = benchmark_dataset();
    ASSERT_EQ(ds.size(), 20u);
    EXPECT_EQ(ds[0].example_id, "q01");
    EXPECT_EQ(ds[0].gold_answers, (std::vector<std::string>{"Tolmar"}));
    EXPECT_THROW(qa_example_from_json(json{{"id", "x"}, {"question", "q"}, {"answers", json::array()}}),
                 ValidationError);
}

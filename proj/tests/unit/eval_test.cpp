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

#include "ctrla/eval.hpp"

using namespace ctrla;

TEST(Accuracy, NormalizedContainment) {
    EXPECT_TRUE(accuracy_contains("The capital is  PARIS, France.", {"paris"}));
    EXPECT_TRUE(accuracy_contains("It was Mira\n Solberg.", {"mira solberg"}));
    EXPECT_FALSE(accuracy_contains("It was Berlin.", {"Paris", "Lyon"}));
    EXPECT_THROW(accuracy_contains("x", {}), PreconditionError);
}

TEST(ExactMatch, SquadNormalization) {
    EXPECT_TRUE(exact_match("The Eiffel Tower!", {"eiffel tower"}));
    EXPECT_TRUE(exact_match("an  apple", {"banana", "Apple"}));
    EXPECT_FALSE(exact_match("Eiffel Tower in Paris", {"eiffel tower"}));
    EXPECT_THROW(exact_match("x", {}), PreconditionError);
}

TEST(TokenF1, HandComputed) {
    // pred {cat, sat, mat}, gold {cat, on, mat}: common 2, P = R = 2/3.
    EXPECT_NEAR(token_f1("the cat sat mat", {"cat on the mat"}), 2.0 / 3.0, 1e-12);
    // pred {red, red, blue}, gold {red}: common 1, P = 1/3, R = 1.
    EXPECT_NEAR(token_f1("red red blue", {"red"}), 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(token_f1("nothing here", {"else"}), 0.0);
    EXPECT_DOUBLE_EQ(token_f1("the", {"a"}), 1.0);
}

TEST(TokenF1, Properties) {
    const std::vector<std::string> preds{"green flag", "a white star", "mostly green", ""};
    for (const auto& p : preds) {
        for (const auto& g : preds) {
            const double f = token_f1(p, {g});
            EXPECT_GE(f, 0.0);
            EXPECT_LE(f, 1.0);
            EXPECT_DOUBLE_EQ(f, token_f1(g, {p}));
        }
        EXPECT_DOUBLE_EQ(token_f1(p, {p}), 1.0);
        EXPECT_DOUBLE_EQ(token_f1(p, {"zzz", p}), 1.0);
    }
}

TEST(ExtractAnswer, PatternThenLastSentence) {
    EXPECT_EQ(extract_answer("It rained. So the answer is: Tolmar. Done."), "Tolmar");
    EXPECT_EQ(extract_answer("so the answer is x. Later, so THE ANSWER IS y!"), "y");
    EXPECT_EQ(extract_answer("First. The capital is Tolmar."), "The capital is Tolmar.");
    EXPECT_EQ(extract_answer("no punctuation"), "no punctuation");
    EXPECT_EQ(extract_answer(""), "");
    EXPECT_EQ(extract_answer("Result => 42. ok", "result =>"), "42");
}

TEST(ParseMetrics, CsvAndErrors) {
    EXPECT_EQ(parse_metrics("acc, f1"), (std::set<Metric>{Metric::acc, Metric::f1}));
    EXPECT_EQ(parse_metrics("em,em"), (std::set<Metric>{Metric::em}));
    EXPECT_THROW(parse_metrics("acc,bleu"), ConfigError);
    EXPECT_THROW(parse_metrics(" , "), ConfigError);
}

namespace {

AnswerTrace trace(const std::string& id, const std::string& answer, int retrievals) {
    AnswerTrace t;
    t.example_id = id;
    t.answer = answer;
    t.retrieval_count = retrievals;
    return t;
}

}  // namespace

TEST(Evaluate, FiveExampleReport) {
    const std::vector<QAExample> ds{{"e1", "q", {"Tolmar"}},
                                    {"e2", "q", {"Ida Marsk"}},
                                    {"e3", "q", {"green"}},
                                    {"e4", "q", {"1712"}},
                                    {"e5", "q", {"lynx", "wild cat"}}};
    const std::vector<AnswerTrace> traces{trace("e3", "The flag is mostly green.", 0),
                                          trace("e1", "The capital of Brenvia is Tolmar.", 1),
                                          trace("e2", "It was founded by Ida Marsk.", 2),
                                          trace("e4", "It was signed in 1798.", 0),
                                          trace("e5", "So the answer is lynx.", 1)};
    EvalOptions opts;
    opts.extract = true;
    const auto r = evaluate(traces, ds, {Metric::acc, Metric::em, Metric::f1}, opts);
    const auto& agg = r["aggregate"];
    EXPECT_EQ(agg["n"], 5);
    EXPECT_DOUBLE_EQ(agg["acc"].get<double>(), 0.8);
    EXPECT_DOUBLE_EQ(agg["em"].get<double>(), 0.2);
    EXPECT_DOUBLE_EQ(agg["freq"].get<double>(), 0.8);
    // f1 per example on the extracted span (the whole single sentence or the pattern tail):
    // e1 {capital, of, brenvia, is, tolmar} vs {tolmar}: 1/3; e2 {it, was, founded, by, ida, marsk}: 2*(2/6)/(2/6+1) = 0.5;
    // e3 {flag, is, mostly, green}: 0.4; e4: 0; e5: 1.
    const double f1 = (1.0 / 3.0 + 0.5 + 0.4 + 0.0 + 1.0) / 5.0;
    EXPECT_NEAR(agg["f1"].get<double>(), f1, 1e-12);
    const auto& rows = r["per_example"];
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0]["id"], "e1");
    EXPECT_EQ(rows[4]["extracted"], "lynx");
    EXPECT_EQ(rows[2]["retrievals"], 0);
}

TEST(Evaluate, MissingExampleAndEmpty) {
    EXPECT_THROW(evaluate({trace("zz", "a", 0)}, {{"e1", "q", {"a"}}}, {Metric::acc}), MissingExample);
    const auto r = evaluate({}, {{"e1", "q", {"a"}}}, {Metric::acc});
    EXPECT_EQ(r["aggregate"]["n"], 0);
    EXPECT_DOUBLE_EQ(r["aggregate"]["acc"].get<double>(), 0.0);
}

TEST(Evaluate, ExtractionCanBeDisabled) {
    EvalOptions opts;
    opts.extract = false;
    const auto r = evaluate({trace("e1", "Tolmar", 0)}, {{"e1", "q", {"Tolmar"}}}, {Metric::em}, opts);
    EXPECT_DOUBLE_EQ(r["aggregate"]["em"].get<double>(), 1.0);
    EXPECT_FALSE(r["per_example"][0].contains("extracted"));
}

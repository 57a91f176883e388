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

// Command-line front end: feature extraction, indexing, answering, scoring,
// token-level trace export and the toy bridge server.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctrla/bridge.hpp"
#include "ctrla/eval.hpp"
#include "ctrla/feature_extraction.hpp"
#include "ctrla/orchestrator.hpp"
#include "ctrla/retrieval.hpp"
#include "ctrla/trace_view.hpp"
#include "ctrla/web_search.hpp"

using namespace ctrla;

namespace {

void write_text(const std::string& path, const std::string& content) {
    if (path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << content;
}

// extract-features ---------------------------------------------------------

struct ExtractArgs {
    std::string kind;
    std::string statements;
    std::string backend;
    std::string layers;
    std::string instructions;
    int sample_size = kDefaultSampleSize;
    int max_statement_tokens = kDefaultMaxStatementTokens;
    std::uint64_t seed = 0;
    std::string out;
};

int extract_features(const ExtractArgs& a) {
    const auto kind = parse_feature_kind(a.kind);
    auto backend = open_backend(a.backend);
    const auto info = backend->info();
    std::vector<int> layers;
    if (a.layers.empty()) {
        for (int l = 0; l < info.layer_count; ++l) layers.push_back(l);
    } else {
        const auto r = parse_layer_span(a.layers);
        if (r.last >= info.layer_count) {
            throw ConfigError("layers", a.layers + " exceeds the model's " + std::to_string(info.layer_count) + " layers");
        }
        for (int l = r.first; l <= r.last; ++l) layers.push_back(l);
    }
    const auto instructions = a.instructions.empty() ? instructions_for(kind) : load_instructions(a.instructions, kind);
    const auto statements = load_statements(a.statements);
    const auto pairs = build_contrastive_pairs(statements, instructions, a.max_statement_tokens, a.sample_size, a.seed,
                                               *backend);
    const auto vectors = collect_contrastive_vectors(pairs, *backend, layers);
    const auto feature = extract_direction(vectors, kind, info.model_id);
    save_feature(feature, a.out);
    std::fprintf(stderr, "%s: %zu pairs, %zu layers -> %s\n", to_string(kind).c_str(), pairs.size(), layers.size(),
                 a.out.c_str());
    return 0;
}

// index / search -------------------------------------------------------------

int build_index_cmd(const std::string& corpus, const std::string& out) {
    const auto idx = build_index(load_corpus_jsonl(corpus));
    save_index(idx, out);
    std::fprintf(stderr, "indexed %zu documents, %zu terms -> %s\n", idx.size(), idx.terms().size(), out.c_str());
    return 0;
}

int search_cmd(const std::string& index, const std::string& query, int k) {
    const auto idx = load_index(index);
    for (const auto& hit : search(idx, query, static_cast<std::size_t>(k))) {
        std::printf("%d\t%.6f\t%s\t%s\n", hit.rank, hit.score, hit.doc_id.c_str(), idx.find(hit.doc_id)->title.c_str());
    }
    return 0;
}

// run ------------------------------------------------------------------------

struct RunArgs {
    std::string dataset;
    std::string task_profile;
    std::string task_profiles;
    std::string current_date;
    std::string features_honesty;
    std::string features_confidence;
    std::string backend;
    std::string index;
    std::string web_fixture;
    std::string web_endpoint;
    std::optional<std::string> strategy;
    std::string out;
    std::string config;
    std::optional<double> lambda;
    std::optional<double> tau;
    std::optional<int> top_k;
    std::optional<int> max_refusal_attempts;
    std::optional<int> max_tokens;
    bool no_confidence_trigger = false;
    bool no_refusal_handling = false;
    std::string generation_template;
    std::string tvq_template;
    std::string qr_template;
    std::string refusal_patterns;
    std::string stopwords;
    unsigned jobs = 1;
};

EngineConfig assemble_config(const RunArgs& a) {
    EngineConfig c = a.config.empty() ? EngineConfig{} : engine_config_from_json(json::parse(text::read_file(a.config)));
    if (a.strategy) c.query_strategy = parse_query_strategy(*a.strategy);
    if (a.lambda) c.lambda = *a.lambda;
    if (a.tau) c.tau = *a.tau;
    if (a.top_k) c.top_k = *a.top_k;
    if (a.max_refusal_attempts) c.max_refusal_attempts = *a.max_refusal_attempts;
    if (a.max_tokens) c.max_tokens = *a.max_tokens;
    if (a.no_confidence_trigger) c.confidence_trigger = false;
    if (a.no_refusal_handling) c.refusal_handling = false;
    return c;
}

EngineResources assemble_resources(const RunArgs& a) {
    EngineResources r;
    if (!a.generation_template.empty()) r.generation_template = text::read_file(a.generation_template);
    if (!a.tvq_template.empty()) r.tvq_template = text::read_file(a.tvq_template);
    if (!a.qr_template.empty()) r.qr_template = text::read_file(a.qr_template);
    if (!a.refusal_patterns.empty()) r.refusal_patterns = load_refusal_patterns(a.refusal_patterns);
    if (!a.stopwords.empty()) r.stopwords = text::load_stopwords(a.stopwords);
    return r;
}

int run_cmd(const RunArgs& a) {
    const auto config = assemble_config(a);
    const auto resources = assemble_resources(a);
    const auto profiles =
        parse_task_profiles(a.task_profiles.empty() ? std::string(kDefaultTaskProfiles) : text::read_file(a.task_profiles));
    auto instruction = task_instruction(profiles, a.task_profile);
    if (!a.current_date.empty()) instruction = text::fill_template(instruction, {{"current_date", a.current_date}});

    const FeaturePair features{load_feature(a.features_honesty), load_feature(a.features_confidence)};
    if (features.honesty.kind() != FeatureKind::honesty) throw ConfigError("features-honesty", "not an honesty feature");
    if (features.confidence.kind() != FeatureKind::confidence) {
        throw ConfigError("features-confidence", "not a confidence feature");
    }

    RetrieverStack retriever;
    if (!a.index.empty()) retriever.add(std::make_shared<LocalRetriever>(std::make_shared<const SearchIndex>(load_index(a.index))));
    if (!a.web_fixture.empty()) retriever.add(std::make_shared<FixtureWebSearch>(FixtureWebSearch::load(a.web_fixture)));
    if (!a.web_endpoint.empty()) retriever.add(std::make_shared<HttpWebSearch>(HttpWebSearch::from_env(a.web_endpoint)));
    if (retriever.size() == 0) throw ConfigError("retriever", "give --index, --web-fixture or --web-endpoint");

    const auto dataset = load_dataset_jsonl(a.dataset);
    const std::string uri = a.backend;
    const auto traces = run_dataset(
        dataset, instruction, config, [&] { return open_backend(uri); }, retriever, features, resources, a.jobs);

    std::string out;
    int failed = 0, retrievals = 0;
    for (const auto& t : traces) {
        out += to_json(t).dump() + "\n";
        if (t.error) {
            ++failed;
            std::fprintf(stderr, "%s: aborted: %s\n", t.example_id.c_str(), t.error->c_str());
        }
        retrievals += t.retrieval_count;
    }
    write_text(a.out, out);
    std::fprintf(stderr, "%zu examples, %d retrievals, %d aborted -> %s\n", traces.size(), retrievals, failed,
                 a.out.c_str());
    return failed ? 3 : 0;
}

// eval -----------------------------------------------------------------------

int eval_cmd(const std::string& traces, const std::string& dataset, const std::string& metrics,
             const std::string& out, bool no_extract, const std::string& pattern) {
    EvalOptions opts;
    opts.extract = !no_extract;
    opts.answer_pattern = pattern;
    const auto report = evaluate(load_traces_jsonl(traces), load_dataset_jsonl(dataset), parse_metrics(metrics), opts);
    write_text(out, report.dump(2) + "\n");
    std::fprintf(stderr, "%s\n", report["aggregate"].dump().c_str());
    return 0;
}

// trace ----------------------------------------------------------------------

int trace_cmd(const std::string& traces_path, const std::string& id, const std::string& out, const std::string& html) {
    auto traces = load_traces_jsonl(traces_path);
    if (!id.empty()) {
        std::erase_if(traces, [&](const AnswerTrace& t) { return t.example_id != id; });
        if (traces.empty()) throw MissingExample("no trace with id '" + id + "'");
    }
    std::string tsv(kTokenTableHeader);
    for (const auto& t : traces) tsv += token_table_tsv(t);
    write_text(out, tsv);
    if (!html.empty()) write_text(html, token_marking_html(traces));
    return 0;
}

// serve-toy ------------------------------------------------------------------

int serve_cmd(const std::string& script, int port, const std::string& bind, bool stdio) {
    auto s = load_toy_script(script);
    if (stdio) {
        ToyBackend backend(std::move(s));
        FdChannel channel(STDIN_FILENO, STDOUT_FILENO);
        serve_session(backend, channel);
        return 0;
    }
    ToyBridgeServer server(std::move(s), port, bind);
    std::fprintf(stderr, "serving toy backend on tcp://%s:%d\n", bind.c_str(), server.port());
    server.run();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ctrla: steered, confidence-triggered retrieval-augmented answering"};
    app.require_subcommand(1);
    std::function<int()> action;

    ExtractArgs ex;
    auto* extract = app.add_subcommand("extract-features", "Extract an honesty or confidence direction per layer");
    extract->add_option("--kind", ex.kind, "honesty|confidence")->required()->check(CLI::IsMember({"honesty", "confidence"}));
    extract->add_option("--statements", ex.statements, "Statements, one per line or JSONL")->required()->check(CLI::ExistingFile);
    extract->add_option("--backend", ex.backend, "toy:SCRIPT or tcp://host:port")->required();
    extract->add_option("--layers", ex.layers, "1-based inclusive layer span A..B (default: all)");
    extract->add_option("--instructions", ex.instructions, "Instruction pairs JSON")->check(CLI::ExistingFile);
    extract->add_option("--sample-size", ex.sample_size, "Pairs to sample")->check(CLI::PositiveNumber);
    extract->add_option("--max-statement-tokens", ex.max_statement_tokens)->check(CLI::PositiveNumber);
    extract->add_option("--seed", ex.seed);
    extract->add_option("--out", ex.out, "Feature file")->required();
    extract->callback([&] { action = [&] { return extract_features(ex); }; });

    std::string corpus, index_out;
    auto* index = app.add_subcommand("index", "Build a BM25 index from a JSONL corpus");
    index->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    index->add_option("--out", index_out)->required();
    index->callback([&] { action = [&] { return build_index_cmd(corpus, index_out); }; });

    std::string search_index, search_query;
    int search_k = 5;
    auto* search_sub = app.add_subcommand("search", "Query a BM25 index");
    search_sub->add_option("--index", search_index)->required()->check(CLI::ExistingFile);
    search_sub->add_option("--query", search_query)->required();
    search_sub->add_option("-k", search_k)->check(CLI::PositiveNumber);
    search_sub->callback([&] { action = [&] { return search_cmd(search_index, search_query, search_k); }; });

    RunArgs ra;
    auto* run = app.add_subcommand("run", "Answer every question of a dataset and write traces");
    run->add_option("--dataset", ra.dataset, "JSONL with id, question, answers")->required()->check(CLI::ExistingFile);
    run->add_option("--task-profile", ra.task_profile, "Instruction profile name")->required();
    run->add_option("--task-profiles", ra.task_profiles, "Profiles JSON (default: built-in)")->check(CLI::ExistingFile);
    run->add_option("--current-date", ra.current_date, "Fills {current_date} in the instruction");
    run->add_option("--features-honesty", ra.features_honesty)->required()->check(CLI::ExistingFile);
    run->add_option("--features-confidence", ra.features_confidence)->required()->check(CLI::ExistingFile);
    run->add_option("--backend", ra.backend, "toy:SCRIPT or tcp://host:port")->required();
    run->add_option("--index", ra.index, "BM25 index")->check(CLI::ExistingFile);
    run->add_option("--web-fixture", ra.web_fixture, "Recorded web-search responses")->check(CLI::ExistingFile);
    run->add_option("--web-endpoint", ra.web_endpoint, "Web search URL; key from CTRLA_WEB_SEARCH_KEY");
    run->add_option("--strategy", ra.strategy, "caq|tvq")->check(CLI::IsMember({"caq", "tvq"}));
    run->add_option("--out", ra.out, "Trace JSONL, or - for stdout")->required();
    run->add_option("--config", ra.config, "Engine config JSON; flags override it")->check(CLI::ExistingFile);
    run->add_option("--lambda", ra.lambda);
    run->add_option("--tau", ra.tau);
    run->add_option("--top-k", ra.top_k);
    run->add_option("--max-refusal-attempts", ra.max_refusal_attempts);
    run->add_option("--max-tokens", ra.max_tokens);
    run->add_flag("--no-confidence-trigger", ra.no_confidence_trigger);
    run->add_flag("--no-refusal-handling", ra.no_refusal_handling);
    run->add_option("--generation-template", ra.generation_template)->check(CLI::ExistingFile);
    run->add_option("--tvq-template", ra.tvq_template)->check(CLI::ExistingFile);
    run->add_option("--qr-template", ra.qr_template)->check(CLI::ExistingFile);
    run->add_option("--refusal-patterns", ra.refusal_patterns)->check(CLI::ExistingFile);
    run->add_option("--stopwords", ra.stopwords)->check(CLI::ExistingFile);
    run->add_option("--jobs", ra.jobs, "Concurrent sessions")->check(CLI::PositiveNumber);
    run->callback([&] { action = [&] { return run_cmd(ra); }; });

    std::string ev_traces, ev_dataset, ev_metrics = "acc,em,f1", ev_out = "-", ev_pattern{kDefaultAnswerPattern};
    bool ev_no_extract = false;
    auto* eval = app.add_subcommand("eval", "Score traces against gold answers");
    eval->add_option("--traces", ev_traces)->required()->check(CLI::ExistingFile);
    eval->add_option("--dataset", ev_dataset)->required()->check(CLI::ExistingFile);
    eval->add_option("--metrics", ev_metrics, "Comma-separated subset of acc,em,f1");
    eval->add_option("--out", ev_out, "Report JSON, or - for stdout");
    eval->add_option("--answer-pattern", ev_pattern, "Phrase preceding the short answer");
    eval->add_flag("--no-extract", ev_no_extract, "Score em and f1 on the full answer");
    eval->callback([&] {
        action = [&] { return eval_cmd(ev_traces, ev_dataset, ev_metrics, ev_out, ev_no_extract, ev_pattern); };
    });

    std::string tr_traces, tr_id, tr_out = "-", tr_html;
    auto* trace = app.add_subcommand("trace", "Per-token confidence table (TSV) and optional HTML marking");
    trace->add_option("--traces", tr_traces)->required()->check(CLI::ExistingFile);
    trace->add_option("--id", tr_id, "Only this example");
    trace->add_option("--out", tr_out, "TSV file, or - for stdout");
    trace->add_option("--html", tr_html, "HTML file with marked tokens");
    trace->callback([&] { action = [&] { return trace_cmd(tr_traces, tr_id, tr_out, tr_html); }; });

    std::string sv_script, sv_bind = "127.0.0.1";
    int sv_port = 7451;
    bool sv_stdio = false;
    auto* serve = app.add_subcommand("serve-toy", "Serve the toy backend over the bridge protocol");
    serve->add_option("--script", sv_script)->required()->check(CLI::ExistingFile);
    serve->add_option("--port", sv_port)->check(CLI::Range(0, 65535));
    serve->add_option("--bind", sv_bind);
    serve->add_flag("--stdio", sv_stdio, "One session over stdin/stdout");
    serve->callback([&] { action = [&] { return serve_cmd(sv_script, sv_port, sv_bind, sv_stdio); }; });

    CLI11_PARSE(app, argc, argv);
    try {
        return action();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

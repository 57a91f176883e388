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
#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ctrla/backend.hpp"
#include "ctrla/confidence.hpp"
#include "ctrla/core.hpp"
#include "ctrla/query_formulation.hpp"
#include "ctrla/refusal.hpp"
#include "ctrla/retrieval.hpp"
#include "ctrla/steering.hpp"

namespace ctrla {

// Prompt assembly ---------------------------------------------------------

/// `{documents}` expands to numbered blocks "Document [i] (Title): text", one
/// per line, followed by a blank line (nothing when there are no documents).
/// `{previous}` expands to a space plus the finalized output, or nothing.
inline constexpr std::string_view kDefaultGenerationTemplate =
    "{documents}{instruction}\n\nQuestion: {question}\nAnswer:{previous}";

inline std::string render_documents(const std::vector<Document>& docs) {
    if (docs.empty()) return {};
    std::string out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        out += "Document [" + std::to_string(i + 1) + "] (" + docs[i].title + "): " + docs[i].text + "\n";
    }
    out += "\n";
    return out;
}

inline std::string render_generation_prompt(std::string_view tmpl, const std::vector<Document>& docs,
                                            std::string_view instruction, std::string_view question,
                                            std::string_view previous_output) {
    return text::fill_template(
        std::string(tmpl),
        {{"documents", render_documents(docs)},
         {"instruction", std::string(instruction)},
         {"question", std::string(question)},
         {"previous", previous_output.empty() ? std::string{} : " " + std::string(previous_output)}});
}

// Task profiles -----------------------------------------------------------

inline constexpr std::string_view kDefaultTaskProfiles = R"({
  "popqa": "You are a response generation assistant, designed to provide accurate and clear answers to questions based on the given content. Please complete the answer if the question is partially answered.",
  "triviaqa": "You are a response generation assistant, designed to provide accurate and clear answers to questions based on the given content. Please complete the answer if the question is partially answered.",
  "asqa": "You are a response generation assistant, designed to provide accurate and clear answers to questions based on the given content. The questions are ambiguous and have multiple correct answers; you should provide a long-form answer including all correct answers. Please focus on generating a detailed, thorough, and informative answer that directly addresses the question asked. Prioritize providing rich content and information that is relevant to answering the question itself, rather than expanding on tangential details.",
  "bio": "You are a biography generation assistant, designed to generate accurate and concise biographies about a person based on the given content. Please complete the answer if the question is partially answered.",
  "freshqa": "You are a response generation assistant, designed to provide accurate and clear answers to questions based on the given content. Answer as concisely as possible. Knowledge cutoff: {current_date}. Today is {current_date} in Pacific Standard Time. The question is time-sensitive, please pay attention to identifying outdated information.",
  "toy": "Answer the question in one or two sentences."
})";

inline std::map<std::string, std::string> parse_task_profiles(std::string_view content) {
    try {
        return json::parse(content).get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("task profiles: ") + e.what());
    }
}

inline std::string task_instruction(const std::map<std::string, std::string>& profiles, const std::string& name) {
    auto it = profiles.find(name);
    if (it == profiles.end()) throw ConfigError("task_profile", "unknown profile '" + name + "'");
    return it->second;
}

// Answer trace ------------------------------------------------------------

struct SegmentRecord {
    std::string draft;       // first generation of the segment
    std::string final_text;  // what was appended to the answer
    bool confidence_triggered = false;
    std::string trigger_kind = "none";  // first retrieval trigger for this segment
    std::string query;                  // last query issued for this segment
    std::vector<std::string> doc_ids;   // documents behind final_text (empty if none)
    int retrievals = 0;
    int refusal_attempts = 0;
    bool refusal_fallback = false;
    std::vector<std::size_t> new_info;  // indices into the draft tokens
};

struct AnswerTrace {
    std::string example_id;
    std::string question;
    std::string answer;
    std::vector<SegmentRecord> segments;
    std::vector<RetrievalLogEntry> retrieval_log;
    std::vector<ConfidenceRecord> tokens;
    int token_count = 0;
    int retrieval_count = 0;
    std::optional<std::string> error;  // set on an aborted session
};

inline json to_json(const SegmentRecord& s) {
    return {{"draft", s.draft},
            {"final", s.final_text},
            {"confidence_triggered", s.confidence_triggered},
            {"trigger_kind", s.trigger_kind},
            {"query", s.query},
            {"doc_ids", s.doc_ids},
            {"retrievals", s.retrievals},
            {"refusal_attempts", s.refusal_attempts},
            {"refusal_fallback", s.refusal_fallback},
            {"new_info", s.new_info}};
}

inline SegmentRecord segment_record_from_json(const json& j) {
    SegmentRecord s;
    s.draft = j.at("draft").get<std::string>();
    s.final_text = j.at("final").get<std::string>();
    s.confidence_triggered = j.at("confidence_triggered").get<bool>();
    s.trigger_kind = j.at("trigger_kind").get<std::string>();
    s.query = j.at("query").get<std::string>();
    s.doc_ids = j.at("doc_ids").get<std::vector<std::string>>();
    s.retrievals = j.at("retrievals").get<int>();
    s.refusal_attempts = j.at("refusal_attempts").get<int>();
    s.refusal_fallback = j.at("refusal_fallback").get<bool>();
    s.new_info = j.at("new_info").get<std::vector<std::size_t>>();
    return s;
}

inline json to_json(const AnswerTrace& t) {
    json segs = json::array();
    for (const auto& s : t.segments) segs.push_back(to_json(s));
    json log = json::array();
    for (const auto& e : t.retrieval_log) log.push_back(to_json(e));
    json toks = json::array();
    for (const auto& r : t.tokens) toks.push_back(to_json(r));
    json j{{"id", t.example_id},
           {"question", t.question},
           {"answer", t.answer},
           {"segments", segs},
           {"retrieval_log", log},
           {"tokens", toks},
           {"token_count", t.token_count},
           {"retrieval_count", t.retrieval_count}};
    if (t.error) j["error"] = *t.error;
    return j;
}

inline AnswerTrace answer_trace_from_json(const json& j) {
    try {
        AnswerTrace t;
        t.example_id = j.at("id").get<std::string>();
        t.question = j.at("question").get<std::string>();
        t.answer = j.at("answer").get<std::string>();
        for (const auto& s : j.at("segments")) t.segments.push_back(segment_record_from_json(s));
        for (const auto& e : j.at("retrieval_log")) t.retrieval_log.push_back(retrieval_log_entry_from_json(e));
        for (const auto& r : j.value("tokens", json::array())) t.tokens.push_back(confidence_record_from_json(r));
        t.token_count = j.at("token_count").get<int>();
        t.retrieval_count = j.at("retrieval_count").get<int>();
        if (j.contains("error")) t.error = j["error"].get<std::string>();
        return t;
    } catch (const json::exception& e) {
        throw FormatError(std::string("answer trace: ") + e.what());
    }
}

inline std::vector<AnswerTrace> load_traces_jsonl(const std::string& path) {
    std::vector<AnswerTrace> out;
    for (const auto& line : text::read_lines(path)) {
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(answer_trace_from_json(json::parse(line)));
        } catch (const json::parse_error& e) {
            throw FormatError(path + ": " + e.what());
        }
    }
    return out;
}

/// Replays the recorded per-segment decisions and checks that they
/// reproduce the answer and the retrieval accounting. Returns an empty
/// string when consistent, else a description of the first mismatch.
inline std::string verify_trace(const AnswerTrace& t) {
    std::vector<std::string> finals;
    int retrievals = 0;
    std::size_t log_pos = 0;
    for (std::size_t i = 0; i < t.segments.size(); ++i) {
        const auto& s = t.segments[i];
        finals.push_back(s.final_text);
        retrievals += s.retrievals;
        const int expected = (s.confidence_triggered ? 1 : 0) + s.refusal_attempts;
        if (s.retrievals != expected) return "segment " + std::to_string(i) + ": retrieval count mismatch";
        if (s.confidence_triggered) {
            if (log_pos >= t.retrieval_log.size() || t.retrieval_log[log_pos].kind != TriggerKind::confidence) {
                return "segment " + std::to_string(i) + ": missing confidence log entry";
            }
        }
        for (int k = 0; k < s.retrievals; ++k, ++log_pos) {
            if (log_pos >= t.retrieval_log.size()) return "retrieval log shorter than segment records";
        }
        if (s.retrievals == 0 && s.draft != s.final_text && !s.refusal_fallback) {
            return "segment " + std::to_string(i) + ": changed without retrieval";
        }
    }
    if (log_pos != t.retrieval_log.size()) return "retrieval log longer than segment records";
    if (retrievals != t.retrieval_count) return "retrieval_count disagrees with segments";
    if (static_cast<int>(t.retrieval_log.size()) != t.retrieval_count) return "retrieval_count disagrees with log";
    if (text::join(finals, " ") != t.answer) return "answer is not the concatenation of final segments";
    return {};
}

// Engine ------------------------------------------------------------------

struct FeaturePair {
    LayerwiseFeature honesty;
    LayerwiseFeature confidence;
};

struct EngineResources {
    text::StopwordSet stopwords = text::default_stopwords();
    RefusalPatterns refusal_patterns = default_refusal_patterns();
    std::string generation_template{kDefaultGenerationTemplate};
    std::string tvq_template{kDefaultTvqTemplate};
    std::string qr_template{kDefaultQueryRewriteTemplate};
};

/// A session that failed part-way. `partial()` holds everything finalized
/// before the failure; `cause()` tells which component failed.
class SessionAborted : public Error {
public:
    enum class Cause { backend, retriever };

    SessionAborted(Cause cause, const std::string& what, AnswerTrace partial)
        : Error(what), cause_(cause), partial_(std::move(partial)) {}

    Cause cause() const noexcept { return cause_; }
    const AnswerTrace& partial() const noexcept { return partial_; }

private:
    Cause cause_;
    AnswerTrace partial_;
};

/// Segment-wise generation with honesty steering, confidence-triggered
/// retrieval and refusal handling.
///
/// Per segment: generate (steered, monitored); if an unconfident
/// new-information token appears, formulate a query, retrieve and regenerate
/// once with the documents prepended (the regenerated text is not
/// re-checked for confidence); then run refusal detection on whatever is
/// current and, on a hit, the bounded refusal loop. The first retrieval of a
/// session always comes after the first generation.
class Engine {
public:
    Engine(EngineConfig config, GeneratorBackend& backend, const Retriever& retriever, FeaturePair features,
           EngineResources resources = {})
        : config_(std::move(config)),
          backend_(backend),
          retriever_(retriever),
          features_(std::move(features)),
          resources_(std::move(resources)) {
        const auto info = backend_.info();
        validate_config(config_, info.layer_count);
        for (const auto* f : {&features_.honesty, &features_.confidence}) {
            if (f->hidden_dim() != info.hidden_dim) {
                throw DimMismatch("feature '" + to_string(f->kind()) + "' hidden_dim " +
                                  std::to_string(f->hidden_dim()) + " vs backend " + std::to_string(info.hidden_dim));
            }
        }
        steering_.emplace(features_.honesty, config_.lambda, config_.steer_layers, SteerDirection::increase);
    }

    const EngineConfig& config() const noexcept { return config_; }

    AnswerTrace answer(const std::string& question, const std::string& instruction,
                       const std::string& example_id = {}) {
        SessionState session(question, instruction, config_.max_tokens);
        AnswerTrace trace;
        trace.example_id = example_id;
        trace.question = question;
        try {
            run(session, trace);
        } catch (const RetrieverError& e) {
            finish(session, trace);
            trace.error = e.what();
            throw SessionAborted(SessionAborted::Cause::retriever, e.what(), std::move(trace));
        } catch (const BackendError& e) {
            finish(session, trace);
            trace.error = e.what();
            throw SessionAborted(SessionAborted::Cause::backend, e.what(), std::move(trace));
        }
        finish(session, trace);
        return trace;
    }

private:
    void run(SessionState& session, AnswerTrace& trace) {
        while (session.token_budget() > 0) {
            const std::string previous = session.previous_output();
            SegmentRecord rec;
            SegmentDraft draft = generate(session, std::nullopt);
            rec.draft = draft.text;
            rec.new_info = draft.new_info;
            SegmentDraft current = draft;
            std::optional<std::string> query;
            bool docs_in_context = false;

            if (config_.confidence_trigger && should_retrieve(draft.scaled, draft.new_info)) {
                rec.confidence_triggered = true;
                rec.trigger_kind = to_string(TriggerKind::confidence);
                query = formulate(session, draft, previous);
                auto docs = retriever_.retrieve(*query, static_cast<std::size_t>(config_.top_k));
                RetrievalLogEntry entry{TriggerKind::confidence, *query, {}};
                for (const auto& d : docs) entry.doc_ids.push_back(d.doc_id);
                rec.query = *query;
                rec.doc_ids = entry.doc_ids;
                rec.retrievals = 1;
                session.log_retrieval(std::move(entry));
                session.set_current_docs(docs);
                current = generate(session, docs);
                docs_in_context = true;
            }

            if (config_.refusal_handling) {
                const auto verdict = detect_refusal(current.text, docs_in_context, resources_.refusal_patterns);
                if (verdict) {
                    if (rec.trigger_kind == "none") {
                        rec.trigger_kind = to_string(verdict.kind == RefusalVerdict::Kind::irrelevant_docs
                                                         ? TriggerKind::refusal_docs
                                                         : TriggerKind::refusal_internal);
                    }
                    RefusalHooks hooks{
                        [&](const SegmentDraft& d) { return formulate(session, d, previous); },
                        [&](const std::optional<std::vector<Document>>& docs) {
                            return generate(session, docs);
                        }};
                    auto outcome = handle_refusal(session, current, query, backend_, retriever_, hooks, config_,
                                                  resources_.refusal_patterns, docs_in_context, resources_.qr_template);
                    current = std::move(outcome.segment);
                    rec.refusal_attempts = outcome.attempts;
                    rec.refusal_fallback = outcome.fallback;
                    rec.retrievals += outcome.attempts;
                    if (outcome.last_query) rec.query = *outcome.last_query;
                    rec.doc_ids = outcome.fallback ? std::vector<std::string>{} : outcome.last_doc_ids;
                }
            }

            rec.final_text = current.text;
            session.append_segment(current.text);
            session.consume_tokens(static_cast<int>(current.tokens.size()));
            session.set_current_docs({});
            trace.segments.push_back(std::move(rec));
            trace.token_count += static_cast<int>(current.tokens.size());
            if (current.end.end_of_answer || current.tokens.empty()) break;
        }
    }

    void finish(const SessionState& session, AnswerTrace& trace) const {
        trace.answer = session.previous_output();
        trace.retrieval_log = session.retrieval_log();
        trace.retrieval_count = static_cast<int>(session.retrieval_log().size());
        trace.tokens = session.trace().records();
    }

    std::string formulate(const SessionState& session, const SegmentDraft& draft, const std::string& previous) {
        if (config_.query_strategy == QueryStrategy::tvq) {
            return formulate_tvq(session.question(), draft.text, backend_, resources_.tvq_template);
        }
        const auto masked = mask_segment(draft.tokens, draft.scaled, session.question(), previous, resources_.stopwords);
        return formulate_caq(session.question(), masked);
    }

    /// One steered, monitored segment for the current position, optionally
    /// with documents prepended. Appends to the session confidence trace.
    SegmentDraft generate(SessionState& session, const std::optional<std::vector<Document>>& docs) {
        const std::string previous = session.previous_output();
        GenerationRequest req;
        req.prompt = render_generation_prompt(resources_.generation_template, docs.value_or(std::vector<Document>{}),
                                              session.instruction(), session.question(), previous);
        req.steering = steering_;
        req.monitor_feature = &features_.confidence;
        req.monitor_layers = config_.monitor_layers;
        req.stop = StopPolicy::either(std::max(1, session.token_budget()));

        SegmentDraft draft;
        std::vector<double> raws;
        auto& ctrace = session.trace();
        draft.end = backend_.generate_segment(req, [&](const TokenEvent& ev) {
            const double raw = project_token(ev, features_.confidence, config_.monitor_layers);
            raws.push_back(raw);
            draft.scaled.push_back(scale_score(ctrace, raw, config_.tau));
            draft.tokens.push_back(ev.token_text());
            return true;
        });
        draft.text = backend_.detokenize(draft.tokens);
        draft.new_info = new_information_tokens(draft.tokens, session.question(), previous, resources_.stopwords);
        std::vector<bool> is_new(draft.tokens.size(), false);
        for (auto k : draft.new_info) is_new[k] = true;
        for (std::size_t k = 0; k < draft.tokens.size(); ++k) {
            ctrace.append({draft.tokens[k], raws[k], draft.scaled[k], is_new[k], draft.scaled[k] > 0.0});
        }
        return draft;
    }

    EngineConfig config_;
    GeneratorBackend& backend_;
    const Retriever& retriever_;
    FeaturePair features_;
    EngineResources resources_;
    std::optional<SteeringConfig> steering_;
};

/// Convenience wrapper over Engine for a single question.
inline AnswerTrace answer(const std::string& question, const std::string& instruction, const EngineConfig& config,
                          GeneratorBackend& backend, const Retriever& retriever, const FeaturePair& features,
                          const EngineResources& resources = {}) {
    Engine engine(config, backend, retriever, features, resources);
    return engine.answer(question, instruction);
}

// Dataset runs ------------------------------------------------------------

struct QAExample {
    std::string example_id;
    std::string question;
    std::vector<std::string> gold_answers;
};

inline QAExample qa_example_from_json(const json& j) {
    QAExample ex{j.at("id").get<std::string>(), j.at("question").get<std::string>(),
                 j.at("answers").get<std::vector<std::string>>()};
    if (ex.gold_answers.empty()) throw ValidationError("example " + ex.example_id + ": no gold answers");
    return ex;
}

inline std::vector<QAExample> load_dataset_jsonl(const std::string& path) {
    std::vector<QAExample> out;
    std::size_t lineno = 0;
    for (const auto& line : text::read_lines(path)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(qa_example_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

using BackendFactory = std::function<std::unique_ptr<GeneratorBackend>()>;

/// Runs every example in its own session, `jobs` at a time, each with a
/// fresh backend from `make_backend`. Aborted sessions contribute their
/// partial trace. Results are sorted by example id.
inline std::vector<AnswerTrace> run_dataset(const std::vector<QAExample>& examples, const std::string& instruction,
                                            const EngineConfig& config, const BackendFactory& make_backend,
                                            const Retriever& retriever, const FeaturePair& features,
                                            const EngineResources& resources = {}, unsigned jobs = 1) {
    std::vector<AnswerTrace> results(examples.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr fatal;
    auto worker = [&] {
        for (std::size_t i = next++; i < examples.size(); i = next++) {
            try {
                auto backend = make_backend();
                Engine engine(config, *backend, retriever, features, resources);
                try {
                    results[i] = engine.answer(examples[i].question, instruction, examples[i].example_id);
                } catch (const SessionAborted& e) {
                    results[i] = e.partial();
                }
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!fatal) fatal = std::current_exception();
            }
        }
    };
    jobs = std::max(1u, jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    }
    if (fatal) std::rethrow_exception(fatal);
    std::sort(results.begin(), results.end(),
              [](const AnswerTrace& a, const AnswerTrace& b) { return a.example_id < b.example_id; });
    return results;
}

}  // namespace ctrla

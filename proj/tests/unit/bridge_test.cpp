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

#include <sys/socket.h>

#include <thread>

#include "../common/toy_fixtures.hpp"
#include "ctrla/bridge.hpp"

using namespace ctrla;
using namespace ctrla::testing;

namespace {

std::vector<std::uint8_t> bytes(std::string_view s) { return {s.begin(), s.end()}; }

/// Client and a serving thread over a socketpair.
class Loopback {
public:
    explicit Loopback(ToyScript script) : server_backend_(std::move(script)) {
        int fds[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw std::runtime_error("socketpair");
        server_channel_ = std::make_unique<FdChannel>(fds[1], fds[1], true);
        server_ = std::thread([this] { serve_session(server_backend_, *server_channel_); });
        client_fd_ = fds[0];
        client_.emplace(std::make_unique<FdChannel>(fds[0], fds[0], true));
    }
    ~Loopback() {
        ::shutdown(client_fd_, SHUT_RDWR);
        server_.join();
    }

    BridgeBackend& client() { return *client_; }

private:
    ToyBackend server_backend_;
    std::unique_ptr<FdChannel> server_channel_;
    std::thread server_;
    int client_fd_ = -1;
    std::optional<BridgeBackend> client_;
};

LayerwiseFeature unit_feature(FeatureKind kind) {
    std::vector<Vector> vs;
    for (int l = 0; l < 4; ++l) {
        Vector v(8, 0.0);
        v[static_cast<std::size_t>(l + 1)] = 1.0;
        vs.push_back(v);
    }
    return LayerwiseFeature("toy-8x4", 8, kind, {0, 1, 2, 3}, vs, "s");
}

}  // namespace

TEST(Base64, KnownVectors) {
    EXPECT_EQ(detail::base64_encode(bytes("")), "");
    EXPECT_EQ(detail::base64_encode(bytes("f")), "Zg==");
    EXPECT_EQ(detail::base64_encode(bytes("fo")), "Zm8=");
    EXPECT_EQ(detail::base64_encode(bytes("foo")), "Zm9v");
    EXPECT_EQ(detail::base64_encode(bytes("foobar")), "Zm9vYmFy");
    EXPECT_EQ(detail::base64_decode("Zm9vYmE="), bytes("fooba"));
    EXPECT_THROW(detail::base64_decode("Zm9"), FormatError);
    EXPECT_THROW(detail::base64_decode("Z=9v"), FormatError);
    EXPECT_THROW(detail::base64_decode("Zm9*"), FormatError);
}

TEST(Float32Wire, LittleEndianLayout) {
    EXPECT_EQ(encode_f32({1.0}), "AACAPw==");  // 00 00 80 3f
    const Vector v{0.5, -2.25, 1e-3, 0.0};
    const auto back = decode_f32(encode_f32(v));
    ASSERT_EQ(back.size(), 4u);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(v[i])));
    EXPECT_THROW(decode_f32("AAA="), FormatError);
}

TEST(Wire, StopPolicyRoundTrip) {
    for (const auto& s : {StopPolicy::sentence_end(), StopPolicy::max(5), StopPolicy::either(2)}) {
        const auto back = stop_from_json(stop_to_json(s));
        EXPECT_EQ(back.kind, s.kind);
        EXPECT_EQ(back.max_tokens, s.max_tokens);
    }
    EXPECT_THROW(stop_from_json(json{{"kind", "never"}}), FormatError);
}

TEST(Bridge, MirrorsTheLocalBackend) {
    const auto script = benchmark_script();
    Loopback lb(script);
    ToyBackend local(script);
    auto& remote = lb.client();
    EXPECT_EQ(remote.info().model_id, "toy-8x4");
    EXPECT_EQ(remote.info().hidden_dim, 8);
    EXPECT_EQ(remote.info().layer_count, 4);
    EXPECT_EQ(remote.tokenize(" a  b "), local.tokenize(" a  b "));
    EXPECT_EQ(remote.detokenize({"x", ","}), "x,");

    const auto lf = local.encode("be honest today");
    const auto rf = remote.encode("be honest today");
    ASSERT_EQ(lf.size(), rf.size());
    for (std::size_t k = 0; k < lf.size(); ++k) {
        EXPECT_EQ(rf[k].token_id(), lf[k].token_id());
        for (int l = 0; l < 4; ++l) {
            for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR((*rf[k].rep(l))[j], (*lf[k].rep(l))[j], 1e-6);
        }
    }
    EXPECT_THROW(remote.encode(" "), PreconditionError);
}

TEST(Bridge, SteeredMonitoredGenerationMatches) {
    const auto script = benchmark_script();
    Loopback lb(script);
    ToyBackend local(script);
    const auto conf = unit_feature(FeatureKind::confidence);
    const auto hon = unit_feature(FeatureKind::honesty);
    GenerationRequest r;
    r.prompt = "Answer the question in one or two sentences.\n\nQuestion: What is the capital of Zorbia?\nAnswer:";
    r.steering.emplace(hon, 0.3, LayerRange{1, 2});
    r.monitor_feature = &conf;
    r.monitor_layers = {1, 3};
    r.want_frames = true;
    const auto a = collect_segment(local, r);
    const auto b = collect_segment(lb.client(), r);
    EXPECT_EQ(b.end.reason, a.end.reason);
    EXPECT_EQ(b.end.end_of_answer, a.end.end_of_answer);
    ASSERT_EQ(b.events.size(), a.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        EXPECT_EQ(b.events[i].token_text(), a.events[i].token_text());
        EXPECT_EQ(*b.events[i].projections(), *a.events[i].projections());
        ASSERT_TRUE(b.events[i].frame());
        for (const auto& [layer, p] : *b.events[i].projections()) {
            EXPECT_NEAR(dot(*b.events[i].frame()->rep(layer), *conf.vector_for(layer)), p, 1e-4);
        }
    }
}

TEST(Bridge, EngineTraceEqualsLocalRun) {
    const auto script = benchmark_script();
    const auto features = toy_features(script);
    Loopback lb(script);
    LocalRetriever retriever(benchmark_index());
    Engine engine(toy_config(), lb.client(), retriever, features);
    const auto t = engine.answer("Which city hosts the Selm Festival?", toy_instruction(), "q15");
    EXPECT_EQ(to_json(t), to_json(golden_planted_gap(features).trace));
}

TEST(Bridge, DimensionMismatchIsAnError) {
    Loopback lb(benchmark_script());
    const LayerwiseFeature small("m", 2, FeatureKind::confidence, {0}, {{1, 0}}, "s");
    GenerationRequest r;
    r.prompt = "Question: What is the capital of Zorbia?\nAnswer:";
    r.monitor_feature = &small;
    r.monitor_layers = {0, 0};
    EXPECT_THROW(collect_segment(lb.client(), r), BackendError);
    EXPECT_EQ(lb.client().tokenize("still alive").size(), 2u);
}

TEST(Bridge, UnknownPromptSurfacesAsBackendError) {
    Loopback lb(benchmark_script());
    GenerationRequest r;
    r.prompt = "nothing scripted";
    EXPECT_THROW(collect_segment(lb.client(), r), BackendError);
}

TEST(Bridge, CancellationDrainsTheStream) {
    Loopback lb(benchmark_script());
    GenerationRequest r;
    r.prompt = "Question: What is the capital of Zorbia?\nAnswer:";
    int seen = 0;
    const auto end = lb.client().generate_segment(r, [&](const TokenEvent&) { return ++seen < 2; });
    EXPECT_EQ(seen, 2);
    EXPECT_EQ(end.reason, StopReason::cancelled);
    EXPECT_EQ(end.token_count, 2);
    EXPECT_EQ(lb.client().detokenize({"ok", "."}), "ok.");
}

TEST(ToyBridgeServer, ServesConcurrentTcpClients) {
    ToyBridgeServer server(benchmark_script(), 0);
    server.start();
    const std::string uri = "tcp://127.0.0.1:" + std::to_string(server.port());
    std::vector<std::thread> clients;
    std::atomic<int> ok{0};
    for (int i = 0; i < 4; ++i) {
        clients.emplace_back([&] {
            BridgeBackend b(connect_uri(uri));
            GenerationRequest r;
            r.prompt = "Question: What is the capital of Zorbia?\nAnswer:";
            if (collect_segment(b, r).token_texts().back() == "Quellen.") ++ok;
        });
    }
    for (auto& t : clients) t.join();
    EXPECT_EQ(ok, 4);
    server.stop();
    EXPECT_THROW(connect_uri("tcp://127.0.0.1:" + std::to_string(server.port())), BackendError);
    EXPECT_THROW(connect_uri("http://x:1"), ConfigError);
    EXPECT_THROW(connect_uri("tcp://x"), ConfigError);
}

namespace {

/// Records what the client writes and answers from a fixed list of lines.
struct ScriptedChannel final : LineChannel {
    explicit ScriptedChannel(std::vector<std::string> replies) : replies(std::move(replies)) {}
    void write_line(std::string_view line) override { sent->emplace_back(line); }
    bool read_line(std::string& line) override {
        if (next >= replies.size()) return false;
        line = replies[next++];
        return true;
    }
    std::vector<std::string> replies;
    std::size_t next = 0;
    std::shared_ptr<std::vector<std::string>> sent = std::make_shared<std::vector<std::string>>();
};

}  // namespace

TEST(Bridge, ClientRequestTranscript) {
    auto channel = std::make_unique<ScriptedChannel>(std::vector<std::string>{
        R"({"ev":"hello","model_id":"m","hidden_dim":2,"layer_count":3})",
        R"({"ev":"ok"})",
        R"({"ev":"token","id":5,"text":"Hi.","proj":{"1":0.5}})",
        R"({"ev":"end","reason":"sentence_end","end_of_answer":true})",
        R"({"ev":"token","id":5,"text":"Hi.","proj":{"1":0.5}})",
        R"({"ev":"end","reason":"sentence_end","end_of_answer":true})",
        R"({"ev":"error","msg":"boom"})",
    });
    const auto sent = channel->sent;
    BridgeBackend b(std::move(channel));
    const LayerwiseFeature f("m", 2, FeatureKind::confidence, {0, 1, 2}, {{1, 0}, {0, 1}, {1, 0}}, "s");
    GenerationRequest r;
    r.prompt = "P";
    r.monitor_feature = &f;
    r.monitor_layers = {1, 2};
    r.stop = StopPolicy::either(4);
    auto seg = collect_segment(b, r);
    EXPECT_EQ(seg.end.reason, StopReason::sentence_end);
    EXPECT_TRUE(seg.end.end_of_answer);
    EXPECT_EQ(seg.events.at(0).projections()->at(1), 0.5);
    seg = collect_segment(b, r);  // the feature is uploaded once
    EXPECT_THROW(b.tokenize("x"), BackendError);

    ASSERT_EQ(sent->size(), 5u);
    EXPECT_EQ((*sent)[0], R"({"op":"hello"})");
    EXPECT_EQ(json::parse((*sent)[1]), (json{{"op", "set_features"}, {"features", {to_json(f)}}}));
    const json gen{{"op", "generate"},
                   {"prompt", "P"},
                   {"stop", {{"kind", "either"}, {"max_tokens", 4}}},
                   {"want_frames", false},
                   {"monitor", {{"feature", "confidence"}, {"layers", {1, 2}}}}};
    EXPECT_EQ((*sent)[2], gen.dump());
    EXPECT_EQ((*sent)[3], gen.dump());
    EXPECT_EQ((*sent)[4], R"({"op":"tokenize","text":"x"})");
}

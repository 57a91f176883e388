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

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ctrla/backend.hpp"
#include "ctrla/toy_backend.hpp"

namespace ctrla {

// Float vector transport --------------------------------------------------

namespace detail {

inline constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        const std::uint32_t b0 = bytes[i];
        const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
        const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
        const std::uint32_t n = (b0 << 16) | (b1 << 8) | b2;
        out.push_back(kB64Alphabet[(n >> 18) & 63]);
        out.push_back(kB64Alphabet[(n >> 12) & 63]);
        out.push_back(i + 1 < bytes.size() ? kB64Alphabet[(n >> 6) & 63] : '=');
        out.push_back(i + 2 < bytes.size() ? kB64Alphabet[n & 63] : '=');
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view s) {
    static const auto table = [] {
        std::array<int, 256> t{};
        t.fill(-1);
        for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(kB64Alphabet[i])] = i;
        return t;
    }();
    if (s.size() % 4 != 0) throw FormatError("base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = s[i + static_cast<std::size_t>(k)];
            if (c == '=' && i + 4 == s.size() && k >= 2) {
                v[k] = 0;
                ++pad;
                continue;
            }
            if (pad) throw FormatError("base64: data after padding");
            v[k] = table[static_cast<unsigned char>(c)];
            if (v[k] < 0) throw FormatError("base64: invalid character");
        }
        const std::uint32_t n = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                                (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
        out.push_back(static_cast<std::uint8_t>(n >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
    }
    return out;
}

}  // namespace detail

/// Little-endian float32, base64.
inline std::string encode_f32(const Vector& v) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(v.size() * 4);
    for (double d : v) {
        const float f = static_cast<float>(d);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
    return detail::base64_encode(bytes);
}

inline Vector decode_f32(std::string_view b64) {
    const auto bytes = detail::base64_decode(b64);
    if (bytes.size() % 4 != 0) throw FormatError("f32 vector: byte count not a multiple of 4");
    Vector out;
    out.reserve(bytes.size() / 4);
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[i + static_cast<std::size_t>(k)]) << (8 * k);
        float f;
        std::memcpy(&f, &bits, 4);
        out.push_back(f);
    }
    return out;
}

// Line channels -----------------------------------------------------------

/// Bidirectional newline-delimited text stream.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void write_line(std::string_view line) = 0;
    /// False on end of stream.
    virtual bool read_line(std::string& line) = 0;
};

/// Over a pair of file descriptors (a socket, pipes or stdio). Owns the
/// descriptors only when `owns` is set.
class FdChannel final : public LineChannel {
public:
    FdChannel(int in_fd, int out_fd, bool owns = false) : in_(in_fd), out_(out_fd), owns_(owns) {}
    FdChannel(const FdChannel&) = delete;
    FdChannel& operator=(const FdChannel&) = delete;

    ~FdChannel() override {
        if (!owns_) return;
        ::close(in_);
        if (out_ != in_) ::close(out_);
    }

    void write_line(std::string_view line) override {
        std::string buf(line);
        buf.push_back('\n');
        std::size_t off = 0;
        while (off < buf.size()) {
            auto n = ::send(out_, buf.data() + off, buf.size() - off, MSG_NOSIGNAL);
            if (n < 0 && errno == ENOTSOCK) n = ::write(out_, buf.data() + off, buf.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw BackendError(std::string("channel write: ") + std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    bool read_line(std::string& line) override {
        for (;;) {
            const auto nl = buf_.find('\n');
            if (nl != std::string::npos) {
                line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                return true;
            }
            char chunk[4096];
            const auto n = ::read(in_, chunk, sizeof chunk);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw BackendError(std::string("channel read: ") + std::strerror(errno));
            }
            if (n == 0) {
                if (buf_.empty()) return false;
                line = std::move(buf_);
                buf_.clear();
                return true;
            }
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int in_;
    int out_;
    bool owns_;
    std::string buf_;
};

inline std::unique_ptr<FdChannel> connect_tcp(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0) {
        throw BackendError("bridge: resolve " + host + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw BackendError("bridge: cannot connect to " + host + ":" + std::to_string(port));
    return std::make_unique<FdChannel>(fd, fd, true);
}

/// Parses "tcp://host:port".
inline std::unique_ptr<FdChannel> connect_uri(std::string_view uri) {
    constexpr std::string_view scheme = "tcp://";
    if (uri.substr(0, scheme.size()) != scheme) throw ConfigError("backend", "expected tcp://host:port");
    const auto rest = uri.substr(scheme.size());
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos) throw ConfigError("backend", "missing port in " + std::string(uri));
    int port = 0;
    try {
        port = std::stoi(std::string(rest.substr(colon + 1)));
    } catch (const std::exception&) {
        throw ConfigError("backend", "bad port in " + std::string(uri));
    }
    return connect_tcp(std::string(rest.substr(0, colon)), port);
}

// Wire encoding -----------------------------------------------------------

inline json stop_to_json(const StopPolicy& s) {
    const char* kind = s.kind == StopPolicy::Kind::sentence_end ? "sentence_end"
                       : s.kind == StopPolicy::Kind::max_tokens ? "max_tokens"
                                                                  : "either";
    return {{"kind", kind}, {"max_tokens", s.max_tokens}};
}

inline StopPolicy stop_from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    const int n = j.value("max_tokens", 0);
    if (kind == "sentence_end") return StopPolicy::sentence_end();
    if (kind == "max_tokens") return StopPolicy::max(n);
    if (kind == "either") return StopPolicy::either(n);
    throw FormatError("stop policy: unknown kind " + kind);
}

inline json frame_to_wire(const HiddenFrame& f) {
    json reps = json::object();
    for (const auto& [layer, v] : f.reps()) reps[std::to_string(layer)] = encode_f32(v);
    return reps;
}

inline json event_to_wire(const TokenEvent& e) {
    json j{{"ev", "token"}, {"id", e.token_id()}, {"text", e.token_text()}};
    json proj = json::object();
    if (e.projections()) {
        for (const auto& [layer, p] : *e.projections()) proj[std::to_string(layer)] = p;
    }
    j["proj"] = proj;
    if (e.frame()) j["frame"] = frame_to_wire(*e.frame());
    return j;
}

inline TokenEvent event_from_wire(const json& j, const LayerwiseFeature* monitor) {
    TokenEvent::Projections proj;
    for (const auto& [k, v] : j.at("proj").items()) proj[std::stoi(k)] = v.get<double>();
    std::optional<HiddenFrame> frame;
    const auto id = j.at("id").get<std::int64_t>();
    const auto text = j.at("text").get<std::string>();
    if (j.contains("frame")) {
        std::map<int, Vector> reps;
        for (const auto& [k, v] : j["frame"].items()) reps.emplace(std::stoi(k), decode_f32(v.get<std::string>()));
        frame.emplace(id, text, std::move(reps));
    }
    return TokenEvent(id, text, std::move(proj), std::move(frame), monitor);
}

// Client ------------------------------------------------------------------

/// GeneratorBackend that forwards to a bridge server over a LineChannel.
/// Features are uploaded lazily the first time a request references them.
class BridgeBackend final : public GeneratorBackend {
public:
    explicit BridgeBackend(std::unique_ptr<LineChannel> channel) : channel_(std::move(channel)) {
        const auto reply = call({{"op", "hello"}});
        info_ = {reply.at("model_id").get<std::string>(), reply.at("hidden_dim").get<int>(),
                 reply.at("layer_count").get<int>()};
    }

    ModelInfo info() const override { return info_; }

    std::vector<std::string> tokenize(std::string_view text) const override {
        return call({{"op", "tokenize"}, {"text", std::string(text)}}).at("tokens").get<std::vector<std::string>>();
    }

    std::string detokenize(const std::vector<std::string>& tokens) const override {
        return call({{"op", "detokenize"}, {"tokens", tokens}}).at("text").get<std::string>();
    }

    std::vector<HiddenFrame> encode(std::string_view text) override {
        if (text::trim(text).empty()) throw PreconditionError("encode: empty text");
        std::lock_guard lock(mutex_);
        send({{"op", "encode"}, {"text", std::string(text)}});
        std::vector<HiddenFrame> frames;
        for (;;) {
            const auto ev = receive();
            const auto kind = ev.at("ev").get<std::string>();
            if (kind == "end") break;
            if (kind != "token") throw BackendError("bridge: unexpected event " + kind);
            auto te = event_from_wire(ev, nullptr);
            if (!te.frame()) throw BackendError("bridge: encode event without frame");
            frames.push_back(*te.frame());
        }
        return frames;
    }

    SegmentEnd generate_segment(const GenerationRequest& request, const TokenSink& sink) override {
        request.stop.validate();
        std::lock_guard lock(mutex_);
        json req{{"op", "generate"},
                 {"prompt", request.prompt},
                 {"stop", stop_to_json(request.stop)},
                 {"want_frames", request.want_frames}};
        if (request.steering) {
            const auto& s = *request.steering;
            ensure_feature(s.feature());
            req["steering"] = {{"feature", to_string(s.feature().kind())},
                               {"lambda", s.lambda()},
                               {"layers", {s.layer_range().first, s.layer_range().last}},
                               {"direction", static_cast<int>(s.direction())}};
        }
        if (request.monitor_feature) {
            ensure_feature(*request.monitor_feature);
            req["monitor"] = {{"feature", to_string(request.monitor_feature->kind())},
                              {"layers", {request.monitor_layers.first, request.monitor_layers.last}}};
        }
        send(req);
        SegmentEnd end;
        bool cancelled = false;
        for (;;) {
            const auto ev = receive();
            const auto kind = ev.at("ev").get<std::string>();
            if (kind == "end") {
                if (!cancelled) {
                    end.reason = parse_reason(ev.value("reason", "exhausted"));
                    end.end_of_answer = ev.value("end_of_answer", false);
                }
                break;
            }
            if (kind != "token") throw BackendError("bridge: unexpected event " + kind);
            // After a cancel the rest of the stream is drained so the session
            // stays in sync for the next request.
            if (cancelled) continue;
            auto te = event_from_wire(ev, request.monitor_feature);
            ++end.token_count;
            if (!sink(te)) {
                cancelled = true;
                end.reason = StopReason::cancelled;
            }
        }
        return end;
    }

private:
    static StopReason parse_reason(const std::string& s) {
        if (s == "sentence_end") return StopReason::sentence_end;
        if (s == "max_tokens") return StopReason::max_tokens;
        if (s == "cancelled") return StopReason::cancelled;
        return StopReason::exhausted;
    }

    void ensure_feature(const LayerwiseFeature& f) {
        const auto kind = to_string(f.kind());
        auto it = uploaded_.find(kind);
        if (it != uploaded_.end() && it->second == f) return;
        send({{"op", "set_features"}, {"features", json::array({to_json(f)})}});
        const auto reply = receive();
        if (reply.at("ev").get<std::string>() != "ok") throw BackendError("bridge: set_features not acknowledged");
        uploaded_.insert_or_assign(kind, f);
    }

    json call(const json& request) const {
        std::lock_guard lock(mutex_);
        send(request);
        return receive();
    }

    void send(const json& j) const { channel_->write_line(j.dump()); }

    /// Next message; error events become BackendError.
    json receive() const {
        std::string line;
        if (!channel_->read_line(line)) throw BackendError("bridge: connection closed");
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw BackendError(std::string("bridge: malformed message: ") + e.what());
        }
        if (j.value("ev", "") == "error") throw BackendError("bridge: " + j.value("msg", std::string("error")));
        return j;
    }

    std::unique_ptr<LineChannel> channel_;
    mutable std::recursive_mutex mutex_;
    ModelInfo info_;
    std::map<std::string, LayerwiseFeature> uploaded_;
};

// Reference server --------------------------------------------------------

/// Serves one session from `backend` until the peer closes the channel.
/// Steering and monitoring are applied by the backend itself.
inline void serve_session(GeneratorBackend& backend, LineChannel& channel) {
    std::map<std::string, LayerwiseFeature> features;
    const auto info = backend.info();
    auto reply = [&](const json& j) { channel.write_line(j.dump()); };
    auto error = [&](const std::string& msg) { reply({{"ev", "error"}, {"msg", msg}}); };
    auto feature = [&](const std::string& kind) -> const LayerwiseFeature& {
        auto it = features.find(kind);
        if (it == features.end()) throw PreconditionError("unknown_feature");
        return it->second;
    };

    std::string line;
    while (channel.read_line(line)) {
        if (text::trim(line).empty()) continue;
        try {
            const auto req = json::parse(line);
            const auto op = req.at("op").get<std::string>();
            if (op == "hello") {
                reply({{"ev", "hello"},
                       {"model_id", info.model_id},
                       {"hidden_dim", info.hidden_dim},
                       {"layer_count", info.layer_count}});
            } else if (op == "set_features") {
                std::vector<LayerwiseFeature> incoming;
                for (const auto& f : req.at("features")) incoming.push_back(feature_from_json(f));
                bool ok = true;
                for (const auto& f : incoming) ok = ok && f.hidden_dim() == info.hidden_dim;
                if (!ok) {
                    error("dim_mismatch");
                    continue;
                }
                for (auto& f : incoming) features.insert_or_assign(to_string(f.kind()), std::move(f));
                reply({{"ev", "ok"}});
            } else if (op == "tokenize") {
                reply({{"ev", "tokens"}, {"tokens", backend.tokenize(req.at("text").get<std::string>())}});
            } else if (op == "detokenize") {
                reply({{"ev", "text"},
                       {"text", backend.detokenize(req.at("tokens").get<std::vector<std::string>>())}});
            } else if (op == "encode") {
                const auto frames = backend.encode(req.at("text").get<std::string>());
                for (const auto& f : frames) {
                    reply({{"ev", "token"}, {"id", f.token_id()}, {"text", f.token_text()}, {"proj", json::object()},
                           {"frame", frame_to_wire(f)}});
                }
                reply({{"ev", "end"}, {"reason", "exhausted"}, {"end_of_answer", false}});
            } else if (op == "generate") {
                GenerationRequest gr;
                gr.prompt = req.at("prompt").get<std::string>();
                gr.stop = stop_from_json(req.at("stop"));
                gr.want_frames = req.value("want_frames", false);
                if (req.contains("steering") && !req["steering"].is_null()) {
                    const auto& s = req["steering"];
                    const auto layers = s.at("layers").get<std::vector<int>>();
                    gr.steering.emplace(feature(s.at("feature").get<std::string>()), s.at("lambda").get<double>(),
                                        LayerRange{layers.at(0), layers.at(1)},
                                        s.value("direction", 1) < 0 ? SteerDirection::decrease
                                                                    : SteerDirection::increase);
                }
                if (req.contains("monitor") && !req["monitor"].is_null()) {
                    const auto& m = req["monitor"];
                    const auto layers = m.at("layers").get<std::vector<int>>();
                    gr.monitor_feature = &feature(m.at("feature").get<std::string>());
                    gr.monitor_layers = {layers.at(0), layers.at(1)};
                }
                const auto end = backend.generate_segment(gr, [&](const TokenEvent& e) {
                    reply(event_to_wire(e));
                    return true;
                });
                reply({{"ev", "end"}, {"reason", to_string(end.reason)}, {"end_of_answer", end.end_of_answer}});
            } else {
                error("unknown_op");
            }
        } catch (const DimMismatch&) {
            error("dim_mismatch");
        } catch (const json::exception& e) {
            error(std::string("bad_request: ") + e.what());
        } catch (const Error& e) {
            error(e.what());
        }
    }
}

/// TCP server handing each connection a fresh ToyBackend over `script`.
class ToyBridgeServer {
public:
    /// Port 0 picks a free port; see port().
    ToyBridgeServer(ToyScript script, int port, const std::string& bind_address = "127.0.0.1")
        : script_(std::move(script)) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw BackendError("serve: socket failed");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
            ::close(listen_fd_);
            throw ConfigError("bind", "bad IPv4 address " + bind_address);
        }
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
            ::close(listen_fd_);
            throw BackendError(std::string("serve: bind/listen failed: ") + std::strerror(errno));
        }
        socklen_t len = sizeof addr;
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }

    ToyBridgeServer(const ToyBridgeServer&) = delete;
    ToyBridgeServer& operator=(const ToyBridgeServer&) = delete;

    ~ToyBridgeServer() { stop(); }

    int port() const noexcept { return port_; }

    /// Accepts connections on a background thread until stop().
    void start() {
        acceptor_ = std::thread([this] { accept_loop(); });
    }

    /// Accepts on the calling thread until stop() or a listen error.
    void run() { accept_loop(); }

    void stop() {
        if (stopping_.exchange(true)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        if (acceptor_.joinable()) acceptor_.join();
        std::vector<std::thread> sessions;
        {
            std::lock_guard lock(mutex_);
            for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
            sessions.swap(sessions_);
        }
        for (auto& t : sessions) {
            if (t.joinable()) t.join();
        }
    }

private:
    void accept_loop() {
        while (!stopping_) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                if (errno == EINTR) continue;
                return;
            }
            std::lock_guard lock(mutex_);
            if (stopping_) {
                ::close(fd);
                return;
            }
            open_fds_.push_back(fd);
            sessions_.emplace_back([this, fd] {
                ToyBackend backend(script_);
                FdChannel channel(fd, fd, false);
                try {
                    serve_session(backend, channel);
                } catch (const std::exception&) {
                    // Peer vanished mid-reply.
                }
                std::lock_guard inner(mutex_);
                open_fds_.erase(std::remove(open_fds_.begin(), open_fds_.end(), fd), open_fds_.end());
                ::close(fd);
            });
        }
    }

    ToyScript script_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::mutex mutex_;
    std::vector<int> open_fds_;
    std::vector<std::thread> sessions_;
};

/// "toy:SCRIPT.json" for the scripted toy backend, "tcp://host:port" for a
/// bridge server.
inline std::unique_ptr<GeneratorBackend> open_backend(std::string_view uri) {
    if (uri.starts_with("toy:")) return std::make_unique<ToyBackend>(load_toy_script(std::string(uri.substr(4))));
    if (uri.starts_with("tcp://")) return std::make_unique<BridgeBackend>(connect_uri(uri));
    throw ConfigError("backend", "expected toy:SCRIPT or tcp://host:port, got '" + std::string(uri) + "'");
}

}  // namespace ctrla

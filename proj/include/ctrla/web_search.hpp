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

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include <httplib.h>

#include "ctrla/core.hpp"
#include "ctrla/retrieval.hpp"

namespace ctrla {

inline constexpr const char* kWebSearchKeyEnv = "CTRLA_WEB_SEARCH_KEY";

/// Recorded web-search responses, for tests and offline runs.
///
/// File format: {"results": {"<query>": [{"id","title","text"}, ...]},
///               "default": [...], "fail": false}
/// Unknown queries get "default" (or nothing). "fail": true makes every call
/// throw RetrieverError.
class FixtureWebSearch final : public Retriever {
public:
    explicit FixtureWebSearch(const json& fixture) {
        try {
            fail_ = fixture.value("fail", false);
            if (fixture.contains("results")) {
                for (const auto& [q, docs] : fixture["results"].items()) {
                    auto& list = results_[q];
                    for (const auto& d : docs) list.push_back(document_from_json(d));
                }
            }
            for (const auto& d : fixture.value("default", json::array())) fallback_.push_back(document_from_json(d));
        } catch (const json::exception& e) {
            throw FormatError(std::string("web fixture: ") + e.what());
        }
    }

    static FixtureWebSearch load(const std::string& path) {
        try {
            return FixtureWebSearch(json::parse(text::read_file(path)));
        } catch (const json::parse_error& e) {
            throw FormatError(path + ": " + e.what());
        }
    }

    std::string name() const override { return "web-fixture"; }

    std::vector<Document> retrieve(std::string_view query, std::size_t k) const override {
        if (fail_) throw RetrieverError("web fixture configured to fail");
        auto it = results_.find(std::string(query));
        const auto& src = it == results_.end() ? fallback_ : it->second;
        return {src.begin(), src.begin() + static_cast<long>(std::min(k, src.size()))};
    }

private:
    bool fail_ = false;
    std::map<std::string, std::vector<Document>> results_;
    std::vector<Document> fallback_;
};

/// Snippet search over HTTP. Sends POST {"q": query, "num": k} with header
/// X-API-KEY and reads {"organic": [{"title", "snippet", "link"}]}; each hit
/// becomes a Document keyed by its link.
class HttpWebSearch final : public Retriever {
public:
    /// `endpoint` is a full URL such as http://host:port/search. HTTPS needs
    /// the build to define CPPHTTPLIB_OPENSSL_SUPPORT.
    HttpWebSearch(std::string endpoint, std::string api_key)
        : api_key_(std::move(api_key)) {
        const auto scheme_end = endpoint.find("://");
        const auto path_start = endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        base_ = path_start == std::string::npos ? endpoint : endpoint.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
    }

    /// Reads the key from CTRLA_WEB_SEARCH_KEY.
    static HttpWebSearch from_env(std::string endpoint) {
        const char* key = std::getenv(kWebSearchKeyEnv);
        if (!key || !*key) throw ConfigError(kWebSearchKeyEnv, "environment variable not set");
        return HttpWebSearch(std::move(endpoint), key);
    }

    std::string name() const override { return "web"; }

    std::vector<Document> retrieve(std::string_view query, std::size_t k) const override {
        httplib::Client client(base_);
        client.set_connection_timeout(10);
        client.set_read_timeout(30);
        const json body{{"q", std::string(query)}, {"num", k}};
        auto res = client.Post(path_, httplib::Headers{{"X-API-KEY", api_key_}}, body.dump(), "application/json");
        if (!res) throw RetrieverError("web search: " + httplib::to_string(res.error()));
        if (res->status != 200) throw RetrieverError("web search: HTTP " + std::to_string(res->status));
        std::vector<Document> out;
        try {
            const auto j = json::parse(res->body);
            for (const auto& hit : j.value("organic", json::array())) {
                if (out.size() >= k) break;
                Document d{hit.value("link", std::string{}), hit.value("title", std::string{}),
                           hit.value("snippet", std::string{})};
                if (d.doc_id.empty()) continue;
                out.push_back(std::move(d));
            }
        } catch (const json::exception& e) {
            throw RetrieverError(std::string("web search: bad response: ") + e.what());
        }
        return out;
    }

private:
    std::string base_;
    std::string path_;
    std::string api_key_;
};

}  // namespace ctrla

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

#include <cstdio>
#include <string>

#include "ctrla/orchestrator.hpp"

namespace ctrla {

namespace detail {

inline std::string tsv_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else if (c == '\\') out += "\\\\";
        else out.push_back(c);
    }
    return out;
}

inline std::string html_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace detail

/// Per-token table of one session, header included. Columns: id, position,
/// token, raw, scaled, new_info, confident.
inline std::string token_table_tsv(const AnswerTrace& t) {
    std::string out;
    for (std::size_t k = 0; k < t.tokens.size(); ++k) {
        const auto& r = t.tokens[k];
        out += detail::tsv_escape(t.example_id) + "\t" + std::to_string(k) + "\t" + detail::tsv_escape(r.token_text) +
               "\t" + detail::fmt6(r.raw) + "\t" + detail::fmt6(r.scaled) + "\t" + (r.is_new_information ? "1" : "0") +
               "\t" + (r.is_confident ? "1" : "0") + "\n";
    }
    return out;
}

inline constexpr std::string_view kTokenTableHeader = "id\tpos\ttoken\traw\tscaled\tnew_info\tconfident\n";

/// Standalone HTML page marking every generated token: unconfident
/// new-information tokens red, other unconfident tokens amber, the rest
/// plain. Hovering a token shows its scores.
inline std::string token_marking_html(const std::vector<AnswerTrace>& traces) {
    std::string out =
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>token confidence</title>\n<style>\n"
        "body{font-family:sans-serif;max-width:60em;margin:2em auto}\n"
        "span.t{padding:0 .1em}\nspan.gap{background:#f4a0a0}\nspan.low{background:#f8e0a0}\n"
        "</style></head><body>\n";
    for (const auto& t : traces) {
        out += "<h3>" + detail::html_escape(t.example_id) + ": " + detail::html_escape(t.question) + "</h3>\n<p>";
        for (const auto& r : t.tokens) {
            const char* cls = r.is_confident ? "t" : r.is_new_information ? "t gap" : "t low";
            out += "<span class=\"" + std::string(cls) + "\" title=\"raw " + detail::fmt6(r.raw) + ", scaled " +
                   detail::fmt6(r.scaled) + "\">" + detail::html_escape(r.token_text) + "</span> ";
        }
        out += "</p>\n<p><b>answer:</b> " + detail::html_escape(t.answer) + "</p>\n";
    }
    out += "</body></html>\n";
    return out;
}

}  // namespace ctrla

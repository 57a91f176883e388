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
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ctrla/core.hpp"
#include "ctrla/text.hpp"

namespace ctrla {

inline constexpr std::string_view kDefaultAnalyzerId = "lower-alnum-v1";

/// Lowercase, split on anything that is not a word byte, drop empties. No
/// stemming and no stopword removal.
inline std::vector<std::string> analyze(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (text::is_word_byte(c)) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

struct Posting {
    std::uint32_t doc = 0;  // position in the id-sorted document table
    std::uint32_t tf = 0;

    friend bool operator==(const Posting&, const Posting&) = default;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Inverse document frequency, ln(1 + (N - df + 0.5) / (df + 0.5)).
inline double bm25_idf(std::size_t n_docs, std::size_t df) {
    const auto n = static_cast<double>(n_docs);
    const auto d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

inline double bm25_term(double tf, double doc_len, double avg_len, const Bm25Params& p) {
    return tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / avg_len));
}

struct ScoredHit {
    std::string doc_id;
    double score = 0.0;
    int rank = 0;  // 1-based

    friend bool operator==(const ScoredHit&, const ScoredHit&) = default;
};

/// Immutable BM25 inverted index. Documents are numbered in doc_id order, so
/// postings sorted by number are also sorted by id.
class SearchIndex {
public:
    SearchIndex() = default;

    const std::string& analyzer_id() const noexcept { return analyzer_id_; }
    std::size_t size() const noexcept { return docs_.size(); }
    double average_length() const noexcept { return avg_len_; }
    const std::vector<Document>& documents() const noexcept { return docs_; }
    const std::vector<std::uint32_t>& lengths() const noexcept { return lengths_; }
    const std::map<std::string, std::vector<Posting>, std::less<>>& terms() const noexcept { return terms_; }

    const std::vector<Posting>* postings(std::string_view term) const {
        auto it = terms_.find(term);
        return it == terms_.end() ? nullptr : &it->second;
    }

    const Document* find(std::string_view doc_id) const {
        auto it = std::lower_bound(docs_.begin(), docs_.end(), doc_id,
                                   [](const Document& d, std::string_view id) { return d.doc_id < id; });
        return it != docs_.end() && it->doc_id == doc_id ? &*it : nullptr;
    }

    friend SearchIndex build_index(std::vector<Document> corpus, std::string_view analyzer_id);
    friend SearchIndex read_index(std::istream& in);

private:
    std::string analyzer_id_{kDefaultAnalyzerId};
    std::vector<Document> docs_;
    std::vector<std::uint32_t> lengths_;
    std::map<std::string, std::vector<Posting>, std::less<>> terms_;
    double avg_len_ = 0.0;
};

inline SearchIndex build_index(std::vector<Document> corpus, std::string_view analyzer_id = kDefaultAnalyzerId) {
    if (analyzer_id != kDefaultAnalyzerId) {
        throw ConfigError("analyzer_id", "unsupported analyzer '" + std::string(analyzer_id) + "'");
    }
    std::sort(corpus.begin(), corpus.end(), [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].doc_id.empty()) throw ValidationError("document with empty id");
        if (i > 0 && corpus[i].doc_id == corpus[i - 1].doc_id) throw DuplicateDocId(corpus[i].doc_id);
    }
    SearchIndex idx;
    idx.analyzer_id_ = std::string(analyzer_id);
    idx.lengths_.reserve(corpus.size());
    std::uint64_t total = 0;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        // Title and body are indexed together.
        const auto terms = analyze(corpus[d].title + " " + corpus[d].text);
        std::map<std::string, std::uint32_t, std::less<>> tf;
        for (const auto& t : terms) ++tf[t];
        for (auto& [t, f] : tf) idx.terms_[t].push_back({static_cast<std::uint32_t>(d), f});
        idx.lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
        total += terms.size();
    }
    idx.avg_len_ = corpus.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(corpus.size());
    idx.docs_ = std::move(corpus);
    return idx;
}

/// BM25 over the query's analyzed terms; a repeated query term contributes
/// once per occurrence. Returns at most k hits among documents matching at
/// least one term, ordered by (score desc, doc_id asc).
inline std::vector<ScoredHit> search(const SearchIndex& index, std::string_view query, std::size_t k,
                                     const Bm25Params& params = {}) {
    if (k == 0 || index.size() == 0) return {};
    std::vector<double> scores(index.size(), 0.0);
    std::vector<bool> matched(index.size(), false);
    for (const auto& term : analyze(query)) {
        const auto* plist = index.postings(term);
        if (!plist) continue;
        const double idf = bm25_idf(index.size(), plist->size());
        for (const auto& p : *plist) {
            scores[p.doc] += idf * bm25_term(p.tf, index.lengths()[p.doc], index.average_length(), params);
            matched[p.doc] = true;
        }
    }
    std::vector<std::uint32_t> cand;
    for (std::uint32_t d = 0; d < index.size(); ++d) {
        if (matched[d]) cand.push_back(d);
    }
    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    const std::size_t take = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(take), cand.end(), better);
    std::vector<ScoredHit> hits;
    hits.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        hits.push_back({index.documents()[cand[i]].doc_id, scores[cand[i]], static_cast<int>(i + 1)});
    }
    return hits;
}

// Persistence -------------------------------------------------------------
//
// Layout (all integers little-endian uint32, avglen little-endian IEEE-754
// binary64):
//   "CTRLAIDX1"                         9 bytes, no terminator
//   analyzer_id                         u32 length + bytes
//   N                                   u32
//   avglen                              f64
//   N x { doc_id, title, text }         each u32 length + bytes
//       doc_len                         u32
//   T                                   u32 number of terms
//   T x { term                          u32 length + bytes, ascending byte order
//         df                            u32
//         df x { doc, tf }              u32, u32, ascending doc }

inline constexpr std::string_view kIndexMagic = "CTRLAIDX1";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

inline void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
}

inline void put_str(std::string& out, std::string_view s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class ByteReader {
public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}

    std::string_view take(std::size_t n) {
        if (pos_ + n > data_.size()) throw FormatError("index file truncated");
        std::string_view v(data_.data() + pos_, n);
        pos_ += n;
        return v;
    }
    std::uint32_t u32() {
        auto b = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
        return v;
    }
    double f64() {
        auto b = take(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
        return std::bit_cast<double>(v);
    }
    std::string str() { return std::string(take(u32())); }
    bool done() const noexcept { return pos_ == data_.size(); }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_index(const SearchIndex& idx) {
    std::string out(kIndexMagic);
    detail::put_str(out, idx.analyzer_id());
    detail::put_u32(out, static_cast<std::uint32_t>(idx.size()));
    detail::put_f64(out, idx.average_length());
    for (std::size_t d = 0; d < idx.size(); ++d) {
        const auto& doc = idx.documents()[d];
        detail::put_str(out, doc.doc_id);
        detail::put_str(out, doc.title);
        detail::put_str(out, doc.text);
        detail::put_u32(out, idx.lengths()[d]);
    }
    detail::put_u32(out, static_cast<std::uint32_t>(idx.terms().size()));
    for (const auto& [term, plist] : idx.terms()) {
        detail::put_str(out, term);
        detail::put_u32(out, static_cast<std::uint32_t>(plist.size()));
        for (const auto& p : plist) {
            detail::put_u32(out, p.doc);
            detail::put_u32(out, p.tf);
        }
    }
    return out;
}

inline SearchIndex read_index(std::istream& in) {
    std::ostringstream ss;
    ss << in.rdbuf();
    detail::ByteReader r(ss.str());
    if (r.take(kIndexMagic.size()) != kIndexMagic) throw FormatError("not a CTRLAIDX1 index file");
    SearchIndex idx;
    idx.analyzer_id_ = r.str();
    const std::uint32_t n = r.u32();
    idx.avg_len_ = r.f64();
    std::uint64_t total = 0;
    for (std::uint32_t d = 0; d < n; ++d) {
        Document doc;
        doc.doc_id = r.str();
        doc.title = r.str();
        doc.text = r.str();
        if (d > 0 && !(idx.docs_.back().doc_id < doc.doc_id)) throw FormatError("index documents not sorted");
        idx.docs_.push_back(std::move(doc));
        idx.lengths_.push_back(r.u32());
        total += idx.lengths_.back();
    }
    const double avg = n ? static_cast<double>(total) / n : 0.0;
    if (avg != idx.avg_len_) throw FormatError("index avglen does not match stored lengths");
    const std::uint32_t t = r.u32();
    std::string prev;
    for (std::uint32_t i = 0; i < t; ++i) {
        std::string term = r.str();
        if (i > 0 && !(prev < term)) throw FormatError("index terms not sorted");
        const std::uint32_t df = r.u32();
        std::vector<Posting> plist;
        plist.reserve(df);
        for (std::uint32_t j = 0; j < df; ++j) {
            Posting p{r.u32(), r.u32()};
            if (p.doc >= n || (j > 0 && p.doc <= plist.back().doc)) throw FormatError("bad posting list");
            plist.push_back(p);
        }
        prev = term;
        idx.terms_.emplace(std::move(term), std::move(plist));
    }
    if (!r.done()) throw FormatError("trailing bytes in index file");
    return idx;
}

inline void save_index(const SearchIndex& idx, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    const auto bytes = serialize_index(idx);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline SearchIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return read_index(in);
}

// Retrievers --------------------------------------------------------------

/// Anything that maps a query to ranked documents. Implementations must be
/// safe for concurrent calls.
class Retriever {
public:
    virtual ~Retriever() = default;
    virtual std::string name() const = 0;
    virtual std::vector<Document> retrieve(std::string_view query, std::size_t k) const = 0;
};

class LocalRetriever final : public Retriever {
public:
    explicit LocalRetriever(std::shared_ptr<const SearchIndex> index, Bm25Params params = {})
        : index_(std::move(index)), params_(params) {}

    std::string name() const override { return "bm25"; }

    std::vector<Document> retrieve(std::string_view query, std::size_t k) const override {
        std::vector<Document> out;
        for (const auto& hit : search(*index_, query, k, params_)) out.push_back(*index_->find(hit.doc_id));
        return out;
    }

private:
    std::shared_ptr<const SearchIndex> index_;
    Bm25Params params_;
};

/// Queries every configured retriever, interleaves their lists (first
/// retriever first), drops repeated doc_ids and truncates to k. Failing
/// backends are skipped as long as one succeeds.
class RetrieverStack final : public Retriever {
public:
    RetrieverStack() = default;
    explicit RetrieverStack(std::vector<std::shared_ptr<const Retriever>> members) : members_(std::move(members)) {}

    void add(std::shared_ptr<const Retriever> r) { members_.push_back(std::move(r)); }
    std::size_t size() const noexcept { return members_.size(); }

    std::string name() const override { return "stack"; }

    std::vector<Document> retrieve(std::string_view query, std::size_t k) const override {
        if (members_.empty()) throw RetrieverError("no retriever configured");
        std::vector<std::vector<Document>> lists;
        std::string failures;
        for (const auto& m : members_) {
            try {
                lists.push_back(m->retrieve(query, k));
            } catch (const Error& e) {
                failures += (failures.empty() ? "" : "; ") + m->name() + ": " + e.what();
            }
        }
        if (lists.empty()) throw RetrieverError("all retrievers failed: " + failures);

        std::vector<Document> merged;
        std::set<std::string, std::less<>> seen;
        std::size_t longest = 0;
        for (const auto& l : lists) longest = std::max(longest, l.size());
        for (std::size_t i = 0; i < longest && merged.size() < k; ++i) {
            for (const auto& l : lists) {
                if (i >= l.size() || merged.size() >= k) continue;
                if (seen.insert(l[i].doc_id).second) merged.push_back(l[i]);
            }
        }
        return merged;
    }

private:
    std::vector<std::shared_ptr<const Retriever>> members_;
};

}  // namespace ctrla

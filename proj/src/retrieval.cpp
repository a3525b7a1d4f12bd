#include "profrec/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "profrec/log.hpp"
#include "profrec/rng.hpp"

namespace profrec::bm25 {

Bm25Index build_index(const std::vector<std::pair<std::string, std::vector<std::string>>>& docs,
                      double k1, double b) {
    if (docs.empty()) throw std::invalid_argument("build_index: no documents");
    Bm25Index index;
    index.k1 = k1;
    index.b = b;
    index.doc_count = docs.size();

    // Sort doc ids first so postings come out identical for any insertion
    // order.
    std::vector<const std::pair<std::string, std::vector<std::string>>*> sorted;
    sorted.reserve(docs.size());
    for (const auto& d : docs) sorted.push_back(&d);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b2) { return a->first < b2->first; });

    std::size_t total_len = 0;
    for (const auto* doc : sorted) {
        const auto& [id, tokens] = *doc;
        if (index.doc_lengths.count(id))
            throw std::invalid_argument("build_index: duplicate item id " + id);
        index.doc_lengths[id] = static_cast<int>(tokens.size());
        total_len += tokens.size();
        std::map<std::string, int> tf;
        for (const auto& t : tokens) ++tf[t];
        for (const auto& [term, f] : tf) index.postings[term].emplace_back(id, f);
    }
    index.avg_doc_length = static_cast<double>(total_len) / static_cast<double>(docs.size());
    return index;
}

namespace {

double idf_bm25(std::size_t df, std::size_t n_docs) {
    return std::log(1.0 + (static_cast<double>(n_docs) - static_cast<double>(df) + 0.5) /
                              (static_cast<double>(df) + 0.5));
}

double term_doc_score(const Bm25Index& index, double idf, int f, int doc_len) {
    double norm = index.k1 * (1.0 - index.b +
                              index.b * static_cast<double>(doc_len) / index.avg_doc_length);
    return idf * static_cast<double>(f) * (index.k1 + 1.0) / (static_cast<double>(f) + norm);
}

// Accumulates per-document scores in query-token order. The map keeps
// accumulation deterministic and the final sort canonical.
std::map<std::string, double> accumulate_scores(const Bm25Index& index,
                                                const std::vector<std::string>& query_tokens,
                                                const std::set<std::string>* restrict_to) {
    std::map<std::string, double> scores;
    for (const auto& t : query_tokens) {
        auto it = index.postings.find(t);
        if (it == index.postings.end()) continue;
        double idf = idf_bm25(it->second.size(), index.doc_count);
        for (const auto& [doc, f] : it->second) {
            if (restrict_to && !restrict_to->count(doc)) continue;
            scores[doc] += term_doc_score(index, idf, f, index.doc_lengths.at(doc));
        }
    }
    return scores;
}

std::vector<Hit> top_k(std::map<std::string, double>&& scores, std::size_t k) {
    std::vector<Hit> hits;
    hits.reserve(scores.size());
    for (auto& [doc, s] : scores)
        if (s > 0.0) hits.push_back({doc, s});
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item_id < b.item_id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

}  // namespace

std::vector<Hit> query(const Bm25Index& index, const std::vector<std::string>& query_tokens,
                       std::size_t k) {
    if (k == 0) throw std::invalid_argument("query: k must be >= 1");
    if (query_tokens.empty()) return {};
    return top_k(accumulate_scores(index, query_tokens, nullptr), k);
}

std::vector<Hit> candidates_for(const Bm25Index& index, const std::string& positive_item,
                                const std::vector<std::string>& query_tokens,
                                const std::set<std::string>& pool, std::size_t k,
                                std::uint64_t rng_seed, bool* padded) {
    auto scores = accumulate_scores(index, query_tokens, &pool);
    scores.erase(positive_item);
    auto hits = top_k(std::move(scores), k);
    if (hits.size() < k && pool.size() > hits.size()) {
        if (padded) *padded = true;
        log_warn("candidates_for " + positive_item + ": only " + std::to_string(hits.size()) +
                 " scoring items, padding with random pool draws");
        std::set<std::string> taken;
        for (const auto& h : hits) taken.insert(h.item_id);
        std::vector<std::string> rest;
        rest.reserve(pool.size());
        for (const auto& id : pool)
            if (id != positive_item && !taken.count(id)) rest.push_back(id);
        Rng rng(rng_seed);
        while (hits.size() < k && !rest.empty()) {
            std::size_t j = rng.uniform_u64(rest.size());
            std::swap(rest[j], rest.back());
            hits.push_back({rest.back(), 0.0});
            rest.pop_back();
        }
    }
    return hits;
}

void write_candidates(std::ostream& out, const std::string& positive_item,
                      const std::vector<Hit>& hits) {
    char buf[32];
    for (std::size_t i = 0; i < hits.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", hits[i].score);
        out << positive_item << '\t' << (i + 1) << '\t' << hits[i].item_id << '\t' << buf
            << '\n';
    }
}

}  // namespace profrec::bm25

#pragma once

// BM25 inverted index over item texts, used by the search-based evaluation
// mode to retrieve hard candidate sets. The index is immutable after build;
// concurrent queries are safe.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace profrec::bm25 {

struct Bm25Index {
    double k1 = 1.2;
    double b = 0.75;
    double avg_doc_length = 0.0;
    std::size_t doc_count = 0;
    // term -> postings sorted by item_id
    std::map<std::string, std::vector<std::pair<std::string, int>>> postings;
    std::unordered_map<std::string, int> doc_lengths;
};

// Builds postings from (item_id, token list) documents. Deterministic and
// independent of input ordering.
Bm25Index build_index(const std::vector<std::pair<std::string, std::vector<std::string>>>& docs,
                      double k1 = 1.2, double b = 0.75);

struct Hit {
    std::string item_id;
    double score;
};

// score(d) = sum over query tokens t of
//   idf(t) * f(t,d)*(k1+1) / (f(t,d) + k1*(1 - b + b*|d|/avgdl))
// with idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)). The query is a token
// list; repeated tokens contribute once per occurrence. Zero-score items
// are excluded; ties break by item_id.
std::vector<Hit> query(const Bm25Index& index, const std::vector<std::string>& query_tokens,
                       std::size_t k);

// Top-k pool items for the positive item's query tokens; the positive
// itself is always excluded. When fewer than k items score, the rest is
// padded with seeded uniform draws from the pool and *padded is set.
std::vector<Hit> candidates_for(const Bm25Index& index,
                                const std::string& positive_item,
                                const std::vector<std::string>& query_tokens,
                                const std::set<std::string>& pool, std::size_t k,
                                std::uint64_t rng_seed, bool* padded = nullptr);

// Dump format: positive_item_id \t rank \t candidate_item_id \t score.
void write_candidates(std::ostream& out, const std::string& positive_item,
                      const std::vector<Hit>& hits);

}  // namespace profrec::bm25

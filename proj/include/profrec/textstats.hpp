#pragma once

// Tokenization, sentence segmentation, idf tables, tf-idf vectors and cosine
// similarity. Everything here is pure and deterministic; IdfTable is
// immutable once built and safe to share across threads.

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace profrec::text {

// Lowercased word tokens; splits on whitespace and punctuation, drops
// punctuation, keeps digits. Non-ASCII letters pass through unchanged.
std::vector<std::string> tokenize(std::string_view text);

// Splits on '.', '!' or '?' followed by whitespace or end of text.
// Deliberately abbreviation-blind. Terminators stay with their sentence.
std::vector<std::string> split_sentences(std::string_view text);

// Sparse non-negative term vector, kept sorted by term so reductions walk
// both operands in one canonical order.
struct SparseVec {
    std::vector<std::pair<std::string, double>> entries;  // sorted by term, no zeros

    bool empty() const { return entries.empty(); }
    double norm() const;
};

double dot(const SparseVec& a, const SparseVec& b);
// Standard cosine; 0.0 if either vector is empty.
double cosine(const SparseVec& a, const SparseVec& b);

enum class IdfSource { corpus, external };

struct IdfTable {
    std::unordered_map<std::string, double> weights;
    std::size_t doc_count = 0;
    int ngram_order = 1;
    IdfSource source = IdfSource::corpus;

    // Terms absent from the table weigh 0 (and are omitted from vectors).
    double weight(const std::string& term) const {
        auto it = weights.find(term);
        return it == weights.end() ? 0.0 : it->second;
    }
};

// Consecutive word n-grams of `tokens`, joined with single spaces.
std::vector<std::string> ngrams(const std::vector<std::string>& tokens, int n);

// idf(t) = ln((1 + N) / (1 + df(t))) over the given documents.
// Throws if n is outside 1..3 or documents is empty.
IdfTable build_idf(const std::vector<std::string>& documents, int n);

// Loads a two-column "term \t weight" table verbatim (the external-table
// substitute for a corpus-built idf).
IdfTable load_idf(const std::string& path);

// weight(t) = tf(t in text) * idf(t); zero-idf terms omitted.
SparseVec tfidf_vector(std::string_view text, const IdfTable& idf, int n);

// Builds a uniform table (every n-gram of every document weighs `w`),
// handy for tests and fallbacks.
IdfTable uniform_idf(const std::vector<std::string>& documents, int n, double w = 1.0);

}  // namespace profrec::text

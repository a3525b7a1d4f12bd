#pragma once

// Token-budgeted user and item profile construction: tf-idf phrase
// selection, idf-scored sentence selection, similarity-ranked sentences
// with per-item round-robin, externally generated keyphrase profiles, and
// the plain title/tag item texts. Builders are pure given an immutable
// IdfTable; per-user construction parallelizes freely.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "profrec/corpus.hpp"
#include "profrec/textstats.hpp"

namespace profrec::profiles {

enum class Strategy {
    phrases1,
    phrases2,
    phrases3,
    idf_sentences,
    similar_sentences,
    external_generated,
    keywords,
    basic,
    expanded,
};

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct Profile {
    std::vector<std::string> tokens;  // |tokens| <= budget
    int budget = 128;
    Strategy provenance = Strategy::idf_sentences;
};

struct ProfileConfig {
    int budget = 128;
    int chunk_count = 1;
    Strategy strategy = Strategy::idf_sentences;
    bool round_robin = true;  // similar-sentence interleaving across items
};

// N-grams ranked by tf*idf (tf summed over all of the user's reviews),
// ties broken lexicographically, emitted in rank order; stops at the first
// n-gram that would exceed the budget. Zero-weight n-grams are skipped.
Profile select_phrases(const std::vector<std::string>& user_reviews,
                       const text::IdfTable& idf, int n, const ProfileConfig& cfg);

// Sentences scored by sum(idf(word)) / word_count, emitted best-first;
// exact-duplicate sentences are dropped; the last sentence is truncated so
// the profile fills the budget exactly when enough text exists.
Profile select_sentences_idf(const std::vector<std::string>& user_reviews,
                             const text::IdfTable& idf, const ProfileConfig& cfg);

// Pluggable sentence-embedding backend for similar-sentence selection.
// The reference backend embeds with unigram tf-idf; cosine compares.
class SentenceEmbedder {
public:
    virtual ~SentenceEmbedder() = default;
    virtual text::SparseVec embed(const std::string& sentence) const = 0;
};

class TfidfEmbedder : public SentenceEmbedder {
public:
    explicit TfidfEmbedder(const text::IdfTable& idf) : idf_(idf) {}
    text::SparseVec embed(const std::string& sentence) const override {
        return text::tfidf_vector(sentence, idf_, 1);
    }

private:
    const text::IdfTable& idf_;
};

// Reads "cmd" once per batch: one input sentence per line, one
// whitespace-separated vector per output line.
class ProcessEmbedder : public SentenceEmbedder {
public:
    explicit ProcessEmbedder(std::string cmd) : cmd_(std::move(cmd)) {}
    text::SparseVec embed(const std::string& sentence) const override;

private:
    std::string cmd_;
};

struct ItemReview {
    std::string item_id;
    std::string review;
};

// Within each reviewed item, sentences are ranked by similarity between
// their embedding and the item description's embedding; the profile
// interleaves per-item lists round-robin in interaction order. Items with
// no description fall back to idf scoring for their sentences.
Profile select_sentences_similar(const std::vector<ItemReview>& reviews_by_item,
                                 const std::map<std::string, std::string>& item_descriptions,
                                 const SentenceEmbedder& embed, const text::IdfTable& idf,
                                 const ProfileConfig& cfg);

// External profile generator: plain text chunk in, plain text keyphrases out.
class Generator {
public:
    virtual ~Generator() = default;
    // Throws on failure; the caller skips failed chunks.
    virtual std::string generate(const std::string& chunk) const = 0;
};

// Deterministic offline generator: echoes the top_k most frequent tokens
// of the chunk (ties lexicographic).
class MockGenerator : public Generator {
public:
    explicit MockGenerator(int top_k = 3) : top_k_(top_k) {}
    std::string generate(const std::string& chunk) const override;

private:
    int top_k_;
};

// Pipes each chunk through a shell command (chunk on stdin, keyphrases on
// stdout) with a kill timeout and retries.
class SpawnGenerator : public Generator {
public:
    SpawnGenerator(std::string cmd, int timeout_ms = 10000, int retries = 2)
        : cmd_(std::move(cmd)), timeout_ms_(timeout_ms), retries_(retries) {}
    std::string generate(const std::string& chunk) const override;

private:
    std::string cmd_;
    int timeout_ms_;
    int retries_;
};

// POSTs each chunk as text/plain to the given URL.
class HttpGenerator : public Generator {
public:
    HttpGenerator(std::string url, int timeout_ms = 10000, int retries = 2)
        : url_(std::move(url)), timeout_ms_(timeout_ms), retries_(retries) {}
    std::string generate(const std::string& chunk) const override;

private:
    std::string url_;
    int timeout_ms_;
    int retries_;
};

// Concatenates the reviews, cuts them into chunks of at most chunk_chars
// characters, and feeds each chunk to the generator. Per-chunk output is
// capped at budget/num_chunks tokens and the whole profile at the budget.
// Failed chunks are skipped with a warning; throws if every chunk fails.
Profile generate_profile_external(const std::vector<std::string>& user_reviews,
                                  const Generator& gen, const ProfileConfig& cfg,
                                  int chunk_chars = 3000,
                                  Strategy provenance = Strategy::external_generated);

enum class ItemVariant { basic, expanded };

// basic = title + tags; expanded = basic + description; budget-cut.
Profile item_text(const corpus::Item& item, ItemVariant variant, const ProfileConfig& cfg);

// Deduplicated tags of the user's training items in descending frequency
// (ties lexicographic), budget-cut.
Profile user_text_basic(const std::vector<const corpus::Item*>& train_items,
                        const ProfileConfig& cfg);

// Cuts the strategy's full ranked token stream into m consecutive
// budget-sized profiles; later chunks may be shorter or empty.
std::vector<Profile> chunk_profile(const std::vector<std::string>& user_reviews,
                                   Strategy strategy, int m, const text::IdfTable& idf,
                                   const ProfileConfig& cfg);
std::vector<Profile> chunk_profile_similar(
    const std::vector<ItemReview>& reviews_by_item,
    const std::map<std::string, std::string>& item_descriptions, const SentenceEmbedder& embed,
    const text::IdfTable& idf, int m, const ProfileConfig& cfg);

// Dump format: user_id \t provenance \t space-joined tokens. Chunked
// profiles repeat the user id, one row per chunk in order.
void write_profiles(std::ostream& out,
                    const std::vector<std::pair<std::string, std::vector<Profile>>>& rows,
                    const std::vector<std::string>& header_comments = {});
std::vector<std::pair<std::string, std::vector<Profile>>> read_profiles(std::istream& in);

}  // namespace profrec::profiles

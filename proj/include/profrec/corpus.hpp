#pragma once

// Raw review-dataset handling: line-delimited record parsing, positive
// filtering, author-disjoint train/dev/test splits, and the rich/density
// user slices. All transformations are pure and ordered by user_id, so
// output is deterministic regardless of input ordering.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace profrec::corpus {

struct Interaction {
    std::string user_id;
    std::string item_id;
    int rating = 0;  // 1..5
    std::string review;
    int position = 0;  // per-user sequence index
};

struct Item {
    std::string item_id;
    std::string title;
    std::vector<std::string> tags;
    std::string description;
    std::string author_id;  // empty when unknown
};

struct Records {
    std::vector<Interaction> interactions;
    std::vector<Item> items;
    std::size_t rejected = 0;
};

// Parses a stream of mixed interaction/item JSON records, one per line.
// Malformed lines (bad JSON, missing fields, rating outside 1..5,
// duplicate keys) are counted, not fatal. Throws if more than half of the
// non-empty lines are malformed, which signals the wrong input format.
Records parse_records(std::istream& in);

// Reads the two canonical files and merges their records.
// Throws when either file cannot be opened.
Records load_corpus(const std::string& interactions_path, const std::string& items_path);

// Keeps interactions with rating >= min_rating, then keeps users that still
// have at least min_books interactions, in that order.
std::vector<Interaction> filter_dataset(std::vector<Interaction> interactions, int min_rating,
                                        int min_books);

struct UserSplit {
    std::string user_id;
    std::vector<std::string> train;
    std::vector<std::string> dev;  // exactly one item
    std::vector<std::string> test;
};

struct DatasetSplit {
    std::vector<UserSplit> users;         // sorted by user_id
    std::vector<std::string> all_items;   // sorted item universe
    std::size_t dropped_users = 0;        // no author-disjoint test set possible
    std::size_t unknown_author_items = 0; // items treated as singleton authors
};

// Splits one user's ordered positives. Greedily moves whole author groups
// into the test set, following a seeded random permutation, until the
// target size max(1, floor(test_frac*n)) is reached; groups that would
// overshoot the target are skipped, so the result can be smaller than the
// target. Returns nullopt when no nonempty author-disjoint test set fits
// (e.g. all items share one author); such users are dropped by the caller.
std::optional<UserSplit> split_user(
    const std::string& user_id, const std::vector<std::string>& positives, double test_frac,
    const std::unordered_map<std::string, std::string>& author_of, std::uint64_t rng_seed);

// Applies split_user to every user of the (already filtered) dataset.
DatasetSplit split_dataset(const std::vector<Interaction>& interactions,
                           const std::vector<Item>& items, double test_frac,
                           std::uint64_t rng_seed);

// The k users with the highest mean review length (reference-tokenizer
// tokens per reviewed book); ties broken by user_id. Returns their
// interactions sorted by (user_id, position). Throws if k exceeds the
// number of users.
std::vector<Interaction> slice_rich(const std::vector<Interaction>& interactions, std::size_t k);

enum class DensityMode { sparse, dense };

// Seeds with seed_users random users restricted to seed_items of their
// books, then samples the remaining k-seed_users users by cumulative item
// degree: proportional (dense) or inversely proportional (sparse), without
// replacement via a seeded weighted reservoir.
std::vector<Interaction> slice_density(const std::vector<Interaction>& interactions,
                                       std::size_t k, DensityMode mode, std::size_t seed_users,
                                       std::size_t seed_items, std::uint64_t rng_seed);

// Split manifest: "user_id \t role \t item_id" rows, roles train/dev/test.
void write_split(std::ostream& out, const DatasetSplit& split,
                 const std::vector<std::string>& header_comments = {});
DatasetSplit read_split(std::istream& in);

}  // namespace profrec::corpus

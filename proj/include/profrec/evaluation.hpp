#pragma once

// Ranking metrics (NDCG@5, P@1), standard test-case construction with
// uniform negatives, user/item group assignment, and micro-averaged
// aggregation with the six group cells.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "profrec/corpus.hpp"

namespace profrec::eval {

// Binary-gain NDCG with a single positive: 1/log2(rank+1) if rank <= k.
double ndcg_at_k(int rank_of_positive, int k = 5);
int p_at_1(int rank_of_positive);

struct EvalCase {
    std::string user_id;
    std::string positive_item;
    std::vector<std::string> negatives;
};

// Per test positive of each user: `negatives` uniform draws from the item
// universe minus the user's positives. Pools smaller than `negatives` fall
// back to with-replacement draws and set *warned.
std::vector<EvalCase> build_standard_testcases(const corpus::DatasetSplit& split,
                                               std::uint64_t rng_seed, int negatives = 100,
                                               bool* warned = nullptr);

enum class UserGroup { sporadic, regular, bibliophilic };

struct GroupAssignment {
    int threshold50 = 0;  // nearest-rank 50th percentile of books per user
    int threshold90 = 0;
    std::map<std::string, UserGroup> user_groups;
    std::set<std::string> seen_items;  // any user's training positives

    UserGroup user_group(const std::string& user_id) const;
    bool item_seen(const std::string& item_id) const { return seen_items.count(item_id) > 0; }
};

// Users partition at the 50th/90th nearest-rank percentiles of their
// book counts (train+dev+test), ties going to the lower group; an item is
// unseen iff it is nobody's training positive.
GroupAssignment assign_groups(const corpus::DatasetSplit& split);

const char* user_group_name(UserGroup g);

struct EvalRecord {
    std::string user_id;
    std::string positive_item;
    int rank_of_positive = 0;
    bool item_seen = false;
    UserGroup user_group = UserGroup::sporadic;
    double ndcg5 = 0.0;
    int p1 = 0;
};

struct Cell {
    double ndcg5 = 0.0;
    double p1 = 0.0;
    std::size_t n = 0;
};

struct Report {
    Cell overall;
    // Keys: u-s, u-r, u-b, s-s, s-r, s-b (item group - user group).
    std::map<std::string, Cell> groups;
    Cell macro;  // per-user means averaged; reported only behind a flag
};

Report aggregate(const std::vector<EvalRecord>& records);

// Machine form: metric \t group \t value \t n. Human form: aligned table.
void write_report_tsv(std::ostream& out, const Report& report,
                      const std::vector<std::string>& header_comments = {},
                      bool include_macro = false);
void write_report_table(std::ostream& out, const Report& report);

// Record dump for the report stage.
void write_records(std::ostream& out, const std::vector<EvalRecord>& records,
                   const std::vector<std::string>& header_comments = {});
std::vector<EvalRecord> read_records(std::istream& in);

// Two-sided paired t-test; returns the p-value. Used by the acceptance
// suite only.
double paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace profrec::eval

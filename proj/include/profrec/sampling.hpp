#pragma once

// Negative training examples from unlabeled data: uniform closed-world
// sampling, and weighted pos-neg cloning driven by item-item relatedness.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "profrec/factorization.hpp"

namespace profrec::sampling {

struct TrainingExample {
    std::string user_id;
    std::string item_id;
    int label = 0;        // 0|1
    double weight = 1.0;  // in (0,1]
};

// Draws `ratio` pool items per training positive, uniformly and without
// replacement within each positive's draw; emits them with label 0,
// weight 1. When the pool is smaller than ratio the draw falls back to
// with-replacement and *warned is set.
std::vector<TrainingExample> sample_uniform(const std::string& user_id,
                                            std::size_t n_positives,
                                            const std::vector<std::string>& unlabeled_pool,
                                            int ratio, std::uint64_t rng_seed,
                                            bool* warned = nullptr);

// Clones one unlabeled item into a positive example with weight r and a
// negative with weight 1-r, where r is the mean relatedness between the
// item and the user's training positives, clamped to [eps, 1-eps]. The
// two weights always sum to exactly 1.0.
std::pair<TrainingExample, TrainingExample> clone_weighted(
    const std::string& user_id, const std::string& unlabeled_item,
    const mf::FactorModel& model, const mf::RelatednessBounds& bounds,
    const std::vector<std::string>& train_positives, double eps = 1e-3);

// Dump format: user_id \t item_id \t label \t weight.
void write_examples(std::ostream& out, const std::vector<TrainingExample>& examples,
                    const std::vector<std::string>& header_comments = {});
std::vector<TrainingExample> read_examples(std::istream& in);

}  // namespace profrec::sampling

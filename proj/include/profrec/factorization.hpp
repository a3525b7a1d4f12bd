#pragma once

// Funk-style matrix factorization over binary interactions, trained with
// per-example SGD on a sigmoid/cross-entropy objective with uniform
// negatives. Supplies CF scores, item-item relatedness for weighted
// sampling, and frozen latent vectors for tower concatenation. Training is
// single-threaded and bitwise deterministic for a given seed; the trained
// model is immutable and safe to share.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace profrec::mf {

struct MfConfig {
    int dim = 200;
    double learning_rate = 0.05;
    double l2_weight = 0.01;
    int epochs = 20;
    int negatives_per_positive = 4;
    bool use_bias = true;
    std::uint64_t rng_seed = 1;
};

struct FactorModel {
    int dim = 0;
    bool use_bias = true;
    std::vector<std::string> user_ids;  // sorted
    std::vector<std::string> item_ids;  // sorted
    std::unordered_map<std::string, std::size_t> user_index;
    std::unordered_map<std::string, std::size_t> item_index;
    std::vector<double> user_vecs;  // user_ids.size() * dim
    std::vector<double> item_vecs;  // item_ids.size() * dim
    std::vector<double> user_bias;
    std::vector<double> item_bias;

    const double* user_vec(std::size_t idx) const { return user_vecs.data() + idx * dim; }
    const double* item_vec(std::size_t idx) const { return item_vecs.data() + idx * dim; }
    std::optional<std::size_t> user(const std::string& id) const;
    std::optional<std::size_t> item(const std::string& id) const;
};

struct MfTrainResult {
    FactorModel model;
    std::vector<double> epoch_loss;  // mean per-example loss incl. L2 term
};

// Trains on (user, item) positives over the given item universe.
// Throws when the training set is empty or the loss turns non-finite
// (the message names the epoch).
MfTrainResult train_mf(const std::vector<std::pair<std::string, std::string>>& positives,
                       const std::vector<std::string>& item_universe, const MfConfig& cfg);

// p_u . p_i + b_u + b_i; unknown ids score 0 and set *unknown.
double mf_score(const FactorModel& model, const std::string& user_id,
                const std::string& item_id, bool* unknown = nullptr);

// Per-example loss/gradient of BCE(sigmoid(score), y) plus the L2 term of
// the touched parameters; the gradient-check oracle differentiates
// example_loss by finite differences and compares against example_grad.
double mf_example_loss(const FactorModel& model, std::size_t u, std::size_t i, double y,
                       double l2);
struct MfExampleGrad {
    std::vector<double> d_user;
    std::vector<double> d_item;
    double d_user_bias = 0.0;
    double d_item_bias = 0.0;
};
MfExampleGrad mf_example_grad(const FactorModel& model, std::size_t u, std::size_t i, double y,
                              double l2);

struct RelatednessBounds {
    double lo = 0.0;
    double hi = 0.0;
};

// Global min/max of raw item-item dot products over all distinct pairs:
// exhaustive when the pair count is small enough, otherwise a seeded
// sample of `sample_pairs` pairs.
RelatednessBounds relatedness_bounds(const FactorModel& model,
                                     std::size_t max_exact_pairs = 4000000,
                                     std::size_t sample_pairs = 1000000,
                                     std::uint64_t rng_seed = 1);

// Min/max over an explicitly declared pair population (for example pairs
// that co-occur in some user's training set, which calibrates the scale on
// pairs with observed relatedness evidence). Dots outside the range clamp
// to 0 or 1 in relatedness().
RelatednessBounds relatedness_bounds_over(
    const FactorModel& model,
    const std::vector<std::pair<std::string, std::string>>& pairs);

// (dot - lo) / (hi - lo), clamped to [0,1]; 0.5 when hi == lo.
// Throws when either item is unknown.
double relatedness(const FactorModel& model, const std::string& item_a,
                   const std::string& item_b, const RelatednessBounds& bounds);

// Persistence: header line "d n_users n_items bias", then one line per
// entity: kind \t id \t bias \t d space-separated full-precision reals.
void save_model(std::ostream& out, const FactorModel& model,
                const std::vector<std::string>& header_comments = {});
FactorModel load_model(std::istream& in);

}  // namespace profrec::mf

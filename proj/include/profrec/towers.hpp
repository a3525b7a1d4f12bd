#pragma once

// Two-tower text model: token embeddings mean-pooled into a two-layer
// ReLU feed-forward head per tower, sigmoid dot-product scoring, weighted
// BCE training with Adam, optional chunk max-pooling on the user side and
// frozen CF-vector concatenation. Training is single-threaded and bitwise
// deterministic for a given seed; inference is read-only.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace profrec::towers {

struct Vocab {
    std::vector<std::string> tokens;  // tokens[0] is the reserved OOV entry
    std::unordered_map<std::string, int> index;
    std::uint64_t hash = 0;

    static Vocab build(const std::vector<std::vector<std::string>>& token_lists);
    int id(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? 0 : it->second;
    }
    std::size_t size() const { return tokens.size(); }
};

struct TowerDims {
    int e = 64;   // embedding width
    int h = 128;  // hidden width
    int d = 64;   // output width
};

struct TowerSide {
    std::vector<double> emb;  // vocab * e (empty on the item side when shared)
    std::vector<double> w1;   // e * h, row-major
    std::vector<double> c1;   // h
    std::vector<double> w2;   // h * d, row-major
    std::vector<double> c2;   // d
};

enum class Scope { head_only, embeddings_and_head };
enum class Pooling { none, max };

struct TrainConfig {
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 30;
    int batch_size = 64;
    std::uint64_t rng_seed = 42;
    Scope trainable_scope = Scope::embeddings_and_head;
    bool cf_concat = false;
    Pooling chunk_pooling = Pooling::none;
    bool shared_embeddings = false;
};

struct TowerParameters {
    TowerDims dims;
    Vocab vocab;
    bool shared_embeddings = false;
    int cf_dim = 0;  // width of the frozen CF block appended to each tower
    TowerSide user_tower;
    TowerSide item_tower;

    const std::vector<double>& embeddings(bool user_side) const {
        return user_side || shared_embeddings ? user_tower.emb : item_tower.emb;
    }
};

// Seeded Gaussian init (stdev 1/sqrt(fan_in)), biases zero.
TowerParameters init_parameters(TowerDims dims, const Vocab& vocab, bool shared_embeddings,
                                int cf_dim, std::uint64_t rng_seed);

using IdSeq = std::vector<int>;

IdSeq to_ids(const std::vector<std::string>& tokens, const Vocab& vocab);

// Mean of token embeddings (zero vector for an empty profile) through the
// two-layer head: ReLU(v W1 + c1) W2 + c2.
std::vector<double> encode(const TowerParameters& params, bool user_side, const IdSeq& ids);

// sigmoid(<u, v>); throws on dimension mismatch.
double score(const std::vector<double>& user_vec, const std::vector<double>& item_vec);

// Encode every chunk, coordinate-wise max over the chunk vectors, then
// score against the item vector. Empty chunks are skipped unless all
// chunks are empty.
std::vector<double> encode_chunks_pooled(const TowerParameters& params, bool user_side,
                                         const std::vector<IdSeq>& chunks);
double score_chunked(const TowerParameters& params, const std::vector<IdSeq>& user_chunks,
                     const IdSeq& item_ids);

// text_vec ++ latent; a null latent zero-pads and sets *warned.
std::vector<double> concat_cf(const std::vector<double>& text_vec, const double* latent,
                              int cf_dim, bool* warned = nullptr);

// Prepared training set: profiles resolved to id sequences once.
struct TrainData {
    struct Example {
        std::size_t user;  // index into user_chunks
        std::size_t item;  // index into item_ids_seq
        double label;
        double weight;
    };
    std::vector<Example> examples;
    std::vector<std::vector<IdSeq>> user_chunks;
    std::vector<IdSeq> item_ids_seq;
    // Frozen CF vectors (cf_dim each); empty when cf_concat is off. Users
    // or items without a vector carry zeros.
    std::vector<std::vector<double>> user_cf;
    std::vector<std::vector<double>> item_cf;
};

struct Gradients {
    TowerSide user;
    TowerSide item;
};

// Weighted-mean batch loss; accumulates parameter gradients when grads is
// non-null. Exposed so gradient-check tests can differentiate the same
// loss the trainer optimizes.
double batch_loss_and_grads(const TrainData& data, const std::vector<std::size_t>& batch,
                            const TowerParameters& params, const TrainConfig& cfg,
                            Gradients* grads);

struct TrainResult {
    TowerParameters params;
    std::vector<double> epoch_loss;           // weighted mean BCE per epoch
    std::vector<double> epoch_seconds;        // wall time per epoch
};

// Mini-batch Adam over seeded shuffles. Throws when a batch loss turns
// non-finite (the message names the epoch and batch).
TrainResult train(const TrainData& data, TowerDims dims, const Vocab& vocab,
                  const TrainConfig& cfg);

struct Ranked {
    std::string item_id;
    double score;
};

// Descending score, ties by item_id. Item vectors are computed by the
// caller once and reused across users.
std::vector<Ranked> rank_candidates(
    const std::vector<double>& user_vec,
    const std::vector<std::pair<std::string, const std::vector<double>*>>& item_vecs);

// Convenience wrapper over encode + rank for token-level inputs.
std::vector<Ranked> predict_rank(
    const TowerParameters& params, const std::vector<std::vector<std::string>>& user_chunks,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& candidates);

// Binary persistence: self-describing JSON header (dims, vocab, flags,
// named-section index) followed by little-endian doubles. The loader
// refuses a file whose vocab hash differs from expected_vocab_hash.
void save_parameters(const std::string& path, const TowerParameters& params,
                     const std::string& scope_name, const std::string& config_hash);
struct LoadedParameters {
    TowerParameters params;
    std::string scope_name;
    std::string config_hash;
};
LoadedParameters load_parameters(const std::string& path, std::uint64_t expected_vocab_hash = 0,
                                 bool check_hash = false);

}  // namespace profrec::towers

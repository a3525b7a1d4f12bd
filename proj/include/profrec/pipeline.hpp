#pragma once

// File-based pipeline: preprocess -> profile -> train-mf -> sample ->
// train -> eval -> report, driven by one flat key=value config file.
// Every stage reads its predecessors' dump files, writes its own, and
// stamps artifacts with the config hash; mixed-hash inputs are refused.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace profrec::pipeline {

struct RunConfig {
    // [paths]
    std::string interactions;
    std::string items;
    std::string workdir = "work";

    // [filter]
    int min_rating = 4;
    int min_books = 3;

    // [slice] mode: none | rich | density
    std::string slice_mode = "none";
    std::size_t slice_k = 1000;
    std::string density_mode = "sparse";  // sparse | dense
    std::size_t seed_users = 500;
    std::size_t seed_items = 2000;

    // [split]
    double test_frac = 0.2;

    // [profile]
    std::string strategy = "idf_sentences";
    int budget = 128;
    int chunks = 1;
    std::string item_variant = "expanded";  // basic | expanded
    std::string idf_source = "corpus";      // corpus | external
    std::string idf_path;
    std::string generator = "mock";  // mock | spawn | http
    std::string generator_cmd;
    std::string generator_url;
    int generator_timeout_ms = 10000;
    int generator_retries = 2;
    int chunk_chars = 3000;
    int mock_top_k = 3;
    std::string embedder = "tfidf";  // tfidf | process
    std::string embedder_cmd;

    // [mf]
    int mf_dim = 200;
    double mf_learning_rate = 0.05;
    double mf_l2 = 0.01;
    int mf_epochs = 20;
    int mf_negatives = 4;
    bool mf_use_bias = true;

    // [sampling] mode: uniform | weighted
    std::string sampling_mode = "uniform";
    int sampling_ratio = 4;

    // [train]
    int embedding_dim = 64;
    int hidden_dim = 128;
    int output_dim = 64;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 30;
    int batch_size = 64;
    std::string scope = "embeddings_and_head";  // head_only | embeddings_and_head
    bool cf_concat = false;
    std::string chunk_pooling = "none";  // none | max
    bool shared_embeddings = false;

    // [eval] mode: standard | search
    std::string eval_mode = "standard";
    int eval_negatives = 100;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
    bool bm25_include_title = false;

    // [report]
    bool report_macro = false;

    // [run]
    std::uint64_t seed = 42;
    int threads = 1;
};

// Flat key=value file with [section] headers; '#' starts a comment.
// Unknown keys are errors.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text);

// Canonical serialization of the artifact-shaping fields. Excluded:
// threads and workdir (must not change results) and the [eval]/[report]
// sections (one trained model is evaluated under several modes).
std::string canonical_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// Thrown when a stage's input artifact is missing; names the stage that
// produces it. The CLI maps it to exit code 2.
struct MissingArtifact : std::runtime_error {
    std::string producing_stage;
    MissingArtifact(const std::string& artifact, const std::string& stage)
        : std::runtime_error("missing artifact " + artifact + "; run stage '" + stage +
                             "' first"),
          producing_stage(stage) {}
};

void run_preprocess(const RunConfig& cfg);
void run_profile(const RunConfig& cfg);
void run_train_mf(const RunConfig& cfg);
void run_sample(const RunConfig& cfg);
void run_train(const RunConfig& cfg);
void run_eval(const RunConfig& cfg);
void run_report(const RunConfig& cfg);

// Valid names: preprocess, profile, train-mf, sample, train, eval,
// report, all.
void run_stage(const std::string& name, const RunConfig& cfg);

// Full command-line entry point (used by the profrec binary).
int run_cli(int argc, char** argv);

}  // namespace profrec::pipeline

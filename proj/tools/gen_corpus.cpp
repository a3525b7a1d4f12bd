// Emits a seeded synthetic review corpus (planted topic structure) in the
// canonical interactions.jsonl / items.jsonl formats, for smoke tests and
// benchmarking without the original datasets.

#include <cstdio>

#include <CLI11.hpp>

#include "profrec/synth.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic review corpus generator"};
    profrec::synth::SynthConfig cfg;
    std::string out_interactions = "interactions.jsonl";
    std::string out_items = "items.jsonl";
    app.add_option("--users", cfg.n_users, "number of users");
    app.add_option("--items", cfg.n_items, "number of items");
    app.add_option("--topics", cfg.n_topics, "number of latent topics");
    app.add_option("--flavors", cfg.flavors_per_topic, "sub-clusters per topic");
    app.add_option("--authors-per-topic", cfg.authors_per_topic, "authors per topic");
    app.add_option("--noise-frac", cfg.noise_frac, "noise token fraction per document");
    app.add_option("--seed", cfg.seed, "rng seed");
    app.add_option("--interactions", out_interactions, "output interactions file");
    app.add_option("--items-file", out_items, "output items file");
    CLI11_PARSE(app, argc, argv);

    try {
        auto corpus = profrec::synth::generate(cfg);
        profrec::synth::write_jsonl(corpus, out_interactions, out_items);
        std::printf("wrote %zu interactions, %zu items\n", corpus.interactions.size(),
                    corpus.items.size());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

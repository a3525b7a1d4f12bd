#pragma once

// Seeded synthetic review-corpus generator with planted topic structure.
// Topics carry a shared core vocabulary plus per-flavor marker words;
// items belong to one (topic, flavor) cell and users prefer a few cells
// inside 1-2 topics. Reviews and descriptions mix topic draws with noise
// tokens, so profile builders and the towers have a recoverable signal
// while roughly half of every document is distraction.

#include <cstdint>
#include <string>
#include <vector>

#include "profrec/corpus.hpp"

namespace profrec::synth {

struct SynthConfig {
    int n_users = 200;
    int n_items = 2000;
    int n_topics = 10;
    int core_words = 12;          // shared vocabulary per topic
    int flavors_per_topic = 12;   // sub-clusters per topic
    int flavor_words = 4;         // marker words per flavor
    int noise_vocab = 120;
    int authors_per_topic = 40;
    double noise_frac = 0.5;      // fraction of noise tokens per document
    double core_frac = 0.3;       // topic-draw share going to core words
    double cell_weight = 200.0;   // preference weight of in-cell items
    int min_doc_tokens = 30;
    int max_doc_tokens = 80;
    double low_rating_frac = 0.08;  // extra 1..3-rated interactions per user
    // Book-count tiers (by share of users: 50% / 40% / 10%).
    int sporadic_min = 4, sporadic_max = 9;
    int regular_min = 10, regular_max = 29;
    int biblio_min = 30, biblio_max = 60;
    std::uint64_t seed = 1;
};

struct SynthCorpus {
    std::vector<corpus::Interaction> interactions;
    std::vector<corpus::Item> items;
};

SynthCorpus generate(const SynthConfig& cfg);

// Writes the corpus in the canonical jsonl formats.
void write_jsonl(const SynthCorpus& corpus, const std::string& interactions_path,
                 const std::string& items_path);

}  // namespace profrec::synth

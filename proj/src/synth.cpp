#include "profrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "profrec/rng.hpp"

namespace profrec::synth {

namespace {

std::string pad_id(const char* prefix, int n, int width = 5) {
    std::string s = std::to_string(n);
    if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
    return prefix + s;
}

struct Cell {
    int topic;
    int flavor;
};

struct WordModel {
    const SynthConfig* cfg;

    std::string core_word(int topic, int j) const {
        return "c" + std::to_string(topic) + "w" + std::to_string(j);
    }
    std::string flavor_word(int topic, int flavor, int j) const {
        return "f" + std::to_string(topic) + "x" + std::to_string(flavor) + "w" +
               std::to_string(j);
    }
    std::string noise_word(int j) const { return "n" + std::to_string(j); }

    std::string draw_token(Cell cell, Rng& rng) const {
        if (rng.uniform_real() < cfg->noise_frac)
            return noise_word(static_cast<int>(rng.uniform_u64(cfg->noise_vocab)));
        if (rng.uniform_real() < cfg->core_frac)
            return core_word(cell.topic, static_cast<int>(rng.uniform_u64(cfg->core_words)));
        return flavor_word(cell.topic, cell.flavor,
                           static_cast<int>(rng.uniform_u64(cfg->flavor_words)));
    }

    // Sentence-structured document of 30..80 tokens (bounds from cfg).
    std::string draw_document(Cell cell, Rng& rng) const {
        int target = static_cast<int>(
            rng.uniform_int(cfg->min_doc_tokens, cfg->max_doc_tokens));
        std::string doc;
        int emitted = 0;
        while (emitted < target) {
            int len = std::min<int>(static_cast<int>(rng.uniform_int(8, 12)), target - emitted);
            for (int i = 0; i < len; ++i) {
                if (!doc.empty()) doc += ' ';
                doc += draw_token(cell, rng);
            }
            doc += '.';
            emitted += len;
        }
        return doc;
    }
};

}  // namespace

SynthCorpus generate(const SynthConfig& cfg) {
    if (cfg.n_topics < 1 || cfg.n_items < cfg.n_topics || cfg.n_users < 1)
        throw std::invalid_argument("synth: bad config");
    Rng rng(cfg.seed);
    WordModel words{&cfg};
    SynthCorpus out;

    // Items: cells assigned round-robin so every (topic, flavor) cell has
    // nearly the same size.
    std::vector<Cell> item_cell(cfg.n_items);
    std::vector<std::vector<int>> topic_items(cfg.n_topics);
    std::vector<std::vector<std::vector<int>>> cell_items(
        cfg.n_topics, std::vector<std::vector<int>>(cfg.flavors_per_topic));
    out.items.reserve(cfg.n_items);
    for (int idx = 0; idx < cfg.n_items; ++idx) {
        Cell cell{idx % cfg.n_topics, (idx / cfg.n_topics) % cfg.flavors_per_topic};
        item_cell[idx] = cell;
        topic_items[cell.topic].push_back(idx);
        cell_items[cell.topic][cell.flavor].push_back(idx);

        corpus::Item item;
        item.item_id = pad_id("i", idx);
        item.title = words.flavor_word(cell.topic, cell.flavor,
                                       static_cast<int>(rng.uniform_u64(cfg.flavor_words))) +
                     " " +
                     words.core_word(cell.topic,
                                     static_cast<int>(rng.uniform_u64(cfg.core_words)));
        item.tags = {"genre" + std::to_string(cell.topic), "books"};
        item.description = words.draw_document(cell, rng);
        item.author_id = "a" + std::to_string(cell.topic) + "x" +
                         std::to_string(rng.uniform_u64(cfg.authors_per_topic));
        out.items.push_back(std::move(item));
    }

    // Users: 50% sporadic, 40% regular, 10% bibliophilic book counts, with
    // preference breadth growing alongside (1-2 cells, bibliophiles 2x2).
    for (int u = 0; u < cfg.n_users; ++u) {
        std::string user_id = pad_id("u", u, 4);
        double tier = static_cast<double>(u) / cfg.n_users;
        int n_books;
        int topics_wanted, flavors_per_topic_wanted;
        if (tier < 0.5) {
            n_books = static_cast<int>(rng.uniform_int(cfg.sporadic_min, cfg.sporadic_max));
            topics_wanted = rng.uniform_real() < 0.6 ? 1 : 2;
            flavors_per_topic_wanted = 1;
        } else if (tier < 0.9) {
            n_books = static_cast<int>(rng.uniform_int(cfg.regular_min, cfg.regular_max));
            topics_wanted = 2;
            flavors_per_topic_wanted = 1;
        } else {
            n_books = static_cast<int>(rng.uniform_int(cfg.biblio_min, cfg.biblio_max));
            topics_wanted = 2;
            flavors_per_topic_wanted = 2;
        }

        std::vector<int> topics;
        while (static_cast<int>(topics.size()) < topics_wanted) {
            int t = static_cast<int>(rng.uniform_u64(cfg.n_topics));
            if (std::find(topics.begin(), topics.end(), t) == topics.end()) topics.push_back(t);
        }
        std::set<std::pair<int, int>> preferred_cells;
        for (int t : topics) {
            std::set<int> flavors;
            while (static_cast<int>(flavors.size()) <
                   std::min(flavors_per_topic_wanted, cfg.flavors_per_topic))
                flavors.insert(static_cast<int>(rng.uniform_u64(cfg.flavors_per_topic)));
            for (int f : flavors) preferred_cells.emplace(t, f);
        }

        // Weighted sample of n_books items from the preferred topics,
        // heavily favouring the preferred cells.
        struct Key {
            double key;
            int item;
        };
        std::vector<Key> keys;
        for (int t : topics) {
            for (int idx : topic_items[t]) {
                bool in_cell =
                    preferred_cells.count({item_cell[idx].topic, item_cell[idx].flavor}) > 0;
                double w = in_cell ? cfg.cell_weight : 1.0;
                double u01;
                do {
                    u01 = rng.uniform_real();
                } while (u01 <= 0.0);
                keys.push_back({std::log(u01) / w, idx});
            }
        }
        std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
            if (a.key != b.key) return a.key > b.key;
            return a.item < b.item;
        });
        int take = std::min<int>(n_books, static_cast<int>(keys.size()));

        std::vector<std::pair<int, int>> drafts;  // (item, rating)
        std::set<int> taken;
        for (int i = 0; i < take; ++i) {
            taken.insert(keys[i].item);
            int rating = rng.uniform_real() < 0.7 ? 4 : 5;
            drafts.emplace_back(keys[i].item, rating);
        }
        // A few sub-positive ratings exercise the rating filter downstream.
        int lows = static_cast<int>(std::lround(cfg.low_rating_frac * take));
        for (int i = 0; i < lows && static_cast<int>(taken.size()) < cfg.n_items; ++i) {
            int t = topics[rng.uniform_u64(topics.size())];
            int idx = topic_items[t][rng.uniform_u64(topic_items[t].size())];
            if (!taken.insert(idx).second) continue;
            drafts.emplace_back(idx, static_cast<int>(rng.uniform_int(1, 3)));
        }
        rng.shuffle(drafts);

        for (std::size_t pos = 0; pos < drafts.size(); ++pos) {
            corpus::Interaction it;
            it.user_id = user_id;
            it.item_id = out.items[drafts[pos].first].item_id;
            it.rating = drafts[pos].second;
            it.position = static_cast<int>(pos);
            it.review = words.draw_document(item_cell[drafts[pos].first], rng);
            out.interactions.push_back(std::move(it));
        }
    }
    return out;
}

void write_jsonl(const SynthCorpus& corpus, const std::string& interactions_path,
                 const std::string& items_path) {
    std::ofstream fi(interactions_path);
    if (!fi) throw std::runtime_error("cannot write " + interactions_path);
    for (const auto& it : corpus.interactions) {
        nlohmann::json j = {{"user_id", it.user_id},
                            {"item_id", it.item_id},
                            {"rating", it.rating},
                            {"review", it.review},
                            {"position", it.position}};
        fi << j.dump() << "\n";
    }
    std::ofstream fb(items_path);
    if (!fb) throw std::runtime_error("cannot write " + items_path);
    for (const auto& item : corpus.items) {
        nlohmann::json j = {{"item_id", item.item_id},
                            {"title", item.title},
                            {"tags", item.tags},
                            {"description", item.description},
                            {"author_id", item.author_id}};
        fb << j.dump() << "\n";
    }
}

}  // namespace profrec::synth

#include "profrec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "profrec/log.hpp"
#include "profrec/rng.hpp"
#include "profrec/textstats.hpp"

namespace profrec::corpus {

namespace {

using nlohmann::json;

bool parse_interaction(const json& j, Interaction& out) {
    if (!j.contains("user_id") || !j["user_id"].is_string()) return false;
    if (!j.contains("item_id") || !j["item_id"].is_string()) return false;
    if (!j.contains("rating") || !j["rating"].is_number_integer()) return false;
    int rating = j["rating"].get<int>();
    if (rating < 1 || rating > 5) return false;
    out.user_id = j["user_id"].get<std::string>();
    out.item_id = j["item_id"].get<std::string>();
    out.rating = rating;
    out.review = "";
    if (j.contains("review")) {
        if (!j["review"].is_string()) return false;
        out.review = j["review"].get<std::string>();
    }
    out.position = -1;
    if (j.contains("position")) {
        if (!j["position"].is_number_integer()) return false;
        out.position = j["position"].get<int>();
        if (out.position < 0) return false;
    }
    return true;
}

bool parse_item(const json& j, Item& out) {
    if (!j.contains("item_id") || !j["item_id"].is_string()) return false;
    if (!j.contains("title") || !j["title"].is_string()) return false;
    out.item_id = j["item_id"].get<std::string>();
    out.title = j["title"].get<std::string>();
    out.tags.clear();
    if (j.contains("tags")) {
        if (!j["tags"].is_array()) return false;
        for (const auto& t : j["tags"]) {
            if (!t.is_string()) return false;
            out.tags.push_back(t.get<std::string>());
        }
    }
    out.description = "";
    if (j.contains("description")) {
        if (!j["description"].is_string()) return false;
        out.description = j["description"].get<std::string>();
    }
    out.author_id = "";
    if (j.contains("author_id")) {
        if (!j["author_id"].is_string()) return false;
        out.author_id = j["author_id"].get<std::string>();
    }
    return true;
}

}  // namespace

Records parse_records(std::istream& in) {
    if (!in) throw std::runtime_error("unreadable record source");
    Records rec;
    std::set<std::pair<std::string, std::string>> seen_pairs;
    std::set<std::string> seen_items;
    std::unordered_map<std::string, int> next_position;
    std::string line;
    std::size_t total = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++total;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded() || !j.is_object()) {
            ++rec.rejected;
            continue;
        }
        if (j.contains("rating")) {
            Interaction it;
            if (!parse_interaction(j, it) ||
                !seen_pairs.emplace(it.user_id, it.item_id).second) {
                ++rec.rejected;
                continue;
            }
            if (it.position < 0) it.position = next_position[it.user_id];
            next_position[it.user_id] =
                std::max(next_position[it.user_id], it.position + 1);
            rec.interactions.push_back(std::move(it));
        } else {
            Item item;
            if (!parse_item(j, item) || !seen_items.insert(item.item_id).second) {
                ++rec.rejected;
                continue;
            }
            rec.items.push_back(std::move(item));
        }
    }
    if (in.bad()) throw std::runtime_error("read error on record source");
    if (total > 0 && rec.rejected * 2 > total)
        throw std::runtime_error("more than half of the input lines are malformed (" +
                                 std::to_string(rec.rejected) + "/" + std::to_string(total) +
                                 "); wrong format?");
    return rec;
}

Records load_corpus(const std::string& interactions_path, const std::string& items_path) {
    std::ifstream fi(interactions_path);
    if (!fi) throw std::runtime_error("cannot open interactions file: " + interactions_path);
    Records a = parse_records(fi);
    std::ifstream fb(items_path);
    if (!fb) throw std::runtime_error("cannot open items file: " + items_path);
    Records b = parse_records(fb);
    a.items.insert(a.items.end(), std::make_move_iterator(b.items.begin()),
                   std::make_move_iterator(b.items.end()));
    a.interactions.insert(a.interactions.end(),
                          std::make_move_iterator(b.interactions.begin()),
                          std::make_move_iterator(b.interactions.end()));
    a.rejected += b.rejected;
    return a;
}

std::vector<Interaction> filter_dataset(std::vector<Interaction> interactions, int min_rating,
                                        int min_books) {
    std::erase_if(interactions, [&](const Interaction& it) { return it.rating < min_rating; });
    std::unordered_map<std::string, int> per_user;
    for (const auto& it : interactions) ++per_user[it.user_id];
    std::erase_if(interactions,
                  [&](const Interaction& it) { return per_user[it.user_id] < min_books; });
    return interactions;
}

std::optional<UserSplit> split_user(
    const std::string& user_id, const std::vector<std::string>& positives, double test_frac,
    const std::unordered_map<std::string, std::string>& author_of, std::uint64_t rng_seed) {
    const std::size_t n = positives.size();
    if (n < 3) return std::nullopt;

    // Items with unknown author count as their own singleton author.
    auto author_key = [&](const std::string& item) -> std::string {
        auto it = author_of.find(item);
        if (it == author_of.end() || it->second.empty()) return "\x01item:" + item;
        return it->second;
    };
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[author_key(positives[i])].push_back(i);

    const std::size_t target =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(test_frac * n)));

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(rng_seed);
    rng.shuffle(perm);

    std::vector<bool> in_test(n, false);
    std::size_t test_size = 0;
    for (std::size_t idx : perm) {
        if (in_test[idx]) continue;
        const auto& group = groups[author_key(positives[idx])];
        if (test_size + group.size() > target) continue;
        for (std::size_t g : group) in_test[g] = true;
        test_size += group.size();
        if (test_size == target) break;
    }
    if (test_size == 0) return std::nullopt;

    UserSplit split;
    split.user_id = user_id;
    // One dev item, drawn from the remaining pool by the same permutation.
    // Test holds whole author groups, so anything left is author-disjoint.
    std::size_t dev_idx = n;
    for (std::size_t idx : perm) {
        if (!in_test[idx]) {
            dev_idx = idx;
            break;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (in_test[i])
            split.test.push_back(positives[i]);
        else if (i == dev_idx)
            split.dev.push_back(positives[i]);
        else
            split.train.push_back(positives[i]);
    }
    if (split.train.empty()) return std::nullopt;
    return split;
}

namespace {

// Per-user positives in interaction-position order, keyed by user.
std::map<std::string, std::vector<Interaction>> by_user(
    const std::vector<Interaction>& interactions) {
    std::map<std::string, std::vector<Interaction>> users;
    for (const auto& it : interactions) users[it.user_id].push_back(it);
    for (auto& [u, list] : users)
        std::stable_sort(list.begin(), list.end(),
                         [](const Interaction& a, const Interaction& b) {
                             return a.position < b.position;
                         });
    return users;
}

}  // namespace

DatasetSplit split_dataset(const std::vector<Interaction>& interactions,
                           const std::vector<Item>& items, double test_frac,
                           std::uint64_t rng_seed) {
    std::unordered_map<std::string, std::string> author_of;
    for (const auto& item : items)
        if (!item.author_id.empty()) author_of[item.item_id] = item.author_id;

    DatasetSplit split;
    for (const auto& it : interactions)
        if (!author_of.count(it.item_id)) ++split.unknown_author_items;

    std::set<std::string> universe;
    for (const auto& [user, list] : by_user(interactions)) {
        std::vector<std::string> positives;
        positives.reserve(list.size());
        for (const auto& it : list) positives.push_back(it.item_id);
        std::uint64_t user_seed = rng_seed ^ fnv1a64(user);
        auto user_split = split_user(user, positives, test_frac, author_of, user_seed);
        if (!user_split) {
            ++split.dropped_users;
            log_warn("user " + user + " dropped: no author-disjoint test set");
            continue;
        }
        for (const auto& it : list) universe.insert(it.item_id);
        split.users.push_back(std::move(*user_split));
    }
    split.all_items.assign(universe.begin(), universe.end());
    return split;
}

std::vector<Interaction> slice_rich(const std::vector<Interaction>& interactions,
                                    std::size_t k) {
    auto users = by_user(interactions);
    if (k > users.size())
        throw std::invalid_argument("slice_rich: k=" + std::to_string(k) + " exceeds " +
                                    std::to_string(users.size()) + " users");
    struct Entry {
        double mean_len;
        const std::string* user;
    };
    std::vector<Entry> entries;
    entries.reserve(users.size());
    for (const auto& [user, list] : users) {
        std::size_t total = 0;
        for (const auto& it : list) total += text::tokenize(it.review).size();
        entries.push_back({static_cast<double>(total) / list.size(), &user});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.mean_len != b.mean_len) return a.mean_len > b.mean_len;
        return *a.user < *b.user;
    });
    std::set<std::string> selected;
    for (std::size_t i = 0; i < k; ++i) selected.insert(*entries[i].user);

    std::vector<Interaction> out;
    for (const auto& [user, list] : users)
        if (selected.count(user)) out.insert(out.end(), list.begin(), list.end());
    return out;
}

std::vector<Interaction> slice_density(const std::vector<Interaction>& interactions,
                                       std::size_t k, DensityMode mode, std::size_t seed_users,
                                       std::size_t seed_items, std::uint64_t rng_seed) {
    if (seed_users >= k) throw std::invalid_argument("slice_density: seed_users must be < k");
    auto users = by_user(interactions);
    if (users.size() < k)
        throw std::invalid_argument("slice_density: fewer than k candidate users");

    std::vector<std::string> user_ids;
    user_ids.reserve(users.size());
    for (const auto& [u, _] : users) user_ids.push_back(u);

    Rng rng(rng_seed);
    // Seed user sample: partial Fisher-Yates over the sorted id list.
    std::vector<std::string> pool = user_ids;
    std::set<std::string> seeds;
    for (std::size_t i = 0; i < seed_users; ++i) {
        std::size_t j = i + rng.uniform_u64(pool.size() - i);
        std::swap(pool[i], pool[j]);
        seeds.insert(pool[i]);
    }

    // Sample seed_items of the seed users' books, uniformly.
    std::set<std::string> seed_book_set;
    for (const auto& u : seeds)
        for (const auto& it : users[u]) seed_book_set.insert(it.item_id);
    std::vector<std::string> seed_books(seed_book_set.begin(), seed_book_set.end());
    std::size_t keep = std::min(seed_items, seed_books.size());
    for (std::size_t i = 0; i < keep; ++i) {
        std::size_t j = i + rng.uniform_u64(seed_books.size() - i);
        std::swap(seed_books[i], seed_books[j]);
    }
    std::set<std::string> kept_books(seed_books.begin(), seed_books.begin() + keep);

    // Cumulative item degree over the full dataset: sum over the user's
    // books of the number of users per book.
    std::unordered_map<std::string, std::size_t> users_per_book;
    for (const auto& [u, list] : users)
        for (const auto& it : list) ++users_per_book[it.item_id];

    struct Cand {
        double key;
        const std::string* user;
    };
    std::vector<Cand> cands;
    for (const auto& u : user_ids) {
        if (seeds.count(u)) continue;
        double degree = 0.0;
        for (const auto& it : users[u]) degree += static_cast<double>(users_per_book[it.item_id]);
        double w = (mode == DensityMode::dense) ? degree : 1.0 / degree;
        // Efraimidis-Spirakis weighted reservoir: take the largest ln(u)/w keys.
        double u01;
        do {
            u01 = rng.uniform_real();
        } while (u01 <= 0.0);
        cands.push_back({std::log(u01) / w, &u});
    }
    std::size_t want = k - seed_users;
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.key != b.key) return a.key > b.key;
        return *a.user < *b.user;
    });
    std::set<std::string> selected(seeds);
    for (std::size_t i = 0; i < want; ++i) selected.insert(*cands[i].user);

    std::vector<Interaction> out;
    for (const auto& [user, list] : users) {
        if (!selected.count(user)) continue;
        bool is_seed = seeds.count(user) > 0;
        for (const auto& it : list) {
            if (is_seed && !kept_books.count(it.item_id)) continue;
            out.push_back(it);
        }
    }
    return out;
}

void write_split(std::ostream& out, const DatasetSplit& split,
                 const std::vector<std::string>& header_comments) {
    for (const auto& c : header_comments) out << "# " << c << "\n";
    for (const auto& u : split.users) {
        for (const auto& i : u.train) out << u.user_id << "\ttrain\t" << i << "\n";
        for (const auto& i : u.dev) out << u.user_id << "\tdev\t" << i << "\n";
        for (const auto& i : u.test) out << u.user_id << "\ttest\t" << i << "\n";
    }
}

DatasetSplit read_split(std::istream& in) {
    DatasetSplit split;
    std::map<std::string, UserSplit> users;
    std::set<std::string> universe;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string user, role, item;
        if (!std::getline(ls, user, '\t') || !std::getline(ls, role, '\t') ||
            !std::getline(ls, item, '\t'))
            throw std::runtime_error("bad split manifest line: " + line);
        auto& u = users[user];
        u.user_id = user;
        if (role == "train")
            u.train.push_back(item);
        else if (role == "dev")
            u.dev.push_back(item);
        else if (role == "test")
            u.test.push_back(item);
        else
            throw std::runtime_error("bad split role: " + role);
        universe.insert(item);
    }
    for (auto& [_, u] : users) split.users.push_back(std::move(u));
    split.all_items.assign(universe.begin(), universe.end());
    return split;
}

}  // namespace profrec::corpus

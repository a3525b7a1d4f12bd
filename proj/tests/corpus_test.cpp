#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "profrec/corpus.hpp"
#include "profrec/rng.hpp"
#include "profrec/textstats.hpp"

using namespace profrec;
using corpus::Interaction;
using corpus::Item;

namespace {

Interaction inter(std::string u, std::string i, int rating, std::string review = "",
                  int pos = 0) {
    return {std::move(u), std::move(i), rating, std::move(review), pos};
}

std::string interaction_line(const Interaction& it) {
    std::ostringstream os;
    os << R"({"user_id":")" << it.user_id << R"(","item_id":")" << it.item_id
       << R"(","rating":)" << it.rating << R"(,"review":")" << it.review
       << R"(","position":)" << it.position << "}";
    return os.str();
}

}  // namespace

TEST_CASE("parse_records on an empty stream") {
    std::istringstream in("");
    auto rec = corpus::parse_records(in);
    CHECK(rec.interactions.empty());
    CHECK(rec.items.empty());
    CHECK(rec.rejected == 0);
}

TEST_CASE("parse_records counts malformed lines without failing") {
    std::istringstream in(
        R"({"user_id":"u1","item_id":"i1","rating":5,"review":"good","position":0})"
        "\n"
        R"({"user_id":"u1","item_id":"i2","rating":4,"review":"","position":1})"
        "\n"
        R"({"user_id":"u2","item_id":"i1","rating":4,"review":"ok","position":0})"
        "\n"
        R"({"user_id":"u2","item_id":)"
        "\n");
    auto rec = corpus::parse_records(in);
    CHECK(rec.interactions.size() == 3);
    CHECK(rec.rejected == 1);
}

TEST_CASE("parse_records rejects bad ratings, duplicates, wrong types") {
    std::istringstream in(
        R"({"user_id":"u1","item_id":"i1","rating":6})"
        "\n"
        R"({"user_id":"u1","item_id":"i1","rating":4})"
        "\n"
        R"({"user_id":"u1","item_id":"i1","rating":4})"
        "\n"
        R"({"user_id":"u1","item_id":"i2","rating":"4"})"
        "\n"
        R"({"user_id":"u1","item_id":"i3","rating":5})"
        "\n"
        R"({"user_id":"u2","item_id":"i1","rating":4})"
        "\n"
        R"({"user_id":"u2","item_id":"i2","rating":4})"
        "\n"
        R"({"item_id":"b1","title":"T","tags":["x"],"description":"d"})"
        "\n"
        R"({"item_id":"b2","title":"U"})"
        "\n"
        R"({"item_id":"b1","title":"T2"})"
        "\n");
    auto rec = corpus::parse_records(in);
    CHECK(rec.interactions.size() == 4);
    CHECK(rec.items.size() == 2);
    CHECK(rec.rejected == 4);  // bad rating, duplicate pair, string rating, duplicate item
}

TEST_CASE("parse_records throws when most lines are malformed") {
    std::istringstream in("not json\nalso not json\n{\"user_id\":\"u\"}\n");
    CHECK_THROWS(corpus::parse_records(in));
}

TEST_CASE("100-record fixture round-trips every field") {
    std::ostringstream stream;
    std::vector<Interaction> want_inter;
    std::vector<Item> want_items;
    for (int i = 0; i < 80; ++i) {
        Interaction it = inter("user" + std::to_string(i % 13), "item" + std::to_string(i),
                               1 + i % 5, "review text " + std::to_string(i), i / 13);
        want_inter.push_back(it);
        stream << interaction_line(it) << "\n";
    }
    for (int i = 0; i < 20; ++i) {
        Item item{"book" + std::to_string(i), "Title " + std::to_string(i),
                  {"tag" + std::to_string(i % 3), "fiction"},
                  "description " + std::to_string(i), i % 2 ? "author" + std::to_string(i) : ""};
        want_items.push_back(item);
        stream << R"({"item_id":")" << item.item_id << R"(","title":")" << item.title
               << R"(","tags":["tag)" << (i % 3) << R"(","fiction"],"description":")"
               << item.description << R"(")";
        if (i % 2) stream << R"(,"author_id":"author)" << i << R"(")";
        stream << "}\n";
    }
    std::istringstream in(stream.str());
    auto rec = corpus::parse_records(in);
    CHECK(rec.rejected == 0);
    REQUIRE(rec.interactions.size() == want_inter.size());
    REQUIRE(rec.items.size() == want_items.size());
    for (std::size_t i = 0; i < want_inter.size(); ++i) {
        CHECK(rec.interactions[i].user_id == want_inter[i].user_id);
        CHECK(rec.interactions[i].item_id == want_inter[i].item_id);
        CHECK(rec.interactions[i].rating == want_inter[i].rating);
        CHECK(rec.interactions[i].review == want_inter[i].review);
        CHECK(rec.interactions[i].position == want_inter[i].position);
    }
    for (std::size_t i = 0; i < want_items.size(); ++i) {
        CHECK(rec.items[i].item_id == want_items[i].item_id);
        CHECK(rec.items[i].title == want_items[i].title);
        CHECK(rec.items[i].tags == want_items[i].tags);
        CHECK(rec.items[i].description == want_items[i].description);
        CHECK(rec.items[i].author_id == want_items[i].author_id);
    }
}

TEST_CASE("filter_dataset applies rating then user count") {
    SUBCASE("user with [5,4,3] loses the 3 and then the whole user") {
        std::vector<Interaction> data = {inter("u", "a", 5), inter("u", "b", 4),
                                         inter("u", "c", 3)};
        CHECK(corpus::filter_dataset(data, 4, 3).empty());
    }
    SUBCASE("user with [4,4,4] survives intact") {
        std::vector<Interaction> data = {inter("u", "a", 4), inter("u", "b", 4),
                                         inter("u", "c", 4)};
        CHECK(corpus::filter_dataset(data, 4, 3).size() == 3);
    }
}

TEST_CASE("filter_dataset matches an independent two-pass recount") {
    Rng rng(5);
    std::vector<Interaction> data;
    for (int u = 0; u < 60; ++u)
        for (int b = 0, n = 1 + rng.uniform_u64(8); b < n; ++b)
            data.push_back(inter("u" + std::to_string(u),
                                 "i" + std::to_string(rng.uniform_u64(1000)) + "_" +
                                     std::to_string(u) + "_" + std::to_string(b),
                                 1 + rng.uniform_u64(5)));
    auto got = corpus::filter_dataset(data, 4, 3);

    // Oracle: independent two-pass recount.
    std::map<std::string, int> survivors;
    for (const auto& it : data)
        if (it.rating >= 4) ++survivors[it.user_id];
    std::size_t expected = 0;
    for (const auto& it : data)
        if (it.rating >= 4 && survivors[it.user_id] >= 3) ++expected;
    CHECK(got.size() == expected);
    for (const auto& it : got) {
        CHECK(it.rating >= 4);
        CHECK(survivors[it.user_id] >= 3);
    }
}

TEST_CASE("filter_dataset is idempotent") {
    Rng rng(6);
    std::vector<Interaction> data;
    for (int u = 0; u < 40; ++u)
        for (int b = 0, n = 1 + rng.uniform_u64(6); b < n; ++b)
            data.push_back(inter("u" + std::to_string(u),
                                 "i" + std::to_string(u) + "_" + std::to_string(b),
                                 1 + rng.uniform_u64(5)));
    auto once = corpus::filter_dataset(data, 4, 3);
    auto twice = corpus::filter_dataset(once, 4, 3);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(once[i].user_id == twice[i].user_id);
        CHECK(once[i].item_id == twice[i].item_id);
    }
}

TEST_CASE("split_user with distinct authors takes one test item") {
    std::unordered_map<std::string, std::string> authors = {
        {"a", "A"}, {"b", "B"}, {"c", "C"}, {"d", "D"}, {"e", "E"}};
    auto split = corpus::split_user("u", {"a", "b", "c", "d", "e"}, 0.2, authors, 1);
    REQUIRE(split.has_value());
    CHECK(split->test.size() == 1);
    CHECK(split->dev.size() == 1);
    CHECK(split->train.size() == 3);
}

TEST_CASE("split_user drops a user whose items share one author") {
    std::unordered_map<std::string, std::string> authors = {
        {"a", "A"}, {"b", "A"}, {"c", "A"}, {"d", "A"}};
    CHECK_FALSE(corpus::split_user("u", {"a", "b", "c", "d"}, 0.2, authors, 1).has_value());
}

TEST_CASE("split_user moves whole author groups into test") {
    // 10 items: author X wrote 2, target is 2 -> either X's pair or two
    // singleton-author items may be chosen, never a partial group.
    std::unordered_map<std::string, std::string> authors;
    std::vector<std::string> positives;
    for (int i = 0; i < 10; ++i) {
        std::string id = "i" + std::to_string(i);
        positives.push_back(id);
        authors[id] = i < 2 ? "X" : "A" + std::to_string(i);
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto split = corpus::split_user("u", positives, 0.2, authors, seed);
        REQUIRE(split.has_value());
        CHECK(split->test.size() == 2);
        std::set<std::string> test_set(split->test.begin(), split->test.end());
        bool has_i0 = test_set.count("i0") > 0, has_i1 = test_set.count("i1") > 0;
        CHECK(has_i0 == has_i1);  // author X is all in or all out
    }
}

TEST_CASE("author disjointness holds exhaustively on a 50-user corpus") {
    Rng rng(9);
    std::vector<Interaction> data;
    std::vector<Item> items;
    std::set<std::string> made;
    for (int u = 0; u < 50; ++u) {
        int n = 3 + rng.uniform_u64(15);
        for (int b = 0; b < n; ++b) {
            std::string id = "i" + std::to_string(rng.uniform_u64(400));
            std::string key = "u" + std::to_string(u) + "|" + id;
            if (!made.insert(key).second) continue;
            data.push_back(inter("u" + std::to_string(u), id, 4, "", b));
        }
    }
    std::set<std::string> item_ids;
    for (const auto& it : data) item_ids.insert(it.item_id);
    Rng arng(10);
    for (const auto& id : item_ids)
        items.push_back({id, "t", {}, "", "auth" + std::to_string(arng.uniform_u64(60))});

    auto split = corpus::split_dataset(data, items, 0.2, 42);
    std::map<std::string, std::string> author;
    for (const auto& item : items) author[item.item_id] = item.author_id;

    CHECK(!split.users.empty());
    for (const auto& u : split.users) {
        CHECK(u.dev.size() == 1);
        CHECK(!u.train.empty());
        CHECK(!u.test.empty());
        std::set<std::string> train_authors;
        for (const auto& i : u.train) train_authors.insert(author[i]);
        for (const auto& i : u.dev) train_authors.insert(author[i]);
        for (const auto& i : u.test) CHECK(train_authors.count(author[i]) == 0);
        // Expected test size: max(1, floor(0.2 n)) unless infeasible.
        std::size_t n = u.train.size() + u.dev.size() + u.test.size();
        std::size_t target = std::max<std::size_t>(1, n / 5);
        CHECK(u.test.size() <= target);
    }
}

TEST_CASE("split determinism and manifest round-trip") {
    std::vector<Interaction> data;
    std::vector<Item> items;
    for (int u = 0; u < 12; ++u)
        for (int b = 0; b < 6; ++b) {
            std::string id = "i" + std::to_string(u) + "_" + std::to_string(b);
            data.push_back(inter("u" + std::to_string(u), id, 4, "", b));
            items.push_back({id, "t", {}, "", "a" + std::to_string(b)});
        }
    auto s1 = corpus::split_dataset(data, items, 0.2, 7);
    auto s2 = corpus::split_dataset(data, items, 0.2, 7);
    std::ostringstream o1, o2;
    corpus::write_split(o1, s1);
    corpus::write_split(o2, s2);
    CHECK(o1.str() == o2.str());

    std::istringstream in(o1.str());
    auto back = corpus::read_split(in);
    REQUIRE(back.users.size() == s1.users.size());
    CHECK(back.all_items == s1.all_items);
    for (std::size_t i = 0; i < back.users.size(); ++i) {
        CHECK(back.users[i].train == s1.users[i].train);
        CHECK(back.users[i].dev == s1.users[i].dev);
        CHECK(back.users[i].test == s1.users[i].test);
    }
}

TEST_CASE("slice_rich picks highest mean review length") {
    std::vector<Interaction> data;
    // u_long: mean 40 tokens; u_short: mean 10.
    for (int b = 0; b < 3; ++b) {
        std::string long_review, short_review;
        for (int w = 0; w < 40; ++w) long_review += "word ";
        for (int w = 0; w < 10; ++w) short_review += "word ";
        data.push_back(inter("u_long", "a" + std::to_string(b), 4, long_review, b));
        data.push_back(inter("u_short", "b" + std::to_string(b), 4, short_review, b));
    }
    auto one = corpus::slice_rich(data, 1);
    for (const auto& it : one) CHECK(it.user_id == "u_long");
    CHECK(one.size() == 3);

    SUBCASE("k equal to the user count is the identity") {
        auto all = corpus::slice_rich(data, 2);
        CHECK(all.size() == data.size());
    }
    SUBCASE("k beyond the user count throws") { CHECK_THROWS(corpus::slice_rich(data, 3)); }
}

TEST_CASE("slice_rich matches an independent sort oracle and ignores input order") {
    Rng rng(11);
    std::vector<Interaction> data;
    std::map<std::string, std::pair<std::size_t, std::size_t>> stats;  // tokens, books
    for (int u = 0; u < 30; ++u) {
        std::string user = "u" + std::to_string(u);
        int n = 3 + rng.uniform_u64(4);
        for (int b = 0; b < n; ++b) {
            int len = 1 + rng.uniform_u64(50);
            std::string review;
            for (int w = 0; w < len; ++w) review += "w" + std::to_string(w) + " ";
            stats[user].first += len;
            stats[user].second += 1;
            data.push_back(inter(user, user + "_i" + std::to_string(b), 4, review, b));
        }
    }
    auto sliced = corpus::slice_rich(data, 10);
    std::set<std::string> got;
    for (const auto& it : sliced) got.insert(it.user_id);

    // Oracle: independent sort by mean length.
    std::vector<std::pair<double, std::string>> order;
    for (const auto& [user, s] : stats)
        order.emplace_back(-static_cast<double>(s.first) / s.second, user);
    std::sort(order.begin(), order.end());
    std::set<std::string> expect;
    for (int i = 0; i < 10; ++i) expect.insert(order[i].second);
    CHECK(got == expect);

    auto shuffled = data;
    Rng shuffle_rng(12);
    shuffle_rng.shuffle(shuffled);
    auto sliced2 = corpus::slice_rich(shuffled, 10);
    REQUIRE(sliced2.size() == sliced.size());
    for (std::size_t i = 0; i < sliced.size(); ++i) {
        CHECK(sliced[i].user_id == sliced2[i].user_id);
        CHECK(sliced[i].item_id == sliced2[i].item_id);
    }
}

namespace {

// Two candidate users with planted cumulative degrees 9 and 1 plus one
// seed user; slice_density picks one of the two candidates.
std::vector<Interaction> degree_fixture() {
    std::vector<Interaction> data;
    for (int b = 0; b < 9; ++b) data.push_back(inter("heavy", "h" + std::to_string(b), 4, "", b));
    data.push_back(inter("light", "l0", 4, "", 0));
    data.push_back(inter("seed", "s0", 4, "", 0));
    return data;
}

}  // namespace

TEST_CASE("slice_density dense/sparse pick ratios match the planted degrees") {
    auto data = degree_fixture();
    // Condition on the trials where "seed" is drawn as the seed user (the
    // first rng draw, index 2 of the sorted user list), leaving a clean
    // heavy-vs-light weighted pick.
    auto seed_user_is_seed = [](std::uint64_t s) {
        Rng rng(s);
        return rng.uniform_u64(3) == 2;
    };
    int dense_heavy = 0, sparse_heavy = 0, dense_n = 0, sparse_n = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        if (seed_user_is_seed(1000 + t)) {
            ++dense_n;
            auto dense =
                corpus::slice_density(data, 2, corpus::DensityMode::dense, 1, 100, 1000 + t);
            for (const auto& it : dense)
                if (it.user_id == "heavy") {
                    ++dense_heavy;
                    break;
                }
        }
        if (seed_user_is_seed(5000 + t)) {
            ++sparse_n;
            auto sparse =
                corpus::slice_density(data, 2, corpus::DensityMode::sparse, 1, 100, 5000 + t);
            for (const auto& it : sparse)
                if (it.user_id == "heavy") {
                    ++sparse_heavy;
                    break;
                }
        }
    }
    CHECK(dense_n > 2500);
    CHECK(sparse_n > 2500);
    double dense_ratio = static_cast<double>(dense_heavy) / dense_n;
    double sparse_ratio = static_cast<double>(sparse_heavy) / sparse_n;
    // Expected pick probabilities 9:1 (dense) and 1:9 (sparse), +-5%.
    CHECK(std::fabs(dense_ratio - 0.9) < 0.05);
    CHECK(std::fabs(sparse_ratio - 0.1) < 0.05);
}

TEST_CASE("slice_density with identical degrees is uniform (chi-square)") {
    std::vector<Interaction> data;
    for (int u = 0; u < 4; ++u)
        for (int b = 0; b < 3; ++b)
            data.push_back(
                inter("u" + std::to_string(u), "i" + std::to_string(u) + std::to_string(b), 4,
                      "", b));
    std::map<std::string, int> picked;
    const int runs = 1000;
    for (int t = 0; t < runs; ++t) {
        auto subset =
            corpus::slice_density(data, 2, corpus::DensityMode::dense, 0, 100, 77000 + t);
        std::set<std::string> users;
        for (const auto& it : subset) users.insert(it.user_id);
        REQUIRE(users.size() == 2);
        for (const auto& u : users) ++picked[u];
    }
    // Each user appears in C(3,1)/C(4,2) = 1/2 of the runs.
    double expected = runs * 0.5;
    double chi2 = 0.0;
    for (int u = 0; u < 4; ++u) {
        double diff = picked["u" + std::to_string(u)] - expected;
        chi2 += diff * diff / expected;
    }
    CHECK(chi2 < 16.27);  // df=3, p=0.001 critical value
}

TEST_CASE("slice_density validates its inputs") {
    auto data = degree_fixture();
    CHECK_THROWS(corpus::slice_density(data, 2, corpus::DensityMode::dense, 2, 10, 1));
    CHECK_THROWS(corpus::slice_density(data, 9, corpus::DensityMode::dense, 1, 10, 1));
}

TEST_CASE("slice_density is deterministic for a fixed seed") {
    auto data = degree_fixture();
    auto a = corpus::slice_density(data, 2, corpus::DensityMode::sparse, 1, 100, 77);
    auto b = corpus::slice_density(data, 2, corpus::DensityMode::sparse, 1, 100, 77);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].user_id == b[i].user_id);
        CHECK(a[i].item_id == b[i].item_id);
    }
}

TEST_CASE("slice_density restricts seed users to the sampled books") {
    std::vector<Interaction> data;
    for (int b = 0; b < 50; ++b) data.push_back(inter("big", "x" + std::to_string(b), 4, "", b));
    data.push_back(inter("other", "y", 4, "", 0));
    // One seed user; seed_items=5 caps the seed user's books at 5.
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto subset = corpus::slice_density(data, 2, corpus::DensityMode::dense, 1, 5, s);
        std::map<std::string, int> count;
        for (const auto& it : subset) ++count[it.user_id];
        for (const auto& [user, n] : count) {
            if (user == "big") CHECK(n <= 50);
            // The seed user (whichever was drawn) keeps at most 5 books.
        }
        std::set<std::string> users;
        for (const auto& it : subset) users.insert(it.user_id);
        REQUIRE(users.size() == 2);  // both users survive in a 2-user corpus
        bool big_is_seed = count["big"] <= 5;
        bool other_is_seed = count["other"] <= 1;
        CHECK((big_is_seed || other_is_seed));
    }
}

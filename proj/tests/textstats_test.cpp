#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "profrec/rng.hpp"
#include "profrec/textstats.hpp"

using namespace profrec;
using text::IdfTable;
using text::SparseVec;

TEST_CASE("tokenize basics") {
    CHECK(text::tokenize("").empty());
    CHECK(text::tokenize("Great gift idea.") ==
          std::vector<std::string>{"great", "gift", "idea"});
    CHECK(text::tokenize("  don't,stop--now!! 1984 ") ==
          std::vector<std::string>{"don", "t", "stop", "now", "1984"});
    CHECK(text::tokenize("C++20 e-book") == std::vector<std::string>{"c", "20", "e", "book"});
}

TEST_CASE("tokenize handles unicode punctuation and keeps letters") {
    auto t = text::tokenize("caf\xc3\xa9 \xe2\x80\x9cquoted\xe2\x80\x9d text\xe2\x80\xa6"
                            "done");
    CHECK(t == std::vector<std::string>{"caf\xc3\xa9", "quoted", "text", "done"});
}

TEST_CASE("tokenize is idempotent on its own joined output") {
    Rng rng(3);
    const std::string corpus =
        "It was fun—really fun!  The unusual murder-weapon... shocked me, twice; 100% true.";
    auto once = text::tokenize(corpus);
    std::string joined;
    for (const auto& t : once) joined += t + " ";
    CHECK(text::tokenize(joined) == once);
}

TEST_CASE("split_sentences") {
    CHECK(text::split_sentences("A. B!") == std::vector<std::string>{"A.", "B!"});
    CHECK(text::split_sentences("no terminators here") ==
          std::vector<std::string>{"no terminators here"});
    CHECK(text::split_sentences("One. Two? Three!") ==
          std::vector<std::string>{"One.", "Two?", "Three!"});
    CHECK(text::split_sentences("Wow!! Nice.") == std::vector<std::string>{"Wow!!", "Nice."});
    CHECK(text::split_sentences("v1.2 is out. Yes.") ==
          std::vector<std::string>{"v1.2 is out.", "Yes."});
    CHECK(text::split_sentences("   ").empty());
}

TEST_CASE("split_sentences matches golden segmentation") {
    // Hand-annotated golden pairs for the deliberately simple splitter.
    const std::vector<std::pair<std::string, std::vector<std::string>>> golden = {
        {"I loved it. Mr. Smith didn't.", {"I loved it.", "Mr.", "Smith didn't."}},
        {"Ends abruptly", {"Ends abruptly"}},
        {"Q? A! B. ", {"Q?", "A!", "B."}},
        {"One...two. three", {"One...two.", "three"}},
    };
    for (const auto& [input, expected] : golden) CHECK(text::split_sentences(input) == expected);
}

TEST_CASE("build_idf formula") {
    // Term in all N docs -> ln(1)=0; term in 1 of 1 doc -> 0.
    auto t1 = text::build_idf({"apple"}, 1);
    CHECK(t1.weight("apple") == doctest::Approx(0.0));
    auto t2 = text::build_idf({"apple pie", "apple tart", "apple"}, 1);
    CHECK(t2.weight("apple") == doctest::Approx(0.0));

    // 5-doc fixture, term in 2 docs -> ln(6/3).
    auto t3 = text::build_idf({"x a", "x b", "c", "d", "e"}, 1);
    CHECK(t3.weight("x") == doctest::Approx(std::log(6.0 / 3.0)).epsilon(1e-9));
    CHECK(t3.weight("absent") == 0.0);

    CHECK_THROWS(text::build_idf({"a"}, 0));
    CHECK_THROWS(text::build_idf({"a"}, 4));
    CHECK_THROWS(text::build_idf({}, 1));
}

TEST_CASE("idf is anti-monotone in document frequency") {
    std::vector<std::string> docs;
    for (int i = 0; i < 40; ++i) {
        std::string d = "common";
        if (i % 2 == 0) d += " half";
        if (i % 4 == 0) d += " quarter";
        if (i == 0) d += " rare";
        docs.push_back(d);
    }
    auto idf = text::build_idf(docs, 1);
    std::map<std::string, std::size_t> df = {
        {"common", 40}, {"half", 20}, {"quarter", 10}, {"rare", 1}};
    for (const auto& [a, dfa] : df)
        for (const auto& [b, dfb] : df)
            if (dfa < dfb) CHECK(idf.weight(a) >= idf.weight(b));
}

TEST_CASE("bigram and trigram tables") {
    auto idf = text::build_idf({"scandinavian crime noir", "scandinavian crime"}, 2);
    CHECK(idf.weight("scandinavian crime") == doctest::Approx(std::log(3.0 / 3.0)));
    CHECK(idf.weight("crime noir") == doctest::Approx(std::log(3.0 / 2.0)));
    auto tri = text::build_idf({"scandinavian crime noir saga"}, 3);
    CHECK(tri.weight("scandinavian crime noir") == doctest::Approx(std::log(2.0 / 2.0)));
}

TEST_CASE("tfidf_vector") {
    IdfTable idf;
    idf.weights = {{"alpha", 0.5}, {"beta", 2.0}};
    SUBCASE("empty text") { CHECK(text::tfidf_vector("", idf, 1).empty()); }
    SUBCASE("tf times idf") {
        auto v = text::tfidf_vector("alpha alpha alpha beta", idf, 1);
        REQUIRE(v.entries.size() == 2);
        CHECK(v.entries[0].first == "alpha");
        CHECK(v.entries[0].second == doctest::Approx(1.5));
        CHECK(v.entries[1].second == doctest::Approx(2.0));
    }
    SUBCASE("zero idf terms omitted") {
        IdfTable z;
        z.weights = {{"alpha", 0.0}};
        CHECK(text::tfidf_vector("alpha alpha", z, 1).empty());
    }
}

TEST_CASE("tfidf_vector matches brute-force recount on a fixture review") {
    std::vector<std::string> docs = {
        "the plot twists kept me reading all night",
        "flat characters and a predictable plot",
        "a gripping courtroom drama with sharp dialogue",
        "the dialogue felt wooden but the plot moved",
        "night after night i could not put it down",
    };
    auto idf = text::build_idf(docs, 1);
    const std::string review = docs[0] + " " + docs[4];
    auto v = text::tfidf_vector(review, idf, 1);

    // Independent recount: raw token counting against the stated formula.
    std::map<std::string, int> tf;
    for (const auto& tok : text::tokenize(review)) ++tf[tok];
    std::size_t checked = 0;
    for (const auto& [term, count] : tf) {
        int df = 0;
        for (const auto& d : docs) {
            auto toks = text::tokenize(d);
            if (std::find(toks.begin(), toks.end(), term) != toks.end()) ++df;
        }
        double w = count * std::log((1.0 + docs.size()) / (1.0 + df));
        if (w <= 0.0) continue;
        auto it = std::find_if(v.entries.begin(), v.entries.end(),
                               [&](const auto& e) { return e.first == term; });
        REQUIRE(it != v.entries.end());
        CHECK(it->second == doctest::Approx(w).epsilon(1e-12));
        ++checked;
    }
    CHECK(checked == v.entries.size());
}

TEST_CASE("cosine") {
    SparseVec a{{{"a", 1.0}, {"b", 2.0}}};
    SparseVec b{{{"a", 2.0}, {"b", 1.0}}};
    SparseVec empty;
    CHECK(text::cosine(a, a) == doctest::Approx(1.0));
    CHECK(text::cosine(a, b) == doctest::Approx(0.8));
    CHECK(text::cosine(a, empty) == 0.0);
    SparseVec c{{{"z", 3.0}}};
    CHECK(text::cosine(a, c) == 0.0);
}

TEST_CASE("cosine is symmetric and bounded for non-negative vectors") {
    Rng rng(17);
    const char* terms[] = {"t0", "t1", "t2", "t3", "t4", "t5"};
    for (int trial = 0; trial < 50; ++trial) {
        SparseVec a, b;
        for (const char* t : terms) {
            if (rng.uniform_real() < 0.6) a.entries.emplace_back(t, rng.uniform_real(0.01, 3.0));
            if (rng.uniform_real() < 0.6) b.entries.emplace_back(t, rng.uniform_real(0.01, 3.0));
        }
        double ab = text::cosine(a, b);
        CHECK(ab == text::cosine(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0 + 1e-12);
    }
}

TEST_CASE("external idf table loads verbatim") {
    std::string path = "idf_test_table.tsv";
    {
        std::ofstream out(path);
        out << "# comment\nterm\t2.5\nother term\t0.25\n";
    }
    auto idf = text::load_idf(path);
    CHECK(idf.source == text::IdfSource::external);
    CHECK(idf.weight("term") == doctest::Approx(2.5));
    CHECK(idf.weight("other term") == doctest::Approx(0.25));
    std::remove(path.c_str());
    CHECK_THROWS(text::load_idf("does_not_exist.tsv"));
}

TEST_CASE("token counts on a generated fixture equal a reference segmentation") {
    // Reference: a character-class state machine written independently of
    // the production tokenizer.
    auto reference_count = [](const std::string& s) {
        std::size_t count = 0;
        bool in_token = false;
        for (unsigned char c : s) {
            bool tok = std::isalnum(c) || c >= 0x80;
            if (tok && !in_token) ++count;
            in_token = tok;
        }
        return count;
    };
    Rng rng(23);
    const char* words[] = {"alpha", "beta42", "Gamma", "DELTA", "x9"};
    const char* seps[] = {" ", ", ", "! ", " - ", "\t", "... "};
    for (int doc = 0; doc < 1000; ++doc) {
        std::string s;
        int n = 1 + static_cast<int>(rng.uniform_u64(12));
        for (int i = 0; i < n; ++i) {
            s += words[rng.uniform_u64(5)];
            s += seps[rng.uniform_u64(6)];
        }
        CHECK(text::tokenize(s).size() == reference_count(s));
    }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "profrec/rng.hpp"
#include "profrec/towers.hpp"

using namespace profrec;
using towers::IdSeq;
using towers::TowerDims;
using towers::TowerParameters;
using towers::TrainConfig;
using towers::TrainData;
using towers::Vocab;

namespace {

Vocab toy_vocab(int n_tokens = 9) {
    std::vector<std::vector<std::string>> lists(1);
    for (int i = 0; i < n_tokens; ++i) lists[0].push_back("tok" + std::to_string(i));
    return Vocab::build(lists);
}

// Straight-line re-implementation of the encoder, no shared helpers.
std::vector<double> encode_reference(const TowerParameters& p, bool user_side,
                                     const IdSeq& ids) {
    const auto& head = user_side ? p.user_tower : p.item_tower;
    const auto& emb = p.embeddings(user_side);
    const int e = p.dims.e, h = p.dims.h, d = p.dims.d;
    std::vector<double> v(e, 0.0);
    for (int id : ids)
        for (int k = 0; k < e; ++k) v[k] += emb[id * e + k];
    if (!ids.empty())
        for (int k = 0; k < e; ++k) v[k] /= static_cast<double>(ids.size());
    std::vector<double> hid(h);
    for (int j = 0; j < h; ++j) {
        double s = head.c1[j];
        for (int k = 0; k < e; ++k) s += v[k] * head.w1[k * h + j];
        hid[j] = s > 0 ? s : 0;
    }
    std::vector<double> out(d);
    for (int j = 0; j < d; ++j) {
        double s = head.c2[j];
        for (int k = 0; k < h; ++k) s += hid[k] * head.w2[k * d + j];
        out[j] = s;
    }
    return out;
}

}  // namespace

TEST_CASE("vocab reserves slot 0 for unknown tokens") {
    auto vocab = Vocab::build({{"beta", "alpha"}, {"alpha"}});
    CHECK(vocab.tokens[0] == "<unk>");
    CHECK(vocab.id("alpha") == 1);
    CHECK(vocab.id("beta") == 2);
    CHECK(vocab.id("never-seen") == 0);
    CHECK(towers::to_ids({"alpha", "zzz", "beta"}, vocab) == IdSeq{1, 0, 2});
}

TEST_CASE("empty profile with zero biases encodes to the zero vector") {
    auto vocab = toy_vocab();
    auto params = towers::init_parameters({4, 5, 3}, vocab, false, 0, 1);
    std::fill(params.user_tower.c1.begin(), params.user_tower.c1.end(), 0.0);
    std::fill(params.user_tower.c2.begin(), params.user_tower.c2.end(), 0.0);
    auto out = towers::encode(params, true, {});
    for (double x : out) CHECK(x == 0.0);
}

TEST_CASE("single-token encode follows the affine chain on a 2x2 toy") {
    Vocab vocab = toy_vocab(1);  // tokens: <unk>, tok0
    TowerParameters p;
    p.dims = {2, 2, 2};
    p.vocab = vocab;
    p.user_tower.emb = {0, 0, 0.5, -1.0};  // <unk> row then tok0 row
    p.user_tower.w1 = {1, 0, 0, 1};        // identity
    p.user_tower.c1 = {0, 0};
    p.user_tower.w2 = {1, 0, 0, 1};
    p.user_tower.c2 = {0.25, 0.25};
    p.item_tower = p.user_tower;
    auto out = towers::encode(p, true, {1});
    // v=(0.5,-1) -> ReLU -> (0.5,0) -> identity + c2.
    CHECK(out[0] == doctest::Approx(0.75));
    CHECK(out[1] == doctest::Approx(0.25));
}

TEST_CASE("encode matches an independent straight-line implementation") {
    auto vocab = toy_vocab();
    auto params = towers::init_parameters({4, 5, 3}, vocab, false, 0, 42);
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        IdSeq ids;
        for (int k = 0, n = rng.uniform_u64(6); k < n; ++k)
            ids.push_back(static_cast<int>(rng.uniform_u64(vocab.size())));
        for (bool user_side : {true, false}) {
            auto got = towers::encode(params, user_side, ids);
            auto want = encode_reference(params, user_side, ids);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i)
                CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("score is the sigmoid of the dot product") {
    CHECK(towers::score({0, 0, 0}, {1, 2, 3}) == doctest::Approx(0.5));
    // dot = ln 3 -> sigma = 3/4.
    CHECK(towers::score({std::log(3.0)}, {1.0}) == doctest::Approx(0.75));
    CHECK_THROWS(towers::score({1, 2}, {1, 2, 3}));
    SUBCASE("matches a brute-force recompute on random vectors") {
        Rng rng(7);
        for (int t = 0; t < 20; ++t) {
            std::vector<double> u(8), v(8);
            for (auto& x : u) x = rng.uniform_real(-1, 1);
            for (auto& x : v) x = rng.uniform_real(-1, 1);
            double dot = 0;
            for (int i = 0; i < 8; ++i) dot += u[i] * v[i];
            CHECK(towers::score(u, v) ==
                  doctest::Approx(1.0 / (1.0 + std::exp(-dot))).epsilon(1e-12));
        }
    }
}

TEST_CASE("chunk pooling takes the coordinate-wise max") {
    // Crafted heads: chunk {tok0} encodes to (1,-2), chunk {unk} to (-1,2).
    Vocab vocab = toy_vocab(1);
    TowerParameters p;
    p.dims = {1, 2, 2};
    p.vocab = vocab;
    p.user_tower.emb = {-1.0, 1.0};  // <unk>=-1, tok0=+1
    p.user_tower.w1 = {1, -1};       // h_pre = (v, -v)
    p.user_tower.c1 = {0, 0};
    p.user_tower.w2 = {1, -2, -1, 2};  // rows: h0 -> (1,-2), h1 -> (-1,2)
    p.user_tower.c2 = {0, 0};
    p.item_tower = p.user_tower;

    auto a = towers::encode(p, true, {1});
    CHECK(a == std::vector<double>{1, -2});
    auto b = towers::encode(p, true, {0});
    CHECK(b == std::vector<double>{-1, 2});
    auto pooled = towers::encode_chunks_pooled(p, true, {{1}, {0}});
    CHECK(pooled == std::vector<double>{1, 2});
}

TEST_CASE("one chunk equals the plain score and empty chunks are skipped") {
    auto vocab = toy_vocab();
    auto params = towers::init_parameters({4, 5, 3}, vocab, false, 0, 11);
    IdSeq user = {1, 2, 3};
    IdSeq item = {4, 5};
    double plain = towers::score(towers::encode(params, true, user),
                                 towers::encode(params, false, item));
    CHECK(towers::score_chunked(params, {user}, item) == doctest::Approx(plain));
    CHECK(towers::score_chunked(params, {user, {}, {}}, item) == doctest::Approx(plain));
    SUBCASE("identical chunks equal single-chunk encoding exactly") {
        auto one = towers::encode_chunks_pooled(params, true, {user});
        auto five = towers::encode_chunks_pooled(params, true, {user, user, user, user, user});
        CHECK(one == five);
    }
}

TEST_CASE("five-chunk pooling equals brute-force max then dot") {
    auto vocab = toy_vocab();
    auto params = towers::init_parameters({4, 5, 3}, vocab, false, 0, 13);
    Rng rng(17);
    std::vector<IdSeq> chunks;
    for (int c = 0; c < 5; ++c) {
        IdSeq ids;
        for (int k = 0, n = 1 + rng.uniform_u64(5); k < n; ++k)
            ids.push_back(static_cast<int>(rng.uniform_u64(vocab.size())));
        chunks.push_back(ids);
    }
    IdSeq item = {2, 7};
    auto got = towers::score_chunked(params, chunks, item);

    std::vector<double> pooled = encode_reference(params, true, chunks[0]);
    for (int c = 1; c < 5; ++c) {
        auto vec = encode_reference(params, true, chunks[c]);
        for (std::size_t j = 0; j < pooled.size(); ++j) pooled[j] = std::max(pooled[j], vec[j]);
    }
    auto item_vec = encode_reference(params, false, item);
    double dot = 0;
    for (std::size_t j = 0; j < pooled.size(); ++j) dot += pooled[j] * item_vec[j];
    CHECK(got == doctest::Approx(1.0 / (1.0 + std::exp(-dot))).epsilon(1e-12));
}

TEST_CASE("concat_cf appends frozen vectors") {
    SUBCASE("cf_dim 0 is the identity") {
        std::vector<double> v = {1, 2};
        CHECK(towers::concat_cf(v, nullptr, 0) == v);
    }
    SUBCASE("simple concatenation") {
        std::vector<double> v = {1, 2};
        double latent[] = {3};
        CHECK(towers::concat_cf(v, latent, 1) == std::vector<double>{1, 2, 3});
    }
    SUBCASE("missing latent zero-pads and warns") {
        std::vector<double> v = {1, 2};
        bool warned = false;
        auto out = towers::concat_cf(v, nullptr, 3, &warned);
        CHECK(warned);
        CHECK(out == std::vector<double>{1, 2, 0, 0, 0});
    }
}

namespace {

TrainData toy_data(bool chunked = false) {
    TrainData data;
    data.user_chunks = {{{1, 2, 3}}, {{4, 5}}, {{6}}};
    if (chunked) data.user_chunks[0] = {{1, 2}, {3, 8}};
    data.item_ids_seq = {{7, 8}, {2, 4, 6}, {5}, {1, 8, 3}};
    data.examples = {
        {0, 0, 1.0, 1.0}, {0, 1, 0.0, 0.5},  {1, 2, 1.0, 0.75},
        {1, 3, 0.0, 1.0}, {2, 0, 0.0, 0.25}, {2, 3, 1.0, 1.0},
    };
    return data;
}

}  // namespace

TEST_CASE("tower gradients match central finite differences (vocab 10, e4 h5 d3)") {
    auto vocab = toy_vocab();  // 9 tokens + <unk> = vocab 10
    REQUIRE(vocab.size() == 10);
    TowerDims dims{4, 5, 3};

    for (bool chunked : {false, true}) {
        for (auto scope : {towers::Scope::embeddings_and_head, towers::Scope::head_only}) {
            auto data = toy_data(chunked);
            TrainConfig cfg;
            cfg.trainable_scope = scope;
            cfg.chunk_pooling = chunked ? towers::Pooling::max : towers::Pooling::none;
            auto params = towers::init_parameters(dims, vocab, false, 0, 77);

            std::vector<std::size_t> batch = {0, 1, 2, 3, 4, 5};
            towers::Gradients grads;
            auto zero_like = [](towers::TowerSide& g, const towers::TowerSide& p) {
                g.emb.assign(p.emb.size(), 0.0);
                g.w1.assign(p.w1.size(), 0.0);
                g.c1.assign(p.c1.size(), 0.0);
                g.w2.assign(p.w2.size(), 0.0);
                g.c2.assign(p.c2.size(), 0.0);
            };
            zero_like(grads.user, params.user_tower);
            zero_like(grads.item, params.item_tower);
            towers::batch_loss_and_grads(data, batch, params, cfg, &grads);

            const double h = 1e-6;
            auto fd_check = [&](std::vector<double>& tensor, const std::vector<double>& g) {
                double worst = 0.0;
                for (std::size_t i = 0; i < tensor.size(); ++i) {
                    double saved = tensor[i];
                    tensor[i] = saved + h;
                    double up = towers::batch_loss_and_grads(data, batch, params, cfg, nullptr);
                    tensor[i] = saved - h;
                    double down =
                        towers::batch_loss_and_grads(data, batch, params, cfg, nullptr);
                    tensor[i] = saved;
                    double fd = (up - down) / (2 * h);
                    double denom = std::max({std::fabs(fd), std::fabs(g[i]), 1e-6});
                    worst = std::max(worst, std::fabs(fd - g[i]) / denom);
                }
                CHECK(worst < 1e-4);
            };
            fd_check(params.user_tower.w1, grads.user.w1);
            fd_check(params.user_tower.c1, grads.user.c1);
            fd_check(params.user_tower.w2, grads.user.w2);
            fd_check(params.user_tower.c2, grads.user.c2);
            fd_check(params.item_tower.w1, grads.item.w1);
            fd_check(params.item_tower.c1, grads.item.c1);
            fd_check(params.item_tower.w2, grads.item.w2);
            fd_check(params.item_tower.c2, grads.item.c2);
            if (scope == towers::Scope::embeddings_and_head) {
                fd_check(params.user_tower.emb, grads.user.emb);
                fd_check(params.item_tower.emb, grads.item.emb);
            }
        }
    }
}

TEST_CASE("weighted half-duplicates give the same loss and gradients as weight one") {
    auto vocab = toy_vocab();
    TowerDims dims{4, 5, 3};
    auto params = towers::init_parameters(dims, vocab, false, 0, 31);
    TrainConfig cfg;

    TrainData single;
    single.user_chunks = {{{1, 2}}};
    single.item_ids_seq = {{3, 4}};
    single.examples = {{0, 0, 1.0, 1.0}};

    TrainData doubled = single;
    doubled.examples = {{0, 0, 1.0, 0.5}, {0, 0, 1.0, 0.5}};

    double l1 = towers::batch_loss_and_grads(single, {0}, params, cfg, nullptr);
    double l2 = towers::batch_loss_and_grads(doubled, {0, 1}, params, cfg, nullptr);
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-15));
}

TEST_CASE("a single positive pair trains to a confident score") {
    auto vocab = toy_vocab();
    TrainData data;
    data.user_chunks = {{{1}}};
    data.item_ids_seq = {{2}};
    data.examples = {{0, 0, 1.0, 1.0}};
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 1;
    auto result = towers::train(data, {4, 5, 3}, vocab, cfg);
    double s = towers::score(towers::encode(result.params, true, {1}),
                             towers::encode(result.params, false, {2}));
    CHECK(s >= 0.9);
    CHECK(result.epoch_loss.front() > result.epoch_loss.back());
}

TEST_CASE("training is bitwise deterministic given the seed") {
    auto vocab = toy_vocab();
    auto data = toy_data();
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 2;
    auto a = towers::train(data, {4, 5, 3}, vocab, cfg);
    auto b = towers::train(data, {4, 5, 3}, vocab, cfg);
    CHECK(a.params.user_tower.emb == b.params.user_tower.emb);
    CHECK(a.params.user_tower.w1 == b.params.user_tower.w1);
    CHECK(a.params.item_tower.w2 == b.params.item_tower.w2);
    CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("head_only scope freezes the embedding tables") {
    auto vocab = toy_vocab();
    auto data = toy_data();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.trainable_scope = towers::Scope::head_only;
    auto result = towers::train(data, {4, 5, 3}, vocab, cfg);
    auto fresh = towers::init_parameters({4, 5, 3}, vocab, false, 0, cfg.rng_seed);
    CHECK(result.params.user_tower.emb == fresh.user_tower.emb);
    CHECK(result.params.item_tower.emb == fresh.item_tower.emb);
    CHECK(result.params.user_tower.w1 != fresh.user_tower.w1);
}

TEST_CASE("cf_concat with zero latent vectors leaves scores unchanged") {
    auto vocab = toy_vocab();
    auto params = towers::init_parameters({4, 5, 3}, vocab, false, 0, 19);
    IdSeq user = {1, 2}, item = {3};
    double text_only = towers::score(towers::encode(params, true, user),
                                     towers::encode(params, false, item));
    std::vector<double> zeros(6, 0.0);
    double with_cf = towers::score(towers::concat_cf(towers::encode(params, true, user),
                                                     zeros.data(), 6),
                                   towers::concat_cf(towers::encode(params, false, item),
                                                     zeros.data(), 6));
    CHECK(with_cf == text_only);
}

TEST_CASE("ranking order is invariant under the sigmoid") {
    auto vocab = toy_vocab();
    auto params = towers::init_parameters({4, 5, 3}, vocab, false, 0, 23);
    Rng rng(29);
    auto user_vec = towers::encode(params, true, {1, 3, 5});
    std::vector<std::vector<double>> vecs;
    std::vector<std::pair<std::string, const std::vector<double>*>> cands;
    for (int i = 0; i < 30; ++i) {
        IdSeq ids;
        for (int k = 0, n = 1 + rng.uniform_u64(4); k < n; ++k)
            ids.push_back(static_cast<int>(rng.uniform_u64(vocab.size())));
        vecs.push_back(towers::encode(params, false, ids));
    }
    for (int i = 0; i < 30; ++i) cands.emplace_back("i" + std::to_string(i), &vecs[i]);
    auto by_sigmoid = towers::rank_candidates(user_vec, cands);

    // Order by raw dot, same tie rule.
    std::vector<std::pair<std::string, double>> by_dot;
    for (const auto& [id, vec] : cands) {
        double dot = 0;
        for (std::size_t j = 0; j < user_vec.size(); ++j) dot += user_vec[j] * (*vec)[j];
        by_dot.emplace_back(id, dot);
    }
    std::sort(by_dot.begin(), by_dot.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (std::size_t i = 0; i < by_dot.size(); ++i)
        CHECK(by_sigmoid[i].item_id == by_dot[i].first);
}

TEST_CASE("predict_rank handles single and ordered candidates") {
    auto vocab = toy_vocab();
    auto params = towers::init_parameters({4, 5, 3}, vocab, false, 0, 37);
    auto single = towers::predict_rank(params, {{"tok1"}}, {{"only", {"tok2"}}});
    REQUIRE(single.size() == 1);
    CHECK(single[0].item_id == "only");

    SUBCASE("101-candidate ordering equals brute-force recomputation") {
        Rng rng(41);
        std::vector<std::vector<std::string>> user = {{"tok1", "tok3"}};
        std::vector<std::pair<std::string, std::vector<std::string>>> cands;
        for (int i = 0; i < 101; ++i) {
            std::vector<std::string> toks;
            for (int k = 0, n = 1 + rng.uniform_u64(4); k < n; ++k)
                toks.push_back("tok" + std::to_string(rng.uniform_u64(12)));
            cands.emplace_back("c" + std::to_string(i), toks);
        }
        auto ranked = towers::predict_rank(params, user, cands);
        REQUIRE(ranked.size() == 101);

        auto user_vec = encode_reference(params, true, towers::to_ids(user[0], params.vocab));
        std::vector<std::pair<double, std::string>> expect;
        for (const auto& [id, toks] : cands) {
            auto v = encode_reference(params, false, towers::to_ids(toks, params.vocab));
            double dot = 0;
            for (std::size_t j = 0; j < v.size(); ++j) dot += user_vec[j] * v[j];
            expect.emplace_back(-1.0 / (1.0 + std::exp(-dot)), id);
        }
        std::sort(expect.begin(), expect.end());
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(ranked[i].item_id == expect[i].second);
    }
}

TEST_CASE("parameter persistence round-trips and refuses vocab mismatches") {
    auto vocab = toy_vocab();
    auto data = toy_data();
    TrainConfig cfg;
    cfg.epochs = 2;
    auto result = towers::train(data, {4, 5, 3}, vocab, cfg);
    std::string path = "towers_test_params.bin";
    towers::save_parameters(path, result.params, "embeddings_and_head", "cfg123");
    auto loaded = towers::load_parameters(path, result.params.vocab.hash, true);
    CHECK(loaded.scope_name == "embeddings_and_head");
    CHECK(loaded.config_hash == "cfg123");
    CHECK(loaded.params.vocab.tokens == result.params.vocab.tokens);
    CHECK(loaded.params.user_tower.emb == result.params.user_tower.emb);
    CHECK(loaded.params.user_tower.w1 == result.params.user_tower.w1);
    CHECK(loaded.params.user_tower.c1 == result.params.user_tower.c1);
    CHECK(loaded.params.item_tower.w2 == result.params.item_tower.w2);
    CHECK(loaded.params.item_tower.c2 == result.params.item_tower.c2);
    CHECK_THROWS(towers::load_parameters(path, result.params.vocab.hash + 1, true));
    std::remove(path.c_str());
}

TEST_CASE("shared embeddings use one table for both towers") {
    auto vocab = toy_vocab();
    auto data = toy_data();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.shared_embeddings = true;
    auto result = towers::train(data, {4, 5, 3}, vocab, cfg);
    CHECK(result.params.item_tower.emb.empty());
    CHECK(&result.params.embeddings(false) == &result.params.user_tower.emb);
}

TEST_CASE("training diverges loudly instead of silently") {
    auto vocab = toy_vocab();
    auto data = toy_data();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 1;
    cfg.learning_rate = 1e200;
    CHECK_THROWS_WITH_AS(towers::train(data, {4, 5, 3}, vocab, cfg),
                         doctest::Contains("diverged"), std::runtime_error);
}

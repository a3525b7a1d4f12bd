#include "profrec/towers.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "profrec/kernels.hpp"
#include "profrec/rng.hpp"

namespace profrec::towers {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double bce_of_logit(double x, double y) {
    double softplus = std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
    return softplus - y * x;
}

}  // namespace

Vocab Vocab::build(const std::vector<std::vector<std::string>>& token_lists) {
    std::set<std::string> uniq;
    for (const auto& list : token_lists) uniq.insert(list.begin(), list.end());
    Vocab v;
    v.tokens.reserve(uniq.size() + 1);
    v.tokens.push_back("<unk>");
    for (const auto& t : uniq)
        if (t != "<unk>") v.tokens.push_back(t);
    for (std::size_t i = 0; i < v.tokens.size(); ++i)
        v.index.emplace(v.tokens[i], static_cast<int>(i));
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : v.tokens) {
        h = fnv1a64(t, h);
        h = fnv1a64("\n", h);
    }
    v.hash = h;
    return v;
}

TowerParameters init_parameters(TowerDims dims, const Vocab& vocab, bool shared_embeddings,
                                int cf_dim, std::uint64_t rng_seed) {
    TowerParameters p;
    p.dims = dims;
    p.vocab = vocab;
    p.shared_embeddings = shared_embeddings;
    p.cf_dim = cf_dim;
    Rng rng(rng_seed);
    auto fill = [&](std::vector<double>& t, std::size_t n, double stdev) {
        t.resize(n);
        for (auto& x : t) x = rng.normal(0.0, stdev);
    };
    const double emb_sd = 1.0 / std::sqrt(static_cast<double>(dims.e));
    const double w1_sd = 1.0 / std::sqrt(static_cast<double>(dims.e));
    const double w2_sd = 1.0 / std::sqrt(static_cast<double>(dims.h));
    auto init_side = [&](TowerSide& side, bool with_emb) {
        if (with_emb) fill(side.emb, vocab.size() * dims.e, emb_sd);
        fill(side.w1, static_cast<std::size_t>(dims.e) * dims.h, w1_sd);
        side.c1.assign(dims.h, 0.0);
        fill(side.w2, static_cast<std::size_t>(dims.h) * dims.d, w2_sd);
        side.c2.assign(dims.d, 0.0);
    };
    init_side(p.user_tower, true);
    init_side(p.item_tower, !shared_embeddings);
    return p;
}

IdSeq to_ids(const std::vector<std::string>& tokens, const Vocab& vocab) {
    IdSeq ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id(t));
    return ids;
}

namespace {

struct EncodeCache {
    std::vector<double> v;      // e: mean embedding
    std::vector<double> h_pre;  // h: pre-activation
    std::vector<double> h_act;  // h: after ReLU
    std::vector<double> out;    // d
};

void encode_forward(const IdSeq& ids, const double* emb, const TowerSide& head,
                    const TowerDims& dims, EncodeCache& c) {
    c.v.assign(dims.e, 0.0);
    if (!ids.empty()) {
        for (int id : ids)
            kernels::axpy(1.0, emb + static_cast<std::size_t>(id) * dims.e, c.v.data(), dims.e);
        kernels::scale(1.0 / static_cast<double>(ids.size()), c.v.data(), dims.e);
    }
    c.h_pre = head.c1;
    for (int i = 0; i < dims.e; ++i)
        kernels::axpy(c.v[i], head.w1.data() + static_cast<std::size_t>(i) * dims.h,
                      c.h_pre.data(), dims.h);
    c.h_act = c.h_pre;
    kernels::relu_inplace(c.h_act.data(), dims.h);
    c.out = head.c2;
    for (int i = 0; i < dims.h; ++i)
        kernels::axpy(c.h_act[i], head.w2.data() + static_cast<std::size_t>(i) * dims.d,
                      c.out.data(), dims.d);
}

// Accumulates gradients of the encoder output into `side` (and the shared
// embedding tensor when the towers share one).
void encode_backward(const IdSeq& ids, const EncodeCache& c, const double* grad_out,
                     const TowerSide& head, TowerSide& gside, std::vector<double>* gemb,
                     const TowerDims& dims) {
    // W2 and c2.
    for (int i = 0; i < dims.h; ++i)
        kernels::axpy(c.h_act[i], grad_out, gside.w2.data() + static_cast<std::size_t>(i) * dims.d,
                      dims.d);
    kernels::axpy(1.0, grad_out, gside.c2.data(), dims.d);
    // Through ReLU: gh1 = (W2 grad_out) masked by h_pre > 0.
    std::vector<double> gh1(dims.h);
    for (int i = 0; i < dims.h; ++i)
        gh1[i] = c.h_pre[i] > 0.0
                     ? kernels::dot(head.w2.data() + static_cast<std::size_t>(i) * dims.d,
                                    grad_out, dims.d)
                     : 0.0;
    // W1 and c1.
    for (int i = 0; i < dims.e; ++i)
        kernels::axpy(c.v[i], gh1.data(), gside.w1.data() + static_cast<std::size_t>(i) * dims.h,
                      dims.h);
    kernels::axpy(1.0, gh1.data(), gside.c1.data(), dims.h);
    if (!gemb || ids.empty()) return;
    // Mean pooling spreads 1/n of the input gradient onto each token row.
    std::vector<double> gv(dims.e);
    for (int i = 0; i < dims.e; ++i)
        gv[i] = kernels::dot(head.w1.data() + static_cast<std::size_t>(i) * dims.h, gh1.data(),
                             dims.h);
    const double inv_n = 1.0 / static_cast<double>(ids.size());
    for (int id : ids)
        kernels::axpy(inv_n, gv.data(), gemb->data() + static_cast<std::size_t>(id) * dims.e,
                      dims.e);
}

}  // namespace

std::vector<double> encode(const TowerParameters& params, bool user_side, const IdSeq& ids) {
    EncodeCache c;
    const TowerSide& head = user_side ? params.user_tower : params.item_tower;
    encode_forward(ids, params.embeddings(user_side).data(), head, params.dims, c);
    return std::move(c.out);
}

double score(const std::vector<double>& user_vec, const std::vector<double>& item_vec) {
    if (user_vec.size() != item_vec.size())
        throw std::invalid_argument("score: tower output dimensions differ (" +
                                    std::to_string(user_vec.size()) + " vs " +
                                    std::to_string(item_vec.size()) + ")");
    return sigmoid(kernels::dot(user_vec.data(), item_vec.data(), user_vec.size()));
}

std::vector<double> encode_chunks_pooled(const TowerParameters& params, bool user_side,
                                         const std::vector<IdSeq>& chunks) {
    if (chunks.empty()) throw std::invalid_argument("encode_chunks_pooled: no chunks");
    std::vector<double> pooled;
    bool any = false;
    for (const auto& chunk : chunks) {
        if (chunk.empty()) continue;
        auto vec = encode(params, user_side, chunk);
        if (!any) {
            pooled = std::move(vec);
            any = true;
        } else {
            kernels::max_inplace(pooled.data(), vec.data(), pooled.size());
        }
    }
    if (!any) pooled = encode(params, user_side, IdSeq{});
    return pooled;
}

double score_chunked(const TowerParameters& params, const std::vector<IdSeq>& user_chunks,
                     const IdSeq& item_ids) {
    auto user_vec = encode_chunks_pooled(params, true, user_chunks);
    auto item_vec = encode(params, false, item_ids);
    return score(user_vec, item_vec);
}

std::vector<double> concat_cf(const std::vector<double>& text_vec, const double* latent,
                              int cf_dim, bool* warned) {
    std::vector<double> out = text_vec;
    if (cf_dim <= 0) return out;
    if (latent) {
        out.insert(out.end(), latent, latent + cf_dim);
    } else {
        if (warned) *warned = true;
        out.insert(out.end(), cf_dim, 0.0);
    }
    return out;
}

double batch_loss_and_grads(const TrainData& data, const std::vector<std::size_t>& batch,
                            const TowerParameters& params, const TrainConfig& cfg,
                            Gradients* grads) {
    const TowerDims& dims = params.dims;
    const double* user_emb = params.embeddings(true).data();
    const double* item_emb = params.embeddings(false).data();
    const bool train_emb = cfg.trainable_scope == Scope::embeddings_and_head && grads;

    double weight_total = 0.0;
    for (std::size_t idx : batch) weight_total += data.examples[idx].weight;
    if (weight_total <= 0.0) throw std::invalid_argument("batch has no weight");

    double loss = 0.0;
    EncodeCache item_cache;
    std::vector<EncodeCache> chunk_caches;
    std::vector<double> pooled, grad_pooled, grad_chunk;

    for (std::size_t idx : batch) {
        const auto& ex = data.examples[idx];
        const auto& chunks = data.user_chunks[ex.user];
        const IdSeq& item_ids = data.item_ids_seq[ex.item];

        // Forward: user chunks (empty ones skipped unless all are empty).
        chunk_caches.clear();
        std::vector<const IdSeq*> used;
        for (const auto& c : chunks)
            if (!c.empty()) used.push_back(&c);
        static const IdSeq kEmpty;
        if (used.empty()) used.push_back(&kEmpty);
        if (cfg.chunk_pooling == Pooling::none && used.size() > 1)
            throw std::invalid_argument("chunk_pooling=none but a user has multiple chunks");
        chunk_caches.resize(used.size());
        for (std::size_t i = 0; i < used.size(); ++i)
            encode_forward(*used[i], user_emb, params.user_tower, dims, chunk_caches[i]);

        std::vector<int> argmax;
        if (used.size() == 1) {
            pooled = chunk_caches[0].out;
        } else {
            pooled = chunk_caches[0].out;
            argmax.assign(dims.d, 0);
            for (std::size_t c = 1; c < used.size(); ++c)
                for (int j = 0; j < dims.d; ++j)
                    if (chunk_caches[c].out[j] > pooled[j]) {
                        pooled[j] = chunk_caches[c].out[j];
                        argmax[j] = static_cast<int>(c);
                    }
        }

        encode_forward(item_ids, item_emb, params.item_tower, dims, item_cache);

        double x = kernels::dot(pooled.data(), item_cache.out.data(), dims.d);
        if (cfg.cf_concat && !data.user_cf.empty())
            x += kernels::dot(data.user_cf[ex.user].data(), data.item_cf[ex.item].data(),
                              data.user_cf[ex.user].size());

        const double coef = ex.weight / weight_total;
        loss += coef * bce_of_logit(x, ex.label);
        if (!grads) continue;

        const double g = coef * (sigmoid(x) - ex.label);

        // Item side: d dot / d item_vec = pooled user text vector.
        grad_pooled.assign(dims.d, 0.0);
        kernels::axpy(g, pooled.data(), grad_pooled.data(), dims.d);
        encode_backward(item_ids, item_cache, grad_pooled.data(), params.item_tower, grads->item,
                        train_emb ? (params.shared_embeddings ? &grads->user.emb : &grads->item.emb)
                                  : nullptr,
                        dims);

        // User side: route the pooled gradient to the argmax chunk per
        // coordinate (single chunk takes it all).
        if (used.size() == 1) {
            grad_chunk.assign(dims.d, 0.0);
            kernels::axpy(g, item_cache.out.data(), grad_chunk.data(), dims.d);
            encode_backward(*used[0], chunk_caches[0], grad_chunk.data(), params.user_tower,
                            grads->user, train_emb ? &grads->user.emb : nullptr, dims);
        } else {
            for (std::size_t c = 0; c < used.size(); ++c) {
                grad_chunk.assign(dims.d, 0.0);
                bool nonzero = false;
                for (int j = 0; j < dims.d; ++j)
                    if (argmax[j] == static_cast<int>(c)) {
                        grad_chunk[j] = g * item_cache.out[j];
                        nonzero = true;
                    }
                if (!nonzero) continue;
                encode_backward(*used[c], chunk_caches[c], grad_chunk.data(), params.user_tower,
                                grads->user, train_emb ? &grads->user.emb : nullptr, dims);
            }
        }
    }
    return loss;
}

namespace {

struct AdamTensor {
    double* w;
    std::vector<double>* g;
    std::vector<double> m, v;
    std::size_t n;
    bool trainable;
};

}  // namespace

TrainResult train(const TrainData& data, TowerDims dims, const Vocab& vocab,
                  const TrainConfig& cfg) {
    if (data.examples.empty()) throw std::invalid_argument("train: no examples");
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw std::invalid_argument("train: bad config");
    for (const auto& ex : data.examples) {
        if (ex.user >= data.user_chunks.size() || ex.item >= data.item_ids_seq.size())
            throw std::invalid_argument("train: example references missing profile");
    }
    if (cfg.cf_concat && (data.user_cf.size() != data.user_chunks.size() ||
                          data.item_cf.size() != data.item_ids_seq.size()))
        throw std::invalid_argument("train: cf_concat needs CF vectors for every entity");

    const int cf_dim =
        cfg.cf_concat && !data.user_cf.empty() ? static_cast<int>(data.user_cf[0].size()) : 0;
    TrainResult result;
    result.params = init_parameters(dims, vocab, cfg.shared_embeddings, cf_dim, cfg.rng_seed);
    TowerParameters& params = result.params;

    Gradients grads;
    auto shape_like = [](TowerSide& g, const TowerSide& p) {
        g.emb.assign(p.emb.size(), 0.0);
        g.w1.assign(p.w1.size(), 0.0);
        g.c1.assign(p.c1.size(), 0.0);
        g.w2.assign(p.w2.size(), 0.0);
        g.c2.assign(p.c2.size(), 0.0);
    };
    shape_like(grads.user, params.user_tower);
    shape_like(grads.item, params.item_tower);

    const bool emb_trainable = cfg.trainable_scope == Scope::embeddings_and_head;
    std::vector<AdamTensor> tensors;
    auto add_tensor = [&](std::vector<double>& w, std::vector<double>& g, bool trainable) {
        if (w.empty()) return;
        tensors.push_back({w.data(), &g, std::vector<double>(w.size(), 0.0),
                           std::vector<double>(w.size(), 0.0), w.size(), trainable});
    };
    add_tensor(params.user_tower.emb, grads.user.emb, emb_trainable);
    add_tensor(params.user_tower.w1, grads.user.w1, true);
    add_tensor(params.user_tower.c1, grads.user.c1, true);
    add_tensor(params.user_tower.w2, grads.user.w2, true);
    add_tensor(params.user_tower.c2, grads.user.c2, true);
    add_tensor(params.item_tower.emb, grads.item.emb, emb_trainable);
    add_tensor(params.item_tower.w1, grads.item.w1, true);
    add_tensor(params.item_tower.c1, grads.item.c1, true);
    add_tensor(params.item_tower.w2, grads.item.w2, true);
    add_tensor(params.item_tower.c2, grads.item.c2, true);

    Rng rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(data.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step = 0;
    std::vector<std::size_t> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);
        double epoch_loss = 0.0;
        double epoch_weight = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += cfg.batch_size, ++batch_index) {
            std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            batch.assign(order.begin() + begin, order.begin() + end);

            for (auto& t : tensors)
                if (t.trainable) std::fill(t.g->begin(), t.g->end(), 0.0);
            double loss = batch_loss_and_grads(data, batch, params, cfg, &grads);
            if (!std::isfinite(loss))
                throw std::runtime_error("tower training diverged at epoch " +
                                         std::to_string(epoch + 1) + ", batch " +
                                         std::to_string(batch_index + 1));
            double batch_weight = 0.0;
            for (std::size_t idx : batch) batch_weight += data.examples[idx].weight;
            epoch_loss += loss * batch_weight;
            epoch_weight += batch_weight;

            ++step;
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
            for (auto& t : tensors) {
                if (!t.trainable) continue;
                kernels::adam_step(t.w, t.m.data(), t.v.data(), t.g->data(), t.n,
                                   cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                                   cfg.adam_eps, bc1, bc2);
            }
        }
        result.epoch_loss.push_back(epoch_loss / epoch_weight);
        result.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return result;
}

std::vector<Ranked> rank_candidates(
    const std::vector<double>& user_vec,
    const std::vector<std::pair<std::string, const std::vector<double>*>>& item_vecs) {
    std::vector<Ranked> out;
    out.reserve(item_vecs.size());
    for (const auto& [id, vec] : item_vecs) out.push_back({id, score(user_vec, *vec)});
    std::sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item_id < b.item_id;
    });
    return out;
}

std::vector<Ranked> predict_rank(
    const TowerParameters& params, const std::vector<std::vector<std::string>>& user_chunks,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& candidates) {
    std::vector<IdSeq> chunk_ids;
    chunk_ids.reserve(user_chunks.size());
    for (const auto& c : user_chunks) chunk_ids.push_back(to_ids(c, params.vocab));
    auto user_vec = encode_chunks_pooled(params, true, chunk_ids);

    std::vector<std::vector<double>> vecs;
    vecs.reserve(candidates.size());
    std::vector<std::pair<std::string, const std::vector<double>*>> refs;
    for (const auto& [id, tokens] : candidates) {
        vecs.push_back(encode(params, false, to_ids(tokens, params.vocab)));
        refs.emplace_back(id, &vecs.back());
    }
    return rank_candidates(user_vec, refs);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'P', 'F', 'T', 'W', 'R', '1', '\n', '\0'};

void write_u64le(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, 8);
}

std::uint64_t read_u64le(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    for (double x : v) write_u64le(out, std::bit_cast<std::uint64_t>(x));
}

void read_doubles(std::istream& in, std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(read_u64le(in));
}

}  // namespace

void save_parameters(const std::string& path, const TowerParameters& params,
                     const std::string& scope_name, const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write tower parameters: " + path);

    std::vector<std::pair<std::string, const std::vector<double>*>> sections = {
        {"user.emb", &params.user_tower.emb}, {"user.w1", &params.user_tower.w1},
        {"user.c1", &params.user_tower.c1},   {"user.w2", &params.user_tower.w2},
        {"user.c2", &params.user_tower.c2},   {"item.emb", &params.item_tower.emb},
        {"item.w1", &params.item_tower.w1},   {"item.c1", &params.item_tower.c1},
        {"item.w2", &params.item_tower.w2},   {"item.c2", &params.item_tower.c2},
    };

    nlohmann::json header;
    header["e"] = params.dims.e;
    header["h"] = params.dims.h;
    header["d"] = params.dims.d;
    header["cf_dim"] = params.cf_dim;
    header["shared_embeddings"] = params.shared_embeddings;
    header["vocab_hash"] = params.vocab.hash;
    header["scope"] = scope_name;
    header["config_hash"] = config_hash;
    header["vocab"] = params.vocab.tokens;
    nlohmann::json idx = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, vec] : sections) {
        idx.push_back({{"name", name}, {"offset", offset}, {"count", vec->size()}});
        offset += vec->size();
    }
    header["sections"] = idx;
    std::string hs = header.dump();

    out.write(kMagic, 8);
    write_u64le(out, hs.size());
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, vec] : sections) write_doubles(out, *vec);
    if (!out) throw std::runtime_error("write error on " + path);
}

LoadedParameters load_parameters(const std::string& path, std::uint64_t expected_vocab_hash,
                                 bool check_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open tower parameters: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a tower parameter file: " + path);
    std::uint64_t hlen = read_u64le(in);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    auto header = nlohmann::json::parse(hs);

    LoadedParameters loaded;
    TowerParameters& p = loaded.params;
    p.dims = {header["e"].get<int>(), header["h"].get<int>(), header["d"].get<int>()};
    p.cf_dim = header["cf_dim"].get<int>();
    p.shared_embeddings = header["shared_embeddings"].get<bool>();
    loaded.scope_name = header["scope"].get<std::string>();
    loaded.config_hash = header["config_hash"].get<std::string>();
    p.vocab.tokens = header["vocab"].get<std::vector<std::string>>();
    for (std::size_t i = 0; i < p.vocab.tokens.size(); ++i)
        p.vocab.index.emplace(p.vocab.tokens[i], static_cast<int>(i));
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : p.vocab.tokens) {
        h = fnv1a64(t, h);
        h = fnv1a64("\n", h);
    }
    p.vocab.hash = h;
    if (h != header["vocab_hash"].get<std::uint64_t>())
        throw std::runtime_error("tower parameter file is corrupt (vocab hash mismatch)");
    if (check_hash && h != expected_vocab_hash)
        throw std::runtime_error(
            "tower parameters were trained with a different vocabulary; refusing to load");

    std::map<std::string, std::vector<double>*> dest = {
        {"user.emb", &p.user_tower.emb}, {"user.w1", &p.user_tower.w1},
        {"user.c1", &p.user_tower.c1},   {"user.w2", &p.user_tower.w2},
        {"user.c2", &p.user_tower.c2},   {"item.emb", &p.item_tower.emb},
        {"item.w1", &p.item_tower.w1},   {"item.c1", &p.item_tower.c1},
        {"item.w2", &p.item_tower.w2},   {"item.c2", &p.item_tower.c2},
    };
    for (const auto& sec : header["sections"]) {
        auto name = sec["name"].get<std::string>();
        auto count = sec["count"].get<std::size_t>();
        auto it = dest.find(name);
        if (it == dest.end()) throw std::runtime_error("unknown parameter section: " + name);
        read_doubles(in, *it->second, count);
    }
    if (!in) throw std::runtime_error("truncated tower parameter file: " + path);
    return loaded;
}

}  // namespace profrec::towers

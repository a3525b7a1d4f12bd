#include "profrec/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <CLI11.hpp>

#include "profrec/corpus.hpp"
#include "profrec/evaluation.hpp"
#include "profrec/factorization.hpp"
#include "profrec/kernels.hpp"
#include "profrec/log.hpp"
#include "profrec/parallel.hpp"
#include "profrec/profiles.hpp"
#include "profrec/retrieval.hpp"
#include "profrec/rng.hpp"
#include "profrec/sampling.hpp"
#include "profrec/textstats.hpp"
#include "profrec/towers.hpp"

namespace fs = std::filesystem;

namespace profrec::pipeline {

// ---------------------------------------------------------------------------
// Config handling

namespace {

struct RawConfig {
    std::map<std::string, std::string> kv;  // "section.key" -> value
};

RawConfig parse_ini(const std::string& text) {
    RawConfig raw;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (section.empty() || key.empty())
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": key outside a [section]");
        raw.kv[section + "." + key] = value;
    }
    return raw;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config key " + key + ": expected boolean, got '" + v + "'");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RawConfig raw = parse_ini(text);
    RunConfig cfg;
    std::set<std::string> known;
    auto take = [&](const std::string& key, auto&& setter) {
        known.insert(key);
        auto it = raw.kv.find(key);
        if (it != raw.kv.end()) setter(it->second);
    };
    auto to_int = [](const std::string& v) { return std::stoi(v); };
    auto to_u64 = [](const std::string& v) { return std::stoull(v); };
    auto to_sz = [](const std::string& v) { return static_cast<std::size_t>(std::stoull(v)); };
    auto to_dbl = [](const std::string& v) { return std::stod(v); };

    take("paths.interactions", [&](const std::string& v) { cfg.interactions = v; });
    take("paths.items", [&](const std::string& v) { cfg.items = v; });
    take("paths.workdir", [&](const std::string& v) { cfg.workdir = v; });

    take("filter.min_rating", [&](const std::string& v) { cfg.min_rating = to_int(v); });
    take("filter.min_books", [&](const std::string& v) { cfg.min_books = to_int(v); });

    take("slice.mode", [&](const std::string& v) { cfg.slice_mode = v; });
    take("slice.k", [&](const std::string& v) { cfg.slice_k = to_sz(v); });
    take("slice.density_mode", [&](const std::string& v) { cfg.density_mode = v; });
    take("slice.seed_users", [&](const std::string& v) { cfg.seed_users = to_sz(v); });
    take("slice.seed_items", [&](const std::string& v) { cfg.seed_items = to_sz(v); });

    take("split.test_frac", [&](const std::string& v) { cfg.test_frac = to_dbl(v); });

    take("profile.strategy", [&](const std::string& v) { cfg.strategy = v; });
    take("profile.budget", [&](const std::string& v) { cfg.budget = to_int(v); });
    take("profile.chunks", [&](const std::string& v) { cfg.chunks = to_int(v); });
    take("profile.item_variant", [&](const std::string& v) { cfg.item_variant = v; });
    take("profile.idf_source", [&](const std::string& v) { cfg.idf_source = v; });
    take("profile.idf_path", [&](const std::string& v) { cfg.idf_path = v; });
    take("profile.generator", [&](const std::string& v) { cfg.generator = v; });
    take("profile.generator_cmd", [&](const std::string& v) { cfg.generator_cmd = v; });
    take("profile.generator_url", [&](const std::string& v) { cfg.generator_url = v; });
    take("profile.generator_timeout_ms",
         [&](const std::string& v) { cfg.generator_timeout_ms = to_int(v); });
    take("profile.generator_retries",
         [&](const std::string& v) { cfg.generator_retries = to_int(v); });
    take("profile.chunk_chars", [&](const std::string& v) { cfg.chunk_chars = to_int(v); });
    take("profile.mock_top_k", [&](const std::string& v) { cfg.mock_top_k = to_int(v); });
    take("profile.embedder", [&](const std::string& v) { cfg.embedder = v; });
    take("profile.embedder_cmd", [&](const std::string& v) { cfg.embedder_cmd = v; });

    take("mf.dim", [&](const std::string& v) { cfg.mf_dim = to_int(v); });
    take("mf.learning_rate", [&](const std::string& v) { cfg.mf_learning_rate = to_dbl(v); });
    take("mf.l2", [&](const std::string& v) { cfg.mf_l2 = to_dbl(v); });
    take("mf.epochs", [&](const std::string& v) { cfg.mf_epochs = to_int(v); });
    take("mf.negatives", [&](const std::string& v) { cfg.mf_negatives = to_int(v); });
    take("mf.use_bias", [&](const std::string& v) { cfg.mf_use_bias = parse_bool(v, "mf.use_bias"); });

    take("sampling.mode", [&](const std::string& v) { cfg.sampling_mode = v; });
    take("sampling.ratio", [&](const std::string& v) { cfg.sampling_ratio = to_int(v); });

    take("train.embedding_dim", [&](const std::string& v) { cfg.embedding_dim = to_int(v); });
    take("train.hidden_dim", [&](const std::string& v) { cfg.hidden_dim = to_int(v); });
    take("train.output_dim", [&](const std::string& v) { cfg.output_dim = to_int(v); });
    take("train.learning_rate", [&](const std::string& v) { cfg.learning_rate = to_dbl(v); });
    take("train.adam_beta1", [&](const std::string& v) { cfg.adam_beta1 = to_dbl(v); });
    take("train.adam_beta2", [&](const std::string& v) { cfg.adam_beta2 = to_dbl(v); });
    take("train.adam_eps", [&](const std::string& v) { cfg.adam_eps = to_dbl(v); });
    take("train.epochs", [&](const std::string& v) { cfg.epochs = to_int(v); });
    take("train.batch_size", [&](const std::string& v) { cfg.batch_size = to_int(v); });
    take("train.scope", [&](const std::string& v) { cfg.scope = v; });
    take("train.cf_concat", [&](const std::string& v) { cfg.cf_concat = parse_bool(v, "train.cf_concat"); });
    take("train.chunk_pooling", [&](const std::string& v) { cfg.chunk_pooling = v; });
    take("train.shared_embeddings",
         [&](const std::string& v) { cfg.shared_embeddings = parse_bool(v, "train.shared_embeddings"); });

    take("eval.mode", [&](const std::string& v) { cfg.eval_mode = v; });
    take("eval.negatives", [&](const std::string& v) { cfg.eval_negatives = to_int(v); });
    take("eval.bm25_k1", [&](const std::string& v) { cfg.bm25_k1 = to_dbl(v); });
    take("eval.bm25_b", [&](const std::string& v) { cfg.bm25_b = to_dbl(v); });
    take("eval.bm25_include_title",
         [&](const std::string& v) { cfg.bm25_include_title = parse_bool(v, "eval.bm25_include_title"); });

    take("report.macro", [&](const std::string& v) { cfg.report_macro = parse_bool(v, "report.macro"); });

    take("run.seed", [&](const std::string& v) { cfg.seed = to_u64(v); });
    take("run.threads", [&](const std::string& v) { cfg.threads = to_int(v); });

    for (const auto& [key, _] : raw.kv)
        if (!known.count(key)) throw std::runtime_error("unknown config key: " + key);

    if (cfg.budget < 1) throw std::runtime_error("profile.budget must be >= 1");
    if (cfg.chunks < 1) throw std::runtime_error("profile.chunks must be >= 1");
    if (cfg.eval_negatives < 1) throw std::runtime_error("eval.negatives must be >= 1");
    if (cfg.chunks > 1 && cfg.chunk_pooling == "none")
        throw std::runtime_error("profile.chunks > 1 requires train.chunk_pooling = max");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// Canonical form of the keys that shape the training artifacts. The
// [eval]/[report] sections are excluded on purpose: switching the
// evaluation mode must not invalidate a trained model, mirroring how one
// model is scored in both standard and search-based mode. threads and
// workdir are excluded because they may never change results.
std::string canonical_config(const RunConfig& c) {
    std::ostringstream out;
    char buf[32];
    auto dbl = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    out << "filter.min_books=" << c.min_books << "\n";
    out << "filter.min_rating=" << c.min_rating << "\n";
    out << "mf.dim=" << c.mf_dim << "\n";
    out << "mf.epochs=" << c.mf_epochs << "\n";
    out << "mf.l2=" << dbl(c.mf_l2) << "\n";
    out << "mf.learning_rate=" << dbl(c.mf_learning_rate) << "\n";
    out << "mf.negatives=" << c.mf_negatives << "\n";
    out << "mf.use_bias=" << (c.mf_use_bias ? "true" : "false") << "\n";
    out << "paths.interactions=" << c.interactions << "\n";
    out << "paths.items=" << c.items << "\n";
    out << "profile.budget=" << c.budget << "\n";
    out << "profile.chunk_chars=" << c.chunk_chars << "\n";
    out << "profile.chunks=" << c.chunks << "\n";
    out << "profile.embedder=" << c.embedder << "\n";
    out << "profile.embedder_cmd=" << c.embedder_cmd << "\n";
    out << "profile.generator=" << c.generator << "\n";
    out << "profile.generator_cmd=" << c.generator_cmd << "\n";
    out << "profile.generator_retries=" << c.generator_retries << "\n";
    out << "profile.generator_timeout_ms=" << c.generator_timeout_ms << "\n";
    out << "profile.generator_url=" << c.generator_url << "\n";
    out << "profile.idf_path=" << c.idf_path << "\n";
    out << "profile.idf_source=" << c.idf_source << "\n";
    out << "profile.item_variant=" << c.item_variant << "\n";
    out << "profile.mock_top_k=" << c.mock_top_k << "\n";
    out << "profile.strategy=" << c.strategy << "\n";
    out << "report.macro=" << (c.report_macro ? "true" : "false") << "\n";
    out << "run.seed=" << c.seed << "\n";
    out << "sampling.mode=" << c.sampling_mode << "\n";
    out << "sampling.ratio=" << c.sampling_ratio << "\n";
    out << "slice.density_mode=" << c.density_mode << "\n";
    out << "slice.k=" << c.slice_k << "\n";
    out << "slice.mode=" << c.slice_mode << "\n";
    out << "slice.seed_items=" << c.seed_items << "\n";
    out << "slice.seed_users=" << c.seed_users << "\n";
    out << "split.test_frac=" << dbl(c.test_frac) << "\n";
    out << "train.adam_beta1=" << dbl(c.adam_beta1) << "\n";
    out << "train.adam_beta2=" << dbl(c.adam_beta2) << "\n";
    out << "train.adam_eps=" << dbl(c.adam_eps) << "\n";
    out << "train.batch_size=" << c.batch_size << "\n";
    out << "train.cf_concat=" << (c.cf_concat ? "true" : "false") << "\n";
    out << "train.chunk_pooling=" << c.chunk_pooling << "\n";
    out << "train.embedding_dim=" << c.embedding_dim << "\n";
    out << "train.epochs=" << c.epochs << "\n";
    out << "train.hidden_dim=" << c.hidden_dim << "\n";
    out << "train.learning_rate=" << dbl(c.learning_rate) << "\n";
    out << "train.output_dim=" << c.output_dim << "\n";
    out << "train.scope=" << c.scope << "\n";
    out << "train.shared_embeddings=" << (c.shared_embeddings ? "true" : "false") << "\n";
    return out.str();
}

std::string config_hash(const RunConfig& cfg) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
    return buf;
}

// ---------------------------------------------------------------------------
// Artifact plumbing

namespace {

std::string artifact(const RunConfig& cfg, const char* name) {
    return (fs::path(cfg.workdir) / name).string();
}

std::uint64_t stage_seed(const RunConfig& cfg, const char* stage) {
    return cfg.seed ^ fnv1a64(std::string("stage:") + stage);
}

std::vector<std::string> artifact_header(const RunConfig& cfg, const char* stage) {
    return {"config_hash=" + config_hash(cfg), std::string("stage=") + stage,
            "seed=" + std::to_string(cfg.seed)};
}

// Opens an input artifact, verifying existence and config hash.
std::ifstream open_artifact(const RunConfig& cfg, const char* name,
                            const char* producing_stage) {
    std::string path = artifact(cfg, name);
    if (!fs::exists(path)) throw MissingArtifact(path, producing_stage);
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open artifact: " + path);
    // Leading comment lines carry key=value metadata.
    std::string expected = config_hash(cfg);
    std::streampos start = in.tellg();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] != '#') break;
        auto eq = line.find("config_hash=");
        if (eq != std::string::npos) {
            std::string found = line.substr(eq + 12);
            if (found != expected)
                throw std::runtime_error("artifact " + path +
                                         " was produced with a different config (hash " + found +
                                         " vs " + expected + "); rerun the pipeline");
        }
        start = in.tellg();
    }
    in.clear();
    in.seekg(start);
    return in;
}

std::ofstream create_artifact(const RunConfig& cfg, const char* name, const char* stage,
                              bool binary = false) {
    fs::create_directories(cfg.workdir);
    std::string path = artifact(cfg, name);
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw std::runtime_error("cannot write artifact: " + path);
    if (!binary)
        for (const auto& h : artifact_header(cfg, stage)) out << "# " << h << "\n";
    return out;
}

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw std::runtime_error(std::string(what) + " path not configured");
    if (!fs::exists(path))
        throw std::runtime_error(std::string(what) + " file does not exist: " + path);
}

struct LoadedRaw {
    corpus::Records records;
    std::unordered_map<std::string, const corpus::Item*> item_by_id;
    std::unordered_map<std::string, std::string> review_by_pair;  // user \t item
};

LoadedRaw load_raw(const RunConfig& cfg) {
    require_file(cfg.interactions, "interactions");
    require_file(cfg.items, "items");
    LoadedRaw raw;
    raw.records = corpus::load_corpus(cfg.interactions, cfg.items);
    for (const auto& item : raw.records.items) raw.item_by_id.emplace(item.item_id, &item);
    for (const auto& it : raw.records.interactions)
        raw.review_by_pair.emplace(it.user_id + "\t" + it.item_id, it.review);
    return raw;
}

// Train-item interactions per user in position order, keyed by user id.
std::map<std::string, std::vector<corpus::Interaction>> train_interactions(
    const corpus::DatasetSplit& split, const LoadedRaw& raw) {
    std::map<std::string, std::set<std::string>> train_sets;
    for (const auto& u : split.users)
        train_sets[u.user_id] = std::set<std::string>(u.train.begin(), u.train.end());
    std::map<std::string, std::vector<corpus::Interaction>> out;
    for (const auto& it : raw.records.interactions) {
        auto ts = train_sets.find(it.user_id);
        if (ts == train_sets.end() || !ts->second.count(it.item_id)) continue;
        out[it.user_id].push_back(it);
    }
    for (auto& [_, list] : out)
        std::stable_sort(list.begin(), list.end(),
                         [](const corpus::Interaction& a, const corpus::Interaction& b) {
                             return a.position < b.position;
                         });
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

void run_preprocess(const RunConfig& cfg) {
    LoadedRaw raw = load_raw(cfg);
    log_info("parsed " + std::to_string(raw.records.interactions.size()) + " interactions, " +
             std::to_string(raw.records.items.size()) + " items, " +
             std::to_string(raw.records.rejected) + " rejected lines");

    auto filtered = corpus::filter_dataset(raw.records.interactions, cfg.min_rating,
                                           cfg.min_books);
    log_info("filter kept " + std::to_string(filtered.size()) + " interactions");

    if (cfg.slice_mode == "rich") {
        filtered = corpus::slice_rich(filtered, cfg.slice_k);
    } else if (cfg.slice_mode == "density") {
        auto mode = cfg.density_mode == "dense" ? corpus::DensityMode::dense
                                                : corpus::DensityMode::sparse;
        filtered = corpus::slice_density(filtered, cfg.slice_k, mode, cfg.seed_users,
                                         cfg.seed_items, stage_seed(cfg, "slice"));
    } else if (cfg.slice_mode != "none") {
        throw std::runtime_error("unknown slice.mode: " + cfg.slice_mode);
    }

    auto split = corpus::split_dataset(filtered, raw.records.items, cfg.test_frac,
                                       stage_seed(cfg, "split"));
    if (split.users.empty()) throw std::runtime_error("no users survived the split");
    if (split.unknown_author_items)
        log_warn(std::to_string(split.unknown_author_items) +
                 " interactions reference items without an author; disjointness degrades to "
                 "item level there");
    log_info("split: " + std::to_string(split.users.size()) + " users, " +
             std::to_string(split.all_items.size()) + " items, dropped " +
             std::to_string(split.dropped_users));

    auto out = create_artifact(cfg, "split.tsv", "preprocess");
    corpus::write_split(out, split);
}

namespace {

text::IdfTable build_pipeline_idf(const RunConfig& cfg, const corpus::DatasetSplit& split,
                                  const LoadedRaw& raw, int n) {
    if (cfg.idf_source == "external") {
        require_file(cfg.idf_path, "external idf table");
        return text::load_idf(cfg.idf_path);
    }
    if (cfg.idf_source != "corpus")
        throw std::runtime_error("unknown profile.idf_source: " + cfg.idf_source);
    std::vector<std::string> docs;
    for (const auto& [user, list] : train_interactions(split, raw))
        for (const auto& it : list)
            if (!it.review.empty()) docs.push_back(it.review);
    if (docs.empty()) docs.push_back("");  // degenerate corpora still need a table
    return text::build_idf(docs, n);
}

}  // namespace

void run_profile(const RunConfig& cfg) {
    auto split_in = open_artifact(cfg, "split.tsv", "preprocess");
    auto split = corpus::read_split(split_in);
    LoadedRaw raw = load_raw(cfg);

    profiles::ProfileConfig pcfg;
    pcfg.budget = cfg.budget;
    pcfg.chunk_count = cfg.chunks;
    pcfg.strategy = profiles::strategy_from_name(cfg.strategy);

    const int ngram_n = pcfg.strategy == profiles::Strategy::phrases2   ? 2
                        : pcfg.strategy == profiles::Strategy::phrases3 ? 3
                                                                        : 1;
    const bool needs_idf = pcfg.strategy != profiles::Strategy::basic &&
                           pcfg.strategy != profiles::Strategy::external_generated &&
                           pcfg.strategy != profiles::Strategy::keywords;
    text::IdfTable idf;
    if (needs_idf) idf = build_pipeline_idf(cfg, split, raw, ngram_n);

    std::unique_ptr<profiles::Generator> generator;
    if (pcfg.strategy == profiles::Strategy::external_generated ||
        pcfg.strategy == profiles::Strategy::keywords) {
        if (cfg.generator == "mock")
            generator = std::make_unique<profiles::MockGenerator>(cfg.mock_top_k);
        else if (cfg.generator == "spawn")
            generator = std::make_unique<profiles::SpawnGenerator>(
                cfg.generator_cmd, cfg.generator_timeout_ms, cfg.generator_retries);
        else if (cfg.generator == "http")
            generator = std::make_unique<profiles::HttpGenerator>(
                cfg.generator_url, cfg.generator_timeout_ms, cfg.generator_retries);
        else
            throw std::runtime_error("unknown profile.generator: " + cfg.generator);
    }
    std::unique_ptr<profiles::SentenceEmbedder> embedder;
    if (pcfg.strategy == profiles::Strategy::similar_sentences) {
        if (cfg.embedder == "tfidf")
            embedder = std::make_unique<profiles::TfidfEmbedder>(idf);
        else if (cfg.embedder == "process")
            embedder = std::make_unique<profiles::ProcessEmbedder>(cfg.embedder_cmd);
        else
            throw std::runtime_error("unknown profile.embedder: " + cfg.embedder);
    }

    const auto per_user = train_interactions(split, raw);
    static const std::vector<corpus::Interaction> kNoTrain;

    std::vector<const corpus::UserSplit*> users;
    users.reserve(split.users.size());
    for (const auto& u : split.users) users.push_back(&u);
    std::vector<std::vector<profiles::Profile>> built(users.size());

    parallel_for(users.size(), cfg.threads, [&](std::size_t i) {
        const auto& u = *users[i];
        auto found = per_user.find(u.user_id);
        const auto& train = found == per_user.end() ? kNoTrain : found->second;
        std::vector<std::string> reviews;
        for (const auto& it : train)
            if (!it.review.empty()) reviews.push_back(it.review);

        switch (pcfg.strategy) {
            case profiles::Strategy::phrases1:
            case profiles::Strategy::phrases2:
            case profiles::Strategy::phrases3:
            case profiles::Strategy::idf_sentences:
                if (pcfg.chunk_count > 1)
                    built[i] = profiles::chunk_profile(reviews, pcfg.strategy, pcfg.chunk_count,
                                                       idf, pcfg);
                else if (pcfg.strategy == profiles::Strategy::idf_sentences)
                    built[i] = {profiles::select_sentences_idf(reviews, idf, pcfg)};
                else
                    built[i] = {profiles::select_phrases(reviews, idf, ngram_n, pcfg)};
                break;
            case profiles::Strategy::similar_sentences: {
                std::vector<profiles::ItemReview> item_reviews;
                std::map<std::string, std::string> descriptions;
                for (const auto& it : train) {
                    if (it.review.empty()) continue;
                    item_reviews.push_back({it.item_id, it.review});
                    auto rec = raw.item_by_id.find(it.item_id);
                    if (rec != raw.item_by_id.end() && !rec->second->description.empty())
                        descriptions[it.item_id] = rec->second->description;
                }
                if (pcfg.chunk_count > 1)
                    built[i] = profiles::chunk_profile_similar(item_reviews, descriptions,
                                                               *embedder, idf,
                                                               pcfg.chunk_count, pcfg);
                else
                    built[i] = {profiles::select_sentences_similar(item_reviews, descriptions,
                                                                   *embedder, idf, pcfg)};
                break;
            }
            case profiles::Strategy::external_generated:
            case profiles::Strategy::keywords:
                built[i] = {profiles::generate_profile_external(
                    reviews, *generator, pcfg, cfg.chunk_chars, pcfg.strategy)};
                break;
            case profiles::Strategy::basic: {
                std::vector<const corpus::Item*> items;
                for (const auto& it : train) {
                    auto rec = raw.item_by_id.find(it.item_id);
                    if (rec != raw.item_by_id.end()) items.push_back(rec->second);
                }
                built[i] = {profiles::user_text_basic(items, pcfg)};
                break;
            }
            default:
                throw std::runtime_error("strategy not usable for user profiles: " +
                                         cfg.strategy);
        }
    });

    std::vector<std::pair<std::string, std::vector<profiles::Profile>>> user_rows;
    for (std::size_t i = 0; i < users.size(); ++i)
        user_rows.emplace_back(users[i]->user_id, built[i]);
    {
        auto out = create_artifact(cfg, "profiles_user.tsv", "profile");
        profiles::write_profiles(out, user_rows);
    }

    // Item profiles for the whole universe.
    const auto variant = cfg.item_variant == "basic" ? profiles::ItemVariant::basic
                        : cfg.item_variant == "expanded"
                            ? profiles::ItemVariant::expanded
                            : throw std::runtime_error("unknown profile.item_variant: " +
                                                       cfg.item_variant);
    std::vector<std::vector<profiles::Profile>> item_built(split.all_items.size());
    std::size_t missing_items = 0;
    parallel_for(split.all_items.size(), cfg.threads, [&](std::size_t i) {
        const auto& id = split.all_items[i];
        auto rec = raw.item_by_id.find(id);
        corpus::Item empty;
        if (rec == raw.item_by_id.end()) empty.item_id = id;
        item_built[i] = {
            profiles::item_text(rec == raw.item_by_id.end() ? empty : *rec->second, variant,
                                pcfg)};
    });
    for (std::size_t i = 0; i < split.all_items.size(); ++i)
        if (!raw.item_by_id.count(split.all_items[i])) ++missing_items;
    if (missing_items)
        log_warn(std::to_string(missing_items) + " items lack catalog records; empty profiles");

    std::vector<std::pair<std::string, std::vector<profiles::Profile>>> item_rows;
    for (std::size_t i = 0; i < split.all_items.size(); ++i)
        item_rows.emplace_back(split.all_items[i], item_built[i]);
    auto out = create_artifact(cfg, "profiles_item.tsv", "profile");
    profiles::write_profiles(out, item_rows);
}

void run_train_mf(const RunConfig& cfg) {
    auto split_in = open_artifact(cfg, "split.tsv", "preprocess");
    auto split = corpus::read_split(split_in);

    std::vector<std::pair<std::string, std::string>> positives;
    for (const auto& u : split.users)
        for (const auto& item : u.train) positives.emplace_back(u.user_id, item);

    mf::MfConfig mcfg;
    mcfg.dim = cfg.mf_dim;
    mcfg.learning_rate = cfg.mf_learning_rate;
    mcfg.l2_weight = cfg.mf_l2;
    mcfg.epochs = cfg.mf_epochs;
    mcfg.negatives_per_positive = cfg.mf_negatives;
    mcfg.use_bias = cfg.mf_use_bias;
    mcfg.rng_seed = stage_seed(cfg, "train-mf");

    auto result = mf::train_mf(positives, split.all_items, mcfg);
    log_info("mf final loss " + std::to_string(result.epoch_loss.back()));

    auto out = create_artifact(cfg, "mf_model.tsv", "train-mf");
    mf::save_model(out, result.model);
}

void run_sample(const RunConfig& cfg) {
    auto split_in = open_artifact(cfg, "split.tsv", "preprocess");
    auto split = corpus::read_split(split_in);

    const bool weighted = cfg.sampling_mode == "weighted";
    if (!weighted && cfg.sampling_mode != "uniform")
        throw std::runtime_error("unknown sampling.mode: " + cfg.sampling_mode);

    mf::FactorModel model;
    mf::RelatednessBounds bounds;
    if (weighted) {
        auto mf_in = open_artifact(cfg, "mf_model.tsv", "train-mf");
        model = mf::load_model(mf_in);
        // Declared normalization population: pairs that co-occur in some
        // user's training set, so the [0,1] scale spans pairs with observed
        // relatedness evidence; anything colder clamps to 0.
        std::set<std::pair<std::string, std::string>> cooc;
        for (const auto& u : split.users) {
            for (std::size_t a = 0; a < u.train.size(); ++a)
                for (std::size_t b = a + 1; b < u.train.size(); ++b)
                    cooc.insert(std::minmax(u.train[a], u.train[b]));
            if (cooc.size() > 2000000) break;
        }
        std::vector<std::pair<std::string, std::string>> population(cooc.begin(), cooc.end());
        bounds = population.empty()
                     ? mf::relatedness_bounds(model, 4000000, 1000000,
                                              stage_seed(cfg, "bounds"))
                     : mf::relatedness_bounds_over(model, population);
        log_info("relatedness bounds [" + std::to_string(bounds.lo) + ", " +
                 std::to_string(bounds.hi) + "] over " + std::to_string(population.size()) +
                 " co-occurring pairs");
    }

    std::vector<sampling::TrainingExample> examples;
    std::uint64_t seed = stage_seed(cfg, "sample");
    for (const auto& u : split.users) {
        std::unordered_set<std::string> positives(u.train.begin(), u.train.end());
        positives.insert(u.dev.begin(), u.dev.end());
        positives.insert(u.test.begin(), u.test.end());
        std::vector<std::string> pool;
        pool.reserve(split.all_items.size());
        for (const auto& item : split.all_items)
            if (!positives.count(item)) pool.push_back(item);

        for (const auto& item : u.train) examples.push_back({u.user_id, item, 1, 1.0});
        auto negatives = sampling::sample_uniform(u.user_id, u.train.size(), pool,
                                                  cfg.sampling_ratio,
                                                  seed ^ fnv1a64(u.user_id));
        if (weighted) {
            // Every sampled unlabeled item becomes a weighted clone pair.
            for (const auto& neg : negatives) {
                auto [pos_clone, neg_clone] =
                    sampling::clone_weighted(u.user_id, neg.item_id, model, bounds, u.train);
                examples.push_back(pos_clone);
                examples.push_back(neg_clone);
            }
        } else {
            examples.insert(examples.end(), negatives.begin(), negatives.end());
        }
    }
    auto out = create_artifact(cfg, "examples.tsv", "sample");
    sampling::write_examples(out, examples);
    log_info(std::to_string(examples.size()) + " training examples");
}

namespace {

towers::Scope scope_from_name(const std::string& name) {
    if (name == "head_only") return towers::Scope::head_only;
    if (name == "embeddings_and_head") return towers::Scope::embeddings_and_head;
    throw std::runtime_error("unknown train.scope: " + name);
}

towers::Pooling pooling_from_name(const std::string& name) {
    if (name == "none") return towers::Pooling::none;
    if (name == "max") return towers::Pooling::max;
    throw std::runtime_error("unknown train.chunk_pooling: " + name);
}

struct ProfileSets {
    std::vector<std::string> user_ids;
    std::vector<std::vector<std::vector<std::string>>> user_chunks;  // tokens
    std::vector<std::string> item_ids;
    std::vector<std::vector<std::string>> item_tokens;
    std::unordered_map<std::string, std::size_t> user_index;
    std::unordered_map<std::string, std::size_t> item_index;
    towers::Vocab vocab;
};

ProfileSets load_profile_sets(const RunConfig& cfg) {
    ProfileSets ps;
    {
        auto in = open_artifact(cfg, "profiles_user.tsv", "profile");
        for (auto& [id, chunks] : profiles::read_profiles(in)) {
            ps.user_index.emplace(id, ps.user_ids.size());
            ps.user_ids.push_back(id);
            std::vector<std::vector<std::string>> token_chunks;
            for (auto& p : chunks) token_chunks.push_back(std::move(p.tokens));
            ps.user_chunks.push_back(std::move(token_chunks));
        }
    }
    {
        auto in = open_artifact(cfg, "profiles_item.tsv", "profile");
        for (auto& [id, chunks] : profiles::read_profiles(in)) {
            ps.item_index.emplace(id, ps.item_ids.size());
            ps.item_ids.push_back(id);
            ps.item_tokens.push_back(std::move(chunks.front().tokens));
        }
    }
    std::vector<std::vector<std::string>> lists;
    for (const auto& chunks : ps.user_chunks)
        for (const auto& c : chunks) lists.push_back(c);
    for (const auto& t : ps.item_tokens) lists.push_back(t);
    ps.vocab = towers::Vocab::build(lists);
    return ps;
}

// CF vectors aligned with the profile sets; zeros (plus one warning) for
// entities the factor model does not know.
void attach_cf(const RunConfig& cfg, const ProfileSets& ps, const mf::FactorModel& model,
               towers::TrainData& data) {
    std::size_t missing = 0;
    data.user_cf.resize(ps.user_ids.size());
    for (std::size_t i = 0; i < ps.user_ids.size(); ++i) {
        auto u = model.user(ps.user_ids[i]);
        if (u)
            data.user_cf[i].assign(model.user_vec(*u), model.user_vec(*u) + model.dim);
        else {
            data.user_cf[i].assign(model.dim, 0.0);
            ++missing;
        }
    }
    data.item_cf.resize(ps.item_ids.size());
    for (std::size_t i = 0; i < ps.item_ids.size(); ++i) {
        auto it = model.item(ps.item_ids[i]);
        if (it)
            data.item_cf[i].assign(model.item_vec(*it), model.item_vec(*it) + model.dim);
        else {
            data.item_cf[i].assign(model.dim, 0.0);
            ++missing;
        }
    }
    if (missing)
        log_warn(std::to_string(missing) + " entities lack CF vectors; zero-padded");
    (void)cfg;
}

}  // namespace

void run_train(const RunConfig& cfg) {
    ProfileSets ps = load_profile_sets(cfg);
    std::vector<sampling::TrainingExample> examples;
    {
        auto in = open_artifact(cfg, "examples.tsv", "sample");
        examples = sampling::read_examples(in);
    }

    towers::TrainData data;
    data.user_chunks.resize(ps.user_ids.size());
    for (std::size_t i = 0; i < ps.user_ids.size(); ++i) {
        for (const auto& tokens : ps.user_chunks[i])
            data.user_chunks[i].push_back(towers::to_ids(tokens, ps.vocab));
    }
    data.item_ids_seq.resize(ps.item_ids.size());
    for (std::size_t i = 0; i < ps.item_ids.size(); ++i)
        data.item_ids_seq[i] = towers::to_ids(ps.item_tokens[i], ps.vocab);

    for (const auto& e : examples) {
        auto u = ps.user_index.find(e.user_id);
        auto it = ps.item_index.find(e.item_id);
        if (u == ps.user_index.end())
            throw std::runtime_error("example references user without profile: " + e.user_id);
        if (it == ps.item_index.end())
            throw std::runtime_error("example references item without profile: " + e.item_id);
        data.examples.push_back({u->second, it->second, static_cast<double>(e.label), e.weight});
    }

    towers::TrainConfig tcfg;
    tcfg.learning_rate = cfg.learning_rate;
    tcfg.adam_beta1 = cfg.adam_beta1;
    tcfg.adam_beta2 = cfg.adam_beta2;
    tcfg.adam_eps = cfg.adam_eps;
    tcfg.epochs = cfg.epochs;
    tcfg.batch_size = cfg.batch_size;
    tcfg.rng_seed = stage_seed(cfg, "train");
    tcfg.trainable_scope = scope_from_name(cfg.scope);
    tcfg.cf_concat = cfg.cf_concat;
    tcfg.chunk_pooling = pooling_from_name(cfg.chunk_pooling);
    tcfg.shared_embeddings = cfg.shared_embeddings;

    if (cfg.cf_concat) {
        auto mf_in = open_artifact(cfg, "mf_model.tsv", "train-mf");
        auto model = mf::load_model(mf_in);
        attach_cf(cfg, ps, model, data);
    }

    towers::TowerDims dims{cfg.embedding_dim, cfg.hidden_dim, cfg.output_dim};
    auto result = towers::train(data, dims, ps.vocab, tcfg);
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
        log_info("epoch " + std::to_string(e + 1) + " loss " +
                 std::to_string(result.epoch_loss[e]) + " (" +
                 std::to_string(result.epoch_seconds[e]) + "s)");

    fs::create_directories(cfg.workdir);
    towers::save_parameters(artifact(cfg, "towers.bin"), result.params, cfg.scope,
                            config_hash(cfg));
    auto out = create_artifact(cfg, "train_loss.tsv", "train");
    char buf[32];
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%.17g", result.epoch_loss[e]);
        out << (e + 1) << '\t' << buf << '\n';
    }
}

void run_eval(const RunConfig& cfg) {
    auto split_in = open_artifact(cfg, "split.tsv", "preprocess");
    auto split = corpus::read_split(split_in);
    ProfileSets ps = load_profile_sets(cfg);

    std::string towers_path = artifact(cfg, "towers.bin");
    if (!fs::exists(towers_path)) throw MissingArtifact(towers_path, "train");
    auto loaded = towers::load_parameters(towers_path, ps.vocab.hash, /*check_hash=*/true);
    if (loaded.config_hash != config_hash(cfg))
        throw std::runtime_error("towers.bin was trained with a different config; rerun train");
    const towers::TowerParameters& params = loaded.params;

    mf::FactorModel cf_model;
    bool have_cf = false;
    if (cfg.cf_concat) {
        auto mf_in = open_artifact(cfg, "mf_model.tsv", "train-mf");
        cf_model = mf::load_model(mf_in);
        have_cf = true;
    }

    // Candidate construction.
    struct Case {
        std::string user_id;
        std::string positive;
        std::vector<std::string> negatives;
    };
    std::vector<Case> cases;
    std::unique_ptr<std::ofstream> cand_dump;
    if (cfg.eval_mode == "standard") {
        bool warned = false;
        for (auto& c : eval::build_standard_testcases(split, stage_seed(cfg, "eval"),
                                                      cfg.eval_negatives, &warned))
            cases.push_back({c.user_id, c.positive_item, std::move(c.negatives)});
    } else if (cfg.eval_mode == "search") {
        LoadedRaw raw = load_raw(cfg);
        std::vector<std::pair<std::string, std::vector<std::string>>> docs;
        docs.reserve(split.all_items.size());
        auto doc_tokens = [&](const corpus::Item& item) {
            std::vector<std::string> tokens;
            if (cfg.bm25_include_title)
                for (auto& t : text::tokenize(item.title)) tokens.push_back(std::move(t));
            for (const auto& tag : item.tags)
                for (auto& t : text::tokenize(tag)) tokens.push_back(std::move(t));
            for (auto& t : text::tokenize(item.description)) tokens.push_back(std::move(t));
            return tokens;
        };
        for (const auto& id : split.all_items) {
            auto rec = raw.item_by_id.find(id);
            if (rec == raw.item_by_id.end())
                docs.emplace_back(id, std::vector<std::string>{});
            else
                docs.emplace_back(id, doc_tokens(*rec->second));
        }
        auto index = bm25::build_index(docs, cfg.bm25_k1, cfg.bm25_b);
        cand_dump = std::make_unique<std::ofstream>();
        *cand_dump = create_artifact(cfg, "candidates.tsv", "eval");

        std::uint64_t seed = stage_seed(cfg, "eval");
        for (const auto& u : split.users) {
            std::set<std::string> positives(u.train.begin(), u.train.end());
            positives.insert(u.dev.begin(), u.dev.end());
            positives.insert(u.test.begin(), u.test.end());
            std::set<std::string> pool;
            for (const auto& item : split.all_items)
                if (!positives.count(item)) pool.insert(item);
            for (const auto& positive : u.test) {
                auto rec = raw.item_by_id.find(positive);
                std::vector<std::string> query;
                if (rec != raw.item_by_id.end()) {
                    // Query built from tags + description (title excluded
                    // unless configured otherwise).
                    for (const auto& tag : rec->second->tags)
                        for (auto& t : text::tokenize(tag)) query.push_back(std::move(t));
                    for (auto& t : text::tokenize(rec->second->description))
                        query.push_back(std::move(t));
                }
                auto hits = bm25::candidates_for(index, positive, query, pool,
                                                 cfg.eval_negatives,
                                                 seed ^ fnv1a64(u.user_id) ^ fnv1a64(positive));
                bm25::write_candidates(*cand_dump, positive, hits);
                Case c;
                c.user_id = u.user_id;
                c.positive = positive;
                for (auto& h : hits) c.negatives.push_back(std::move(h.item_id));
                cases.push_back(std::move(c));
            }
        }
    } else {
        throw std::runtime_error("unknown eval.mode: " + cfg.eval_mode);
    }

    // Precompute item vectors once, reuse across users.
    const int cf_dim = have_cf ? cf_model.dim : 0;
    std::vector<std::vector<double>> item_vecs(ps.item_ids.size());
    std::size_t cf_missing = 0;
    parallel_for(ps.item_ids.size(), cfg.threads, [&](std::size_t i) {
        auto vec = towers::encode(params, false, towers::to_ids(ps.item_tokens[i], ps.vocab));
        if (have_cf) {
            auto idx = cf_model.item(ps.item_ids[i]);
            bool warned = false;
            vec = towers::concat_cf(vec, idx ? cf_model.item_vec(*idx) : nullptr, cf_dim,
                                    &warned);
        }
        item_vecs[i] = std::move(vec);
    });
    if (have_cf)
        for (std::size_t i = 0; i < ps.item_ids.size(); ++i)
            if (!cf_model.item(ps.item_ids[i])) ++cf_missing;

    std::vector<std::vector<double>> user_vecs(ps.user_ids.size());
    parallel_for(ps.user_ids.size(), cfg.threads, [&](std::size_t i) {
        std::vector<towers::IdSeq> chunks;
        for (const auto& tokens : ps.user_chunks[i])
            chunks.push_back(towers::to_ids(tokens, ps.vocab));
        auto vec = towers::encode_chunks_pooled(params, true, chunks);
        if (have_cf) {
            auto idx = cf_model.user(ps.user_ids[i]);
            bool warned = false;
            vec = towers::concat_cf(vec, idx ? cf_model.user_vec(*idx) : nullptr, cf_dim,
                                    &warned);
        }
        user_vecs[i] = std::move(vec);
    });
    if (cf_missing) log_warn(std::to_string(cf_missing) + " items lack CF vectors (zero-padded)");

    auto groups = eval::assign_groups(split);
    std::vector<eval::EvalRecord> records(cases.size());
    parallel_for(cases.size(), cfg.threads, [&](std::size_t ci) {
        const auto& c = cases[ci];
        auto ui = ps.user_index.find(c.user_id);
        if (ui == ps.user_index.end())
            throw std::runtime_error("no profile for user " + c.user_id);
        std::vector<std::pair<std::string, const std::vector<double>*>> cands;
        cands.reserve(c.negatives.size() + 1);
        auto vec_of = [&](const std::string& item) -> const std::vector<double>* {
            auto it = ps.item_index.find(item);
            if (it == ps.item_index.end())
                throw std::runtime_error("no profile for item " + item);
            return &item_vecs[it->second];
        };
        cands.emplace_back(c.positive, vec_of(c.positive));
        for (const auto& n : c.negatives) cands.emplace_back(n, vec_of(n));
        auto ranked = towers::rank_candidates(user_vecs[ui->second], cands);
        int rank = 0;
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            if (ranked[r].item_id == c.positive) {
                rank = static_cast<int>(r) + 1;
                break;
            }
        }
        eval::EvalRecord rec;
        rec.user_id = c.user_id;
        rec.positive_item = c.positive;
        rec.rank_of_positive = rank;
        rec.item_seen = groups.item_seen(c.positive);
        rec.user_group = groups.user_group(c.user_id);
        rec.ndcg5 = eval::ndcg_at_k(rank, 5);
        rec.p1 = eval::p_at_1(rank);
        records[ci] = std::move(rec);
    });

    auto out = create_artifact(cfg, "eval_records.tsv", "eval");
    eval::write_records(out, records);
    log_info(std::to_string(records.size()) + " eval records (" + cfg.eval_mode + " mode)");
}

void run_report(const RunConfig& cfg) {
    auto in = open_artifact(cfg, "eval_records.tsv", "eval");
    auto records = eval::read_records(in);
    auto report = eval::aggregate(records);
    {
        auto out = create_artifact(cfg, "report.tsv", "report");
        eval::write_report_tsv(out, report, {}, cfg.report_macro);
    }
    {
        auto out = create_artifact(cfg, "report.txt", "report");
        eval::write_report_table(out, report);
    }
    std::ostringstream table;
    eval::write_report_table(table, report);
    std::fputs(table.str().c_str(), stdout);
}

void run_stage(const std::string& name, const RunConfig& cfg) {
    auto timed = [&](const char* stage, const std::function<void()>& fn) {
        auto t0 = std::chrono::steady_clock::now();
        log_info(std::string("stage ") + stage + " start: seed=" + std::to_string(cfg.seed) +
                 " config=" + config_hash(cfg) + " threads=" + std::to_string(cfg.threads) +
                 " kernels=" + kernels::backend_name(kernels::active_backend()));
        fn();
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log_info(std::string("stage ") + stage + " done in " + std::to_string(secs) + "s");
    };
    if (name == "preprocess") return timed("preprocess", [&] { run_preprocess(cfg); });
    if (name == "profile") return timed("profile", [&] { run_profile(cfg); });
    if (name == "train-mf") return timed("train-mf", [&] { run_train_mf(cfg); });
    if (name == "sample") return timed("sample", [&] { run_sample(cfg); });
    if (name == "train") return timed("train", [&] { run_train(cfg); });
    if (name == "eval") return timed("eval", [&] { run_eval(cfg); });
    if (name == "report") return timed("report", [&] { run_report(cfg); });
    if (name == "all") {
        for (const char* stage :
             {"preprocess", "profile", "train-mf", "sample", "train", "eval", "report"}) {
            // train-mf is only needed by weighted sampling / CF concat.
            if (std::string(stage) == "train-mf" && cfg.sampling_mode != "weighted" &&
                !cfg.cf_concat)
                continue;
            run_stage(stage, cfg);
        }
        return;
    }
    throw std::runtime_error("unknown stage: " + name);
}

int run_cli(int argc, char** argv) {
    CLI::App app{"review-profile two-tower recommender pipeline"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::string stage_flag;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> threads_override;
    app.add_option("--config", config_path, "path to the run config file")->required();
    app.add_option("--seed", seed_override, "override [run] seed");
    app.add_option("--threads", threads_override, "override [run] threads");
    app.add_option("--stage", stage_flag,
                   "stage to run (alternative to the subcommands): preprocess, profile, "
                   "train-mf, sample, train, eval, report, all");

    std::vector<std::string> stages = {"preprocess", "profile", "train-mf", "sample",
                                       "train",      "eval",    "report",   "all"};
    std::map<std::string, CLI::App*> subs;
    for (const auto& s : stages) {
        subs[s] = app.add_subcommand(s, "run the " + s + " stage");
        subs[s]->fallthrough();  // root options may follow the subcommand
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    std::string stage = stage_flag;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) {
            if (!stage.empty() && stage != name) {
                std::fprintf(stderr, "error: --stage %s conflicts with subcommand %s\n",
                             stage.c_str(), name.c_str());
                return 1;
            }
            stage = name;
        }
    if (stage.empty()) {
        std::fprintf(stderr, "error: no stage given (use a subcommand or --stage)\n");
        return 1;
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (seed_override) cfg.seed = *seed_override;
        if (threads_override) cfg.threads = *threads_override;
        if (const char* env = std::getenv("PROFREC_WORKDIR"); env && *env) cfg.workdir = env;
        run_stage(stage, cfg);
    } catch (const MissingArtifact& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace profrec::pipeline

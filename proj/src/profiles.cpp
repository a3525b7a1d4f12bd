#include "profrec/profiles.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "profrec/log.hpp"

namespace profrec::profiles {

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::phrases1: return "phrases1";
        case Strategy::phrases2: return "phrases2";
        case Strategy::phrases3: return "phrases3";
        case Strategy::idf_sentences: return "idf_sentences";
        case Strategy::similar_sentences: return "similar_sentences";
        case Strategy::external_generated: return "external_generated";
        case Strategy::keywords: return "keywords";
        case Strategy::basic: return "basic";
        case Strategy::expanded: return "expanded";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& name) {
    for (Strategy s : {Strategy::phrases1, Strategy::phrases2, Strategy::phrases3,
                       Strategy::idf_sentences, Strategy::similar_sentences,
                       Strategy::external_generated, Strategy::keywords, Strategy::basic,
                       Strategy::expanded}) {
        if (name == strategy_name(s)) return s;
    }
    throw std::invalid_argument("unknown profile strategy: " + name);
}

namespace {

int ngram_order(Strategy s) {
    switch (s) {
        case Strategy::phrases1: return 1;
        case Strategy::phrases2: return 2;
        case Strategy::phrases3: return 3;
        default: return 0;
    }
}

// Ranked n-gram stream: (term, weight) by descending weight, ties
// lexicographic; tf is summed over all reviews, n-grams never cross
// review boundaries.
std::vector<std::string> ranked_phrases(const std::vector<std::string>& reviews,
                                        const text::IdfTable& idf, int n) {
    std::map<std::string, std::size_t> tf;
    for (const auto& review : reviews)
        for (auto& g : text::ngrams(text::tokenize(review), n)) ++tf[g];
    struct Entry {
        double weight;
        const std::string* term;
    };
    std::vector<Entry> entries;
    entries.reserve(tf.size());
    for (const auto& [term, count] : tf) {
        double w = idf.weight(term) * static_cast<double>(count);
        if (w > 0.0) entries.push_back({w, &term});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return *a.term < *b.term;
    });
    std::vector<std::string> ranked;
    ranked.reserve(entries.size());
    for (const auto& e : entries) ranked.push_back(*e.term);
    return ranked;
}

double mean_idf_score(const std::vector<std::string>& words, const text::IdfTable& idf) {
    double sum = 0.0;
    for (const auto& w : words) sum += idf.weight(w);
    return sum / static_cast<double>(words.size());
}

// Sentences of all reviews, exact duplicates removed, ranked by mean
// per-word idf (ties lexicographic on the raw sentence).
std::vector<std::string> ranked_sentences_idf(const std::vector<std::string>& reviews,
                                              const text::IdfTable& idf) {
    struct Entry {
        double score;
        std::string sentence;
    };
    std::vector<Entry> entries;
    std::set<std::string> seen;
    for (const auto& review : reviews) {
        for (auto& s : text::split_sentences(review)) {
            if (!seen.insert(s).second) continue;
            auto words = text::tokenize(s);
            if (words.empty()) continue;
            entries.push_back({mean_idf_score(words, idf), std::move(s)});
        }
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.sentence < b.sentence;
    });
    std::vector<std::string> ranked;
    ranked.reserve(entries.size());
    for (auto& e : entries) ranked.push_back(std::move(e.sentence));
    return ranked;
}

std::vector<std::string> sentence_token_stream(const std::vector<std::string>& sentences) {
    std::vector<std::string> stream;
    for (const auto& s : sentences)
        for (auto& t : text::tokenize(s)) stream.push_back(std::move(t));
    return stream;
}

Profile cut_profile(std::vector<std::string> stream, int budget, Strategy provenance) {
    Profile p;
    p.budget = budget;
    p.provenance = provenance;
    if (static_cast<int>(stream.size()) > budget) stream.resize(budget);
    p.tokens = std::move(stream);
    return p;
}

// Per-item ranked sentence lists in interaction order, then interleaved
// round-robin (or globally merged when round_robin is off).
std::vector<std::string> similar_sentence_stream(
    const std::vector<ItemReview>& reviews_by_item,
    const std::map<std::string, std::string>& item_descriptions, const SentenceEmbedder& embed,
    const text::IdfTable& idf, bool round_robin) {
    struct Scored {
        double score;
        std::string sentence;
    };
    std::vector<std::vector<Scored>> per_item;
    std::vector<std::string> item_order;
    std::map<std::string, std::size_t> item_slot;

    for (const auto& ir : reviews_by_item) {
        std::size_t slot;
        auto it = item_slot.find(ir.item_id);
        if (it == item_slot.end()) {
            slot = per_item.size();
            item_slot.emplace(ir.item_id, slot);
            item_order.push_back(ir.item_id);
            per_item.emplace_back();
        } else {
            slot = it->second;
        }
        auto desc = item_descriptions.find(ir.item_id);
        bool has_desc = desc != item_descriptions.end() && !desc->second.empty();
        text::SparseVec desc_vec;
        if (has_desc) {
            desc_vec = embed.embed(desc->second);
            if (desc_vec.empty()) has_desc = false;
        }
        for (auto& s : text::split_sentences(ir.review)) {
            auto words = text::tokenize(s);
            if (words.empty()) continue;
            double score = has_desc ? text::cosine(embed.embed(s), desc_vec)
                                    : mean_idf_score(words, idf);
            per_item[slot].push_back({score, std::move(s)});
        }
    }
    for (auto& list : per_item)
        std::sort(list.begin(), list.end(), [](const Scored& a, const Scored& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.sentence < b.sentence;
        });

    std::vector<std::string> ordered;
    std::set<std::string> emitted;
    if (round_robin) {
        std::vector<std::size_t> cursor(per_item.size(), 0);
        bool progress = true;
        while (progress) {
            progress = false;
            for (std::size_t i = 0; i < per_item.size(); ++i) {
                while (cursor[i] < per_item[i].size()) {
                    const auto& s = per_item[i][cursor[i]++].sentence;
                    if (emitted.insert(s).second) {
                        ordered.push_back(s);
                        progress = true;
                        break;
                    }
                }
            }
        }
    } else {
        std::vector<Scored> merged;
        for (auto& list : per_item)
            for (auto& s : list) merged.push_back(std::move(s));
        std::sort(merged.begin(), merged.end(), [](const Scored& a, const Scored& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.sentence < b.sentence;
        });
        for (auto& s : merged)
            if (emitted.insert(s.sentence).second) ordered.push_back(std::move(s.sentence));
    }
    return sentence_token_stream(ordered);
}

}  // namespace

Profile select_phrases(const std::vector<std::string>& user_reviews, const text::IdfTable& idf,
                       int n, const ProfileConfig& cfg) {
    Profile p;
    p.budget = cfg.budget;
    p.provenance = n == 1 ? Strategy::phrases1 : (n == 2 ? Strategy::phrases2 : Strategy::phrases3);
    for (const auto& term : ranked_phrases(user_reviews, idf, n)) {
        std::vector<std::string> parts;
        std::istringstream ts(term);
        std::string tok;
        while (ts >> tok) parts.push_back(tok);
        if (p.tokens.size() + parts.size() > static_cast<std::size_t>(cfg.budget)) break;
        for (auto& t : parts) p.tokens.push_back(std::move(t));
    }
    return p;
}

Profile select_sentences_idf(const std::vector<std::string>& user_reviews,
                             const text::IdfTable& idf, const ProfileConfig& cfg) {
    auto stream = sentence_token_stream(ranked_sentences_idf(user_reviews, idf));
    return cut_profile(std::move(stream), cfg.budget, Strategy::idf_sentences);
}

Profile select_sentences_similar(const std::vector<ItemReview>& reviews_by_item,
                                 const std::map<std::string, std::string>& item_descriptions,
                                 const SentenceEmbedder& embed, const text::IdfTable& idf,
                                 const ProfileConfig& cfg) {
    auto stream = similar_sentence_stream(reviews_by_item, item_descriptions, embed, idf,
                                          cfg.round_robin);
    return cut_profile(std::move(stream), cfg.budget, Strategy::similar_sentences);
}

// ---------------------------------------------------------------------------
// External generator adapters

namespace {

// Runs `cmd` through /bin/sh, feeding `input` on stdin and collecting
// stdout; kills the child on deadline overrun. Throws on any failure.
std::string run_process(const std::string& cmd, const std::string& input, int timeout_ms) {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0) throw std::runtime_error("pipe() failed");
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw std::runtime_error("pipe() failed");
    }
    pid_t pid = fork();
    if (pid < 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
        throw std::runtime_error("fork() failed");
    }
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
        execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);

    signal(SIGPIPE, SIG_IGN);
    std::size_t written = 0;
    while (written < input.size()) {
        ssize_t n = write(in_pipe[1], input.data() + written, input.size() - written);
        if (n <= 0) break;  // child may legitimately stop reading
        written += static_cast<std::size_t>(n);
    }
    close(in_pipe[1]);

    std::string output;
    char buf[4096];
    auto deadline_ms = timeout_ms;
    bool timed_out = false;
    for (;;) {
        struct pollfd pfd = {out_pipe[0], POLLIN, 0};
        int pr = poll(&pfd, 1, deadline_ms > 0 ? std::min(deadline_ms, 100) : 100);
        if (pr > 0) {
            ssize_t n = read(out_pipe[0], buf, sizeof(buf));
            if (n <= 0) break;
            output.append(buf, static_cast<std::size_t>(n));
            continue;
        }
        deadline_ms -= 100;
        if (deadline_ms <= 0) {
            timed_out = true;
            break;
        }
    }
    close(out_pipe[0]);
    if (timed_out) kill(pid, SIGKILL);
    int status = 0;
    waitpid(pid, &status, 0);
    if (timed_out) throw std::runtime_error("generator command timed out: " + cmd);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw std::runtime_error("generator command failed (" +
                                 std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) +
                                 "): " + cmd);
    return output;
}

}  // namespace

text::SparseVec ProcessEmbedder::embed(const std::string& sentence) const {
    std::string line = sentence;
    std::replace(line.begin(), line.end(), '\n', ' ');
    std::string out = run_process(cmd_, line + "\n", 10000);
    std::istringstream is(out);
    text::SparseVec v;
    double x;
    std::size_t dim = 0;
    while (is >> x) {
        if (x != 0.0) {
            // Dense dimensions become zero-padded synthetic terms so the
            // sparse cosine applies unchanged.
            char key[16];
            std::snprintf(key, sizeof(key), "%08zu", dim);
            v.entries.emplace_back(key, x);
        }
        ++dim;
    }
    return v;
}

std::string MockGenerator::generate(const std::string& chunk) const {
    std::map<std::string, std::size_t> counts;
    for (auto& t : text::tokenize(chunk)) ++counts[t];
    struct Entry {
        std::size_t count;
        const std::string* token;
    };
    std::vector<Entry> entries;
    for (const auto& [t, c] : counts) entries.push_back({c, &t});
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.count != b.count) return a.count > b.count;
        return *a.token < *b.token;
    });
    std::string out;
    for (std::size_t i = 0; i < entries.size() && i < static_cast<std::size_t>(top_k_); ++i) {
        if (!out.empty()) out += ' ';
        out += *entries[i].token;
    }
    return out;
}

std::string SpawnGenerator::generate(const std::string& chunk) const {
    std::string last_error;
    for (int attempt = 0; attempt <= retries_; ++attempt) {
        try {
            return run_process(cmd_, chunk, timeout_ms_);
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    throw std::runtime_error(last_error);
}

std::string HttpGenerator::generate(const std::string& chunk) const {
    auto scheme_end = url_.find("://");
    if (scheme_end == std::string::npos) throw std::runtime_error("bad generator url: " + url_);
    auto path_start = url_.find('/', scheme_end + 3);
    std::string base = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);

    std::string last_error;
    for (int attempt = 0; attempt <= retries_; ++attempt) {
        httplib::Client client(base);
        client.set_connection_timeout(0, timeout_ms_ * 1000);
        client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        auto res = client.Post(path, chunk, "text/plain");
        if (res && res->status == 200) return res->body;
        last_error = res ? "http status " + std::to_string(res->status)
                         : "http error " + httplib::to_string(res.error());
    }
    throw std::runtime_error("generator endpoint failed: " + last_error);
}

Profile generate_profile_external(const std::vector<std::string>& user_reviews,
                                  const Generator& gen, const ProfileConfig& cfg,
                                  int chunk_chars, Strategy provenance) {
    Profile p;
    p.budget = cfg.budget;
    p.provenance = provenance;

    std::string full;
    for (const auto& r : user_reviews) {
        if (!full.empty()) full += ' ';
        full += r;
    }
    std::vector<std::string> chunks;
    std::size_t pos = 0;
    while (pos < full.size()) {
        std::size_t len = std::min<std::size_t>(chunk_chars, full.size() - pos);
        if (pos + len < full.size()) {
            // Prefer a whitespace boundary; fall back to a hard cut on a
            // UTF-8 boundary.
            std::size_t cut = full.rfind(' ', pos + len);
            if (cut != std::string::npos && cut > pos)
                len = cut - pos;
            else
                while (len > 1 && (static_cast<unsigned char>(full[pos + len]) & 0xC0) == 0x80)
                    --len;
        }
        chunks.push_back(full.substr(pos, len));
        pos += len;
        while (pos < full.size() && full[pos] == ' ') ++pos;
    }
    if (chunks.empty()) return p;

    const int per_chunk_cap =
        std::max(1, cfg.budget / static_cast<int>(chunks.size()));
    std::size_t failures = 0;
    for (const auto& chunk : chunks) {
        std::string out;
        try {
            out = gen.generate(chunk);
        } catch (const std::exception& e) {
            ++failures;
            log_warn(std::string("generator chunk failed: ") + e.what());
            continue;
        }
        int taken = 0;
        for (auto& t : text::tokenize(out)) {
            if (taken >= per_chunk_cap) break;
            if (p.tokens.size() >= static_cast<std::size_t>(cfg.budget)) break;
            p.tokens.push_back(std::move(t));
            ++taken;
        }
    }
    if (failures == chunks.size())
        throw std::runtime_error("external generator failed on every chunk");
    return p;
}

Profile item_text(const corpus::Item& item, ItemVariant variant, const ProfileConfig& cfg) {
    std::vector<std::string> stream = text::tokenize(item.title);
    for (const auto& tag : item.tags)
        for (auto& t : text::tokenize(tag)) stream.push_back(std::move(t));
    if (variant == ItemVariant::expanded)
        for (auto& t : text::tokenize(item.description)) stream.push_back(std::move(t));
    return cut_profile(std::move(stream), cfg.budget,
                       variant == ItemVariant::basic ? Strategy::basic : Strategy::expanded);
}

Profile user_text_basic(const std::vector<const corpus::Item*>& train_items,
                        const ProfileConfig& cfg) {
    std::map<std::string, std::size_t> counts;
    for (const corpus::Item* item : train_items) {
        std::set<std::string> dedup(item->tags.begin(), item->tags.end());
        for (const auto& t : dedup) ++counts[t];
    }
    struct Entry {
        std::size_t count;
        const std::string* tag;
    };
    std::vector<Entry> entries;
    for (const auto& [t, c] : counts) entries.push_back({c, &t});
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.count != b.count) return a.count > b.count;
        return *a.tag < *b.tag;
    });
    std::vector<std::string> stream;
    for (const auto& e : entries)
        for (auto& t : text::tokenize(*e.tag)) stream.push_back(std::move(t));
    return cut_profile(std::move(stream), cfg.budget, Strategy::basic);
}

namespace {

std::vector<Profile> cut_chunks(std::vector<std::string> stream, int m, int budget,
                                Strategy provenance) {
    std::vector<Profile> out;
    std::size_t pos = 0;
    for (int c = 0; c < m; ++c) {
        Profile p;
        p.budget = budget;
        p.provenance = provenance;
        for (int i = 0; i < budget && pos < stream.size(); ++i, ++pos)
            p.tokens.push_back(std::move(stream[pos]));
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

std::vector<Profile> chunk_profile(const std::vector<std::string>& user_reviews,
                                   Strategy strategy, int m, const text::IdfTable& idf,
                                   const ProfileConfig& cfg) {
    if (m < 1) throw std::invalid_argument("chunk count must be >= 1");
    std::vector<std::string> stream;
    if (int n = ngram_order(strategy); n > 0) {
        for (const auto& term : ranked_phrases(user_reviews, idf, n)) {
            std::istringstream ts(term);
            std::string tok;
            while (ts >> tok) stream.push_back(tok);
            if (stream.size() >= static_cast<std::size_t>(m) * cfg.budget) break;
        }
    } else if (strategy == Strategy::idf_sentences) {
        stream = sentence_token_stream(ranked_sentences_idf(user_reviews, idf));
    } else {
        throw std::invalid_argument(std::string("strategy ") + strategy_name(strategy) +
                                    " does not support chunking");
    }
    return cut_chunks(std::move(stream), m, cfg.budget, strategy);
}

std::vector<Profile> chunk_profile_similar(
    const std::vector<ItemReview>& reviews_by_item,
    const std::map<std::string, std::string>& item_descriptions, const SentenceEmbedder& embed,
    const text::IdfTable& idf, int m, const ProfileConfig& cfg) {
    if (m < 1) throw std::invalid_argument("chunk count must be >= 1");
    auto stream = similar_sentence_stream(reviews_by_item, item_descriptions, embed, idf,
                                          cfg.round_robin);
    return cut_chunks(std::move(stream), m, cfg.budget, Strategy::similar_sentences);
}

void write_profiles(std::ostream& out,
                    const std::vector<std::pair<std::string, std::vector<Profile>>>& rows,
                    const std::vector<std::string>& header_comments) {
    for (const auto& c : header_comments) out << "# " << c << "\n";
    for (const auto& [id, chunks] : rows) {
        for (const auto& p : chunks) {
            out << id << '\t' << strategy_name(p.provenance) << '\t';
            for (std::size_t i = 0; i < p.tokens.size(); ++i) {
                if (i) out << ' ';
                out << p.tokens[i];
            }
            out << '\n';
        }
    }
}

std::vector<std::pair<std::string, std::vector<Profile>>> read_profiles(std::istream& in) {
    std::vector<std::pair<std::string, std::vector<Profile>>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto t1 = line.find('\t');
        auto t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw std::runtime_error("bad profile dump line: " + line);
        std::string id = line.substr(0, t1);
        Profile p;
        p.provenance = strategy_from_name(line.substr(t1 + 1, t2 - t1 - 1));
        std::istringstream ts(line.substr(t2 + 1));
        std::string tok;
        while (ts >> tok) p.tokens.push_back(tok);
        p.budget = std::max<int>(128, p.tokens.size());
        if (!rows.empty() && rows.back().first == id)
            rows.back().second.push_back(std::move(p));
        else
            rows.emplace_back(id, std::vector<Profile>{std::move(p)});
    }
    return rows;
}

}  // namespace profrec::profiles

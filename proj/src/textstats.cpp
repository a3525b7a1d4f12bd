#include "profrec/textstats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace profrec::text {

namespace {

// Unicode punctuation treated as separators on top of ASCII punctuation:
// general punctuation block (dashes, curly quotes, ellipsis) plus a few
// Latin-1 marks. Everything else non-ASCII is kept as token material.
bool is_unicode_separator(char32_t cp) {
    if (cp >= 0x2000 && cp <= 0x206F) return true;   // general punctuation
    if (cp >= 0x00A0 && cp <= 0x00BF) return true;   // Latin-1 punctuation/symbols
    if (cp == 0x2E3A || cp == 0x2E3B) return true;
    return false;
}

// Decodes one UTF-8 code point; advances i. Invalid bytes decode as U+FFFD.
char32_t decode_utf8(std::string_view s, std::size_t& i) {
    unsigned char c = s[i];
    std::size_t len = 1;
    char32_t cp = 0xFFFD;
    if (c < 0x80) {
        cp = c;
    } else if ((c >> 5) == 0x6 && i + 1 < s.size()) {
        cp = (c & 0x1F) << 6 | (s[i + 1] & 0x3F);
        len = 2;
    } else if ((c >> 4) == 0xE && i + 2 < s.size()) {
        cp = (c & 0x0F) << 12 | (s[i + 1] & 0x3F) << 6 | (s[i + 2] & 0x3F);
        len = 3;
    } else if ((c >> 3) == 0x1E && i + 3 < s.size()) {
        cp = (c & 0x07) << 18 | (s[i + 1] & 0x3F) << 12 | (s[i + 2] & 0x3F) << 6 |
             (s[i + 3] & 0x3F);
        len = 4;
    }
    i += len;
    return cp;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    std::size_t i = 0;
    while (i < text.size()) {
        unsigned char c = text[i];
        if (c < 0x80) {
            ++i;
            if (std::isalnum(c)) {
                cur.push_back(static_cast<char>(std::tolower(c)));
            } else if (!cur.empty()) {
                tokens.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            char32_t cp = decode_utf8(text, i);
            if (cp == 0xFFFD || is_unicode_separator(cp)) {
                if (!cur.empty()) {
                    tokens.push_back(std::move(cur));
                    cur.clear();
                }
            } else {
                append_utf8(cur, cp);
            }
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> sentences;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        std::size_t b = start, e = end;
        while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
        if (e > b) sentences.emplace_back(text.substr(b, e - b));
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            bool at_end = (i + 1 == text.size());
            bool before_space =
                !at_end && std::isspace(static_cast<unsigned char>(text[i + 1]));
            if (at_end || before_space) {
                flush(i + 1);
                start = i + 1;
            }
        }
    }
    flush(text.size());
    return sentences;
}

double SparseVec::norm() const {
    double s = 0.0;
    for (const auto& [t, w] : entries) s += w * w;
    return std::sqrt(s);
}

double dot(const SparseVec& a, const SparseVec& b) {
    double s = 0.0;
    auto ia = a.entries.begin();
    auto ib = b.entries.begin();
    while (ia != a.entries.end() && ib != b.entries.end()) {
        int cmp = ia->first.compare(ib->first);
        if (cmp < 0) {
            ++ia;
        } else if (cmp > 0) {
            ++ib;
        } else {
            s += ia->second * ib->second;
            ++ia;
            ++ib;
        }
    }
    return s;
}

double cosine(const SparseVec& a, const SparseVec& b) {
    if (a.empty() || b.empty()) return 0.0;
    double na = a.norm();
    double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

std::vector<std::string> ngrams(const std::vector<std::string>& tokens, int n) {
    std::vector<std::string> out;
    if (n <= 0 || tokens.size() < static_cast<std::size_t>(n)) return out;
    out.reserve(tokens.size() - n + 1);
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (int j = 1; j < n; ++j) {
            g += ' ';
            g += tokens[i + j];
        }
        out.push_back(std::move(g));
    }
    return out;
}

IdfTable build_idf(const std::vector<std::string>& documents, int n) {
    if (n < 1 || n > 3) throw std::invalid_argument("idf ngram order must be 1..3");
    if (documents.empty()) throw std::invalid_argument("idf needs at least one document");
    std::unordered_map<std::string, std::size_t> df;
    for (const auto& doc : documents) {
        std::set<std::string> seen;
        for (auto& g : ngrams(tokenize(doc), n)) seen.insert(std::move(g));
        for (const auto& g : seen) ++df[g];
    }
    IdfTable table;
    table.doc_count = documents.size();
    table.ngram_order = n;
    table.source = IdfSource::corpus;
    double num = 1.0 + static_cast<double>(documents.size());
    table.weights.reserve(df.size());
    for (const auto& [term, count] : df)
        table.weights.emplace(term, std::log(num / (1.0 + static_cast<double>(count))));
    return table;
}

IdfTable load_idf(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open idf table: " + path);
    IdfTable table;
    table.source = IdfSource::external;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("idf table line " + std::to_string(lineno) +
                                     ": expected term\\tweight");
        double w = std::stod(line.substr(tab + 1));
        if (w < 0.0)
            throw std::runtime_error("idf table line " + std::to_string(lineno) +
                                     ": negative weight");
        table.weights[line.substr(0, tab)] = w;
    }
    return table;
}

SparseVec tfidf_vector(std::string_view text, const IdfTable& idf, int n) {
    std::map<std::string, std::size_t> tf;
    for (auto& g : ngrams(tokenize(text), n)) ++tf[g];
    SparseVec v;
    v.entries.reserve(tf.size());
    for (const auto& [term, count] : tf) {
        double w = idf.weight(term);
        if (w > 0.0) v.entries.emplace_back(term, static_cast<double>(count) * w);
    }
    return v;  // map iteration is already term-sorted
}

IdfTable uniform_idf(const std::vector<std::string>& documents, int n, double w) {
    IdfTable table;
    table.doc_count = documents.size();
    table.ngram_order = n;
    table.source = IdfSource::external;
    for (const auto& doc : documents)
        for (auto& g : ngrams(tokenize(doc), n)) table.weights.emplace(std::move(g), w);
    return table;
}

}  // namespace profrec::text

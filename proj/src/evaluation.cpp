#include "profrec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "profrec/log.hpp"
#include "profrec/rng.hpp"

namespace profrec::eval {

double ndcg_at_k(int rank_of_positive, int k) {
    if (rank_of_positive < 1) throw std::invalid_argument("rank must be >= 1");
    if (rank_of_positive > k) return 0.0;
    // Single relevant item with binary gain: ideal DCG is 1.
    return 1.0 / std::log2(static_cast<double>(rank_of_positive) + 1.0);
}

int p_at_1(int rank_of_positive) {
    if (rank_of_positive < 1) throw std::invalid_argument("rank must be >= 1");
    return rank_of_positive == 1 ? 1 : 0;
}

std::vector<EvalCase> build_standard_testcases(const corpus::DatasetSplit& split,
                                               std::uint64_t rng_seed, int negatives,
                                               bool* warned) {
    if (negatives < 1) throw std::invalid_argument("negatives must be >= 1");
    std::vector<EvalCase> cases;
    for (const auto& user : split.users) {
        std::unordered_set<std::string> positives;
        for (const auto& i : user.train) positives.insert(i);
        for (const auto& i : user.dev) positives.insert(i);
        for (const auto& i : user.test) positives.insert(i);
        std::vector<std::string> pool;
        pool.reserve(split.all_items.size());
        for (const auto& item : split.all_items)
            if (!positives.count(item)) pool.push_back(item);

        bool small_pool = pool.size() < static_cast<std::size_t>(negatives);
        if (small_pool) {
            if (warned) *warned = true;
            log_warn("user " + user.user_id +
                     ": unlabeled pool smaller than the negative count, sampling with "
                     "replacement");
        }
        for (const auto& positive : user.test) {
            EvalCase c;
            c.user_id = user.user_id;
            c.positive_item = positive;
            Rng rng(rng_seed ^ fnv1a64(user.user_id) ^ fnv1a64(positive));
            if (small_pool) {
                if (pool.empty()) continue;
                for (int k = 0; k < negatives; ++k)
                    c.negatives.push_back(pool[rng.uniform_u64(pool.size())]);
            } else {
                std::unordered_set<std::size_t> chosen;
                while (c.negatives.size() < static_cast<std::size_t>(negatives)) {
                    std::size_t j = rng.uniform_u64(pool.size());
                    if (chosen.insert(j).second) c.negatives.push_back(pool[j]);
                }
            }
            cases.push_back(std::move(c));
        }
    }
    return cases;
}

UserGroup GroupAssignment::user_group(const std::string& user_id) const {
    auto it = user_groups.find(user_id);
    if (it == user_groups.end())
        throw std::invalid_argument("unknown user in group assignment: " + user_id);
    return it->second;
}

GroupAssignment assign_groups(const corpus::DatasetSplit& split) {
    GroupAssignment ga;
    std::vector<int> counts;
    counts.reserve(split.users.size());
    for (const auto& u : split.users)
        counts.push_back(static_cast<int>(u.train.size() + u.dev.size() + u.test.size()));
    if (counts.empty()) return ga;
    std::vector<int> sorted = counts;
    std::sort(sorted.begin(), sorted.end());
    auto nearest_rank = [&](double p) {
        std::size_t rank = static_cast<std::size_t>(
            std::ceil(p * static_cast<double>(sorted.size())));
        rank = std::max<std::size_t>(1, std::min(rank, sorted.size()));
        return sorted[rank - 1];
    };
    ga.threshold50 = nearest_rank(0.50);
    ga.threshold90 = nearest_rank(0.90);
    for (std::size_t i = 0; i < split.users.size(); ++i) {
        UserGroup g = counts[i] <= ga.threshold50   ? UserGroup::sporadic
                      : counts[i] <= ga.threshold90 ? UserGroup::regular
                                                    : UserGroup::bibliophilic;
        ga.user_groups.emplace(split.users[i].user_id, g);
    }
    for (const auto& u : split.users)
        for (const auto& item : u.train) ga.seen_items.insert(item);
    return ga;
}

const char* user_group_name(UserGroup g) {
    switch (g) {
        case UserGroup::sporadic: return "s";
        case UserGroup::regular: return "r";
        case UserGroup::bibliophilic: return "b";
    }
    return "?";
}

namespace {

std::string cell_key(bool item_seen, UserGroup g) {
    return std::string(item_seen ? "s" : "u") + "-" + user_group_name(g);
}

}  // namespace

Report aggregate(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw std::invalid_argument("aggregate: no records");
    Report report;
    for (const char* item_g : {"u", "s"})
        for (const char* user_g : {"s", "r", "b"})
            report.groups.emplace(std::string(item_g) + "-" + user_g, Cell{});

    for (const auto& r : records) {
        report.overall.ndcg5 += r.ndcg5;
        report.overall.p1 += r.p1;
        ++report.overall.n;
        Cell& cell = report.groups.at(cell_key(r.item_seen, r.user_group));
        cell.ndcg5 += r.ndcg5;
        cell.p1 += r.p1;
        ++cell.n;
    }
    auto finish = [](Cell& c) {
        if (c.n == 0) return;
        c.ndcg5 /= static_cast<double>(c.n);
        c.p1 /= static_cast<double>(c.n);
    };
    finish(report.overall);
    for (auto& [_, c] : report.groups) finish(c);

    // Macro average over users (off by default in reports).
    std::map<std::string, std::pair<Cell, std::size_t>> per_user;
    for (const auto& r : records) {
        auto& [cell, n] = per_user[r.user_id];
        cell.ndcg5 += r.ndcg5;
        cell.p1 += r.p1;
        ++n;
    }
    for (auto& [_, pc] : per_user) {
        report.macro.ndcg5 += pc.first.ndcg5 / static_cast<double>(pc.second);
        report.macro.p1 += pc.first.p1 / static_cast<double>(pc.second);
    }
    report.macro.ndcg5 /= static_cast<double>(per_user.size());
    report.macro.p1 /= static_cast<double>(per_user.size());
    report.macro.n = per_user.size();
    return report;
}

namespace {

const char* kGroupOrder[] = {"u-s", "u-r", "u-b", "s-s", "s-r", "s-b"};

void emit_metric(std::ostream& out, const char* metric, const Report& report,
                 double Cell::*field, bool include_macro) {
    char buf[32];
    auto row = [&](const std::string& group, const Cell& c) {
        std::snprintf(buf, sizeof(buf), "%.6f", c.*field);
        out << metric << '\t' << group << '\t' << buf << '\t' << c.n << '\n';
    };
    row("overall", report.overall);
    for (const char* g : kGroupOrder) {
        const Cell& c = report.groups.at(g);
        if (c.n > 0) row(g, c);
    }
    if (include_macro) row("macro", report.macro);
}

}  // namespace

void write_report_tsv(std::ostream& out, const Report& report,
                      const std::vector<std::string>& header_comments, bool include_macro) {
    for (const auto& c : header_comments) out << "# " << c << "\n";
    emit_metric(out, "ndcg5", report, &Cell::ndcg5, include_macro);
    emit_metric(out, "p1", report, &Cell::p1, include_macro);
}

void write_report_table(std::ostream& out, const Report& report) {
    char line[128];
    out << "group      n   NDCG@5      P@1\n";
    std::snprintf(line, sizeof(line), "%-8s %5zu %8.4f %8.4f\n", "overall", report.overall.n,
                  report.overall.ndcg5, report.overall.p1);
    out << line;
    for (const char* g : kGroupOrder) {
        const Cell& c = report.groups.at(g);
        if (c.n == 0) continue;
        std::snprintf(line, sizeof(line), "%-8s %5zu %8.4f %8.4f\n", g, c.n, c.ndcg5, c.p1);
        out << line;
    }
}

void write_records(std::ostream& out, const std::vector<EvalRecord>& records,
                   const std::vector<std::string>& header_comments) {
    for (const auto& c : header_comments) out << "# " << c << "\n";
    char buf[32];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.ndcg5);
        out << r.user_id << '\t' << r.positive_item << '\t' << r.rank_of_positive << '\t'
            << (r.item_seen ? "seen" : "unseen") << '\t' << user_group_name(r.user_group)
            << '\t' << buf << '\t' << r.p1 << '\n';
    }
}

std::vector<EvalRecord> read_records(std::istream& in) {
    std::vector<EvalRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        EvalRecord r;
        std::string rank, seen, group, ndcg, p1;
        if (!std::getline(ls, r.user_id, '\t') || !std::getline(ls, r.positive_item, '\t') ||
            !std::getline(ls, rank, '\t') || !std::getline(ls, seen, '\t') ||
            !std::getline(ls, group, '\t') || !std::getline(ls, ndcg, '\t') ||
            !std::getline(ls, p1, '\t'))
            throw std::runtime_error("bad eval record line: " + line);
        r.rank_of_positive = std::stoi(rank);
        r.item_seen = seen == "seen";
        r.user_group = group == "s"   ? UserGroup::sporadic
                       : group == "r" ? UserGroup::regular
                                      : UserGroup::bibliophilic;
        r.ndcg5 = std::stod(ndcg);
        r.p1 = std::stoi(p1);
        records.push_back(std::move(r));
    }
    return records;
}

namespace {

// Regularized incomplete beta via Lentz's continued fraction.
double betacf(double a, double b, double x) {
    const int max_iter = 200;
    const double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("paired_t_test: need two equal-length samples (n >= 2)");
    const std::size_t n = a.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = a[i] - b[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n - 1);
    if (var == 0.0) return mean == 0.0 ? 1.0 : 0.0;
    double t = mean / std::sqrt(var / static_cast<double>(n));
    double df = static_cast<double>(n - 1);
    return betai(df / 2.0, 0.5, df / (df + t * t));
}

}  // namespace profrec::eval

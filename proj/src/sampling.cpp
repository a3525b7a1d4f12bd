#include "profrec/sampling.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "profrec/log.hpp"
#include "profrec/rng.hpp"

namespace profrec::sampling {

std::vector<TrainingExample> sample_uniform(const std::string& user_id,
                                            std::size_t n_positives,
                                            const std::vector<std::string>& unlabeled_pool,
                                            int ratio, std::uint64_t rng_seed, bool* warned) {
    if (ratio < 1) throw std::invalid_argument("sample_uniform: ratio must be >= 1");
    std::vector<TrainingExample> out;
    if (unlabeled_pool.empty()) {
        if (warned) *warned = true;
        log_warn("user " + user_id + ": empty unlabeled pool, no negatives drawn");
        return out;
    }
    Rng rng(rng_seed);
    const std::size_t pool_size = unlabeled_pool.size();
    bool small_pool = pool_size < static_cast<std::size_t>(ratio);
    if (small_pool) {
        if (warned) *warned = true;
        log_warn("user " + user_id + ": pool smaller than ratio, drawing with replacement");
    }
    out.reserve(n_positives * ratio);
    std::vector<std::size_t> draw;
    for (std::size_t p = 0; p < n_positives; ++p) {
        draw.clear();
        if (small_pool) {
            for (int k = 0; k < ratio; ++k) draw.push_back(rng.uniform_u64(pool_size));
        } else {
            // Without replacement within this positive's draw.
            while (draw.size() < static_cast<std::size_t>(ratio)) {
                std::size_t cand = rng.uniform_u64(pool_size);
                if (std::find(draw.begin(), draw.end(), cand) == draw.end())
                    draw.push_back(cand);
            }
        }
        for (std::size_t idx : draw) out.push_back({user_id, unlabeled_pool[idx], 0, 1.0});
    }
    return out;
}

std::pair<TrainingExample, TrainingExample> clone_weighted(
    const std::string& user_id, const std::string& unlabeled_item,
    const mf::FactorModel& model, const mf::RelatednessBounds& bounds,
    const std::vector<std::string>& train_positives, double eps) {
    if (train_positives.empty())
        throw std::invalid_argument("clone_weighted: user has no training positives");
    double sum = 0.0;
    for (const auto& p : train_positives)
        sum += mf::relatedness(model, unlabeled_item, p, bounds);
    double r = sum / static_cast<double>(train_positives.size());
    r = std::clamp(r, eps, 1.0 - eps);

    // Pick the representable pair so that weight_pos + weight_neg == 1.0
    // exactly (Sterbenz: 1-x is exact for x in [0.5, 1]).
    double w_pos, w_neg;
    if (r >= 0.5) {
        w_pos = r;
        w_neg = 1.0 - r;
    } else {
        w_neg = 1.0 - r;
        w_pos = 1.0 - w_neg;
    }
    return {TrainingExample{user_id, unlabeled_item, 1, w_pos},
            TrainingExample{user_id, unlabeled_item, 0, w_neg}};
}

void write_examples(std::ostream& out, const std::vector<TrainingExample>& examples,
                    const std::vector<std::string>& header_comments) {
    for (const auto& c : header_comments) out << "# " << c << "\n";
    char buf[32];
    for (const auto& e : examples) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.weight);
        out << e.user_id << '\t' << e.item_id << '\t' << e.label << '\t' << buf << '\n';
    }
}

std::vector<TrainingExample> read_examples(std::istream& in) {
    std::vector<TrainingExample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        TrainingExample e;
        std::string label, weight;
        if (!std::getline(ls, e.user_id, '\t') || !std::getline(ls, e.item_id, '\t') ||
            !std::getline(ls, label, '\t') || !std::getline(ls, weight, '\t'))
            throw std::runtime_error("bad example line: " + line);
        e.label = std::stoi(label);
        e.weight = std::stod(weight);
        if ((e.label != 0 && e.label != 1) || e.weight <= 0.0 || e.weight > 1.0)
            throw std::runtime_error("bad example values: " + line);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace profrec::sampling

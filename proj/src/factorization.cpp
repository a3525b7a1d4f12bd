#include "profrec/factorization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "profrec/kernels.hpp"
#include "profrec/log.hpp"
#include "profrec/rng.hpp"

namespace profrec::mf {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Numerically stable BCE of sigmoid(x) against label y.
double bce_of_logit(double x, double y) {
    double softplus = std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
    return softplus - y * x;
}

}  // namespace

std::optional<std::size_t> FactorModel::user(const std::string& id) const {
    auto it = user_index.find(id);
    if (it == user_index.end()) return std::nullopt;
    return it->second;
}

std::optional<std::size_t> FactorModel::item(const std::string& id) const {
    auto it = item_index.find(id);
    if (it == item_index.end()) return std::nullopt;
    return it->second;
}

MfTrainResult train_mf(const std::vector<std::pair<std::string, std::string>>& positives,
                       const std::vector<std::string>& item_universe, const MfConfig& cfg) {
    if (positives.empty()) throw std::invalid_argument("train_mf: empty training set");
    if (cfg.dim < 1 || cfg.epochs < 1 || cfg.learning_rate <= 0.0 || cfg.l2_weight < 0.0 ||
        cfg.negatives_per_positive < 0)
        throw std::invalid_argument("train_mf: bad config");

    FactorModel model;
    model.dim = cfg.dim;
    model.use_bias = cfg.use_bias;
    {
        std::set<std::string> users, items(item_universe.begin(), item_universe.end());
        for (const auto& [u, i] : positives) {
            users.insert(u);
            items.insert(i);
        }
        model.user_ids.assign(users.begin(), users.end());
        model.item_ids.assign(items.begin(), items.end());
    }
    for (std::size_t i = 0; i < model.user_ids.size(); ++i)
        model.user_index.emplace(model.user_ids[i], i);
    for (std::size_t i = 0; i < model.item_ids.size(); ++i)
        model.item_index.emplace(model.item_ids[i], i);

    const std::size_t nu = model.user_ids.size();
    const std::size_t ni = model.item_ids.size();
    const int d = cfg.dim;
    Rng rng(cfg.rng_seed);
    const double stdev = 0.1 / std::sqrt(static_cast<double>(d));
    model.user_vecs.resize(nu * d);
    model.item_vecs.resize(ni * d);
    for (auto& v : model.user_vecs) v = rng.normal(0.0, stdev);
    for (auto& v : model.item_vecs) v = rng.normal(0.0, stdev);
    model.user_bias.assign(nu, 0.0);
    model.item_bias.assign(ni, 0.0);

    // Index the positives and each user's positive set for negative draws.
    std::vector<std::pair<std::size_t, std::size_t>> pos;
    pos.reserve(positives.size());
    std::vector<std::set<std::size_t>> user_pos(nu);
    for (const auto& [u, i] : positives) {
        std::size_t ui = model.user_index.at(u);
        std::size_t ii = model.item_index.at(i);
        pos.emplace_back(ui, ii);
        user_pos[ui].insert(ii);
    }

    const double lr = cfg.learning_rate;
    const double l2 = cfg.l2_weight;
    std::vector<std::size_t> order(pos.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> pu_old(d);

    MfTrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t examples = 0;

        auto step = [&](std::size_t ui, std::size_t ii, double y) {
            double* pu = model.user_vecs.data() + ui * d;
            double* qi = model.item_vecs.data() + ii * d;
            double x = kernels::dot(pu, qi, d);
            if (cfg.use_bias) x += model.user_bias[ui] + model.item_bias[ii];
            double g = sigmoid(x) - y;
            loss_sum += bce_of_logit(x, y) +
                        0.5 * l2 *
                            (kernels::dot(pu, pu, d) + kernels::dot(qi, qi, d) +
                             (cfg.use_bias ? model.user_bias[ui] * model.user_bias[ui] +
                                                 model.item_bias[ii] * model.item_bias[ii]
                                           : 0.0));
            ++examples;
            // Simultaneous update from pre-step values.
            std::copy(pu, pu + d, pu_old.begin());
            kernels::scale(1.0 - lr * l2, pu, d);
            kernels::axpy(-lr * g, qi, pu, d);
            kernels::scale(1.0 - lr * l2, qi, d);
            kernels::axpy(-lr * g, pu_old.data(), qi, d);
            if (cfg.use_bias) {
                model.user_bias[ui] -= lr * (g + l2 * model.user_bias[ui]);
                model.item_bias[ii] -= lr * (g + l2 * model.item_bias[ii]);
            }
        };

        for (std::size_t idx : order) {
            auto [ui, ii] = pos[idx];
            step(ui, ii, 1.0);
            const auto& mine = user_pos[ui];
            if (mine.size() >= ni) continue;  // nothing left to sample
            for (int k = 0; k < cfg.negatives_per_positive; ++k) {
                std::size_t neg;
                do {
                    neg = rng.uniform_u64(ni);
                } while (mine.count(neg));
                step(ui, neg, 0.0);
            }
        }
        double mean_loss = loss_sum / static_cast<double>(examples);
        if (!std::isfinite(mean_loss))
            throw std::runtime_error("matrix factorization diverged at epoch " +
                                     std::to_string(epoch + 1));
        result.epoch_loss.push_back(mean_loss);
    }
    result.model = std::move(model);
    return result;
}

double mf_score(const FactorModel& model, const std::string& user_id,
                const std::string& item_id, bool* unknown) {
    auto u = model.user(user_id);
    auto i = model.item(item_id);
    if (!u || !i) {
        if (unknown) *unknown = true;
        return 0.0;
    }
    if (unknown) *unknown = false;
    double x = kernels::dot(model.user_vec(*u), model.item_vec(*i), model.dim);
    if (model.use_bias) x += model.user_bias[*u] + model.item_bias[*i];
    return x;
}

double mf_example_loss(const FactorModel& model, std::size_t u, std::size_t i, double y,
                       double l2) {
    const double* pu = model.user_vec(u);
    const double* qi = model.item_vec(i);
    double x = kernels::dot(pu, qi, model.dim);
    if (model.use_bias) x += model.user_bias[u] + model.item_bias[i];
    double reg = kernels::dot(pu, pu, model.dim) + kernels::dot(qi, qi, model.dim);
    if (model.use_bias)
        reg += model.user_bias[u] * model.user_bias[u] + model.item_bias[i] * model.item_bias[i];
    return bce_of_logit(x, y) + 0.5 * l2 * reg;
}

MfExampleGrad mf_example_grad(const FactorModel& model, std::size_t u, std::size_t i, double y,
                              double l2) {
    const int d = model.dim;
    const double* pu = model.user_vec(u);
    const double* qi = model.item_vec(i);
    double x = kernels::dot(pu, qi, d);
    if (model.use_bias) x += model.user_bias[u] + model.item_bias[i];
    double g = sigmoid(x) - y;
    MfExampleGrad out;
    out.d_user.resize(d);
    out.d_item.resize(d);
    for (int k = 0; k < d; ++k) {
        out.d_user[k] = g * qi[k] + l2 * pu[k];
        out.d_item[k] = g * pu[k] + l2 * qi[k];
    }
    if (model.use_bias) {
        out.d_user_bias = g + l2 * model.user_bias[u];
        out.d_item_bias = g + l2 * model.item_bias[i];
    }
    return out;
}

RelatednessBounds relatedness_bounds(const FactorModel& model, std::size_t max_exact_pairs,
                                     std::size_t sample_pairs, std::uint64_t rng_seed) {
    const std::size_t n = model.item_ids.size();
    if (n == 0) throw std::invalid_argument("relatedness_bounds: model has no items");
    RelatednessBounds b;
    bool first = true;
    auto consider = [&](std::size_t i, std::size_t j) {
        double dot = kernels::dot(model.item_vec(i), model.item_vec(j), model.dim);
        if (first) {
            b.lo = b.hi = dot;
            first = false;
        } else {
            b.lo = std::min(b.lo, dot);
            b.hi = std::max(b.hi, dot);
        }
    };
    if (n == 1) {
        consider(0, 0);
        return b;
    }
    // Distinct pairs only: self-dots are norm outliers that would inflate
    // the ceiling and flatten every other pair's rescaled value.
    std::size_t total = n * (n - 1) / 2;
    if (total <= max_exact_pairs) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) consider(i, j);
    } else {
        Rng rng(rng_seed);
        while (sample_pairs > 0) {
            std::size_t i = rng.uniform_u64(n);
            std::size_t j = rng.uniform_u64(n);
            if (i == j) continue;
            consider(i, j);
            --sample_pairs;
        }
    }
    return b;
}

RelatednessBounds relatedness_bounds_over(
    const FactorModel& model,
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    if (pairs.empty())
        throw std::invalid_argument("relatedness_bounds_over: empty pair population");
    RelatednessBounds b;
    bool first = true;
    for (const auto& [ida, idb] : pairs) {
        auto a = model.item(ida);
        auto bi = model.item(idb);
        if (!a || !bi)
            throw std::invalid_argument("relatedness_bounds_over: unknown item in pair");
        double dot = kernels::dot(model.item_vec(*a), model.item_vec(*bi), model.dim);
        if (first) {
            b.lo = b.hi = dot;
            first = false;
        } else {
            b.lo = std::min(b.lo, dot);
            b.hi = std::max(b.hi, dot);
        }
    }
    return b;
}

double relatedness(const FactorModel& model, const std::string& item_a,
                   const std::string& item_b, const RelatednessBounds& bounds) {
    auto a = model.item(item_a);
    auto b = model.item(item_b);
    if (!a) throw std::invalid_argument("relatedness: unknown item " + item_a);
    if (!b) throw std::invalid_argument("relatedness: unknown item " + item_b);
    if (bounds.hi == bounds.lo) return 0.5;
    double dot = kernels::dot(model.item_vec(*a), model.item_vec(*b), model.dim);
    double r = (dot - bounds.lo) / (bounds.hi - bounds.lo);
    return std::clamp(r, 0.0, 1.0);
}

void save_model(std::ostream& out, const FactorModel& model,
                const std::vector<std::string>& header_comments) {
    for (const auto& c : header_comments) out << "# " << c << "\n";
    out << model.dim << ' ' << model.user_ids.size() << ' ' << model.item_ids.size() << ' '
        << (model.use_bias ? 1 : 0) << "\n";
    char buf[32];
    auto emit = [&](const char* kind, const std::string& id, double bias, const double* vec) {
        out << kind << '\t' << id << '\t';
        std::snprintf(buf, sizeof(buf), "%.17g", bias);
        out << buf << '\t';
        for (int k = 0; k < model.dim; ++k) {
            if (k) out << ' ';
            std::snprintf(buf, sizeof(buf), "%.17g", vec[k]);
            out << buf;
        }
        out << '\n';
    };
    for (std::size_t i = 0; i < model.user_ids.size(); ++i)
        emit("user", model.user_ids[i], model.user_bias[i], model.user_vec(i));
    for (std::size_t i = 0; i < model.item_ids.size(); ++i)
        emit("item", model.item_ids[i], model.item_bias[i], model.item_vec(i));
}

FactorModel load_model(std::istream& in) {
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') break;
    }
    std::istringstream header(line);
    FactorModel model;
    std::size_t nu = 0, ni = 0;
    int bias = 0;
    if (!(header >> model.dim >> nu >> ni >> bias))
        throw std::runtime_error("bad factor model header");
    model.use_bias = bias != 0;
    model.user_vecs.reserve(nu * model.dim);
    model.item_vecs.reserve(ni * model.dim);

    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto t1 = line.find('\t');
        auto t2 = line.find('\t', t1 + 1);
        auto t3 = line.find('\t', t2 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos || t3 == std::string::npos)
            throw std::runtime_error("bad factor model line: " + line);
        std::string kind = line.substr(0, t1);
        std::string id = line.substr(t1 + 1, t2 - t1 - 1);
        double b = std::stod(line.substr(t2 + 1, t3 - t2 - 1));
        std::istringstream vs(line.substr(t3 + 1));
        std::vector<double> vec(model.dim);
        for (int k = 0; k < model.dim; ++k)
            if (!(vs >> vec[k])) throw std::runtime_error("short factor vector: " + id);
        if (kind == "user") {
            model.user_index.emplace(id, model.user_ids.size());
            model.user_ids.push_back(id);
            model.user_bias.push_back(b);
            model.user_vecs.insert(model.user_vecs.end(), vec.begin(), vec.end());
        } else if (kind == "item") {
            model.item_index.emplace(id, model.item_ids.size());
            model.item_ids.push_back(id);
            model.item_bias.push_back(b);
            model.item_vecs.insert(model.item_vecs.end(), vec.begin(), vec.end());
        } else {
            throw std::runtime_error("bad factor model kind: " + kind);
        }
    }
    if (model.user_ids.size() != nu || model.item_ids.size() != ni)
        throw std::runtime_error("factor model entity count mismatch");
    return model;
}

}  // namespace profrec::mf

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "divrec/common.hpp"
#include "divrec/evaluation.hpp"

namespace divrec {

enum class ExplainStrategy { individual, shared };
enum class EraseManner { top, least, random };

inline ExplainStrategy parse_strategy(const std::string& s) {
    if (s == "individual") return ExplainStrategy::individual;
    if (s == "shared") return ExplainStrategy::shared;
    throw ConfigError("unknown strategy '" + s + "'");
}

inline EraseManner parse_manner(const std::string& s) {
    if (s == "top") return EraseManner::top;
    if (s == "least") return EraseManner::least;
    if (s == "random") return EraseManner::random;
    throw ConfigError("unknown manner '" + s + "'");
}

inline const char* to_string(ExplainStrategy s) {
    return s == ExplainStrategy::individual ? "individual" : "shared";
}
inline const char* to_string(EraseManner m) {
    switch (m) {
        case EraseManner::top: return "top";
        case EraseManner::least: return "least";
        default: return "random";
    }
}

/// Compresses the perturbation to one importance value per latent feature:
/// the mean absolute perturbation across the item axis.
inline Eigen::VectorXd shared_importance(const Eigen::MatrixXd& delta) {
    if (!delta.allFinite()) throw NumericError("shared_importance: non-finite perturbation");
    return delta.cwiseAbs().rowwise().mean();
}

namespace detail {

/// Feature indices of one column ordered by |value| descending, ties to the
/// lower index.
inline std::vector<uint32_t> order_by_magnitude(const Eigen::VectorXd& v, bool descending) {
    std::vector<uint32_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::sort(idx.begin(), idx.end(), [&](uint32_t a, uint32_t b) {
        const double ma = std::abs(v[a]);
        const double mb = std::abs(v[b]);
        if (ma != mb) return descending ? ma > mb : ma < mb;
        return a < b;
    });
    return idx;
}

inline std::vector<uint32_t> pick_random(size_t n, int F, Rng& rng) {
    std::vector<uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    for (int i = 0; i < F; ++i) {
        std::swap(idx[i], idx[i + rng.below(n - static_cast<size_t>(i))]);
    }
    idx.resize(F);
    return idx;
}

}  // namespace detail

/// Per-item explanation: the F feature indices with the largest absolute
/// perturbation, sorted by descending magnitude (ties to the lower index).
inline std::vector<std::vector<uint32_t>> individual_top_features(const Eigen::MatrixXd& delta,
                                                                  int F) {
    if (F < 1 || F > delta.rows()) throw ConfigError("F must be in [1, d]");
    std::vector<std::vector<uint32_t>> out(delta.cols());
    for (Eigen::Index j = 0; j < delta.cols(); ++j) {
        auto order = detail::order_by_magnitude(delta.col(j), true);
        order.resize(F);
        out[j] = std::move(order);
    }
    return out;
}

/// Zeros F features per the chosen strategy and manner. Individual erasure
/// picks features within each item column by that column's |delta|; shared
/// erasure ranks whole rows by the compressed importance vector and zeroes
/// them. The random manner is driven entirely by the seed.
inline Eigen::MatrixXd erase(const Eigen::MatrixXd& delta, ExplainStrategy strategy,
                             EraseManner manner, int F, uint64_t seed) {
    if (F < 0 || F > delta.rows()) throw ConfigError("F must be in [0, d]");
    Eigen::MatrixXd out = delta;
    if (F == 0) return out;
    Rng rng(seed);
    if (strategy == ExplainStrategy::individual) {
        for (Eigen::Index j = 0; j < delta.cols(); ++j) {
            std::vector<uint32_t> chosen;
            switch (manner) {
                case EraseManner::top:
                    chosen = detail::order_by_magnitude(delta.col(j), true);
                    break;
                case EraseManner::least:
                    chosen = detail::order_by_magnitude(delta.col(j), false);
                    break;
                case EraseManner::random:
                    chosen = detail::pick_random(delta.rows(), F, rng);
                    break;
            }
            chosen.resize(F);
            for (uint32_t r : chosen) out(r, j) = 0.0;
        }
        return out;
    }
    const Eigen::VectorXd dv = shared_importance(delta);
    std::vector<uint32_t> rows;
    switch (manner) {
        case EraseManner::top: rows = detail::order_by_magnitude(dv, true); break;
        case EraseManner::least: rows = detail::order_by_magnitude(dv, false); break;
        case EraseManner::random: rows = detail::pick_random(delta.rows(), F, rng); break;
    }
    rows.resize(F);
    for (uint32_t r : rows) out.row(r).setZero();
    return out;
}

/// Re-runs the full evaluation protocol with an erased perturbation.
inline MetricReport evaluate_erasure(const EvalModel& model, const InteractionDataset& ds,
                                     const Eigen::MatrixXd& erased_delta,
                                     std::span<const size_t> ks, double alpha = 0.5,
                                     int threads = 1) {
    return evaluate_report(model, ds, &erased_delta, ks, alpha, threads);
}

// --- export -------------------------------------------------------------------

/// Optional sidecar naming latent features: one name per line, index-aligned.
inline std::vector<std::string> load_feature_names(const std::string& path) {
    auto is = open_in(path, false);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        names.push_back(line);
    }
    return names;
}

inline std::string feature_label(uint32_t index, const std::vector<std::string>& names) {
    if (index < names.size() && !names[index].empty()) return names[index];
    return std::to_string(index);
}

inline void write_importance_csv(const Eigen::VectorXd& importance, const std::string& path,
                                 const std::vector<std::string>& names = {}) {
    auto os = open_out(path, false);
    os << "feature,score\n";
    for (Eigen::Index r = 0; r < importance.size(); ++r) {
        os << feature_label(static_cast<uint32_t>(r), names) << ","
           << fmt_double(importance[r]) << "\n";
    }
}

inline void write_item_features_csv(const std::vector<std::vector<uint32_t>>& per_item,
                                    const Eigen::MatrixXd& delta, const std::string& path,
                                    const std::vector<std::string>& names = {}) {
    auto os = open_out(path, false);
    os << "item,rank,feature,score\n";
    for (size_t j = 0; j < per_item.size(); ++j) {
        for (size_t rank = 0; rank < per_item[j].size(); ++rank) {
            const uint32_t r = per_item[j][rank];
            os << j << "," << (rank + 1) << "," << feature_label(r, names) << ","
               << fmt_double(std::abs(delta(r, static_cast<Eigen::Index>(j)))) << "\n";
        }
    }
}

}  // namespace divrec

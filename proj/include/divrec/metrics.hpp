#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "divrec/common.hpp"

namespace divrec {

using SubtopicSets = std::vector<std::vector<uint32_t>>;  // per item, sorted

inline double log2_discount(size_t rank_1based) {
    return 1.0 / std::log2(static_cast<double>(rank_1based) + 1.0);
}

/// |truth ∩ list[..K]| / |truth|. Callers exclude users with empty truth
/// from averages; an empty truth set here is an error.
inline double recall_at_k(std::span<const uint32_t> list, std::span<const uint32_t> truth_sorted,
                          size_t K) {
    if (truth_sorted.empty()) throw DataError("recall_at_k: empty ground truth");
    const size_t depth = std::min(K, list.size());
    size_t hits = 0;
    for (size_t k = 0; k < depth; ++k) {
        if (std::binary_search(truth_sorted.begin(), truth_sorted.end(), list[k])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(truth_sorted.size());
}

/// Binary-relevance NDCG with log2 discounts; the ideal sums the first
/// min(K, |truth|) discounts.
inline double ndcg_at_k(std::span<const uint32_t> list, std::span<const uint32_t> truth_sorted,
                        size_t K) {
    if (truth_sorted.empty()) throw DataError("ndcg_at_k: empty ground truth");
    const size_t depth = std::min(K, list.size());
    double dcg = 0.0;
    for (size_t k = 0; k < depth; ++k) {
        if (std::binary_search(truth_sorted.begin(), truth_sorted.end(), list[k])) {
            dcg += log2_discount(k + 1);
        }
    }
    double idcg = 0.0;
    const size_t ideal_depth = std::min(K, truth_sorted.size());
    for (size_t k = 0; k < ideal_depth; ++k) idcg += log2_discount(k + 1);
    return dcg / idcg;
}

namespace detail {

/// Marginal subtopic gain of an item given per-subtopic coverage counts.
inline double alpha_gain(const std::vector<uint32_t>& subs, const std::vector<uint32_t>& cov,
                         double alpha) {
    double g = 0.0;
    for (uint32_t s : subs) g += std::pow(1.0 - alpha, static_cast<double>(cov[s]));
    return g;
}

}  // namespace detail

/// Position-discounted redundancy-aware gain of one list prefix.
inline double alpha_dcg_at_k(std::span<const uint32_t> list, const SubtopicSets& subtopics,
                             uint32_t n_subtopics, double alpha, size_t K) {
    std::vector<uint32_t> cov(n_subtopics, 0);
    const size_t depth = std::min(K, list.size());
    double dcg = 0.0;
    for (size_t k = 0; k < depth; ++k) {
        const auto& subs = subtopics[list[k]];
        dcg += log2_discount(k + 1) * detail::alpha_gain(subs, cov, alpha);
        for (uint32_t s : subs) ++cov[s];
    }
    return dcg;
}

/// Greedy ideal gains over the whole catalog: at each position select the
/// unused item with the largest marginal gain (ties to the lower index).
/// Exact maximization over orderings is intractable; the greedy sequence is
/// the normalizer.
inline std::vector<double> alpha_ideal_gains(const SubtopicSets& subtopics, uint32_t n_subtopics,
                                             double alpha, size_t K) {
    const size_t n_items = subtopics.size();
    std::vector<uint32_t> cov(n_subtopics, 0);
    std::vector<char> used(n_items, 0);
    std::vector<double> gains;
    gains.reserve(K);
    const size_t steps = std::min(K, n_items);
    for (size_t k = 0; k < steps; ++k) {
        double best = -1.0;
        size_t best_item = 0;
        for (size_t j = 0; j < n_items; ++j) {
            if (used[j]) continue;
            const double g = detail::alpha_gain(subtopics[j], cov, alpha);
            if (g > best) {
                best = g;
                best_item = j;
            }
        }
        used[best_item] = 1;
        for (uint32_t s : subtopics[best_item]) ++cov[s];
        gains.push_back(best);
    }
    return gains;
}

/// Reusable α-nDCG evaluator; the greedy ideal is shared by every list, so
/// it is computed once per catalog.
class AlphaNdcgScorer {
public:
    AlphaNdcgScorer(const SubtopicSets& subtopics, uint32_t n_subtopics, double alpha,
                    size_t max_k)
        : subtopics_(&subtopics), n_subtopics_(n_subtopics), alpha_(alpha) {
        if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("alpha must be in (0, 1)");
        const auto gains = alpha_ideal_gains(subtopics, n_subtopics, alpha, max_k);
        ideal_prefix_.resize(gains.size() + 1, 0.0);
        for (size_t k = 0; k < gains.size(); ++k) {
            ideal_prefix_[k + 1] = ideal_prefix_[k] + log2_discount(k + 1) * gains[k];
        }
    }

    double at(std::span<const uint32_t> list, size_t K) const {
        const double idcg = ideal_prefix_[std::min(K, ideal_prefix_.size() - 1)];
        if (idcg == 0.0) return 0.0;
        return alpha_dcg_at_k(list, *subtopics_, n_subtopics_, alpha_, K) / idcg;
    }

private:
    const SubtopicSets* subtopics_;
    uint32_t n_subtopics_;
    double alpha_;
    std::vector<double> ideal_prefix_;  // ideal_prefix_[K] = α-IDCG@K
};

inline double alpha_ndcg_at_k(std::span<const uint32_t> list, const SubtopicSets& subtopics,
                              uint32_t n_subtopics, double alpha, size_t K) {
    return AlphaNdcgScorer(subtopics, n_subtopics, alpha, K).at(list, K);
}

/// Number of subtopics covered by at least one catalog item (SC denominator).
inline size_t catalog_subtopic_count(const SubtopicSets& subtopics, uint32_t n_subtopics) {
    std::vector<char> covered(n_subtopics, 0);
    for (const auto& subs : subtopics) {
        for (uint32_t s : subs) covered[s] = 1;
    }
    size_t n = 0;
    for (char c : covered) n += c;
    return n;
}

inline double sc_at_k_with_denom(std::span<const uint32_t> list, const SubtopicSets& subtopics,
                                 uint32_t n_subtopics, size_t denom, size_t K) {
    if (denom == 0) throw DataError("sc_at_k: catalog covers no subtopics");
    std::vector<char> covered(n_subtopics, 0);
    const size_t depth = std::min(K, list.size());
    size_t n = 0;
    for (size_t k = 0; k < depth; ++k) {
        for (uint32_t s : subtopics[list[k]]) {
            if (!covered[s]) {
                covered[s] = 1;
                ++n;
            }
        }
    }
    return static_cast<double>(n) / static_cast<double>(denom);
}

inline double sc_at_k(std::span<const uint32_t> list, const SubtopicSets& subtopics,
                      uint32_t n_subtopics, size_t K) {
    return sc_at_k_with_denom(list, subtopics, n_subtopics,
                              catalog_subtopic_count(subtopics, n_subtopics), K);
}

/// Fraction of the catalog reached by any user's top-K list.
inline double pc_at_k(const std::vector<std::vector<uint32_t>>& lists, size_t n_items, size_t K) {
    if (n_items == 0) throw DataError("pc_at_k: empty catalog");
    std::vector<char> hit(n_items, 0);
    for (const auto& list : lists) {
        const size_t depth = std::min(K, list.size());
        for (size_t k = 0; k < depth; ++k) hit[list[k]] = 1;
    }
    size_t n = 0;
    for (char c : hit) n += c;
    return static_cast<double>(n) / static_cast<double>(n_items);
}

/// Mean pairwise cosine dissimilarity over a list prefix, given unit-norm
/// item vectors (columns).
inline double ilad_from_units(std::span<const uint32_t> list, const Eigen::MatrixXd& unit_items,
                              size_t K) {
    const size_t depth = std::min(K, list.size());
    if (depth < 2) throw ConfigError("ilad_at_k requires K >= 2");
    double total = 0.0;
    size_t pairs = 0;
    for (size_t a = 0; a + 1 < depth; ++a) {
        for (size_t b = a + 1; b < depth; ++b) {
            total += 1.0 - unit_items.col(list[a]).dot(unit_items.col(list[b]));
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

inline double ilad_at_k(std::span<const uint32_t> list, const Eigen::MatrixXd& item_vectors,
                        size_t K) {
    const size_t depth = std::min(K, list.size());
    if (depth < 2) throw ConfigError("ilad_at_k requires K >= 2");
    Eigen::MatrixXd units(item_vectors.rows(), depth);
    for (size_t k = 0; k < depth; ++k) {
        const auto col = item_vectors.col(list[k]);
        const double norm = col.norm();
        if (norm == 0.0) {
            throw NumericError("ilad_at_k: zero-norm item vector (item " +
                               std::to_string(list[k]) + ")");
        }
        units.col(static_cast<Eigen::Index>(k)) = col / norm;
    }
    double total = 0.0;
    size_t pairs = 0;
    for (size_t a = 0; a + 1 < depth; ++a) {
        for (size_t b = a + 1; b < depth; ++b) {
            total += 1.0 - units.col(a).dot(units.col(b));
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

// --- report -----------------------------------------------------------------

inline constexpr const char* kMetricNames[] = {"recall", "ndcg", "alpha_ndcg",
                                               "sc",     "pc",   "ilad"};

/// Metric values at each requested K, in a fixed row order so serialized
/// reports are byte-stable.
struct MetricReport {
    std::vector<size_t> ks;
    std::vector<std::pair<std::string, std::vector<double>>> rows;

    double at(const std::string& metric, size_t K) const {
        for (const auto& [name, values] : rows) {
            if (name != metric) continue;
            for (size_t i = 0; i < ks.size(); ++i) {
                if (ks[i] == K) return values[i];
            }
        }
        throw DataError("metric report has no entry " + metric + "@" + std::to_string(K));
    }

    void to_csv(std::ostream& os) const {
        os << "metric,K,value\n";
        for (const auto& [name, values] : rows) {
            for (size_t i = 0; i < ks.size(); ++i) {
                os << name << "," << ks[i] << "," << fmt_double(values[i]) << "\n";
            }
        }
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        for (const auto& [name, values] : rows) {
            nlohmann::ordered_json per_k;
            for (size_t i = 0; i < ks.size(); ++i) {
                per_k[std::to_string(ks[i])] = values[i];
            }
            j[name] = std::move(per_k);
        }
        return j;
    }
};

inline void save_report(const MetricReport& report, const std::string& csv_path,
                        const std::string& json_path) {
    {
        auto os = open_out(csv_path, false);
        report.to_csv(os);
    }
    auto os = open_out(json_path, false);
    os << report.to_json().dump(2) << "\n";
}

}  // namespace divrec

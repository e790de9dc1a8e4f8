#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "divrec/common.hpp"
#include "divrec/evaluation.hpp"
#include "divrec/ranking.hpp"

namespace divrec {

struct MmrConfig {
    double theta = 0.9;         // relevance weight
    size_t candidate_pool = 100;
    size_t K = 10;

    void validate() const {
        if (theta < 0.0 || theta > 1.0) throw ConfigError("theta must be in [0, 1]");
        if (K < 1) throw ConfigError("K must be >= 1");
        if (K > candidate_pool) throw ConfigError("K must not exceed the candidate pool");
    }
};

/// Greedy maximal-marginal-relevance list for one user. The pool is the top
/// candidate_pool unmasked items by relevance; the first pick is the
/// relevance argmax, and each later step maximizes
/// theta*rel(v) - (1-theta)*max_{j selected} cos(v, j), ties to the lower
/// item index.
inline std::vector<uint32_t> mmr_rerank(std::span<const double> relevance,
                                        const Eigen::MatrixXd& unit_items,
                                        std::span<const uint32_t> masked_sorted,
                                        const MmrConfig& cfg) {
    cfg.validate();
    const size_t unmasked = relevance.size() - masked_sorted.size();
    if (unmasked < cfg.K) {
        throw DataError("mmr pool of " + std::to_string(unmasked) + " items cannot fill K=" +
                        std::to_string(cfg.K));
    }
    const size_t pool_size = std::min(cfg.candidate_pool, unmasked);
    std::vector<uint32_t> pool = topk_from_scores(relevance, masked_sorted, pool_size);

    std::vector<uint32_t> out;
    out.reserve(cfg.K);
    out.push_back(pool[0]);
    std::vector<char> taken(pool.size(), 0);
    taken[0] = 1;
    // Running max cosine to the selected set, refreshed after each pick.
    std::vector<double> max_sim(pool.size(), 0.0);
    for (size_t i = 0; i < pool.size(); ++i) {
        max_sim[i] = unit_items.col(pool[i]).dot(unit_items.col(out.back()));
    }
    while (out.size() < cfg.K) {
        double best = -std::numeric_limits<double>::infinity();
        size_t best_i = 0;
        for (size_t i = 0; i < pool.size(); ++i) {
            if (taken[i]) continue;
            const double mmr =
                cfg.theta * relevance[pool[i]] - (1.0 - cfg.theta) * max_sim[i];
            if (mmr > best || (mmr == best && pool[i] < pool[best_i])) {
                best = mmr;
                best_i = i;
            }
        }
        taken[best_i] = 1;
        out.push_back(pool[best_i]);
        for (size_t i = 0; i < pool.size(); ++i) {
            if (!taken[i]) {
                max_sim[i] = std::max(max_sim[i],
                                      unit_items.col(pool[i]).dot(unit_items.col(out.back())));
            }
        }
    }
    return out;
}

/// MMR lists for every user; relevance comes from the unperturbed effective
/// factors and similarity from the same item vectors the ILAD metric uses.
inline RecommendationSet mmr_recommend(const EvalModel& model, const InteractionDataset& ds,
                                       const MmrConfig& cfg,
                                       std::span<const uint32_t> users = {}, int threads = 1) {
    cfg.validate();
    RecommendationSet out;
    out.K = cfg.K;
    if (users.empty()) {
        out.users.resize(ds.n_users);
        std::iota(out.users.begin(), out.users.end(), 0u);
    } else {
        out.users.assign(users.begin(), users.end());
    }
    const size_t n = out.users.size();
    out.lists.resize(n);
    out.scores.resize(n);
    parallel_chunks(n, 64, threads, [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const uint32_t u = out.users[i];
            const Eigen::VectorXd rel = model.eff.Q.transpose() * model.eff.P.col(u);
            std::span<const double> rel_span(rel.data(), static_cast<size_t>(rel.size()));
            out.lists[i] = mmr_rerank(rel_span, model.unit_items, ds.train[u], cfg);
            auto& sc = out.scores[i];
            sc.reserve(cfg.K);
            for (uint32_t j : out.lists[i]) sc.push_back(rel[j]);
        }
    });
    return out;
}

}  // namespace divrec

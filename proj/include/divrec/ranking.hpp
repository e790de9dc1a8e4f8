#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <span>
#include <vector>

#include "divrec/common.hpp"
#include "divrec/dataset.hpp"

namespace divrec {

/// Perturbations live in the same [-1, 1]-ish coordinates as the arm grid,
/// so the item matrix is scaled per feature row by its max absolute value.
/// The scale vector inverts the transform.
struct ScaledItems {
    Eigen::MatrixXd scaled;
    Eigen::VectorXd scales;
};

inline ScaledItems maxabs_scale(const Eigen::MatrixXd& q) {
    ScaledItems out;
    out.scales = q.cwiseAbs().rowwise().maxCoeff();
    for (Eigen::Index r = 0; r < out.scales.size(); ++r) {
        if (out.scales(r) == 0.0) {
            std::cerr << "warning: feature row " << r << " is all-zero; scale left at 1\n";
            out.scales(r) = 1.0;
        }
    }
    out.scaled = out.scales.cwiseInverse().asDiagonal() * q;
    return out;
}

inline Eigen::MatrixXd maxabs_unscale(const Eigen::MatrixXd& scaled,
                                      const Eigen::VectorXd& scales) {
    return scales.asDiagonal() * scaled;
}

inline Eigen::MatrixXd apply_perturbation(const Eigen::MatrixXd& q_scaled,
                                          const Eigen::MatrixXd& delta) {
    if (q_scaled.rows() != delta.rows() || q_scaled.cols() != delta.cols()) {
        throw ConfigError("perturbation shape mismatch");
    }
    return q_scaled + delta;
}

/// Indices of the K largest scores, descending, skipping `masked_sorted`;
/// equal scores break toward the lower item index.
inline std::vector<uint32_t> topk_from_scores(std::span<const double> scores,
                                              std::span<const uint32_t> masked_sorted, size_t K) {
    std::vector<uint32_t> cand;
    cand.reserve(scores.size());
    for (uint32_t j = 0; j < scores.size(); ++j) {
        if (!std::binary_search(masked_sorted.begin(), masked_sorted.end(), j)) {
            cand.push_back(j);
        }
    }
    if (cand.size() < K) {
        throw DataError("top-K needs " + std::to_string(K) + " candidates, only " +
                        std::to_string(cand.size()) + " unmasked items");
    }
    auto better = [&](uint32_t a, uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::nth_element(cand.begin(), cand.begin() + static_cast<ptrdiff_t>(K) - 1, cand.end(),
                     better);
    cand.resize(K);
    std::sort(cand.begin(), cand.end(), better);
    return cand;
}

/// Ordered top-K lists (and their scores) for a set of users.
struct RecommendationSet {
    size_t K = 0;
    std::vector<uint32_t> users;
    std::vector<std::vector<uint32_t>> lists;   // aligned with `users`
    std::vector<std::vector<double>> scores;
};

/// Scores every item for each user with the bilinear model over the given
/// item matrix, masks the user's training positives, and keeps the top K.
/// Users default to the full population. Chunked so per-user results do not
/// depend on the thread count.
inline RecommendationSet topk_recommend(const Eigen::MatrixXd& user_factors,
                                        const Eigen::MatrixXd& item_matrix,
                                        const InteractionDataset& ds, size_t K,
                                        std::span<const uint32_t> users = {}, int threads = 1) {
    if (item_matrix.cols() != static_cast<Eigen::Index>(ds.n_items)) {
        throw ConfigError("item matrix does not match dataset");
    }
    RecommendationSet out;
    out.K = K;
    if (users.empty()) {
        out.users.resize(ds.n_users);
        std::iota(out.users.begin(), out.users.end(), 0u);
    } else {
        out.users.assign(users.begin(), users.end());
    }
    const size_t n = out.users.size();
    out.lists.resize(n);
    out.scores.resize(n);

    constexpr size_t kUserChunk = 128;
    parallel_chunks(n, kUserChunk, threads, [&](size_t begin, size_t end) {
        Eigen::MatrixXd block(item_matrix.cols(), static_cast<Eigen::Index>(end - begin));
        for (size_t i = begin; i < end; ++i) {
            block.col(static_cast<Eigen::Index>(i - begin)).noalias() =
                item_matrix.transpose() * user_factors.col(out.users[i]);
        }
        for (size_t i = begin; i < end; ++i) {
            const auto col = block.col(static_cast<Eigen::Index>(i - begin));
            std::span<const double> row(col.data(), static_cast<size_t>(col.size()));
            auto list = topk_from_scores(row, ds.train[out.users[i]], K);
            auto& sc = out.scores[i];
            sc.reserve(K);
            for (uint32_t j : list) sc.push_back(row[j]);
            out.lists[i] = std::move(list);
        }
    });
    return out;
}

inline void write_lists_csv(const RecommendationSet& recs, const std::string& path) {
    auto os = open_out(path, false);
    os << "user,rank,item,score\n";
    for (size_t i = 0; i < recs.users.size(); ++i) {
        for (size_t k = 0; k < recs.lists[i].size(); ++k) {
            os << recs.users[i] << "," << (k + 1) << "," << recs.lists[i][k] << ","
               << fmt_double(recs.scores[i][k]) << "\n";
        }
    }
}

}  // namespace divrec

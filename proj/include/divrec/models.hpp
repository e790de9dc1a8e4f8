#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <iostream>
#include <span>
#include <unordered_map>
#include <vector>

#include "divrec/common.hpp"
#include "divrec/dataset.hpp"
#include "divrec/metrics.hpp"
#include "divrec/ranking.hpp"

namespace divrec {

/// User matrix P (d x |U|) and item matrix Q (d x |V|), one embedding per
/// column.
struct LatentFactors {
    Eigen::MatrixXd P;
    Eigen::MatrixXd Q;

    int d() const { return static_cast<int>(P.rows()); }
};

struct TrainConfig {
    int d = 50;
    double lr = 0.005;
    double reg = 1e-4;
    int epochs = 100;
    int n_neg = 3;
    int layers = 3;  // LightGCN propagation depth
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 42;
    int batch_size = 2048;
    int patience = 10;
    size_t valid_k = 10;  // model selection metric is validation Recall@valid_k
    int threads = 1;
    bool verbose = false;

    void validate() const {
        if (lr <= 0.0) throw ConfigError("lr must be positive");
        if (d < 1) throw ConfigError("d must be >= 1");
        if (layers < 1) throw ConfigError("layers must be >= 1");
        if (reg < 0.0) throw ConfigError("reg must be >= 0");
        if (n_neg < 1) throw ConfigError("n_neg must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    }
};

struct TrainResult {
    LatentFactors factors;
    int best_epoch = 0;
    double best_valid_recall = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> epoch_loss;
    std::vector<double> epoch_valid_recall;
};

/// Seeded N(0, 0.01) initialization, filled column by column.
inline LatentFactors init_factors(uint32_t n_users, uint32_t n_items, int d, uint64_t seed) {
    LatentFactors f;
    f.P.resize(d, n_users);
    f.Q.resize(d, n_items);
    Rng rng(seed);
    for (uint32_t u = 0; u < n_users; ++u) {
        for (int r = 0; r < d; ++r) f.P(r, u) = rng.normal(0.0, 0.01);
    }
    for (uint32_t v = 0; v < n_items; ++v) {
        for (int r = 0; r < d; ++r) f.Q(r, v) = rng.normal(0.0, 0.01);
    }
    return f;
}

inline double score_bprmf(const LatentFactors& f, uint32_t u, uint32_t v) {
    return f.P.col(u).dot(f.Q.col(v));
}

/// Logistic function with the argument clamped to +-35 so the pairwise loss
/// never overflows.
inline double sigmoid_clamped(double x) {
    const double c = std::clamp(x, -35.0, 35.0);
    return 1.0 / (1.0 + std::exp(-c));
}

/// Pairwise ranking loss for one triplet pair of scores.
inline double bpr_pair_loss(double y_pos, double y_neg) {
    const double diff = std::clamp(y_pos - y_neg, -35.0, 35.0);
    return std::log1p(std::exp(-diff));
}

/// Sum of pairwise losses plus per-triplet L2 on the touched embeddings.
inline double bpr_loss(const LatentFactors& f, std::span<const TrainTriplet> batch, double reg) {
    if (batch.empty()) throw ConfigError("bpr_loss: empty batch");
    double loss = 0.0;
    for (const auto& t : batch) {
        loss += bpr_pair_loss(score_bprmf(f, t.user, t.pos), score_bprmf(f, t.user, t.neg));
        if (reg != 0.0) {
            loss += reg * (f.P.col(t.user).squaredNorm() + f.Q.col(t.pos).squaredNorm() +
                           f.Q.col(t.neg).squaredNorm());
        }
    }
    if (!std::isfinite(loss)) throw NumericError("bpr_loss is not finite");
    return loss;
}

/// Accumulated batch gradients, keyed by embedding column.
struct BprGrads {
    double loss = 0.0;
    std::unordered_map<uint32_t, Eigen::VectorXd> users;
    std::unordered_map<uint32_t, Eigen::VectorXd> items;
};

namespace detail {

inline Eigen::VectorXd& grad_slot(std::unordered_map<uint32_t, Eigen::VectorXd>& m, uint32_t idx,
                                  int d) {
    auto [it, inserted] = m.try_emplace(idx);
    if (inserted) it->second = Eigen::VectorXd::Zero(d);
    return it->second;
}

}  // namespace detail

/// Analytic gradients of bpr_loss over user/item columns; scoring is pluggable
/// so the LightGCN trainer can reuse it on propagated embeddings.
inline BprGrads bpr_gradients(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q,
                              std::span<const TrainTriplet> batch, double reg) {
    BprGrads g;
    const int d = static_cast<int>(P.rows());
    g.users.reserve(batch.size());
    g.items.reserve(2 * batch.size());
    for (const auto& t : batch) {
        const auto pu = P.col(t.user);
        const auto qi = Q.col(t.pos);
        const auto qj = Q.col(t.neg);
        const double diff = pu.dot(qi) - pu.dot(qj);
        g.loss += bpr_pair_loss(pu.dot(qi), pu.dot(qj));
        const double slope = -(1.0 - sigmoid_clamped(diff));  // d(-ln sigma)/d(diff)
        auto& gp = detail::grad_slot(g.users, t.user, d);
        auto& gqi = detail::grad_slot(g.items, t.pos, d);
        auto& gqj = detail::grad_slot(g.items, t.neg, d);
        gp += slope * (qi - qj);
        gqi += slope * pu;
        gqj += -slope * pu;
        if (reg != 0.0) {
            g.loss += reg * (pu.squaredNorm() + qi.squaredNorm() + qj.squaredNorm());
            gp += 2.0 * reg * pu;
            gqi += 2.0 * reg * qi;
            gqj += 2.0 * reg * qj;
        }
    }
    return g;
}

inline BprGrads bpr_gradients(const LatentFactors& f, std::span<const TrainTriplet> batch,
                              double reg) {
    return bpr_gradients(f.P, f.Q, batch, reg);
}

// --- Adam -------------------------------------------------------------------

/// Moment state for one embedding matrix; rows are updated lazily, with bias
/// correction driven by the global step count.
class AdamState {
public:
    AdamState(int d, uint32_t n_cols) {
        m_ = Eigen::MatrixXd::Zero(d, n_cols);
        v_ = Eigen::MatrixXd::Zero(d, n_cols);
    }

    void update_col(Eigen::MatrixXd& param, uint32_t col, const Eigen::VectorXd& grad,
                    const TrainConfig& cfg, int64_t step) {
        m_.col(col) = cfg.beta1 * m_.col(col) + (1.0 - cfg.beta1) * grad;
        v_.col(col) =
            cfg.beta2 * v_.col(col) + (1.0 - cfg.beta2) * grad.array().square().matrix();
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        const Eigen::ArrayXd mhat = m_.col(col).array() / bc1;
        const Eigen::ArrayXd vhat = v_.col(col).array() / bc2;
        param.col(col) -= (cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps)).matrix();
    }

    void update_dense(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, const TrainConfig& cfg,
                      int64_t step) {
        m_ = cfg.beta1 * m_ + (1.0 - cfg.beta1) * grad;
        v_ = cfg.beta2 * v_ + (1.0 - cfg.beta2) * grad.array().square().matrix();
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        param.array() -=
            cfg.lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + cfg.adam_eps);
    }

private:
    Eigen::MatrixXd m_;
    Eigen::MatrixXd v_;
};

// --- LightGCN ---------------------------------------------------------------

/// Symmetric-normalized bipartite adjacency over training interactions,
/// indexed users first then items (N = |U| + |V|).
inline Eigen::SparseMatrix<double> lightgcn_adjacency(const InteractionDataset& ds) {
    const uint32_t n = ds.n_users + ds.n_items;
    std::vector<uint32_t> item_degree(ds.n_items, 0);
    for (uint32_t u = 0; u < ds.n_users; ++u) {
        for (uint32_t i : ds.train[u]) ++item_degree[i];
    }
    std::vector<Eigen::Triplet<double>> entries;
    for (uint32_t u = 0; u < ds.n_users; ++u) {
        const double du = static_cast<double>(ds.train[u].size());
        for (uint32_t i : ds.train[u]) {
            const double w = 1.0 / std::sqrt(du * static_cast<double>(item_degree[i]));
            entries.emplace_back(u, ds.n_users + i, w);
            entries.emplace_back(ds.n_users + i, u, w);
        }
    }
    Eigen::SparseMatrix<double> adj(n, n);
    adj.setFromTriplets(entries.begin(), entries.end());
    return adj;
}

/// Averages the propagated embeddings over layers 0..L. The operator is
/// symmetric, so the same function backpropagates gradients.
inline Eigen::MatrixXd propagate_stacked(const Eigen::SparseMatrix<double>& adj,
                                         const Eigen::MatrixXd& x0, int layers) {
    Eigen::MatrixXd x = x0;
    Eigen::MatrixXd acc = x0;
    for (int l = 0; l < layers; ++l) {
        x = x * adj;
        acc += x;
    }
    return acc / static_cast<double>(layers + 1);
}

/// Layer-averaged effective user/item factors; scoring then reuses the plain
/// dot product. Isolated nodes keep only their layer-0 contribution.
inline LatentFactors propagate_lightgcn(const LatentFactors& f, const InteractionDataset& ds,
                                        int layers) {
    const auto adj = lightgcn_adjacency(ds);
    Eigen::MatrixXd x0(f.d(), ds.n_users + ds.n_items);
    x0 << f.P, f.Q;
    const Eigen::MatrixXd eff = propagate_stacked(adj, x0, layers);
    LatentFactors out;
    out.P = eff.leftCols(ds.n_users);
    out.Q = eff.rightCols(ds.n_items);
    return out;
}

// --- training ---------------------------------------------------------------

namespace detail {

inline double valid_recall(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q,
                           const InteractionDataset& ds, const std::vector<uint32_t>& valid_users,
                           size_t K, int threads) {
    if (valid_users.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto recs = topk_recommend(P, Q, ds, K, valid_users, threads);
    double total = 0.0;
    for (size_t i = 0; i < recs.users.size(); ++i) {
        total += recall_at_k(recs.lists[i], ds.valid[recs.users[i]], K);
    }
    return total / static_cast<double>(recs.users.size());
}

inline std::vector<uint32_t> users_with_validation(const InteractionDataset& ds) {
    std::vector<uint32_t> out;
    for (uint32_t u = 0; u < ds.n_users; ++u) {
        if (!ds.valid[u].empty()) out.push_back(u);
    }
    return out;
}

inline uint64_t epoch_seed(uint64_t base, int epoch, uint64_t salt) {
    return base ^ (static_cast<uint64_t>(epoch) * 0x9E3779B97F4A7C15ULL + salt);
}

}  // namespace detail

/// Mini-batched Adam on the pairwise ranking loss with fresh negatives each
/// epoch; returns the snapshot with the best validation recall (the final
/// epoch when the dataset has no validation split). Single-threaded updates,
/// so a fixed seed reproduces the factors bit for bit.
inline TrainResult train_bprmf(const InteractionDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.n_users == 0 || ds.n_items == 0) throw DataError("empty dataset");
    TrainResult result;
    result.factors = init_factors(ds.n_users, ds.n_items, cfg.d, cfg.seed);
    LatentFactors& f = result.factors;

    const auto valid_users = detail::users_with_validation(ds);
    LatentFactors best = f;
    double best_recall = -1.0;
    int best_epoch = 0;
    int stall = 0;

    AdamState adam_p(cfg.d, ds.n_users);
    AdamState adam_q(cfg.d, ds.n_items);
    int64_t step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto triplets = sample_negatives(ds, cfg.n_neg, detail::epoch_seed(cfg.seed, epoch, 1));
        Rng order_rng(detail::epoch_seed(cfg.seed, epoch, 2));
        order_rng.shuffle(triplets);

        double epoch_loss = 0.0;
        for (size_t begin = 0; begin < triplets.size();
             begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end =
                std::min(triplets.size(), begin + static_cast<size_t>(cfg.batch_size));
            const std::span<const TrainTriplet> batch(triplets.data() + begin, end - begin);
            auto grads = bpr_gradients(f, batch, cfg.reg);
            if (!std::isfinite(grads.loss)) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch));
            }
            epoch_loss += grads.loss;
            ++step;
            for (const auto& [u, g] : grads.users) adam_p.update_col(f.P, u, g, cfg, step);
            for (const auto& [v, g] : grads.items) adam_q.update_col(f.Q, v, g, cfg, step);
        }
        result.epoch_loss.push_back(epoch_loss);

        const double recall =
            detail::valid_recall(f.P, f.Q, ds, valid_users, cfg.valid_k, cfg.threads);
        result.epoch_valid_recall.push_back(recall);
        if (cfg.verbose) {
            std::cerr << "epoch " << epoch << " loss " << epoch_loss << " valid recall@"
                      << cfg.valid_k << " " << recall << "\n";
        }
        if (valid_users.empty()) continue;
        if (recall > best_recall) {
            best_recall = recall;
            best = f;
            best_epoch = epoch;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
    }

    if (!valid_users.empty() && cfg.epochs > 0) {
        result.factors = std::move(best);
        result.best_epoch = best_epoch;
        result.best_valid_recall = best_recall;
    } else if (!result.epoch_valid_recall.empty()) {
        result.best_epoch = static_cast<int>(result.epoch_valid_recall.size());
        result.best_valid_recall = result.epoch_valid_recall.back();
    }
    return result;
}

/// LightGCN trainer: scores flow through the layer-averaged propagation each
/// batch and gradients flow back through the same symmetric operator onto the
/// layer-0 embeddings (the model's only parameters). Propagation makes batch
/// gradients dense, so Adam steps the full matrices.
inline TrainResult train_lightgcn(const InteractionDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.n_users == 0 || ds.n_items == 0) throw DataError("empty dataset");
    const auto adj = lightgcn_adjacency(ds);
    const uint32_t n_nodes = ds.n_users + ds.n_items;

    TrainResult result;
    result.factors = init_factors(ds.n_users, ds.n_items, cfg.d, cfg.seed);

    Eigen::MatrixXd x0(cfg.d, n_nodes);
    x0 << result.factors.P, result.factors.Q;

    const auto valid_users = detail::users_with_validation(ds);
    Eigen::MatrixXd best = x0;
    double best_recall = -1.0;
    int best_epoch = 0;
    int stall = 0;

    AdamState adam(cfg.d, n_nodes);
    int64_t step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto triplets = sample_negatives(ds, cfg.n_neg, detail::epoch_seed(cfg.seed, epoch, 1));
        Rng order_rng(detail::epoch_seed(cfg.seed, epoch, 2));
        order_rng.shuffle(triplets);

        double epoch_loss = 0.0;
        for (size_t begin = 0; begin < triplets.size();
             begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end =
                std::min(triplets.size(), begin + static_cast<size_t>(cfg.batch_size));
            const std::span<const TrainTriplet> batch(triplets.data() + begin, end - begin);

            const Eigen::MatrixXd eff = propagate_stacked(adj, x0, cfg.layers);
            const auto eff_p = eff.leftCols(ds.n_users);
            const auto eff_q = eff.rightCols(ds.n_items);
            auto grads = bpr_gradients(eff_p, eff_q, batch, 0.0);
            if (!std::isfinite(grads.loss)) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch));
            }

            Eigen::MatrixXd g_eff = Eigen::MatrixXd::Zero(cfg.d, n_nodes);
            for (const auto& [u, g] : grads.users) g_eff.col(u) = g;
            for (const auto& [v, g] : grads.items) g_eff.col(ds.n_users + v) = g;
            Eigen::MatrixXd g0 = propagate_stacked(adj, g_eff, cfg.layers);

            // Regularization targets the layer-0 embeddings each triplet touches.
            if (cfg.reg != 0.0) {
                for (const auto& t : batch) {
                    grads.loss += cfg.reg * (x0.col(t.user).squaredNorm() +
                                             x0.col(ds.n_users + t.pos).squaredNorm() +
                                             x0.col(ds.n_users + t.neg).squaredNorm());
                    g0.col(t.user) += 2.0 * cfg.reg * x0.col(t.user);
                    g0.col(ds.n_users + t.pos) += 2.0 * cfg.reg * x0.col(ds.n_users + t.pos);
                    g0.col(ds.n_users + t.neg) += 2.0 * cfg.reg * x0.col(ds.n_users + t.neg);
                }
            }
            epoch_loss += grads.loss;
            ++step;
            adam.update_dense(x0, g0, cfg, step);
        }
        result.epoch_loss.push_back(epoch_loss);

        const Eigen::MatrixXd eff = propagate_stacked(adj, x0, cfg.layers);
        const double recall = detail::valid_recall(eff.leftCols(ds.n_users),
                                                   eff.rightCols(ds.n_items), ds, valid_users,
                                                   cfg.valid_k, cfg.threads);
        result.epoch_valid_recall.push_back(recall);
        if (cfg.verbose) {
            std::cerr << "epoch " << epoch << " loss " << epoch_loss << " valid recall@"
                      << cfg.valid_k << " " << recall << "\n";
        }
        if (valid_users.empty()) continue;
        if (recall > best_recall) {
            best_recall = recall;
            best = x0;
            best_epoch = epoch;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
    }

    const Eigen::MatrixXd& chosen = (!valid_users.empty() && cfg.epochs > 0) ? best : x0;
    result.factors.P = chosen.leftCols(ds.n_users);
    result.factors.Q = chosen.rightCols(ds.n_items);
    if (!valid_users.empty() && cfg.epochs > 0) {
        result.best_epoch = best_epoch;
        result.best_valid_recall = best_recall;
    } else if (!result.epoch_valid_recall.empty()) {
        result.best_epoch = static_cast<int>(result.epoch_valid_recall.size());
        result.best_valid_recall = result.epoch_valid_recall.back();
    }
    return result;
}

// --- CMBF factor files --------------------------------------------------------

inline constexpr char kFactorsMagic[4] = {'C', 'M', 'B', 'F'};
inline constexpr uint32_t kFactorsVersion = 1;

inline void save_factors(const LatentFactors& f, const std::string& path) {
    auto os = open_out(path);
    write_magic(os, kFactorsMagic, kFactorsVersion);
    write_u32(os, static_cast<uint32_t>(f.d()));
    write_u32(os, static_cast<uint32_t>(f.P.cols()));
    write_u32(os, static_cast<uint32_t>(f.Q.cols()));
    auto write_rowmajor = [&](const Eigen::MatrixXd& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                write_f32(os, static_cast<float>(m(r, c)));
            }
        }
    };
    write_rowmajor(f.P);
    write_rowmajor(f.Q);
}

inline LatentFactors load_factors(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, kFactorsMagic, kFactorsVersion, "factors");
    const uint32_t d = read_u32(is);
    const uint32_t n_users = read_u32(is);
    const uint32_t n_items = read_u32(is);
    LatentFactors f;
    auto read_rowmajor = [&](Eigen::MatrixXd& m, uint32_t cols) {
        m.resize(d, cols);
        for (uint32_t r = 0; r < d; ++r) {
            for (uint32_t c = 0; c < cols; ++c) m(r, c) = static_cast<double>(read_f32(is));
        }
    };
    read_rowmajor(f.P, n_users);
    read_rowmajor(f.Q, n_items);
    return f;
}

inline void write_factors_csv(const LatentFactors& f, const std::string& path) {
    auto os = open_out(path, false);
    os << "kind,index";
    for (int r = 0; r < f.d(); ++r) os << ",f" << r;
    os << "\n";
    auto dump = [&](const char* kind, const Eigen::MatrixXd& m) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            os << kind << "," << c;
            for (Eigen::Index r = 0; r < m.rows(); ++r) os << "," << fmt_double(m(r, c));
            os << "\n";
        }
    };
    dump("user", f.P);
    dump("item", f.Q);
}

}  // namespace divrec

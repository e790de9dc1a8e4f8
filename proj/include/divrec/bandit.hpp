#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <vector>

#include "divrec/common.hpp"
#include "divrec/dataset.hpp"
#include "divrec/evaluation.hpp"
#include "divrec/metrics.hpp"
#include "divrec/ranking.hpp"

namespace divrec {

/// Shared arm grid: n_arms values evenly spaced over [-A, A], endpoints
/// included. Built as A*(2k - (n-1))/(n-1), which equals -A + k*2A/(n-1)
/// but keeps the endpoints and the odd-count midpoint exact.
struct ArmGrid {
    double A = 0.0;
    std::vector<double> values;

    int n_arms() const { return static_cast<int>(values.size()); }
};

inline ArmGrid init_arms(double A, int n_arms) {
    if (A <= 0.0) throw ConfigError("arm threshold A must be positive");
    if (n_arms < 2) throw ConfigError("need at least 2 arms");
    ArmGrid grid;
    grid.A = A;
    grid.values.resize(n_arms);
    const double denom = static_cast<double>(n_arms - 1);
    for (int k = 0; k < n_arms; ++k) {
        grid.values[k] = A * (2.0 * k - denom) / denom;
    }
    return grid;
}

/// Per-player running arm-value estimates and pull counts; everything starts
/// at zero, and arms never selected stay there.
struct BanditState {
    size_t n_players = 0;
    int n_arms = 0;
    std::vector<double> value;       // n_players * n_arms
    std::vector<uint32_t> count;
    std::vector<uint32_t> selection; // current arm per player

    BanditState() = default;
    BanditState(size_t players, int arms)
        : n_players(players),
          n_arms(arms),
          value(players * static_cast<size_t>(arms), 0.0),
          count(players * static_cast<size_t>(arms), 0),
          selection(players, 0) {}

    double& v(size_t player, int arm) { return value[player * n_arms + arm]; }
    double v(size_t player, int arm) const { return value[player * n_arms + arm]; }
    uint32_t& n(size_t player, int arm) { return count[player * n_arms + arm]; }
    uint32_t n(size_t player, int arm) const { return count[player * n_arms + arm]; }
};

/// Argmax of the player's value estimates; equal estimates break toward the
/// lower arm index.
inline int greedy_arm(const BanditState& state, size_t player) {
    const double* v = state.value.data() + player * state.n_arms;
    int best = 0;
    for (int a = 1; a < state.n_arms; ++a) {
        if (v[a] > v[best]) best = a;
    }
    return best;
}

/// With probability epsilon a uniform arm, otherwise the greedy choice. One
/// uniform draw decides the branch; the random branch consumes one more.
inline int select_arm(const BanditState& state, size_t player, double epsilon, Rng& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("epsilon must be in [0, 1]");
    if (rng.uniform01() < epsilon) {
        return static_cast<int>(rng.below(static_cast<uint64_t>(state.n_arms)));
    }
    return greedy_arm(state, player);
}

/// Incremental running mean: n <- n+1, V <- V + (r - V)/n.
inline void update_arm(BanditState& state, size_t player, int arm, double reward) {
    uint32_t& n = state.n(player, arm);
    ++n;
    double& v = state.v(player, arm);
    v += (reward - v) / static_cast<double>(n);
}

/// What to optimize: one diversity metric, optionally blended with an
/// accuracy metric (psi = lambda2*acc + (1-lambda2)*div), minus the scaled
/// perturbation size. lambda2 is ignored without an accuracy metric.
struct ObjectiveSpec {
    DiversityMetric diversity = DiversityMetric::ilad;
    std::optional<AccuracyMetric> accuracy;
    double lambda1 = 5.0;
    double lambda2 = 0.9;
    size_t K = 20;

    void validate() const {
        if (lambda1 < 0.0) throw ConfigError("lambda1 must be >= 0");
        if (lambda2 < 0.0 || lambda2 > 1.0) throw ConfigError("lambda2 must be in [0, 1]");
        if (K < 1) throw ConfigError("objective K must be >= 1");
        if (diversity == DiversityMetric::ilad && K < 2) {
            throw ConfigError("ilad objective needs K >= 2");
        }
    }
};

struct RewardSnapshot {
    double reward = 0.0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN when not blended
    double diversity = 0.0;
};

struct RunTrace {
    std::vector<RewardSnapshot> iters;
};

inline void write_trace_csv(const RunTrace& trace, const std::string& path) {
    auto os = open_out(path, false);
    os << "iter,reward,accuracy,diversity\n";
    for (size_t t = 0; t < trace.iters.size(); ++t) {
        const auto& s = trace.iters[t];
        os << (t + 1) << "," << fmt_double(s.reward) << ",";
        if (!std::isnan(s.accuracy)) os << fmt_double(s.accuracy);
        os << "," << fmt_double(s.diversity) << "\n";
    }
}

/// Scores a candidate perturbation: rank with the scaled-plus-perturbed item
/// matrix for the evaluation users, measure the objective metrics against
/// validation truth, and return psi^2 - lambda1 * mean|delta|.
class RewardEvaluator {
public:
    RewardEvaluator(const EvalModel& model, const InteractionDataset& ds,
                    const ObjectiveSpec& spec, size_t eval_user_sample, uint64_t seed,
                    int threads = 1)
        : model_(&model), ds_(&ds), spec_(spec), threads_(threads) {
        spec.validate();
        for (uint32_t u = 0; u < ds.n_users; ++u) {
            if (!ds.valid[u].empty()) users_.push_back(u);
        }
        if (users_.empty()) {
            if (spec.accuracy.has_value()) {
                throw DataError("objective needs users with validation positives");
            }
            users_.resize(ds.n_users);
            std::iota(users_.begin(), users_.end(), 0u);
        }
        if (eval_user_sample > 0 && eval_user_sample < users_.size()) {
            Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
            rng.shuffle(users_);
            users_.resize(eval_user_sample);
            std::sort(users_.begin(), users_.end());
        }
        if (spec.diversity == DiversityMetric::alpha_ndcg) {
            alpha_scorer_.emplace(ds.item_subtopics, ds.n_subtopics, 0.5, spec.K);
        }
        if (spec.diversity == DiversityMetric::sc) {
            sc_denom_ = catalog_subtopic_count(ds.item_subtopics, ds.n_subtopics);
        }
    }

    const std::vector<uint32_t>& users() const { return users_; }

    RewardSnapshot operator()(const Eigen::Ref<const Eigen::MatrixXd>& delta) const {
        const Eigen::MatrixXd perturbed = model_->q_scaled + delta;
        const auto recs =
            topk_recommend(model_->eff.P, perturbed, *ds_, spec_.K, users_, threads_);

        const size_t n = recs.users.size();
        std::vector<double> acc_vals(n, 0.0), div_vals(n, 0.0);
        std::vector<char> has_truth(n, 0);
        parallel_chunks(n, 256, threads_, [&](size_t begin, size_t end) {
            for (size_t i = begin; i < end; ++i) {
                const uint32_t u = recs.users[i];
                const auto& list = recs.lists[i];
                if (spec_.accuracy.has_value() && !ds_->valid[u].empty()) {
                    has_truth[i] = 1;
                    acc_vals[i] = *spec_.accuracy == AccuracyMetric::recall
                                      ? recall_at_k(list, ds_->valid[u], spec_.K)
                                      : ndcg_at_k(list, ds_->valid[u], spec_.K);
                }
                switch (spec_.diversity) {
                    case DiversityMetric::alpha_ndcg:
                        div_vals[i] = alpha_scorer_->at(list, spec_.K);
                        break;
                    case DiversityMetric::sc:
                        div_vals[i] = sc_at_k_with_denom(list, ds_->item_subtopics,
                                                         ds_->n_subtopics, sc_denom_, spec_.K);
                        break;
                    case DiversityMetric::ilad:
                        div_vals[i] = ilad_from_units(list, model_->unit_items, spec_.K);
                        break;
                    case DiversityMetric::pc:
                        break;  // global; handled below
                }
            }
        });

        RewardSnapshot snap;
        if (spec_.diversity == DiversityMetric::pc) {
            snap.diversity = pc_at_k(recs.lists, ds_->n_items, spec_.K);
        } else {
            double total = 0.0;
            for (double v : div_vals) total += v;
            snap.diversity = total / static_cast<double>(n);
        }
        double psi = snap.diversity;
        if (spec_.accuracy.has_value()) {
            double total = 0.0;
            size_t counted = 0;
            for (size_t i = 0; i < n; ++i) {
                if (has_truth[i]) {
                    total += acc_vals[i];
                    ++counted;
                }
            }
            snap.accuracy = counted ? total / static_cast<double>(counted) : 0.0;
            psi = spec_.lambda2 * snap.accuracy + (1.0 - spec_.lambda2) * snap.diversity;
        }
        snap.reward = psi * psi - spec_.lambda1 * delta.cwiseAbs().mean();
        return snap;
    }

private:
    const EvalModel* model_;
    const InteractionDataset* ds_;
    ObjectiveSpec spec_;
    int threads_;
    std::vector<uint32_t> users_;
    std::optional<AlphaNdcgScorer> alpha_scorer_;
    size_t sc_denom_ = 0;
};

/// Spec-level reward entry point for a single perturbation.
inline RewardSnapshot compute_reward(const Eigen::MatrixXd& delta, const EvalModel& model,
                                     const InteractionDataset& ds, const ObjectiveSpec& spec,
                                     int threads = 1) {
    return RewardEvaluator(model, ds, spec, 0, 0, threads)(delta);
}

struct BanditRun {
    std::vector<double> delta_flat;  // one value per player
    BanditState state;
    RunTrace trace;
};

/// Core optimization loop over an injectable reward. Every player selects an
/// arm (fixed player order, one seeded stream), the jointly assembled
/// perturbation earns one shared reward, and each player's selected arm is
/// updated with it. After T iterations a terminal greedy pass fixes the final
/// arms. T = 0 skips everything and returns the all-zero initialization.
template <typename RewardFn>
BanditRun run_bandit(size_t n_players, const ArmGrid& grid, double epsilon, int T, uint64_t seed,
                     RewardFn&& reward, bool verbose = false) {
    if (T < 0) throw ConfigError("T must be >= 0");
    BanditRun run;
    run.state = BanditState(n_players, grid.n_arms());
    run.delta_flat.assign(n_players, 0.0);
    if (T == 0) return run;

    Rng rng(seed);
    for (int t = 1; t <= T; ++t) {
        for (size_t p = 0; p < n_players; ++p) {
            const int arm = select_arm(run.state, p, epsilon, rng);
            run.state.selection[p] = static_cast<uint32_t>(arm);
            run.delta_flat[p] = grid.values[arm];
        }
        const RewardSnapshot snap = reward(std::as_const(run.delta_flat), t);
        if (!std::isfinite(snap.reward)) {
            throw NumericError("non-finite reward at iteration " + std::to_string(t));
        }
        run.trace.iters.push_back(snap);
        for (size_t p = 0; p < n_players; ++p) {
            update_arm(run.state, p, static_cast<int>(run.state.selection[p]), snap.reward);
        }
        if (verbose && (t % 10 == 0 || t == T)) {
            std::cerr << "iter " << t << "/" << T << " reward " << snap.reward << " diversity "
                      << snap.diversity << "\n";
        }
    }

    for (size_t p = 0; p < n_players; ++p) {
        const int arm = greedy_arm(run.state, p);
        run.state.selection[p] = static_cast<uint32_t>(arm);
        run.delta_flat[p] = grid.values[arm];
    }
    return run;
}

struct BanditConfig {
    double A = 0.3;
    int n_arms = 61;
    double epsilon = 0.1;
    int T = 200;
    ObjectiveSpec objective;
    uint64_t seed = 42;
    size_t eval_user_sample = 0;  // 0 = full validation population
    int threads = 1;
    bool verbose = false;
};

struct CmbResult {
    Eigen::MatrixXd delta;
    RunTrace trace;
};

/// Learns the perturbation matrix: one player per entry of delta (player
/// index = item * d + feature, matching column-major layout), all sharing
/// one arm grid and one scalar reward.
inline CmbResult run_cmb(const EvalModel& model, const InteractionDataset& ds,
                         const BanditConfig& cfg) {
    const ArmGrid grid = init_arms(cfg.A, cfg.n_arms);
    const RewardEvaluator evaluate(model, ds, cfg.objective, cfg.eval_user_sample, cfg.seed,
                                   cfg.threads);
    const Eigen::Index d = model.eff.Q.rows();
    const Eigen::Index n_items = model.eff.Q.cols();
    const size_t n_players = static_cast<size_t>(d) * static_cast<size_t>(n_items);

    auto reward = [&](const std::vector<double>& flat, int) {
        const Eigen::Map<const Eigen::MatrixXd> delta(flat.data(), d, n_items);
        return evaluate(delta);
    };
    auto run = run_bandit(n_players, grid, cfg.epsilon, cfg.T, cfg.seed, reward, cfg.verbose);

    CmbResult out;
    out.delta = Eigen::Map<const Eigen::MatrixXd>(run.delta_flat.data(), d, n_items);
    out.trace = std::move(run.trace);
    return out;
}

// --- CMBP perturbation files --------------------------------------------------

inline constexpr char kDeltaMagic[4] = {'C', 'M', 'B', 'P'};
inline constexpr uint32_t kDeltaVersion = 1;

inline void save_delta(const Eigen::MatrixXd& delta, const std::string& path) {
    auto os = open_out(path);
    write_magic(os, kDeltaMagic, kDeltaVersion);
    write_u32(os, static_cast<uint32_t>(delta.rows()));
    write_u32(os, static_cast<uint32_t>(delta.cols()));
    for (Eigen::Index r = 0; r < delta.rows(); ++r) {
        for (Eigen::Index c = 0; c < delta.cols(); ++c) {
            write_f32(os, static_cast<float>(delta(r, c)));
        }
    }
}

inline Eigen::MatrixXd load_delta(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, kDeltaMagic, kDeltaVersion, "perturbation");
    const uint32_t d = read_u32(is);
    const uint32_t n_items = read_u32(is);
    Eigen::MatrixXd delta(d, n_items);
    for (uint32_t r = 0; r < d; ++r) {
        for (uint32_t c = 0; c < n_items; ++c) delta(r, c) = static_cast<double>(read_f32(is));
    }
    return delta;
}

inline void write_delta_csv(const Eigen::MatrixXd& delta, const std::string& path) {
    auto os = open_out(path, false);
    os << "feature,item,value\n";
    for (Eigen::Index r = 0; r < delta.rows(); ++r) {
        for (Eigen::Index c = 0; c < delta.cols(); ++c) {
            os << r << "," << c << "," << fmt_double(delta(r, c)) << "\n";
        }
    }
}

}  // namespace divrec

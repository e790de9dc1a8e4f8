#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divrec/dataset.hpp"
#include "divrec/metrics.hpp"
#include "divrec/models.hpp"
#include "divrec/ranking.hpp"

namespace divrec {

enum class ModelKind { bprmf, lightgcn };
enum class AccuracyMetric { recall, ndcg };
enum class DiversityMetric { alpha_ndcg, sc, pc, ilad };

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "bprmf") return ModelKind::bprmf;
    if (s == "lightgcn") return ModelKind::lightgcn;
    throw ConfigError("unknown model '" + s + "' (expected bprmf or lightgcn)");
}

inline AccuracyMetric parse_accuracy_metric(const std::string& s) {
    if (s == "recall") return AccuracyMetric::recall;
    if (s == "ndcg") return AccuracyMetric::ndcg;
    throw ConfigError("unknown accuracy metric '" + s + "'");
}

inline DiversityMetric parse_diversity_metric(const std::string& s) {
    if (s == "alpha_ndcg") return DiversityMetric::alpha_ndcg;
    if (s == "sc") return DiversityMetric::sc;
    if (s == "pc") return DiversityMetric::pc;
    if (s == "ilad") return DiversityMetric::ilad;
    throw ConfigError("unknown diversity metric '" + s + "'");
}

inline const char* to_string(ModelKind k) {
    return k == ModelKind::bprmf ? "bprmf" : "lightgcn";
}
inline const char* to_string(AccuracyMetric m) {
    return m == AccuracyMetric::recall ? "recall" : "ndcg";
}
inline const char* to_string(DiversityMetric m) {
    switch (m) {
        case DiversityMetric::alpha_ndcg: return "alpha_ndcg";
        case DiversityMetric::sc: return "sc";
        case DiversityMetric::pc: return "pc";
        default: return "ilad";
    }
}

/// Everything the evaluation protocol scores with. `eff` holds the factors
/// the model actually ranks by (layer-averaged for lightgcn); `q_scaled` is
/// the max-abs-scaled item matrix the perturbation is added to; `unit_items`
/// are the unperturbed effective item vectors normalized for cosine metrics.
struct EvalModel {
    ModelKind kind = ModelKind::bprmf;
    LatentFactors eff;
    Eigen::MatrixXd q_scaled;
    Eigen::VectorXd q_scales;
    Eigen::MatrixXd unit_items;
};

inline EvalModel build_eval_model(const LatentFactors& learned, ModelKind kind,
                                  const InteractionDataset& ds, int layers) {
    EvalModel m;
    m.kind = kind;
    m.eff = kind == ModelKind::lightgcn ? propagate_lightgcn(learned, ds, layers) : learned;
    auto scaled = maxabs_scale(m.eff.Q);
    m.q_scaled = std::move(scaled.scaled);
    m.q_scales = std::move(scaled.scales);
    m.unit_items.resize(m.eff.Q.rows(), m.eff.Q.cols());
    for (Eigen::Index j = 0; j < m.eff.Q.cols(); ++j) {
        const double norm = m.eff.Q.col(j).norm();
        m.unit_items.col(j) = m.eff.Q.col(j) / (norm == 0.0 ? 1.0 : norm);
    }
    return m;
}

/// Top-K lists under the canonical protocol: scaled item matrix plus an
/// optional perturbation, training positives masked.
inline RecommendationSet recommend_with_delta(const EvalModel& m, const InteractionDataset& ds,
                                              const Eigen::MatrixXd* delta, size_t K,
                                              std::span<const uint32_t> users = {},
                                              int threads = 1) {
    if (delta == nullptr) {
        return topk_recommend(m.eff.P, m.q_scaled, ds, K, users, threads);
    }
    const Eigen::MatrixXd perturbed = apply_perturbation(m.q_scaled, *delta);
    return topk_recommend(m.eff.P, perturbed, ds, K, users, threads);
}

/// Full metric report for already-generated lists, scored on test truth.
/// Users without test positives are excluded from the accuracy averages but
/// still contribute to the diversity averages; PC is global over all
/// evaluated lists. Per-user values are reduced in user order, so the result
/// is independent of the thread count.
inline MetricReport evaluate_lists(const RecommendationSet& recs, const EvalModel& m,
                                   const InteractionDataset& ds, std::span<const size_t> ks,
                                   double alpha = 0.5, int threads = 1) {
    if (ks.empty()) throw ConfigError("evaluate_lists: no K values");
    const size_t max_k = *std::max_element(ks.begin(), ks.end());
    AlphaNdcgScorer alpha_scorer(ds.item_subtopics, ds.n_subtopics, alpha, max_k);
    const size_t sc_denom = catalog_subtopic_count(ds.item_subtopics, ds.n_subtopics);

    const size_t n = recs.users.size();
    struct PerUser {
        double recall, ndcg, alpha_ndcg, sc, ilad;
        bool has_truth;
    };
    std::vector<std::vector<PerUser>> per_k(ks.size());
    for (auto& v : per_k) v.resize(n);

    parallel_chunks(n, 256, threads, [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const uint32_t u = recs.users[i];
            const auto& list = recs.lists[i];
            for (size_t ki = 0; ki < ks.size(); ++ki) {
                const size_t K = ks[ki];
                PerUser& slot = per_k[ki][i];
                slot.has_truth = !ds.test[u].empty();
                slot.recall = slot.has_truth ? recall_at_k(list, ds.test[u], K) : 0.0;
                slot.ndcg = slot.has_truth ? ndcg_at_k(list, ds.test[u], K) : 0.0;
                slot.alpha_ndcg = alpha_scorer.at(list, K);
                slot.sc = sc_at_k_with_denom(list, ds.item_subtopics, ds.n_subtopics, sc_denom, K);
                slot.ilad = K >= 2 ? ilad_from_units(list, m.unit_items, K) : 0.0;
            }
        }
    });

    MetricReport report;
    report.ks.assign(ks.begin(), ks.end());
    std::vector<double> recall(ks.size()), ndcg(ks.size()), alpha_v(ks.size()), sc(ks.size()),
        pc(ks.size()), ilad(ks.size());
    for (size_t ki = 0; ki < ks.size(); ++ki) {
        double r = 0.0, nd = 0.0, av = 0.0, s = 0.0, il = 0.0;
        size_t with_truth = 0;
        for (size_t i = 0; i < n; ++i) {
            const PerUser& slot = per_k[ki][i];
            if (slot.has_truth) {
                r += slot.recall;
                nd += slot.ndcg;
                ++with_truth;
            }
            av += slot.alpha_ndcg;
            s += slot.sc;
            il += slot.ilad;
        }
        recall[ki] = with_truth ? r / static_cast<double>(with_truth) : 0.0;
        ndcg[ki] = with_truth ? nd / static_cast<double>(with_truth) : 0.0;
        alpha_v[ki] = av / static_cast<double>(n);
        sc[ki] = s / static_cast<double>(n);
        ilad[ki] = il / static_cast<double>(n);
        pc[ki] = pc_at_k(recs.lists, ds.n_items, ks[ki]);
    }
    report.rows = {{"recall", recall}, {"ndcg", ndcg}, {"alpha_ndcg", alpha_v},
                   {"sc", sc},         {"pc", pc},     {"ilad", ilad}};
    return report;
}

/// Canonical protocol report: rank every user with the scaled item matrix
/// plus an optional perturbation, then score the lists.
inline MetricReport evaluate_report(const EvalModel& m, const InteractionDataset& ds,
                                    const Eigen::MatrixXd* delta, std::span<const size_t> ks,
                                    double alpha = 0.5, int threads = 1) {
    if (ks.empty()) throw ConfigError("evaluate_report: no K values");
    const size_t max_k = *std::max_element(ks.begin(), ks.end());
    const auto recs = recommend_with_delta(m, ds, delta, max_k, {}, threads);
    return evaluate_lists(recs, m, ds, ks, alpha, threads);
}

}  // namespace divrec

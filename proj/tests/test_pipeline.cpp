// End-to-end runs on a planted block-preference corpus. These mirror the
// directional behavior the optimizer is supposed to show at full scale:
// the optimized metric improves, accuracy stays in a bounded band, and
// erasing the discovered features undoes the change.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "divrec/bandit.hpp"
#include "divrec/evaluation.hpp"
#include "divrec/explain.hpp"
#include "divrec/models.hpp"
#include "support/synthetic.hpp"

using namespace divrec;

namespace {

struct Pipeline {
    InteractionDataset ds;
    EvalModel model;
    MetricReport base;
    Eigen::MatrixXd delta;
    MetricReport optimized;

    Pipeline() {
        ds = testsupport::make_block_dataset(100, 80, 4, 15, 0.15, 7);
        TrainConfig tc;
        tc.d = 8;
        tc.epochs = 40;
        tc.patience = 40;
        tc.seed = 11;
        const auto trained = train_bprmf(ds, tc);
        model = build_eval_model(trained.factors, ModelKind::bprmf, ds, 3);
        const std::vector<size_t> ks{10};
        base = evaluate_report(model, ds, nullptr, ks);

        BanditConfig cfg;
        cfg.A = 0.3;
        cfg.n_arms = 21;
        cfg.epsilon = 0.1;
        cfg.T = 60;
        cfg.seed = 5;
        cfg.objective.diversity = DiversityMetric::ilad;
        cfg.objective.accuracy = std::nullopt;
        cfg.objective.lambda1 = 0.0;
        cfg.objective.K = 10;
        const auto result = run_cmb(model, ds, cfg);
        delta = result.delta;
        optimized = evaluate_report(model, ds, &delta, ks);
    }
};

const Pipeline& pipeline() {
    static Pipeline p;
    return p;
}

}  // namespace

TEST_CASE("trained model beats random and approaches the planted oracle", "[pipeline]") {
    const auto corpus = testsupport::make_block_corpus(100, 80, 4, 15, 0.15, 7);
    const auto& p = pipeline();
    const auto& ds = p.ds;

    // Planted oracle: score 1 for same-group items, 0 otherwise.
    const auto item_groups = testsupport::dense_item_groups(corpus, ds);
    const auto user_groups = testsupport::dense_user_groups(corpus, ds);
    LatentFactors oracle;
    oracle.P.resize(corpus.n_groups, ds.n_users);
    oracle.Q.resize(corpus.n_groups, ds.n_items);
    oracle.P.setZero();
    oracle.Q.setZero();
    for (uint32_t u = 0; u < ds.n_users; ++u) oracle.P(user_groups[u], u) = 1.0;
    for (uint32_t j = 0; j < ds.n_items; ++j) oracle.Q(item_groups[j], j) = 1.0;

    auto recall_of = [&](const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q) {
        const auto recs = topk_recommend(P, Q, ds, 10);
        double total = 0.0;
        size_t n = 0;
        for (size_t i = 0; i < recs.users.size(); ++i) {
            if (ds.test[recs.users[i]].empty()) continue;
            total += recall_at_k(recs.lists[i], ds.test[recs.users[i]], 10);
            ++n;
        }
        return total / static_cast<double>(n);
    };

    const double oracle_recall = recall_of(oracle.P, oracle.Q);
    const auto random = init_factors(ds.n_users, ds.n_items, 8, 999);
    const double random_recall = recall_of(random.P, random.Q);
    const double trained_recall = p.base.at("recall", 10);

    INFO("random " << random_recall << " trained " << trained_recall << " oracle "
                   << oracle_recall);
    CHECK(trained_recall > 3.0 * random_recall);
    CHECK(trained_recall > 0.5 * oracle_recall);
}

TEST_CASE("diversity-only optimization improves its metric within an accuracy band",
          "[pipeline]") {
    const auto& p = pipeline();
    const double base_ilad = p.base.at("ilad", 10);
    const double opt_ilad = p.optimized.at("ilad", 10);
    const double base_recall = p.base.at("recall", 10);
    const double opt_recall = p.optimized.at("recall", 10);
    INFO("ilad " << base_ilad << " -> " << opt_ilad << ", recall " << base_recall << " -> "
                 << opt_recall);
    CHECK(opt_ilad >= 1.05 * base_ilad);
    CHECK(opt_recall >= 0.60 * base_recall);
}

TEST_CASE("trade-off objective trades less accuracy for a smaller gain", "[pipeline]") {
    const auto& p = pipeline();
    BanditConfig cfg;
    cfg.A = 0.3;
    cfg.n_arms = 21;
    cfg.epsilon = 0.1;
    cfg.T = 60;
    cfg.seed = 5;
    cfg.objective.diversity = DiversityMetric::ilad;
    cfg.objective.accuracy = AccuracyMetric::ndcg;
    cfg.objective.lambda1 = 5.0;
    cfg.objective.lambda2 = 0.9;
    cfg.objective.K = 10;
    const auto result = run_cmb(p.model, p.ds, cfg);
    const std::vector<size_t> ks{10};
    const auto report = evaluate_report(p.model, p.ds, &result.delta, ks);

    const double base_recall = p.base.at("recall", 10);
    INFO("ilad " << p.base.at("ilad", 10) << " -> " << report.at("ilad", 10) << ", recall "
                 << base_recall << " -> " << report.at("recall", 10));
    CHECK(report.at("ilad", 10) >= p.base.at("ilad", 10));
    CHECK(report.at("recall", 10) >= 0.90 * base_recall);
    // the strong perturbation penalty keeps the intervention small
    CHECK(result.delta.cwiseAbs().mean() <= p.delta.cwiseAbs().mean());
}

TEST_CASE("erasing the top features undoes more than erasing the least", "[pipeline]") {
    const auto& p = pipeline();
    const std::vector<size_t> ks{10};
    const double div_with = p.optimized.at("ilad", 10);
    const double acc_with = p.optimized.at("recall", 10);

    const auto top = erase(p.delta, ExplainStrategy::shared, EraseManner::top, 2, 3);
    const auto least = erase(p.delta, ExplainStrategy::shared, EraseManner::least, 2, 3);
    const auto report_top = evaluate_erasure(p.model, p.ds, top, ks);
    const auto report_least = evaluate_erasure(p.model, p.ds, least, ks);

    const double move_top = std::abs(report_top.at("ilad", 10) - div_with);
    const double move_least = std::abs(report_least.at("ilad", 10) - div_with);
    INFO("top moves ilad by " << move_top << ", least by " << move_least);
    CHECK(move_top > move_least);
    // dropping the meaningful features walks back toward the base model
    CHECK(report_top.at("ilad", 10) < div_with);
    CHECK(report_top.at("recall", 10) > acc_with);
}

TEST_CASE("zero perturbation reproduces the base report bit for bit", "[pipeline]") {
    const auto& p = pipeline();
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(p.model.eff.Q.rows(), p.ds.n_items);
    const std::vector<size_t> ks{5, 10};
    const auto base = evaluate_report(p.model, p.ds, nullptr, ks);
    const auto with_zero = evaluate_report(p.model, p.ds, &zero, ks);
    for (const auto& [name, values] : base.rows) {
        for (size_t ki = 0; ki < ks.size(); ++ki) {
            REQUIRE(with_zero.at(name, ks[ki]) == values[ki]);
        }
    }
    std::ostringstream a, b;
    base.to_csv(a);
    with_zero.to_csv(b);
    REQUIRE(a.str() == b.str());
}

TEST_CASE("evaluation reports are independent of the thread count", "[pipeline]") {
    const auto& p = pipeline();
    const std::vector<size_t> ks{5, 10};
    const auto one = evaluate_report(p.model, p.ds, &p.delta, ks, 0.5, 1);
    const auto four = evaluate_report(p.model, p.ds, &p.delta, ks, 0.5, 4);
    for (const auto& [name, values] : one.rows) {
        for (size_t ki = 0; ki < ks.size(); ++ki) {
            REQUIRE(four.at(name, ks[ki]) == values[ki]);
        }
    }
}

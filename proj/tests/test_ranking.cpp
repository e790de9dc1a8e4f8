#include <catch2/catch_amalgamated.hpp>

#include "divrec/evaluation.hpp"
#include "divrec/models.hpp"
#include "divrec/ranking.hpp"
#include "support/synthetic.hpp"

using namespace divrec;
using Catch::Matchers::WithinAbs;

TEST_CASE("max-abs scaling divides each feature row by its largest magnitude", "[ranking]") {
    Eigen::MatrixXd q(1, 3);
    q << 2, -4, 1;
    const auto s = maxabs_scale(q);
    CHECK(s.scales(0) == 4.0);
    CHECK(s.scaled(0, 0) == 0.5);
    CHECK(s.scaled(0, 1) == -1.0);
    CHECK(s.scaled(0, 2) == 0.25);
}

TEST_CASE("scaling an already-scaled matrix is the identity", "[ranking]") {
    Eigen::MatrixXd q(2, 3);
    q << 1, -0.5, 0.25, -1, 0.75, 1;
    const auto once = maxabs_scale(q);
    const auto twice = maxabs_scale(once.scaled);
    CHECK(twice.scales.isApprox(Eigen::VectorXd::Ones(2)));
    CHECK(twice.scaled == once.scaled);
}

TEST_CASE("every scaled row peaks at exactly one in magnitude", "[ranking]") {
    Rng rng(3);
    Eigen::MatrixXd q(5, 7);
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 7; ++c) q(r, c) = rng.normal(0, 2);
    }
    const auto s = maxabs_scale(q);
    for (int r = 0; r < 5; ++r) {
        CHECK_THAT(s.scaled.row(r).cwiseAbs().maxCoeff(), WithinAbs(1.0, 1e-12));
    }
    SECTION("unscaling restores the original") {
        const Eigen::MatrixXd back = maxabs_unscale(s.scaled, s.scales);
        REQUIRE((back - q).cwiseAbs().maxCoeff() < 1e-9 * q.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("zero feature rows scale by one with a warning", "[ranking]") {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(2, 3);
    q.row(1) << 1, 2, 3;
    const auto s = maxabs_scale(q);
    CHECK(s.scales(0) == 1.0);
    CHECK(s.scaled.row(0).isZero());
}

TEST_CASE("perturbation application", "[ranking]") {
    Rng rng(4);
    Eigen::MatrixXd q(3, 5), delta(3, 5);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 5; ++c) {
            q(r, c) = rng.normal(0, 1);
            delta(r, c) = rng.normal(0, 0.1);
        }
    }
    SECTION("zero perturbation is the exact identity") {
        CHECK(apply_perturbation(q, Eigen::MatrixXd::Zero(3, 5)) == q);
    }
    SECTION("negating the matrix cancels it") {
        CHECK(apply_perturbation(q, -q).isZero(0.0));
    }
    SECTION("matches the elementwise oracle") {
        const auto out = apply_perturbation(q, delta);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 5; ++c) REQUIRE(out(r, c) == q(r, c) + delta(r, c));
        }
    }
    SECTION("shape mismatch is rejected") {
        CHECK_THROWS_AS(apply_perturbation(q, Eigen::MatrixXd::Zero(3, 4)), ConfigError);
    }
}

TEST_CASE("top-k selection from scores", "[ranking]") {
    SECTION("a dominant item wins at K=1") {
        const std::vector<double> scores{0.1, 0.9, 0.3};
        CHECK(topk_from_scores(scores, {}, 1) == std::vector<uint32_t>{1});
    }
    SECTION("all-equal scores fall back to the lowest indices") {
        const std::vector<double> scores(6, 0.5);
        CHECK(topk_from_scores(scores, {}, 3) == std::vector<uint32_t>{0, 1, 2});
    }
    SECTION("masked items are skipped") {
        const std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
        const std::vector<uint32_t> mask{0, 2};
        CHECK(topk_from_scores(scores, mask, 2) == std::vector<uint32_t>{1, 3});
    }
    SECTION("asking for more than the unmasked pool fails") {
        const std::vector<double> scores{1.0, 2.0};
        const std::vector<uint32_t> mask{0};
        CHECK_THROWS_AS(topk_from_scores(scores, mask, 2), DataError);
    }
    SECTION("matches a full argsort oracle on 50 items") {
        Rng rng(9);
        std::vector<double> scores(50);
        for (auto& s : scores) s = rng.normal(0, 1);
        scores[7] = scores[13];  // plant a tie
        const auto got = topk_from_scores(scores, {}, 10);
        std::vector<uint32_t> order(50);
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        });
        order.resize(10);
        REQUIRE(got == order);
    }
    SECTION("any strictly increasing transform keeps the list") {
        Rng rng(10);
        std::vector<double> scores(30), warped(30);
        for (size_t i = 0; i < 30; ++i) {
            scores[i] = rng.normal(0, 1);
            warped[i] = std::exp(2.0 * scores[i]) + 1.0;
        }
        CHECK(topk_from_scores(scores, {}, 8) == topk_from_scores(warped, {}, 8));
    }
}

TEST_CASE("topk_recommend masks training positives and matches manual scoring", "[ranking]") {
    const auto ds = testsupport::make_block_dataset(30, 25, 5, 8, 0.2, 12);
    const auto f = init_factors(ds.n_users, ds.n_items, 6, 77);
    const auto recs = topk_recommend(f.P, f.Q, ds, 5);
    REQUIRE(recs.users.size() == ds.n_users);
    for (size_t i = 0; i < recs.users.size(); ++i) {
        const uint32_t u = recs.users[i];
        REQUIRE(recs.lists[i].size() == 5);
        for (uint32_t j : recs.lists[i]) {
            REQUIRE_FALSE(
                std::binary_search(ds.train[u].begin(), ds.train[u].end(), j));
        }
        // scores column is the actual dot product, descending
        for (size_t k = 0; k < 5; ++k) {
            REQUIRE_THAT(recs.scores[i][k],
                         WithinAbs(f.P.col(u).dot(f.Q.col(recs.lists[i][k])), 1e-12));
            if (k > 0) REQUIRE(recs.scores[i][k] <= recs.scores[i][k - 1]);
        }
        // manual per-user oracle
        std::vector<double> scores(ds.n_items);
        for (uint32_t j = 0; j < ds.n_items; ++j) scores[j] = f.P.col(u).dot(f.Q.col(j));
        REQUIRE(recs.lists[i] == topk_from_scores(scores, ds.train[u], 5));
    }
}

TEST_CASE("topk_recommend is independent of the thread count", "[ranking]") {
    const auto ds = testsupport::make_block_dataset(40, 30, 4, 10, 0.2, 5);
    const auto f = init_factors(ds.n_users, ds.n_items, 8, 3);
    const auto a = topk_recommend(f.P, f.Q, ds, 6, {}, 1);
    const auto b = topk_recommend(f.P, f.Q, ds, 6, {}, 4);
    REQUIRE(a.lists == b.lists);
    REQUIRE(a.scores == b.scores);
}

TEST_CASE("zero-delta path reproduces plain ranking byte for byte", "[ranking]") {
    const auto ds = testsupport::make_block_dataset(25, 20, 4, 8, 0.1, 8);
    const auto f = init_factors(ds.n_users, ds.n_items, 5, 21);
    const auto model = build_eval_model(f, ModelKind::bprmf, ds, 3);
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(5, ds.n_items);
    const auto base = recommend_with_delta(model, ds, nullptr, 5);
    const auto with_zero = recommend_with_delta(model, ds, &zero, 5);
    REQUIRE(base.lists == with_zero.lists);
    REQUIRE(base.scores == with_zero.scores);
}

TEST_CASE("lists export as user,rank,item,score", "[ranking]") {
    RecommendationSet recs;
    recs.K = 2;
    recs.users = {3};
    recs.lists = {{7, 1}};
    recs.scores = {{1.5, 0.25}};
    const auto path =
        (std::filesystem::temp_directory_path() / "divrec_tests" / "lists.csv").string();
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    write_lists_csv(recs, path);
    std::ifstream is(path);
    std::string all((std::istreambuf_iterator<char>(is)), {});
    CHECK(all == "user,rank,item,score\n3,1,7,1.5\n3,2,1,0.25\n");
}

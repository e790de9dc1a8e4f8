// Drives the installed binary end to end over a small generated corpus.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "divrec/bandit.hpp"
#include "divrec/dataset.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work_root() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "divrec_tests" / "cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
    static int counter = 0;
    const fs::path log = work_root() / ("log" + std::to_string(counter++) + ".txt");
    const std::string cmd =
        std::string(DIVREC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) {
        std::ifstream is(log);
        output->assign((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

struct CliFixture {
    fs::path raw;
    fs::path cache;

    CliFixture() {
        raw = work_root() / "raw";
        const auto corpus = divrec::testsupport::make_block_corpus(60, 40, 4, 14, 0.15, 3);
        divrec::testsupport::write_movielens_fixture(corpus, raw.string());
        cache = work_root() / "ds.cmbd";
        const int rc = run_cli("ingest --format movielens --ratings " +
                               (raw / "ratings.dat").string() + " --movies " +
                               (raw / "movies.dat").string() + " --cache " + cache.string() +
                               " --seed 5 --out " + (work_root() / "ingest").string());
        REQUIRE(rc == 0);
    }
};

const CliFixture& fixture() {
    static CliFixture f;
    return f;
}

std::string model_args() {
    return " --cache " + fixture().cache.string() + " --model bprmf ";
}

/// Lazily runs `train` once; later tests reuse the factors file.
const std::string& trained_factors() {
    static const std::string path = [] {
        const int rc = run_cli("train" + model_args() +
                               "--d 6 --epochs 4 --patience 4 --seed 9 --threads 1 --out " +
                               (work_root() / "train1").string());
        REQUIRE(rc == 0);
        return (work_root() / "train1" / "factors.cmbf").string();
    }();
    return path;
}

/// Lazily runs `optimize --T 0` once (produces the all-zero delta).
const std::string& zero_delta() {
    static const std::string path = [] {
        const int rc = run_cli("optimize" + model_args() + "--factors " + trained_factors() +
                               " --diversity ilad --K 5 --T 0 --seed 3 --out " +
                               (work_root() / "opt0").string());
        REQUIRE(rc == 0);
        return (work_root() / "opt0" / "delta.cmbp").string();
    }();
    return path;
}

/// Lazily runs a short real optimization once.
const std::string& optimized_delta() {
    static const std::string path = [] {
        const int rc = run_cli("optimize" + model_args() + "--factors " + trained_factors() +
                               " --diversity ilad --lambda1 0 --K 5 --A 0.3 --arms 5 "
                               "--epsilon 0.2 --T 6 --seed 9 --out " +
                               (work_root() / "optA").string());
        REQUIRE(rc == 0);
        return (work_root() / "optA" / "delta.cmbp").string();
    }();
    return path;
}

}  // namespace

TEST_CASE("ingest builds a cache, reports stats, and is idempotent", "[cli]") {
    const auto& f = fixture();
    REQUIRE(fs::exists(f.cache));
    REQUIRE(fs::exists(work_root() / "ingest" / "run.json"));
    const auto manifest = slurp(work_root() / "ingest" / "run.json");
    CHECK(manifest.find("\"seed\": 5") != std::string::npos);

    std::string out;
    const int rc = run_cli("ingest --format movielens --ratings " +
                               (f.raw / "ratings.dat").string() + " --movies " +
                               (f.raw / "movies.dat").string() + " --cache " + f.cache.string() +
                               " --out " + (work_root() / "ingest2").string(),
                           &out);
    CHECK(rc == 0);
    CHECK(out.find("nothing to do") != std::string::npos);

    SECTION("--force rebuilds an identical cache for the same seed") {
        const auto before = slurp(f.cache);
        const int rc2 = run_cli("ingest --force --format movielens --ratings " +
                                (f.raw / "ratings.dat").string() + " --movies " +
                                (f.raw / "movies.dat").string() + " --cache " + f.cache.string() +
                                " --seed 5 --out " + (work_root() / "ingest3").string());
        CHECK(rc2 == 0);
        CHECK(slurp(f.cache) == before);
    }
}

TEST_CASE("train writes factors and is seed-reproducible", "[cli]") {
    const auto factors1 = trained_factors();
    REQUIRE(fs::exists(work_root() / "train1" / "valid_report.csv"));
    REQUIRE(run_cli("train" + model_args() +
                    "--d 6 --epochs 4 --patience 4 --seed 9 --threads 1 --out " +
                    (work_root() / "train2").string()) == 0);
    REQUIRE(slurp(factors1) == slurp(work_root() / "train2" / "factors.cmbf"));

    SECTION("zero epochs still persists the initialization") {
        REQUIRE(run_cli("train" + model_args() + "--d 6 --epochs 0 --seed 9 --out " +
                        (work_root() / "train0").string()) == 0);
        CHECK(fs::exists(work_root() / "train0" / "factors.cmbf"));
    }
}

TEST_CASE("optimize with T=0 writes a zero delta and an empty trace", "[cli]") {
    const auto delta = divrec::load_delta(zero_delta());
    CHECK(delta.isZero());
    CHECK(slurp(work_root() / "opt0" / "trace.csv") == "iter,reward,accuracy,diversity\n");
}

TEST_CASE("optimize is seed-reproducible", "[cli]") {
    const auto& delta = optimized_delta();
    REQUIRE(run_cli("optimize" + model_args() + "--factors " + trained_factors() +
                    " --diversity ilad --lambda1 0 --K 5 --A 0.3 --arms 5 "
                    "--epsilon 0.2 --T 6 --seed 9 --out " +
                    (work_root() / "optB").string()) == 0);
    REQUIRE(slurp(delta) == slurp(work_root() / "optB" / "delta.cmbp"));
    REQUIRE(slurp(work_root() / "optA" / "trace.csv") ==
            slurp(work_root() / "optB" / "trace.csv"));
}

TEST_CASE("evaluate with a zero delta equals evaluate without one", "[cli]") {
    REQUIRE(run_cli("evaluate" + model_args() + "--factors " + trained_factors() +
                    " --Ks 5,10 --out " + (work_root() / "evalbase").string()) == 0);
    REQUIRE(run_cli("evaluate" + model_args() + "--factors " + trained_factors() + " --delta " +
                    zero_delta() + " --Ks 5,10 --out " +
                    (work_root() / "evalzero").string()) == 0);
    CHECK(slurp(work_root() / "evalbase" / "report.csv") ==
          slurp(work_root() / "evalzero" / "report.csv"));
}

TEST_CASE("erase with F=0 equals evaluate with the same delta", "[cli]") {
    REQUIRE(run_cli("evaluate" + model_args() + "--factors " + trained_factors() + " --delta " +
                    optimized_delta() + " --Ks 5 --out " +
                    (work_root() / "evaldelta").string()) == 0);
    REQUIRE(run_cli("erase" + model_args() + "--factors " + trained_factors() + " --delta " +
                    optimized_delta() + " --strategy shared --manner top --F 0 --Ks 5 --out " +
                    (work_root() / "erase0").string()) == 0);
    CHECK(slurp(work_root() / "evaldelta" / "report.csv") ==
          slurp(work_root() / "erase0" / "report.csv"));
}

TEST_CASE("explain emits importance and per-item files", "[cli]") {
    REQUIRE(run_cli("explain --delta " + optimized_delta() + " --strategy shared --out " +
                    (work_root() / "expl_s").string()) == 0);
    const auto imp = slurp(work_root() / "expl_s" / "importance.csv");
    CHECK(imp.rfind("feature,score\n", 0) == 0);
    CHECK(std::count(imp.begin(), imp.end(), '\n') == 7);  // header + d=6 rows

    REQUIRE(run_cli("explain --delta " + optimized_delta() +
                    " --strategy individual --F 2 --out " +
                    (work_root() / "expl_i").string()) == 0);
    CHECK(fs::exists(work_root() / "expl_i" / "item_features.csv"));
}

TEST_CASE("mmr evaluation runs the baseline", "[cli]") {
    REQUIRE(run_cli("evaluate" + model_args() + "--factors " + trained_factors() +
                    " --rerank mmr --theta 0.9 --pool 20 --Ks 5 --out " +
                    (work_root() / "evalmmr").string()) == 0);
    CHECK(fs::exists(work_root() / "evalmmr" / "report.csv"));
}

TEST_CASE("cli error codes", "[cli]") {
    SECTION("unknown flags are configuration errors") {
        CHECK(run_cli("train --no-such-flag") == 1);
        CHECK(run_cli("frobnicate") == 1);
    }
    SECTION("missing inputs are configuration errors") {
        CHECK(run_cli("train --cache /nonexistent.cmbd --out " +
                      (work_root() / "err1").string()) == 1);
        CHECK(run_cli("evaluate --cache /nonexistent.cmbd --factors /also-missing --out " +
                      (work_root() / "err2").string()) == 1);
    }
    SECTION("delta plus mmr rerank is contradictory") {
        CHECK(run_cli("evaluate" + model_args() + "--factors " + trained_factors() +
                      " --delta " + zero_delta() + " --rerank mmr --out " +
                      (work_root() / "err3").string()) == 1);
    }
    SECTION("corrupt inputs are runtime failures") {
        const fs::path junk = work_root() / "junk.cmbd";
        std::ofstream(junk) << "garbage bytes";
        CHECK(run_cli("train --cache " + junk.string() + " --out " +
                      (work_root() / "err4").string()) == 2);
    }
}

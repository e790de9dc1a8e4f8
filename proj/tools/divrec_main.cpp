// divrec: train latent-factor recommenders, learn diversity perturbations
// with a cooperative multi-player bandit, and explain what drove the change.
//
// Subcommands: ingest | train | optimize | evaluate | explain | erase
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "divrec/bandit.hpp"
#include "divrec/dataset.hpp"
#include "divrec/evaluation.hpp"
#include "divrec/explain.hpp"
#include "divrec/metrics.hpp"
#include "divrec/models.hpp"
#include "divrec/ranking.hpp"
#include "divrec/rerank.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string timestamp_dir(const std::string& command) {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return "runs/" + command + "-" + buf;
}

fs::path prepare_out_dir(std::string out, const std::string& command) {
    if (out.empty()) out = timestamp_dir(command);
    fs::create_directories(out);
    return out;
}

void write_manifest(const fs::path& out_dir, const ordered_json& manifest) {
    auto os = divrec::open_out((out_dir / "run.json").string(), false);
    os << manifest.dump(2) << "\n";
    std::cout << "manifest: " << (out_dir / "run.json").string() << "\n";
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) {
        throw divrec::ConfigError(what + " not found: " + path);
    }
}

struct CommonOpts {
    std::string out;
    uint64_t seed = 42;
    int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--out", opts.out, "output directory (default: runs/<command>-<utc time>)");
    cmd->add_option("--seed", opts.seed, "random seed")->capture_default_str();
    cmd->add_option("--threads", opts.threads, "worker thread cap")->capture_default_str();
}

struct ModelOpts {
    std::string cache;
    std::string factors;
    std::string model = "bprmf";
    int layers = 3;
};

void add_model_inputs(CLI::App* cmd, ModelOpts& opts) {
    cmd->add_option("--cache", opts.cache, "dataset cache (CMBD)")->required();
    cmd->add_option("--factors", opts.factors, "factors file (CMBF)")->required();
    cmd->add_option("--model", opts.model, "bprmf | lightgcn")->capture_default_str();
    cmd->add_option("--layers", opts.layers, "lightgcn propagation depth")->capture_default_str();
}

divrec::EvalModel load_eval_model(const ModelOpts& opts, const divrec::InteractionDataset& ds) {
    const auto kind = divrec::parse_model_kind(opts.model);
    require_file(opts.factors, "factors file");
    const auto factors = divrec::load_factors(opts.factors);
    if (factors.P.cols() != static_cast<Eigen::Index>(ds.n_users) ||
        factors.Q.cols() != static_cast<Eigen::Index>(ds.n_items)) {
        throw divrec::DataError("factors shape does not match dataset");
    }
    return divrec::build_eval_model(factors, kind, ds, opts.layers);
}

ordered_json model_manifest(const ModelOpts& opts) {
    return ordered_json{{"cache", opts.cache},
                        {"factors", opts.factors},
                        {"model", opts.model},
                        {"layers", opts.layers}};
}

// --- ingest -----------------------------------------------------------------

struct IngestOpts {
    CommonOpts common;
    std::string format = "movielens";
    std::string ratings;
    std::string movies;
    std::string categories;
    size_t top_categories = 30;
    double min_rating = 4.0;
    std::vector<double> ratios = {0.8, 0.1, 0.1};
    std::string cache;
    bool force = false;
};

int run_ingest(const IngestOpts& opts) {
    const fs::path out_dir = prepare_out_dir(opts.common.out, "ingest");
    const std::string cache =
        opts.cache.empty() ? (out_dir / "dataset.cmbd").string() : opts.cache;
    if (fs::exists(cache) && !opts.force) {
        std::cout << "cache exists, nothing to do (use --force to rebuild): " << cache << "\n";
        return 0;
    }
    require_file(opts.ratings, "ratings file");
    if (opts.ratios.size() != 3) throw divrec::ConfigError("--ratios needs train,test,valid");

    divrec::RawData raw;
    if (opts.format == "movielens") {
        require_file(opts.movies, "movies file");
        raw = divrec::load_movielens(opts.ratings, opts.movies);
    } else if (opts.format == "csv") {
        raw.interactions = divrec::load_csv_interactions(opts.ratings);
        if (!opts.categories.empty()) {
            require_file(opts.categories, "categories file");
            divrec::load_csv_categories(opts.categories, opts.top_categories, raw);
        }
    } else {
        throw divrec::ConfigError("unknown --format '" + opts.format + "'");
    }

    const divrec::SplitRatios ratios{opts.ratios[0], opts.ratios[1], opts.ratios[2]};
    const auto ds = divrec::binarize_and_split(raw, ratios, opts.common.seed, opts.min_rating);
    divrec::save_dataset(ds, cache);

    ordered_json manifest{{"command", "ingest"},
                          {"format", opts.format},
                          {"ratings", opts.ratings},
                          {"movies", opts.movies},
                          {"categories", opts.categories},
                          {"top_categories", opts.top_categories},
                          {"min_rating", opts.min_rating},
                          {"ratios", opts.ratios},
                          {"seed", opts.common.seed},
                          {"cache", cache},
                          {"stats",
                           {{"users", ds.n_users},
                            {"items", ds.n_items},
                            {"subtopics", ds.n_subtopics},
                            {"interactions", ds.n_interactions()},
                            {"density", ds.density()}}}};
    write_manifest(out_dir, manifest);
    std::cout << "users=" << ds.n_users << " items=" << ds.n_items
              << " subtopics=" << ds.n_subtopics << " interactions=" << ds.n_interactions()
              << " density=" << ds.density() << "\n"
              << "cache: " << cache << "\n";
    return 0;
}

// --- train ------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string cache;
    std::string model = "bprmf";
    divrec::TrainConfig cfg;
    bool desk_scale = false;
    bool export_csv = false;
    bool verbose = false;
};

int run_train(TrainOpts& opts, bool d_given) {
    if (opts.desk_scale && !d_given) opts.cfg.d = 16;
    require_file(opts.cache, "dataset cache");
    const auto ds = divrec::load_dataset(opts.cache);
    const auto kind = divrec::parse_model_kind(opts.model);
    opts.cfg.seed = opts.common.seed;
    opts.cfg.threads = opts.common.threads;
    opts.cfg.verbose = opts.verbose;

    const fs::path out_dir = prepare_out_dir(opts.common.out, "train");
    const auto result = kind == divrec::ModelKind::bprmf ? divrec::train_bprmf(ds, opts.cfg)
                                                         : divrec::train_lightgcn(ds, opts.cfg);
    const std::string factors_path = (out_dir / "factors.cmbf").string();
    divrec::save_factors(result.factors, factors_path);
    if (opts.export_csv) {
        divrec::write_factors_csv(result.factors, (out_dir / "factors.csv").string());
    }
    {
        auto os = divrec::open_out((out_dir / "valid_report.csv").string(), false);
        os << "epoch,loss,valid_recall\n";
        for (size_t e = 0; e < result.epoch_loss.size(); ++e) {
            os << (e + 1) << "," << divrec::fmt_double(result.epoch_loss[e]) << ","
               << divrec::fmt_double(result.epoch_valid_recall[e]) << "\n";
        }
    }

    ordered_json manifest{{"command", "train"},
                          {"cache", opts.cache},
                          {"model", opts.model},
                          {"d", opts.cfg.d},
                          {"lr", opts.cfg.lr},
                          {"reg", opts.cfg.reg},
                          {"epochs", opts.cfg.epochs},
                          {"n_neg", opts.cfg.n_neg},
                          {"layers", opts.cfg.layers},
                          {"batch_size", opts.cfg.batch_size},
                          {"patience", opts.cfg.patience},
                          {"valid_k", opts.cfg.valid_k},
                          {"seed", opts.common.seed},
                          {"threads", opts.common.threads},
                          {"desk_scale", opts.desk_scale},
                          {"result",
                           {{"best_epoch", result.best_epoch},
                            {"best_valid_recall", result.best_valid_recall},
                            {"factors", factors_path}}}};
    write_manifest(out_dir, manifest);
    std::cout << "best epoch " << result.best_epoch << " valid recall@" << opts.cfg.valid_k
              << " " << result.best_valid_recall << "\n"
              << "factors: " << factors_path << "\n";
    return 0;
}

// --- optimize ---------------------------------------------------------------

struct OptimizeOpts {
    CommonOpts common;
    ModelOpts model;
    std::string diversity = "ilad";
    std::string accuracy = "none";
    divrec::BanditConfig cfg;
    bool desk_scale = false;
    bool export_csv = false;
    bool verbose = false;
};

int run_optimize(OptimizeOpts& opts, bool t_given, bool sample_given) {
    if (opts.desk_scale) {
        if (!t_given) opts.cfg.T = 50;
        if (!sample_given) opts.cfg.eval_user_sample = 500;
    }
    require_file(opts.model.cache, "dataset cache");
    const auto ds = divrec::load_dataset(opts.model.cache);
    const auto model = load_eval_model(opts.model, ds);

    opts.cfg.objective.diversity = divrec::parse_diversity_metric(opts.diversity);
    if (opts.accuracy != "none") {
        opts.cfg.objective.accuracy = divrec::parse_accuracy_metric(opts.accuracy);
    }
    opts.cfg.seed = opts.common.seed;
    opts.cfg.threads = opts.common.threads;
    opts.cfg.verbose = opts.verbose;
    if (opts.cfg.objective.K > ds.n_items) {
        throw divrec::ConfigError("objective K exceeds catalog size");
    }

    const fs::path out_dir = prepare_out_dir(opts.common.out, "optimize");
    const auto result = divrec::run_cmb(model, ds, opts.cfg);
    const std::string delta_path = (out_dir / "delta.cmbp").string();
    divrec::save_delta(result.delta, delta_path);
    divrec::write_trace_csv(result.trace, (out_dir / "trace.csv").string());
    if (opts.export_csv) divrec::write_delta_csv(result.delta, (out_dir / "delta.csv").string());

    ordered_json manifest{{"command", "optimize"},
                          {"inputs", model_manifest(opts.model)},
                          {"diversity", opts.diversity},
                          {"accuracy", opts.accuracy},
                          {"lambda1", opts.cfg.objective.lambda1},
                          {"lambda2", opts.cfg.objective.lambda2},
                          {"K", opts.cfg.objective.K},
                          {"A", opts.cfg.A},
                          {"arms", opts.cfg.n_arms},
                          {"epsilon", opts.cfg.epsilon},
                          {"T", opts.cfg.T},
                          {"eval_user_sample", opts.cfg.eval_user_sample},
                          {"seed", opts.common.seed},
                          {"threads", opts.common.threads},
                          {"desk_scale", opts.desk_scale},
                          {"delta", delta_path}};
    write_manifest(out_dir, manifest);
    if (!result.trace.iters.empty()) {
        std::cout << "final reward " << result.trace.iters.back().reward << " diversity "
                  << result.trace.iters.back().diversity << "\n";
    }
    std::cout << "delta: " << delta_path << "\n";
    return 0;
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateOpts {
    CommonOpts common;
    ModelOpts model;
    std::string delta;
    std::vector<size_t> ks = {10, 20};
    double alpha = 0.5;
    std::string rerank;
    double theta = 0.9;
    size_t pool = 100;
    bool export_lists = false;
};

int run_evaluate(const EvaluateOpts& opts) {
    require_file(opts.model.cache, "dataset cache");
    const auto ds = divrec::load_dataset(opts.model.cache);
    for (size_t k : opts.ks) {
        if (k > ds.n_items) throw divrec::ConfigError("K exceeds catalog size");
    }
    const auto model = load_eval_model(opts.model, ds);
    const fs::path out_dir = prepare_out_dir(opts.common.out, "evaluate");

    divrec::MetricReport report;
    if (opts.rerank == "mmr") {
        if (!opts.delta.empty()) {
            throw divrec::ConfigError("--rerank mmr does not take a --delta");
        }
        const size_t max_k = *std::max_element(opts.ks.begin(), opts.ks.end());
        divrec::MmrConfig mmr{opts.theta, opts.pool, max_k};
        const auto recs = divrec::mmr_recommend(model, ds, mmr, {}, opts.common.threads);
        report = divrec::evaluate_lists(recs, model, ds, opts.ks, opts.alpha,
                                        opts.common.threads);
        if (opts.export_lists) divrec::write_lists_csv(recs, (out_dir / "lists.csv").string());
    } else if (!opts.rerank.empty()) {
        throw divrec::ConfigError("unknown --rerank '" + opts.rerank + "'");
    } else {
        std::optional<Eigen::MatrixXd> delta;
        if (!opts.delta.empty()) {
            require_file(opts.delta, "delta file");
            delta = divrec::load_delta(opts.delta);
        }
        report = divrec::evaluate_report(model, ds, delta ? &*delta : nullptr, opts.ks,
                                         opts.alpha, opts.common.threads);
        if (opts.export_lists) {
            const size_t max_k = *std::max_element(opts.ks.begin(), opts.ks.end());
            const auto recs = divrec::recommend_with_delta(model, ds, delta ? &*delta : nullptr,
                                                           max_k, {}, opts.common.threads);
            divrec::write_lists_csv(recs, (out_dir / "lists.csv").string());
        }
    }

    divrec::save_report(report, (out_dir / "report.csv").string(),
                        (out_dir / "report.json").string());
    ordered_json manifest{{"command", "evaluate"},
                          {"inputs", model_manifest(opts.model)},
                          {"delta", opts.delta},
                          {"Ks", opts.ks},
                          {"alpha", opts.alpha},
                          {"rerank", opts.rerank},
                          {"theta", opts.theta},
                          {"pool", opts.pool},
                          {"seed", opts.common.seed},
                          {"threads", opts.common.threads}};
    write_manifest(out_dir, manifest);
    report.to_csv(std::cout);
    return 0;
}

// --- explain ----------------------------------------------------------------

struct ExplainOpts {
    CommonOpts common;
    std::string delta;
    std::string strategy = "shared";
    int F = 10;
    std::string feature_names;
};

int run_explain(const ExplainOpts& opts) {
    require_file(opts.delta, "delta file");
    const auto delta = divrec::load_delta(opts.delta);
    std::vector<std::string> names;
    if (!opts.feature_names.empty()) {
        require_file(opts.feature_names, "feature names file");
        names = divrec::load_feature_names(opts.feature_names);
    }
    const fs::path out_dir = prepare_out_dir(opts.common.out, "explain");
    const auto strategy = divrec::parse_strategy(opts.strategy);
    std::string output;
    if (strategy == divrec::ExplainStrategy::shared) {
        output = (out_dir / "importance.csv").string();
        divrec::write_importance_csv(divrec::shared_importance(delta), output, names);
    } else {
        output = (out_dir / "item_features.csv").string();
        divrec::write_item_features_csv(divrec::individual_top_features(delta, opts.F), delta,
                                        output, names);
    }
    ordered_json manifest{{"command", "explain"}, {"delta", opts.delta},
                          {"strategy", opts.strategy}, {"F", opts.F},
                          {"feature_names", opts.feature_names}, {"output", output}};
    write_manifest(out_dir, manifest);
    std::cout << "explanations: " << output << "\n";
    return 0;
}

// --- erase ------------------------------------------------------------------

struct EraseOpts {
    CommonOpts common;
    ModelOpts model;
    std::string delta;
    std::string strategy = "shared";
    std::string manner = "top";
    int F = 5;
    std::vector<size_t> ks = {10, 20};
    double alpha = 0.5;
};

int run_erase(const EraseOpts& opts) {
    require_file(opts.model.cache, "dataset cache");
    require_file(opts.delta, "delta file");
    const auto ds = divrec::load_dataset(opts.model.cache);
    const auto model = load_eval_model(opts.model, ds);
    const auto delta = divrec::load_delta(opts.delta);
    const auto erased = divrec::erase(delta, divrec::parse_strategy(opts.strategy),
                                      divrec::parse_manner(opts.manner), opts.F,
                                      opts.common.seed);
    const fs::path out_dir = prepare_out_dir(opts.common.out, "erase");
    const std::string erased_path = (out_dir / "erased_delta.cmbp").string();
    divrec::save_delta(erased, erased_path);
    const auto report = divrec::evaluate_erasure(model, ds, erased, opts.ks, opts.alpha,
                                                 opts.common.threads);
    divrec::save_report(report, (out_dir / "report.csv").string(),
                        (out_dir / "report.json").string());

    ordered_json manifest{{"command", "erase"},
                          {"inputs", model_manifest(opts.model)},
                          {"delta", opts.delta},
                          {"strategy", opts.strategy},
                          {"manner", opts.manner},
                          {"F", opts.F},
                          {"Ks", opts.ks},
                          {"alpha", opts.alpha},
                          {"seed", opts.common.seed},
                          {"threads", opts.common.threads},
                          {"erased_delta", erased_path}};
    write_manifest(out_dir, manifest);
    report.to_csv(std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diversity optimization for latent-factor recommenders"};
    app.require_subcommand(1);
    app.set_config("--config")->description("key=value config file; flags override");

    IngestOpts ingest;
    auto* cmd_ingest = app.add_subcommand("ingest", "build a dataset cache from raw files");
    add_common(cmd_ingest, ingest.common);
    cmd_ingest->add_option("--format", ingest.format, "movielens | csv")->capture_default_str();
    cmd_ingest->add_option("--ratings", ingest.ratings, "ratings file")->required();
    cmd_ingest->add_option("--movies", ingest.movies, "movies file (movielens format)");
    cmd_ingest->add_option("--categories", ingest.categories, "item,category CSV (csv format)");
    cmd_ingest->add_option("--top-categories", ingest.top_categories)->capture_default_str();
    cmd_ingest->add_option("--min-rating", ingest.min_rating)->capture_default_str();
    cmd_ingest->add_option("--ratios", ingest.ratios, "train,test,valid")
        ->delimiter(',')
        ->expected(3);
    cmd_ingest->add_option("--cache", ingest.cache, "cache path (default <out>/dataset.cmbd)");
    cmd_ingest->add_flag("--force", ingest.force, "rebuild an existing cache");

    TrainOpts train;
    auto* cmd_train = app.add_subcommand("train", "train a base model");
    add_common(cmd_train, train.common);
    cmd_train->add_option("--cache", train.cache, "dataset cache")->required();
    cmd_train->add_option("--model", train.model, "bprmf | lightgcn")->capture_default_str();
    auto* d_opt = cmd_train->add_option("--d", train.cfg.d)->capture_default_str();
    cmd_train->add_option("--lr", train.cfg.lr)->capture_default_str();
    cmd_train->add_option("--reg", train.cfg.reg)->capture_default_str();
    cmd_train->add_option("--epochs", train.cfg.epochs)->capture_default_str();
    cmd_train->add_option("--n-neg", train.cfg.n_neg)->capture_default_str();
    cmd_train->add_option("--layers", train.cfg.layers)->capture_default_str();
    cmd_train->add_option("--batch", train.cfg.batch_size)->capture_default_str();
    cmd_train->add_option("--patience", train.cfg.patience)->capture_default_str();
    cmd_train->add_option("--valid-k", train.cfg.valid_k)->capture_default_str();
    cmd_train->add_flag("--desk-scale", train.desk_scale, "small preset: d=16");
    cmd_train->add_flag("--export-csv", train.export_csv);
    cmd_train->add_flag("--verbose", train.verbose);

    OptimizeOpts optimize;
    auto* cmd_optimize = app.add_subcommand("optimize", "learn the perturbation matrix");
    add_common(cmd_optimize, optimize.common);
    add_model_inputs(cmd_optimize, optimize.model);
    cmd_optimize->add_option("--diversity", optimize.diversity, "alpha_ndcg | sc | pc | ilad")
        ->capture_default_str();
    cmd_optimize->add_option("--accuracy", optimize.accuracy, "none | recall | ndcg")
        ->capture_default_str();
    cmd_optimize->add_option("--lambda1", optimize.cfg.objective.lambda1)->capture_default_str();
    cmd_optimize->add_option("--lambda2", optimize.cfg.objective.lambda2)->capture_default_str();
    cmd_optimize->add_option("--K", optimize.cfg.objective.K)->capture_default_str();
    cmd_optimize->add_option("--A", optimize.cfg.A)->capture_default_str();
    cmd_optimize->add_option("--arms", optimize.cfg.n_arms)->capture_default_str();
    cmd_optimize->add_option("--epsilon", optimize.cfg.epsilon)->capture_default_str();
    auto* t_opt = cmd_optimize->add_option("--T", optimize.cfg.T)->capture_default_str();
    auto* sample_opt = cmd_optimize->add_option("--eval-user-sample",
                                                optimize.cfg.eval_user_sample,
                                                "reward user subsample (0 = all)")
                           ->capture_default_str();
    cmd_optimize->add_flag("--desk-scale", optimize.desk_scale,
                           "small preset: T=50, eval-user-sample=500");
    cmd_optimize->add_flag("--export-csv", optimize.export_csv);
    cmd_optimize->add_flag("--verbose", optimize.verbose);

    EvaluateOpts evaluate;
    auto* cmd_evaluate = app.add_subcommand("evaluate", "metric report for a model (+delta)");
    add_common(cmd_evaluate, evaluate.common);
    add_model_inputs(cmd_evaluate, evaluate.model);
    cmd_evaluate->add_option("--delta", evaluate.delta, "perturbation file (CMBP)");
    cmd_evaluate->add_option("--Ks", evaluate.ks, "evaluation depths")
        ->delimiter(',')
        ->capture_default_str();
    cmd_evaluate->add_option("--alpha", evaluate.alpha)->capture_default_str();
    cmd_evaluate->add_option("--rerank", evaluate.rerank, "mmr: evaluate the MMR baseline");
    cmd_evaluate->add_option("--theta", evaluate.theta)->capture_default_str();
    cmd_evaluate->add_option("--pool", evaluate.pool)->capture_default_str();
    cmd_evaluate->add_flag("--export-lists", evaluate.export_lists);

    ExplainOpts explain;
    auto* cmd_explain = app.add_subcommand("explain", "feature importance from a delta");
    add_common(cmd_explain, explain.common);
    cmd_explain->add_option("--delta", explain.delta)->required();
    cmd_explain->add_option("--strategy", explain.strategy, "shared | individual")
        ->capture_default_str();
    cmd_explain->add_option("--F", explain.F, "features per item (individual)")
        ->capture_default_str();
    cmd_explain->add_option("--feature-names", explain.feature_names,
                            "sidecar file, one name per line");

    EraseOpts erase;
    auto* cmd_erase = app.add_subcommand("erase", "erase features from a delta and re-evaluate");
    add_common(cmd_erase, erase.common);
    add_model_inputs(cmd_erase, erase.model);
    cmd_erase->add_option("--delta", erase.delta)->required();
    cmd_erase->add_option("--strategy", erase.strategy, "shared | individual")
        ->capture_default_str();
    cmd_erase->add_option("--manner", erase.manner, "top | least | random")
        ->capture_default_str();
    cmd_erase->add_option("--F", erase.F)->capture_default_str();
    cmd_erase->add_option("--Ks", erase.ks)->delimiter(',')->capture_default_str();
    cmd_erase->add_option("--alpha", erase.alpha)->capture_default_str();

    try {
        app.parse(argc, argv);
        if (cmd_ingest->parsed()) return run_ingest(ingest);
        if (cmd_train->parsed()) return run_train(train, d_opt->count() > 0);
        if (cmd_optimize->parsed()) {
            return run_optimize(optimize, t_opt->count() > 0, sample_opt->count() > 0);
        }
        if (cmd_evaluate->parsed()) return run_evaluate(evaluate);
        if (cmd_explain->parsed()) return run_explain(explain);
        if (cmd_erase->parsed()) return run_erase(erase);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const divrec::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

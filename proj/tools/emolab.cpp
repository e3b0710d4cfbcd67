// emolab: command-line front end for the transport-objective training lab.
//
// Subcommands: verify (randomized property suites), emd (exact transport
// solve), train / eval (single student runs), experiment (the full oracle
// study). Exit codes: 0 success, 1 verification or runtime failure, 2 input
// or configuration error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "emo/harness.hpp"
#include "emo/io.hpp"
#include "emo/lm.hpp"
#include "emo/losses.hpp"
#include "emo/metrics.hpp"
#include "emo/oracle.hpp"
#include "emo/transport.hpp"
#include "emo/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;     // verification/assertion/runtime failure
constexpr int kExitInputError = 2;  // bad input, flags, or config

// Flag values accept any capitalization of the canonical objective names; the
// canonical spelling stays strict everywhere else (configs, CSVs).
emo::Objective parse_objective_flag(const std::string& raw) {
    std::string lower;
    for (char c : raw) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (emo::Objective o : {emo::Objective::kMle, emo::Objective::kTailr, emo::Objective::kMixce,
                             emo::Objective::kDemd, emo::Objective::kEmo}) {
        std::string name = emo::objective_name(o);
        std::string name_lower;
        for (char c : name) {
            name_lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        if (lower == name_lower) return o;
    }
    return emo::objective_from_string(raw);  // throws with the canonical list
}

std::filesystem::path resolve_out_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("EMOLAB_OUT"); env && *env) return env;
    return "emolab-out";
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<uint64_t> seeds;
    std::string token;
    std::stringstream ss(csv);
    while (std::getline(ss, token, ',')) {
        if (token.empty()) continue;
        size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(token, &pos);
        } catch (const std::exception&) {
            throw emo::InvalidInput("--seeds: '" + token + "' is not an unsigned integer");
        }
        if (pos != token.size()) {
            throw emo::InvalidInput("--seeds: '" + token + "' is not an unsigned integer");
        }
        seeds.push_back(v);
    }
    if (seeds.empty()) throw emo::InvalidInput("--seeds: empty list");
    return seeds;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int cmd_verify(const std::string& scope, const emo::VerifyOptions& opts) {
    std::vector<emo::SuiteReport> reports;
    if (scope == "all" || scope == "bounds") reports.push_back(emo::verify_bounds(opts));
    if (scope == "all" || scope == "gradients") reports.push_back(emo::verify_gradients(opts));
    if (scope == "all" || scope == "reductions") reports.push_back(emo::verify_reductions(opts));
    if (reports.empty()) {
        throw emo::InvalidInput("--scope must be one of all, bounds, gradients, reductions");
    }
    bool ok = true;
    int trials = 0, failures = 0;
    for (const emo::SuiteReport& r : reports) {
        r.print(std::cout);
        ok = ok && r.all_passed();
        for (const emo::PropertyResult& p : r.properties) {
            trials += p.trials;
            failures += p.failures;
        }
    }
    std::cout << (ok ? "VERIFY PASS" : "VERIFY FAIL") << " (" << (trials - failures) << "/"
              << trials << " trials, seed " << opts.seed << ")\n";
    return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// emd
// ---------------------------------------------------------------------------

int cmd_emd(const std::string& p1_path, const std::string& p2_path, const std::string& cost_path,
            const std::string& embeddings_path) {
    if (cost_path.empty() == embeddings_path.empty()) {
        throw emo::InvalidInput("emd: pass exactly one of --cost or --embeddings");
    }
    const emo::Distribution p1 = emo::read_distribution(p1_path);
    const emo::Distribution p2 = emo::read_distribution(p2_path);
    const emo::CostMatrix cost =
        cost_path.empty() ? emo::cost_matrix_from_embeddings(emo::read_matrix(embeddings_path))
                          : emo::CostMatrix::from_matrix(emo::read_matrix(cost_path));
    const emo::EmdResult result = emo::exact_emd(p1, p2, cost);

    nlohmann::json plan = nlohmann::json::array();
    for (int i = 0; i < result.plan.mass().rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < result.plan.mass().cols(); ++j) row.push_back(result.plan.mass()(i, j));
        plan.push_back(std::move(row));
    }
    std::cout << nlohmann::json{{"value", result.value}, {"plan", plan}}.dump(2) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& objective_raw,
              std::optional<double> gamma, const std::string& pretrained_path,
              const std::string& out_flag, uint64_t seed, bool force) {
    const emo::ExperimentConfig cfg = emo::ExperimentConfig::from_file(config_path);
    const emo::Objective objective = parse_objective_flag(objective_raw);
    const std::string name = emo::objective_name(objective);

    const bool wants_gamma =
        objective == emo::Objective::kTailr || objective == emo::Objective::kMixce;
    if (wants_gamma && !gamma) {
        throw emo::InvalidInput("train: " + name + " requires --gamma (e.g. one of the sweep "
                                "values 0.9, 0.8, 0.7)");
    }
    if (!wants_gamma && gamma) {
        throw emo::InvalidInput("train: --gamma is only meaningful for TaiLr/MixCE");
    }
    const bool wants_cost = objective == emo::Objective::kDemd || objective == emo::Objective::kEmo;
    if (wants_cost && pretrained_path.empty()) {
        throw emo::InvalidInput(
            "train: " + name + " needs --pretrained CHECKPOINT — the frozen cost-embedding "
            "snapshot is taken from a cross-entropy-pretrained model's checkpoint, and " + name +
            " cannot run without that snapshot source");
    }

    const std::filesystem::path out_dir = resolve_out_dir(out_flag);
    const std::filesystem::path ckpt_path = out_dir / ("checkpoint_" + name + ".json");
    const std::filesystem::path record_path = out_dir / ("train_record_" + name + ".json");
    if (!force && (std::filesystem::exists(ckpt_path) || std::filesystem::exists(record_path))) {
        throw emo::InvalidInput(ckpt_path.string() + " already exists; pass --force to overwrite");
    }

    const emo::OracleModel oracle =
        emo::make_oracle(cfg.vocabulary(), cfg.oracle_order, cfg.concentration,
                         emo::derive_seed(seed, emo::detail::kStreamOracle));
    const emo::CorpusSplit corpus =
        emo::sample_corpus(oracle, cfg.train_sequences, cfg.valid_sequences, cfg.test_sequences,
                           cfg.sequence_length, emo::derive_seed(seed, emo::detail::kStreamCorpus));

    std::shared_ptr<const emo::UnitEmbeddings> e_hat;
    std::optional<emo::ToyLm> model;
    if (!pretrained_path.empty()) {
        emo::LoadedCheckpoint loaded = emo::load_checkpoint(pretrained_path);
        const emo::ToyLm::Config expected = cfg.model_config();
        const emo::ToyLm::Config& got = loaded.model.config();
        if (got.vocab.size != expected.vocab.size || got.embed_dim != expected.embed_dim ||
            got.window != expected.window || got.hidden_dim != expected.hidden_dim) {
            throw emo::InvalidInput(pretrained_path +
                                    ": checkpoint model shape does not match the config");
        }
        e_hat = loaded.frozen_embeddings;
        model.emplace(std::move(loaded.model));
    } else {
        model.emplace(cfg.model_config(), emo::derive_seed(seed, emo::detail::kStreamInit));
    }

    emo::LossConfig loss;
    loss.objective = objective;
    loss.mixing_gamma = gamma;
    if (wants_cost) loss.cost_embeddings = e_hat;

    emo::TrainOptions opts{cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.momentum,
                           emo::derive_seed(seed, emo::detail::kStreamFinetuneBase)};
    const emo::TrainResult result = emo::train(*model, corpus.train, corpus.valid, loss, opts);

    // Checkpoints always carry a frozen-embedding snapshot: the one training
    // used if the objective has one, otherwise the trained head's geometry.
    if (!e_hat) {
        e_hat = std::make_shared<const emo::UnitEmbeddings>(
            emo::UnitEmbeddings::normalize(model->head_matrix()));
    }
    emo::save_checkpoint(ckpt_path.string(), *model, *e_hat);

    nlohmann::json history = nlohmann::json::array();
    for (const emo::EpochStats& e : result.history) {
        history.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"valid_loss", e.valid_loss}});
    }
    nlohmann::json record{{"objective", name},
                          {"seed", seed},
                          {"config", cfg.to_json()},
                          {"best_epoch", result.best_epoch},
                          {"best_valid_loss", result.best_valid_loss},
                          {"history", history},
                          {"checkpoint", ckpt_path.string()}};
    record["gamma"] = gamma ? nlohmann::json(*gamma) : nlohmann::json();
    emo::write_text_atomic(record_path, record.dump(2) + "\n");
    std::cout << record.dump(2) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path, uint64_t seed) {
    const emo::ExperimentConfig cfg = emo::ExperimentConfig::from_file(config_path);
    emo::LoadedCheckpoint loaded = emo::load_checkpoint(checkpoint_path);
    const emo::OracleModel oracle =
        emo::make_oracle(cfg.vocabulary(), cfg.oracle_order, cfg.concentration,
                         emo::derive_seed(seed, emo::detail::kStreamOracle));
    const emo::CorpusSplit corpus =
        emo::sample_corpus(oracle, cfg.train_sequences, cfg.valid_sequences, cfg.test_sequences,
                           cfg.sequence_length, emo::derive_seed(seed, emo::detail::kStreamCorpus));
    const emo::MetricReport report = emo::evaluate_student(
        loaded.model, oracle, corpus, cfg, emo::derive_seed(seed, emo::detail::kStreamSamplingBase));
    std::cout << report.to_json().dump(2) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

int cmd_experiment(const std::string& config_path, const std::string& seeds_csv,
                   const std::string& out_flag, bool force) {
    const emo::ExperimentConfig cfg = emo::ExperimentConfig::from_file(config_path);
    const std::vector<uint64_t> seeds = seeds_csv.empty() ? cfg.seeds : parse_seed_list(seeds_csv);
    const std::filesystem::path out_dir = resolve_out_dir(out_flag);
    const emo::ExperimentResult result =
        emo::run_oracle_experiment(cfg, seeds, out_dir, force, &std::cerr);

    int failed = 0;
    for (const emo::RunRecord& r : result.records) {
        if (r.status != "ok") ++failed;
    }
    std::cout << "summary: " << result.summary_csv.string() << "\n"
              << "medians: " << result.medians_csv.string() << "\n"
              << "loss curves: " << result.loss_curves_csv.string() << "\n";
    if (failed > 0) {
        std::cout << failed << " of " << result.records.size() << " runs failed\n";
        return kExitFailure;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transport-objective training lab"};
    app.require_subcommand(1);

    // verify
    auto* verify = app.add_subcommand("verify", "run randomized property suites");
    std::string scope = "all";
    emo::VerifyOptions vopts;
    verify->add_option("--scope", scope, "all | bounds | gradients | reductions")
        ->check(CLI::IsMember({"all", "bounds", "gradients", "reductions"}));
    verify->add_option("--seed", vopts.seed, "suite seed (printed for reproduction)");
    verify->add_option("--trials", vopts.trials, "trials per property")
        ->check(CLI::PositiveNumber);
    verify->add_flag("--inject-fault", vopts.inject_negative_cost)->group("");  // test hook

    // emd
    auto* emd = app.add_subcommand("emd", "solve one exact transport instance");
    std::string p1_path, p2_path, cost_path, embeddings_path;
    emd->add_option("--p1", p1_path, "source distribution file")->required();
    emd->add_option("--p2", p2_path, "target distribution file")->required();
    emd->add_option("--cost", cost_path, "cost matrix file");
    emd->add_option("--embeddings", embeddings_path, "embedding matrix file (cosine cost)");

    // train
    auto* train = app.add_subcommand("train", "train one student under one objective");
    std::string train_config, train_objective, pretrained, train_out;
    double gamma_value = -1.0;
    bool gamma_set = false, train_force = false;
    uint64_t train_seed = 1;
    train->add_option("--config", train_config, "experiment config JSON")->required();
    train->add_option("--objective", train_objective, "MLE | TaiLr | MixCE | DEMD | EMO")
        ->required();
    train->add_option("--gamma", gamma_value, "mixing gamma (TaiLr/MixCE)")
        ->check(CLI::Range(0.0, 1.0))
        ->trigger_on_parse()
        ->each([&](const std::string&) { gamma_set = true; });
    train->add_option("--pretrained", pretrained, "checkpoint to start from (frozen-embedding "
                                                  "snapshot source for DEMD/EMO)");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--seed", train_seed, "root seed for oracle/corpus/init streams");
    train->add_flag("--force", train_force, "overwrite existing outputs");

    // eval
    auto* eval = app.add_subcommand("eval", "metric battery for a checkpoint");
    std::string eval_config, eval_checkpoint;
    uint64_t eval_seed = 1;
    eval->add_option("--config", eval_config, "experiment config JSON")->required();
    eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
    eval->add_option("--seed", eval_seed, "root seed for oracle/corpus streams");

    // experiment
    auto* experiment = app.add_subcommand("experiment", "full oracle study across seeds");
    std::string exp_config, exp_seeds, exp_out;
    bool exp_force = false;
    experiment->add_option("--config", exp_config, "experiment config JSON")->required();
    experiment->add_option("--seeds", exp_seeds, "comma-separated seed list (overrides config)");
    experiment->add_option("--out", exp_out, "output directory");
    experiment->add_flag("--force", exp_force, "overwrite existing outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return kExitInputError;
    }

    try {
        if (verify->parsed()) return cmd_verify(scope, vopts);
        if (emd->parsed()) return cmd_emd(p1_path, p2_path, cost_path, embeddings_path);
        if (train->parsed()) {
            return cmd_train(train_config, train_objective,
                             gamma_set ? std::optional<double>(gamma_value) : std::nullopt,
                             pretrained, train_out, train_seed, train_force);
        }
        if (eval->parsed()) return cmd_eval(eval_config, eval_checkpoint, eval_seed);
        if (experiment->parsed()) return cmd_experiment(exp_config, exp_seeds, exp_out, exp_force);
    } catch (const emo::InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    } catch (const emo::DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitInputError;
}

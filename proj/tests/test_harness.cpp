// Experiment harness tests: strict config parsing, record serialization
// round-trips, and an end-to-end smoke experiment checked for artifact
// integrity and bit-level determinism.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "emo/harness.hpp"

using namespace emo;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

int line_count(const std::string& text) {
    int n = 0;
    for (char c : text) n += (c == '\n');
    return n;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("emo_harness_" + name);
    fs::remove_all(dir);
    return dir;
}

ExperimentConfig smoke_config() {
    ExperimentConfig cfg;
    cfg.vocab_size = 8;
    cfg.oracle_order = 1;
    cfg.concentration = 0.5;
    cfg.train_sequences = 40;
    cfg.valid_sequences = 10;
    cfg.test_sequences = 10;
    cfg.sequence_length = 8;
    cfg.embed_dim = 4;
    cfg.window = 2;
    cfg.hidden_dim = 8;
    cfg.batch_size = 8;
    cfg.epochs = 1;
    cfg.pretrain_epochs = 1;
    cfg.objectives = {Objective::kMle, Objective::kTailr, Objective::kMixce, Objective::kDemd,
                      Objective::kEmo};
    cfg.gamma_grid = {0.9, 0.7};
    cfg.eval_prefix_length = 2;
    cfg.eval_generation_length = 4;
    cfg.sampling_repeats = 2;
    cfg.seeds = {1};
    cfg.validate();
    return cfg;
}

MetricReport sample_metrics() {
    MetricReport m;
    m.ppl_test = 12.5;
    m.ppl_oracle = 9.25;
    m.rouge1_f = 0.375;
    m.rougeL_f = 0.25;
    m.fwd_ce = 2.125;
    m.rev_ce = 2.5;
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

TEST_CASE("empty config json yields the documented defaults", "[harness]") {
    const ExperimentConfig cfg = ExperimentConfig::from_json(nlohmann::json::object());
    REQUIRE(cfg.vocab_size == 50);
    REQUIRE(cfg.oracle_order == 2);
    REQUIRE(cfg.concentration == Catch::Approx(0.1));
    REQUIRE(cfg.train_sequences == 5000);
    REQUIRE(cfg.valid_sequences == 500);
    REQUIRE(cfg.test_sequences == 500);
    REQUIRE(cfg.sequence_length == 32);
    REQUIRE(cfg.embed_dim == 16);
    REQUIRE(cfg.window == 4);
    REQUIRE(cfg.hidden_dim == 64);
    REQUIRE(cfg.batch_size == 32);
    REQUIRE(cfg.epochs == 3);
    REQUIRE(cfg.pretrain_epochs == 3);
    REQUIRE(cfg.learning_rate == Catch::Approx(0.1));
    REQUIRE(cfg.momentum == 0.0);
    REQUIRE(cfg.objectives == std::vector<Objective>{Objective::kMle, Objective::kTailr,
                                                     Objective::kMixce, Objective::kEmo});
    REQUIRE(cfg.gamma_grid == std::vector<double>{0.9, 0.8, 0.7});
    REQUIRE(cfg.eval_prefix_length == 8);
    REQUIRE(cfg.eval_generation_length == 24);
    REQUIRE(cfg.sampling_repeats == 5);
    REQUIRE(!cfg.finetune_from_scratch);
    REQUIRE(cfg.seeds == std::vector<uint64_t>{1, 2, 3, 4, 5});
}

TEST_CASE("unknown config keys are hard errors", "[harness]") {
    try {
        ExperimentConfig::from_json({{"vocab_sized", 8}});
        FAIL("expected InvalidInput");
    } catch (const InvalidInput& e) {
        REQUIRE(std::string(e.what()).find("vocab_sized") != std::string::npos);
    }
}

TEST_CASE("malformed config values are reported as invalid input", "[harness]") {
    REQUIRE_THROWS_AS(ExperimentConfig::from_json({{"vocab_size", "ten"}}), InvalidInput);
    REQUIRE_THROWS_AS(ExperimentConfig::from_json({{"objectives", {"MLE", "XENT"}}}),
                      InvalidInput);
}

TEST_CASE("config validation catches inconsistent settings", "[harness]") {
    REQUIRE_THROWS_AS(ExperimentConfig::from_json({{"vocab_size", 2}}), InvalidInput);
    REQUIRE_THROWS_AS(ExperimentConfig::from_json({{"concentration", 0.0}}), InvalidInput);
    REQUIRE_THROWS_AS(ExperimentConfig::from_json({{"momentum", 1.0}}), InvalidInput);
    REQUIRE_THROWS_AS(ExperimentConfig::from_json({{"seeds", nlohmann::json::array()}}),
                      InvalidInput);
    REQUIRE_THROWS_AS(ExperimentConfig::from_json({{"gamma_grid", {1.5}}}), InvalidInput);
    // Evaluation windows must fit inside the test sequences.
    REQUIRE_THROWS_AS(ExperimentConfig::from_json(
                          {{"sequence_length", 16}, {"eval_prefix_length", 8},
                           {"eval_generation_length", 16}}),
                      InvalidInput);
    // An empty gamma grid is fine as long as nothing sweeps gamma...
    const ExperimentConfig ok = ExperimentConfig::from_json(
        {{"objectives", {"MLE", "DEMD"}}, {"gamma_grid", nlohmann::json::array()}});
    REQUIRE(ok.gamma_grid.empty());
    // ...but an error for the mixture objectives.
    REQUIRE_THROWS_AS(ExperimentConfig::from_json({{"objectives", {"MLE", "TaiLr"}},
                                                   {"gamma_grid", nlohmann::json::array()}}),
                      InvalidInput);
}

TEST_CASE("config json round-trips", "[harness]") {
    const ExperimentConfig cfg = smoke_config();
    const nlohmann::json j = cfg.to_json();
    const ExperimentConfig back = ExperimentConfig::from_json(j);
    REQUIRE(back.to_json() == j);
}

TEST_CASE("config files are parsed strictly", "[harness]") {
    const fs::path dir = fresh_dir("config_files");
    fs::create_directories(dir);
    const fs::path good = dir / "good.json";
    std::ofstream(good) << R"({"vocab_size": 12, "oracle_order": 1})";
    const ExperimentConfig cfg = ExperimentConfig::from_file(good.string());
    REQUIRE(cfg.vocab_size == 12);
    REQUIRE(cfg.oracle_order == 1);
    REQUIRE(cfg.epochs == 3);  // untouched default

    const fs::path bad = dir / "bad.json";
    std::ofstream(bad) << "{not json";
    REQUIRE_THROWS_AS(ExperimentConfig::from_file(bad.string()), InvalidInput);
    REQUIRE_THROWS_AS(ExperimentConfig::from_file((dir / "missing.json").string()),
                      InvalidInput);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Record serialization
// ---------------------------------------------------------------------------

TEST_CASE("metric report validation and round-trip", "[harness]") {
    const MetricReport m = sample_metrics();
    m.validate();
    REQUIRE(MetricReport::from_json(m.to_json()) == m);

    MetricReport bad = m;
    bad.ppl_oracle = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(bad.validate(), InvalidInput);
    bad = m;
    bad.rouge1_f = 1.5;
    REQUIRE_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("stream seeds round-trip", "[harness]") {
    StreamSeeds s;
    s.oracle = 11;
    s.corpus = 22;
    s.init = 33;
    s.pretrain_shuffle = 44;
    s.finetune_shuffle = 55;
    s.sampling = 66;
    REQUIRE(StreamSeeds::from_json(s.to_json()) == s);
}

TEST_CASE("run records round-trip including the null fields", "[harness]") {
    RunRecord r;
    r.objective = "TaiLr";
    r.seed = 7;
    r.chosen_gamma = 0.8;
    r.config_snapshot = smoke_config().to_json();
    r.stream_seeds.oracle = 123;
    r.stream_seeds.sampling = 456;
    r.pretrain_history = {EpochStats{1, 2.5, 2.25}, EpochStats{2, 2.0, 1.75}};
    r.finetune_history = {EpochStats{1, 1.5, 1.25}};
    r.metrics = sample_metrics();
    r.wall_ms = 812.5;
    r.artifact_path = "out/run_TaiLr_seed7.json";
    REQUIRE(RunRecord::from_json(r.to_json()) == r);

    // A failed run carries no gamma and no metrics; both survive as nulls.
    RunRecord failed;
    failed.objective = "EMO";
    failed.seed = 2;
    failed.config_snapshot = nlohmann::json::object();
    failed.status = "error";
    failed.error = "training diverged at epoch 1, batch 3";
    REQUIRE(!failed.chosen_gamma.has_value());
    REQUIRE(!failed.metrics.has_value());
    const nlohmann::json j = failed.to_json();
    REQUIRE(j.at("chosen_gamma").is_null());
    REQUIRE(j.at("metrics").is_null());
    REQUIRE(RunRecord::from_json(j) == failed);
}

// ---------------------------------------------------------------------------
// End-to-end smoke experiment
// ---------------------------------------------------------------------------

TEST_CASE("smoke experiment produces complete, reloadable artifacts", "[harness][slow]") {
    const ExperimentConfig cfg = smoke_config();
    const fs::path dir = fresh_dir("smoke");
    const ExperimentResult result = run_oracle_experiment(cfg, cfg.seeds, dir);

    REQUIRE(result.records.size() == 5);
    for (const RunRecord& r : result.records) {
        INFO("objective " << r.objective << ": " << r.error);
        REQUIRE(r.status == "ok");
        REQUIRE(r.metrics.has_value());
        r.metrics->validate();
        REQUIRE(r.metrics->ppl_test > 1.0);
        REQUIRE(r.pretrain_history.size() == 1);
        REQUIRE(r.finetune_history.size() == 1);
        REQUIRE(r.seed == 1);

        // The winning gamma comes from the configured grid, and only the
        // mixture objectives have one.
        if (r.objective == "TaiLr" || r.objective == "MixCE") {
            REQUIRE(r.chosen_gamma.has_value());
            REQUIRE((*r.chosen_gamma == 0.9 || *r.chosen_gamma == 0.7));
        } else {
            REQUIRE(!r.chosen_gamma.has_value());
        }

        // Every record is mirrored to a JSON artifact that reloads exactly.
        REQUIRE(fs::exists(r.artifact_path));
        nlohmann::json j;
        std::ifstream(r.artifact_path) >> j;
        REQUIRE(RunRecord::from_json(j) == r);
    }

    // Objectives appear in config order.
    REQUIRE(result.records[0].objective == "MLE");
    REQUIRE(result.records[1].objective == "TaiLr");
    REQUIRE(result.records[2].objective == "MixCE");
    REQUIRE(result.records[3].objective == "DEMD");
    REQUIRE(result.records[4].objective == "EMO");

    // CSV shapes: summary and medians carry one row per objective, the loss
    // curves one pretraining row plus one fine-tuning row per objective.
    const std::string summary = slurp(result.summary_csv);
    REQUIRE(summary.rfind("objective,seed,ppl_test,ppl_oracle,rouge1_f,rougeL_f,fwd_ce,rev_ce\n",
                          0) == 0);
    REQUIRE(line_count(summary) == 1 + 5);
    const std::string medians = slurp(result.medians_csv);
    REQUIRE(line_count(medians) == 1 + 5);
    const std::string curves = slurp(result.loss_curves_csv);
    REQUIRE(line_count(curves) == 1 + 1 + 5);
    REQUIRE(curves.find("pretrain,1,1,") != std::string::npos);

    // Refusing to clobber an existing summary without force.
    REQUIRE_THROWS_AS(run_oracle_experiment(cfg, cfg.seeds, dir), InvalidInput);

    // Re-running with force reproduces every artifact byte for byte.
    const ExperimentResult rerun = run_oracle_experiment(cfg, cfg.seeds, dir, /*force=*/true);
    REQUIRE(slurp(rerun.summary_csv) == summary);
    REQUIRE(slurp(rerun.medians_csv) == medians);
    REQUIRE(slurp(rerun.loss_curves_csv) == curves);
    REQUIRE(rerun.records.size() == result.records.size());
    for (size_t i = 0; i < rerun.records.size(); ++i) {
        // Wall-clock time legitimately differs; everything else must match.
        RunRecord a = result.records[i];
        RunRecord b = rerun.records[i];
        a.wall_ms = b.wall_ms = 0.0;
        REQUIRE(a == b);
    }
    fs::remove_all(dir);
}

TEST_CASE("evaluation is deterministic in the sampling seed", "[harness]") {
    ExperimentConfig cfg = smoke_config();
    const OracleModel oracle = make_oracle(cfg.vocabulary(), cfg.oracle_order, cfg.concentration,
                                           derive_seed(3, 1));
    const CorpusSplit corpus = sample_corpus(oracle, cfg.train_sequences, cfg.valid_sequences,
                                             cfg.test_sequences, cfg.sequence_length,
                                             derive_seed(3, 2));
    ToyLm student(cfg.model_config(), derive_seed(3, 3));
    train(student, corpus.train, corpus.valid, LossConfig{Objective::kMle, {}, {}},
          TrainOptions{1, 8, 0.1, 0.0, 5});

    const MetricReport a = evaluate_student(student, oracle, corpus, cfg, 99);
    const MetricReport b = evaluate_student(student, oracle, corpus, cfg, 99);
    REQUIRE(a == b);
}

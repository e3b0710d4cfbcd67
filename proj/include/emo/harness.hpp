#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "emo/io.hpp"
#include "emo/lm.hpp"
#include "emo/losses.hpp"
#include "emo/metrics.hpp"
#include "emo/oracle.hpp"
#include "emo/rng.hpp"

namespace emo {

// ---------------------------------------------------------------------------
// Experiment configuration (strict JSON: unknown keys are errors, every field
// has a desk-scale default).
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    int vocab_size = 50;
    int oracle_order = 2;
    double concentration = 0.1;
    int train_sequences = 5000;
    int valid_sequences = 500;
    int test_sequences = 500;
    int sequence_length = 32;
    int embed_dim = 16;
    int window = 4;
    int hidden_dim = 64;
    int batch_size = 32;
    int epochs = 3;
    int pretrain_epochs = 3;
    double learning_rate = 0.1;
    double momentum = 0.0;
    std::vector<Objective> objectives = {Objective::kMle, Objective::kTailr, Objective::kMixce,
                                         Objective::kEmo};
    std::vector<double> gamma_grid = {0.9, 0.8, 0.7};
    int eval_prefix_length = 8;
    int eval_generation_length = 24;
    int sampling_repeats = 5;
    bool finetune_from_scratch = false;
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};

    Vocabulary vocabulary() const { return Vocabulary{vocab_size, 0, 1}; }

    ToyLm::Config model_config() const {
        return ToyLm::Config{vocabulary(), embed_dim, window, hidden_dim};
    }

    void validate() const {
        vocabulary().validate();
        model_config().validate();
        if (oracle_order < 1) throw InvalidInput("config: oracle_order must be >= 1");
        if (!(concentration > 0.0)) throw InvalidInput("config: concentration must be positive");
        if (train_sequences < 1 || valid_sequences < 1 || test_sequences < 1) {
            throw InvalidInput("config: corpus split sizes must be positive");
        }
        if (sequence_length < 1) throw InvalidInput("config: sequence_length must be positive");
        if (batch_size < 1 || epochs < 1 || pretrain_epochs < 1) {
            throw InvalidInput("config: batch_size, epochs, pretrain_epochs must be positive");
        }
        if (!(learning_rate > 0.0)) throw InvalidInput("config: learning_rate must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) {
            throw InvalidInput("config: momentum must lie in [0, 1)");
        }
        if (objectives.empty()) throw InvalidInput("config: objectives list is empty");
        if (eval_prefix_length < 1 || eval_generation_length < 1) {
            throw InvalidInput("config: eval prefix/generation lengths must be positive");
        }
        if (eval_prefix_length + eval_generation_length > sequence_length) {
            throw InvalidInput("config: eval_prefix_length + eval_generation_length exceeds "
                               "sequence_length, so test references would run out of tokens");
        }
        if (sampling_repeats < 1) throw InvalidInput("config: sampling_repeats must be >= 1");
        const bool needs_gamma =
            std::any_of(objectives.begin(), objectives.end(), [](Objective o) {
                return o == Objective::kTailr || o == Objective::kMixce;
            });
        if (needs_gamma && gamma_grid.empty()) {
            throw InvalidInput("config: gamma_grid must be non-empty for TaiLr/MixCE");
        }
        for (double g : gamma_grid) {
            if (!(g >= 0.0 && g <= 1.0)) {
                throw InvalidInput("config: gamma_grid entries must lie in [0, 1]");
            }
        }
        if (seeds.empty()) throw InvalidInput("config: seeds list is empty");
    }

    nlohmann::json to_json() const {
        std::vector<std::string> names;
        for (Objective o : objectives) names.emplace_back(objective_name(o));
        return nlohmann::json{{"vocab_size", vocab_size},
                              {"oracle_order", oracle_order},
                              {"concentration", concentration},
                              {"train_sequences", train_sequences},
                              {"valid_sequences", valid_sequences},
                              {"test_sequences", test_sequences},
                              {"sequence_length", sequence_length},
                              {"embed_dim", embed_dim},
                              {"window", window},
                              {"hidden_dim", hidden_dim},
                              {"batch_size", batch_size},
                              {"epochs", epochs},
                              {"pretrain_epochs", pretrain_epochs},
                              {"learning_rate", learning_rate},
                              {"momentum", momentum},
                              {"objectives", names},
                              {"gamma_grid", gamma_grid},
                              {"eval_prefix_length", eval_prefix_length},
                              {"eval_generation_length", eval_generation_length},
                              {"sampling_repeats", sampling_repeats},
                              {"finetune_from_scratch", finetune_from_scratch},
                              {"seeds", seeds}};
    }

    /// Strict parse: every key must be known; values replace the defaults.
    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig cfg;
        try {
            for (const auto& [key, value] : j.items()) {
                if (key == "vocab_size") cfg.vocab_size = value.get<int>();
                else if (key == "oracle_order") cfg.oracle_order = value.get<int>();
                else if (key == "concentration") cfg.concentration = value.get<double>();
                else if (key == "train_sequences") cfg.train_sequences = value.get<int>();
                else if (key == "valid_sequences") cfg.valid_sequences = value.get<int>();
                else if (key == "test_sequences") cfg.test_sequences = value.get<int>();
                else if (key == "sequence_length") cfg.sequence_length = value.get<int>();
                else if (key == "embed_dim") cfg.embed_dim = value.get<int>();
                else if (key == "window") cfg.window = value.get<int>();
                else if (key == "hidden_dim") cfg.hidden_dim = value.get<int>();
                else if (key == "batch_size") cfg.batch_size = value.get<int>();
                else if (key == "epochs") cfg.epochs = value.get<int>();
                else if (key == "pretrain_epochs") cfg.pretrain_epochs = value.get<int>();
                else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
                else if (key == "momentum") cfg.momentum = value.get<double>();
                else if (key == "objectives") {
                    cfg.objectives.clear();
                    for (const auto& name : value) {
                        cfg.objectives.push_back(objective_from_string(name.get<std::string>()));
                    }
                } else if (key == "gamma_grid") cfg.gamma_grid = value.get<std::vector<double>>();
                else if (key == "eval_prefix_length") cfg.eval_prefix_length = value.get<int>();
                else if (key == "eval_generation_length") {
                    cfg.eval_generation_length = value.get<int>();
                } else if (key == "sampling_repeats") cfg.sampling_repeats = value.get<int>();
                else if (key == "finetune_from_scratch") {
                    cfg.finetune_from_scratch = value.get<bool>();
                } else if (key == "seeds") cfg.seeds = value.get<std::vector<uint64_t>>();
                else throw InvalidInput("config: unknown key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput(std::string("config: malformed value (") + e.what() + ")");
        }
        cfg.validate();
        return cfg;
    }

    static ExperimentConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InvalidInput(path + ": cannot open config");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput(path + ": config is not valid JSON (" + e.what() + ")");
        }
        return from_json(j);
    }
};

// ---------------------------------------------------------------------------
// Run records.
// ---------------------------------------------------------------------------

struct MetricReport {
    double ppl_test = 0.0;
    double ppl_oracle = 0.0;
    double rouge1_f = 0.0;
    double rougeL_f = 0.0;
    double fwd_ce = 0.0;
    double rev_ce = 0.0;

    bool operator==(const MetricReport&) const = default;

    void validate() const {
        for (double v : {ppl_test, ppl_oracle, rouge1_f, rougeL_f, fwd_ce, rev_ce}) {
            if (!std::isfinite(v)) throw InvalidInput("MetricReport: non-finite metric");
        }
        if (rouge1_f < 0.0 || rouge1_f > 1.0 || rougeL_f < 0.0 || rougeL_f > 1.0) {
            throw InvalidInput("MetricReport: ROUGE scores must lie in [0, 1]");
        }
    }

    nlohmann::json to_json() const {
        return {{"ppl_test", ppl_test}, {"ppl_oracle", ppl_oracle}, {"rouge1_f", rouge1_f},
                {"rougeL_f", rougeL_f}, {"fwd_ce", fwd_ce},         {"rev_ce", rev_ce}};
    }

    static MetricReport from_json(const nlohmann::json& j) {
        MetricReport m;
        m.ppl_test = j.at("ppl_test").get<double>();
        m.ppl_oracle = j.at("ppl_oracle").get<double>();
        m.rouge1_f = j.at("rouge1_f").get<double>();
        m.rougeL_f = j.at("rougeL_f").get<double>();
        m.fwd_ce = j.at("fwd_ce").get<double>();
        m.rev_ce = j.at("rev_ce").get<double>();
        return m;
    }
};

struct StreamSeeds {
    uint64_t oracle = 0;
    uint64_t corpus = 0;
    uint64_t init = 0;
    uint64_t pretrain_shuffle = 0;
    uint64_t finetune_shuffle = 0;
    uint64_t sampling = 0;

    bool operator==(const StreamSeeds&) const = default;

    nlohmann::json to_json() const {
        return {{"oracle", oracle},   {"corpus", corpus},
                {"init", init},       {"pretrain_shuffle", pretrain_shuffle},
                {"finetune_shuffle", finetune_shuffle}, {"sampling", sampling}};
    }

    static StreamSeeds from_json(const nlohmann::json& j) {
        StreamSeeds s;
        s.oracle = j.at("oracle").get<uint64_t>();
        s.corpus = j.at("corpus").get<uint64_t>();
        s.init = j.at("init").get<uint64_t>();
        s.pretrain_shuffle = j.at("pretrain_shuffle").get<uint64_t>();
        s.finetune_shuffle = j.at("finetune_shuffle").get<uint64_t>();
        s.sampling = j.at("sampling").get<uint64_t>();
        return s;
    }
};

struct RunRecord {
    std::string objective;
    uint64_t seed = 0;
    std::optional<double> chosen_gamma;
    nlohmann::json config_snapshot;
    StreamSeeds stream_seeds;
    std::vector<EpochStats> pretrain_history;
    std::vector<EpochStats> finetune_history;
    std::string status = "ok";  // "ok" | "error"
    std::string error;
    std::optional<MetricReport> metrics;
    double wall_ms = 0.0;
    std::string artifact_path;

    bool operator==(const RunRecord&) const = default;

    nlohmann::json to_json() const {
        auto history_json = [](const std::vector<EpochStats>& h) {
            nlohmann::json arr = nlohmann::json::array();
            for (const EpochStats& e : h) {
                arr.push_back({{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"valid_loss", e.valid_loss}});
            }
            return arr;
        };
        nlohmann::json j{{"objective", objective},
                         {"seed", seed},
                         {"config", config_snapshot},
                         {"stream_seeds", stream_seeds.to_json()},
                         {"pretrain_history", history_json(pretrain_history)},
                         {"finetune_history", history_json(finetune_history)},
                         {"status", status},
                         {"error", error},
                         {"wall_ms", wall_ms},
                         {"artifact_path", artifact_path}};
        j["chosen_gamma"] = chosen_gamma ? nlohmann::json(*chosen_gamma) : nlohmann::json();
        j["metrics"] = metrics ? metrics->to_json() : nlohmann::json();
        return j;
    }

    static RunRecord from_json(const nlohmann::json& j) {
        auto history_from = [](const nlohmann::json& arr) {
            std::vector<EpochStats> h;
            for (const auto& e : arr) {
                h.push_back(EpochStats{e.at("epoch").get<int>(),
                                       e.at("train_loss").get<double>(),
                                       e.at("valid_loss").get<double>()});
            }
            return h;
        };
        RunRecord r;
        r.objective = j.at("objective").get<std::string>();
        r.seed = j.at("seed").get<uint64_t>();
        if (!j.at("chosen_gamma").is_null()) r.chosen_gamma = j.at("chosen_gamma").get<double>();
        r.config_snapshot = j.at("config");
        r.stream_seeds = StreamSeeds::from_json(j.at("stream_seeds"));
        r.pretrain_history = history_from(j.at("pretrain_history"));
        r.finetune_history = history_from(j.at("finetune_history"));
        r.status = j.at("status").get<std::string>();
        r.error = j.at("error").get<std::string>();
        if (!j.at("metrics").is_null()) r.metrics = MetricReport::from_json(j.at("metrics"));
        r.wall_ms = j.at("wall_ms").get<double>();
        r.artifact_path = j.at("artifact_path").get<std::string>();
        return r;
    }
};

// ---------------------------------------------------------------------------
// Student evaluation: the full metric battery for one trained model.
// ---------------------------------------------------------------------------

/// Computes test perplexity, oracle perplexity and ROUGE of sampled
/// continuations (pooled over `sampling_repeats` repetitions), and the
/// forward/reverse cross-entropy diagnostic on the test corpus.
inline MetricReport evaluate_student(const ToyLm& student, const OracleModel& oracle,
                                     const CorpusSplit& corpus, const ExperimentConfig& cfg,
                                     uint64_t sampling_seed) {
    MetricReport report;
    report.ppl_test = student.perplexity(corpus.test);

    const int prefix_len = cfg.eval_prefix_length;
    const int total_len = cfg.eval_prefix_length + cfg.eval_generation_length;
    std::vector<std::vector<int>> generations;   // prefix + continuation
    std::vector<std::vector<int>> candidates;    // continuation only
    std::vector<std::vector<int>> references;    // held-out continuation
    generations.reserve(corpus.test.size() * cfg.sampling_repeats);
    for (int rep = 0; rep < cfg.sampling_repeats; ++rep) {
        Rng rng(derive_seed(sampling_seed, static_cast<uint64_t>(rep)));
        for (const auto& seq : corpus.test) {
            const std::span<const int> prefix(seq.data(), prefix_len);
            std::vector<int> gen = student.ancestral_sample(prefix, total_len, rng);
            candidates.emplace_back(gen.begin() + prefix_len, gen.end());
            references.emplace_back(seq.begin() + prefix_len, seq.begin() + total_len);
            generations.push_back(std::move(gen));
        }
    }

    const OraclePerplexity po = ppl_oracle(oracle, generations, prefix_len);
    if (po.overflow) {
        throw InvalidInput("evaluate_student: oracle assigned probability zero to " +
                           std::to_string(po.overflow_sequences) + " generated sequences");
    }
    report.ppl_oracle = po.value;

    const RougeScores rouge = rouge_scores(candidates, references);
    report.rouge1_f = rouge.rouge1_f;
    report.rougeL_f = rouge.rougeL_f;

    const CeDiagnostic ce = ce_diagnostic(student, oracle, corpus.test);
    report.fwd_ce = ce.fwd_ce;
    report.rev_ce = ce.rev_ce;

    report.validate();
    return report;
}

// ---------------------------------------------------------------------------
// The oracle experiment: per seed, pretrain one base student with
// cross-entropy, freeze the cost geometry from its output head, fine-tune one
// student per objective from that shared base (sweeping gamma where the
// objective has one), and run the metric battery on each.
// ---------------------------------------------------------------------------

namespace detail {

// Stream ids for derive_seed: keep every consumer of randomness on its own
// independent stream so adding an objective never shifts another one's draws.
inline constexpr uint64_t kStreamOracle = 1;
inline constexpr uint64_t kStreamCorpus = 2;
inline constexpr uint64_t kStreamInit = 3;
inline constexpr uint64_t kStreamPretrainShuffle = 4;
inline constexpr uint64_t kStreamFinetuneBase = 16;   // + obj_idx * 8 + gamma_idx
inline constexpr uint64_t kStreamScratchInitBase = 64;  // + obj_idx
inline constexpr uint64_t kStreamSamplingBase = 128;  // + obj_idx

inline double median(std::vector<double> values) {
    if (values.empty()) throw InvalidInput("median: empty input");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

struct ExperimentResult {
    std::vector<RunRecord> records;
    std::filesystem::path summary_csv;
    std::filesystem::path medians_csv;
    std::filesystem::path loss_curves_csv;
};

inline ExperimentResult run_oracle_experiment(const ExperimentConfig& cfg,
                                              const std::vector<uint64_t>& seeds,
                                              const std::filesystem::path& out_dir,
                                              bool force = false, std::ostream* log = nullptr) {
    cfg.validate();
    if (seeds.empty()) throw InvalidInput("run_oracle_experiment: need at least one seed");

    const std::filesystem::path summary_path = out_dir / "summary.csv";
    if (!force && std::filesystem::exists(summary_path)) {
        throw InvalidInput(summary_path.string() +
                           " already exists; pass --force to overwrite");
    }
    std::filesystem::create_directories(out_dir);

    const nlohmann::json config_snapshot = cfg.to_json();
    std::vector<RunRecord> records;

    for (uint64_t seed : seeds) {
        const uint64_t oracle_seed = derive_seed(seed, detail::kStreamOracle);
        const uint64_t corpus_seed = derive_seed(seed, detail::kStreamCorpus);
        const uint64_t init_seed = derive_seed(seed, detail::kStreamInit);
        const uint64_t pretrain_shuffle = derive_seed(seed, detail::kStreamPretrainShuffle);

        if (log) *log << "[seed " << seed << "] building oracle and corpus\n";
        const OracleModel oracle =
            make_oracle(cfg.vocabulary(), cfg.oracle_order, cfg.concentration, oracle_seed);
        const CorpusSplit corpus =
            sample_corpus(oracle, cfg.train_sequences, cfg.valid_sequences, cfg.test_sequences,
                          cfg.sequence_length, corpus_seed);

        // Shared cross-entropy pretraining; its output head defines the
        // frozen transport geometry for every objective of this seed.
        ToyLm base(cfg.model_config(), init_seed);
        TrainOptions pretrain_opts{cfg.pretrain_epochs, cfg.batch_size, cfg.learning_rate,
                                   cfg.momentum, pretrain_shuffle};
        if (log) *log << "[seed " << seed << "] pretraining base student\n";
        const TrainResult pretrain = train(base, corpus.train, corpus.valid,
                                           LossConfig{Objective::kMle, {}, {}}, pretrain_opts);
        const auto e_hat = std::make_shared<const UnitEmbeddings>(
            UnitEmbeddings::normalize(base.head_matrix()));

        for (size_t obj_idx = 0; obj_idx < cfg.objectives.size(); ++obj_idx) {
            const Objective objective = cfg.objectives[obj_idx];
            const auto t0 = std::chrono::steady_clock::now();

            RunRecord record;
            record.objective = objective_name(objective);
            record.seed = seed;
            record.config_snapshot = config_snapshot;
            record.stream_seeds.oracle = oracle_seed;
            record.stream_seeds.corpus = corpus_seed;
            record.stream_seeds.init = init_seed;
            record.stream_seeds.pretrain_shuffle = pretrain_shuffle;
            record.stream_seeds.sampling =
                derive_seed(seed, detail::kStreamSamplingBase + static_cast<uint64_t>(obj_idx));
            record.pretrain_history = pretrain.history;

            try {
                const bool sweeps_gamma =
                    objective == Objective::kTailr || objective == Objective::kMixce;
                const std::vector<double> gammas =
                    sweeps_gamma ? cfg.gamma_grid : std::vector<double>{-1.0};

                std::vector<double> best_params;
                double best_valid = std::numeric_limits<double>::infinity();
                for (size_t g_idx = 0; g_idx < gammas.size(); ++g_idx) {
                    const uint64_t shuffle = derive_seed(
                        seed, detail::kStreamFinetuneBase + static_cast<uint64_t>(obj_idx) * 8 +
                                  static_cast<uint64_t>(g_idx));
                    ToyLm student =
                        cfg.finetune_from_scratch
                            ? ToyLm(cfg.model_config(),
                                    derive_seed(seed, detail::kStreamScratchInitBase +
                                                          static_cast<uint64_t>(obj_idx)))
                            : base;
                    LossConfig loss;
                    loss.objective = objective;
                    if (sweeps_gamma) loss.mixing_gamma = gammas[g_idx];
                    if (objective == Objective::kDemd || objective == Objective::kEmo) {
                        loss.cost_embeddings = e_hat;
                    }
                    TrainOptions opts{cfg.epochs, cfg.batch_size, cfg.learning_rate,
                                      cfg.momentum, shuffle};
                    if (log) {
                        *log << "[seed " << seed << "] fine-tuning " << record.objective;
                        if (sweeps_gamma) *log << " (gamma " << gammas[g_idx] << ")";
                        *log << "\n";
                    }
                    const TrainResult tr = train(student, corpus.train, corpus.valid, loss, opts);
                    if (tr.best_valid_loss < best_valid) {
                        best_valid = tr.best_valid_loss;
                        best_params.assign(student.params().begin(), student.params().end());
                        record.finetune_history = tr.history;
                        record.chosen_gamma =
                            sweeps_gamma ? std::optional<double>(gammas[g_idx]) : std::nullopt;
                        record.stream_seeds.finetune_shuffle = shuffle;
                    }
                }

                ToyLm winner(cfg.model_config(), /*init_seed=*/0);
                std::copy(best_params.begin(), best_params.end(), winner.params().begin());
                record.metrics = evaluate_student(winner, oracle, corpus, cfg,
                                                  record.stream_seeds.sampling);
            } catch (const std::exception& e) {
                record.status = "error";
                record.error = e.what();
            }

            const auto t1 = std::chrono::steady_clock::now();
            record.wall_ms =
                std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0)
                    .count();

            const std::filesystem::path run_path =
                out_dir / ("run_" + record.objective + "_seed" + std::to_string(seed) + ".json");
            record.artifact_path = run_path.string();
            write_text_atomic(run_path, record.to_json().dump(2) + "\n");
            if (log) {
                *log << "[seed " << seed << "] " << record.objective << ": " << record.status;
                if (record.metrics) {
                    *log << "  ppl_test " << record.metrics->ppl_test << "  ppl_oracle "
                         << record.metrics->ppl_oracle << "  rouge1 " << record.metrics->rouge1_f;
                }
                if (record.status == "error") *log << "  (" << record.error << ")";
                *log << "\n";
            }
            records.push_back(std::move(record));
        }
    }

    // Summary CSV: one row per (objective, seed), in config order.
    std::string summary = "objective,seed,ppl_test,ppl_oracle,rouge1_f,rougeL_f,fwd_ce,rev_ce\n";
    for (const RunRecord& r : records) {
        if (!r.metrics) continue;
        const MetricReport& m = *r.metrics;
        summary += r.objective + "," + std::to_string(r.seed) + "," + format_double(m.ppl_test) +
                   "," + format_double(m.ppl_oracle) + "," + format_double(m.rouge1_f) + "," +
                   format_double(m.rougeL_f) + "," + format_double(m.fwd_ce) + "," +
                   format_double(m.rev_ce) + "\n";
    }
    write_text_atomic(summary_path, summary);

    // Medians across seeds, per objective.
    std::string medians = "objective,ppl_test,ppl_oracle,rouge1_f,rougeL_f,fwd_ce,rev_ce\n";
    for (Objective objective : cfg.objectives) {
        const std::string name = objective_name(objective);
        std::vector<double> ppl_test, ppl_oracle_v, r1, rl, fwd, rev;
        for (const RunRecord& r : records) {
            if (r.objective != name || !r.metrics) continue;
            ppl_test.push_back(r.metrics->ppl_test);
            ppl_oracle_v.push_back(r.metrics->ppl_oracle);
            r1.push_back(r.metrics->rouge1_f);
            rl.push_back(r.metrics->rougeL_f);
            fwd.push_back(r.metrics->fwd_ce);
            rev.push_back(r.metrics->rev_ce);
        }
        if (ppl_test.empty()) continue;
        medians += name + "," + format_double(detail::median(ppl_test)) + "," +
                   format_double(detail::median(ppl_oracle_v)) + "," +
                   format_double(detail::median(r1)) + "," + format_double(detail::median(rl)) +
                   "," + format_double(detail::median(fwd)) + "," +
                   format_double(detail::median(rev)) + "\n";
    }
    const std::filesystem::path medians_path = out_dir / "medians.csv";
    write_text_atomic(medians_path, medians);

    // Plot-ready loss curves (pretraining appears once per seed).
    std::string curves = "objective,seed,epoch,train_loss,valid_loss\n";
    for (uint64_t seed : seeds) {
        for (const RunRecord& r : records) {
            if (r.seed != seed) continue;
            for (const EpochStats& e : r.pretrain_history) {
                curves += "pretrain," + std::to_string(seed) + "," + std::to_string(e.epoch) +
                          "," + format_double(e.train_loss) + "," + format_double(e.valid_loss) +
                          "\n";
            }
            break;
        }
        for (const RunRecord& r : records) {
            if (r.seed != seed) continue;
            for (const EpochStats& e : r.finetune_history) {
                curves += r.objective + "," + std::to_string(seed) + "," +
                          std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
                          format_double(e.valid_loss) + "\n";
            }
        }
    }
    const std::filesystem::path curves_path = out_dir / "loss_curves.csv";
    write_text_atomic(curves_path, curves);

    return ExperimentResult{std::move(records), summary_path, medians_path, curves_path};
}

}  // namespace emo

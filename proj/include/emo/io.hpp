#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "emo/lm.hpp"
#include "emo/losses.hpp"
#include "emo/numerics.hpp"

namespace emo {

// ---------------------------------------------------------------------------
// Plain-text float tables: one row per line, whitespace-separated decimals,
// '#' starts a comment. Parse errors carry file:line:col diagnostics.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<double>> read_float_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput(path + ": cannot open file");
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::vector<double> row;
        size_t i = 0;
        while (i < line.size()) {
            if (std::isspace(static_cast<unsigned char>(line[i]))) {
                ++i;
                continue;
            }
            const char* start = line.c_str() + i;
            char* end = nullptr;
            const double value = std::strtod(start, &end);
            if (end == start) {
                throw InvalidInput(path + ":" + std::to_string(lineno) + ":" +
                                   std::to_string(i + 1) + ": expected a decimal float, got '" +
                                   line.substr(i, 8) + "'");
            }
            // The token must end at whitespace or end-of-line; trailing junk
            // such as "1.5x" is an error at the junk column.
            const size_t consumed = static_cast<size_t>(end - line.c_str());
            if (consumed < line.size() &&
                !std::isspace(static_cast<unsigned char>(line[consumed]))) {
                throw InvalidInput(path + ":" + std::to_string(lineno) + ":" +
                                   std::to_string(consumed + 1) +
                                   ": unexpected character '" + line[consumed] +
                                   "' inside a number");
            }
            row.push_back(value);
            i = consumed;
        }
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InvalidInput(path + ": no numeric rows found");
    return rows;
}

/// Reads all values in the file (rows flattened) as one probability vector.
inline Distribution read_distribution(const std::string& path) {
    std::vector<double> flat;
    for (const auto& row : read_float_table(path)) {
        flat.insert(flat.end(), row.begin(), row.end());
    }
    try {
        return Distribution(std::move(flat));
    } catch (const InvalidInput& e) {
        throw InvalidInput(path + ": " + e.what());
    }
}

/// Reads a rectangular matrix; ragged rows are rejected with the line number.
inline Matrix read_matrix(const std::string& path) {
    const auto rows = read_float_table(path);
    const size_t width = rows.front().size();
    for (size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != width) {
            throw InvalidInput(path + ": row " + std::to_string(r + 1) + " has " +
                               std::to_string(rows[r].size()) + " entries, expected " +
                               std::to_string(width));
        }
    }
    return Matrix::from_rows(rows);
}

// ---------------------------------------------------------------------------
// Output helpers.
// ---------------------------------------------------------------------------

/// Shortest decimal that round-trips a double exactly; used for every number
/// written to CSV so identical runs produce byte-identical files.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

/// Writes via a temp file in the same directory plus rename, so readers never
/// observe a partially written artifact.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path dir = path.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidInput(tmp.string() + ": cannot open for writing");
        out << content;
        if (!out.flush()) throw InvalidInput(tmp.string() + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Model checkpoints: versioned JSON with shapes, parameters, vocabulary, and
// the frozen cost-embedding snapshot. Loading validates shape integrity.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "emolab-checkpoint";

inline void save_checkpoint(const std::string& path, const ToyLm& model,
                            const UnitEmbeddings& frozen) {
    const ToyLm::Config& cfg = model.config();
    if (frozen.vocab() != cfg.vocab.size || frozen.dim() != cfg.embed_dim) {
        throw DimensionError("save_checkpoint: frozen embeddings are " +
                             std::to_string(frozen.vocab()) + "x" + std::to_string(frozen.dim()) +
                             ", model expects " + std::to_string(cfg.vocab.size) + "x" +
                             std::to_string(cfg.embed_dim));
    }
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["config"] = {{"vocab_size", cfg.vocab.size}, {"pad_id", cfg.vocab.pad_id},
                   {"bos_id", cfg.vocab.bos_id},   {"embed_dim", cfg.embed_dim},
                   {"window", cfg.window},         {"hidden_dim", cfg.hidden_dim}};
    j["params"] = std::vector<double>(model.params().begin(), model.params().end());
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(frozen.vocab()) * frozen.dim());
    for (int r = 0; r < frozen.vocab(); ++r) {
        const auto row = frozen.row(r);
        flat.insert(flat.end(), row.begin(), row.end());
    }
    j["frozen_embeddings"] = std::move(flat);
    write_text_atomic(path, j.dump());
}

struct LoadedCheckpoint {
    ToyLm model;
    std::shared_ptr<const UnitEmbeddings> frozen_embeddings;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput(path + ": cannot open checkpoint");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(path + ": checkpoint is not valid JSON (" + e.what() + ")");
    }
    try {
        if (j.at("format") != kCheckpointFormat) {
            throw InvalidInput(path + ": not an emolab checkpoint");
        }
        if (j.at("version") != kCheckpointVersion) {
            throw InvalidInput(path + ": unsupported checkpoint version");
        }
        const auto& jc = j.at("config");
        ToyLm::Config cfg;
        cfg.vocab.size = jc.at("vocab_size").get<int>();
        cfg.vocab.pad_id = jc.at("pad_id").get<int>();
        cfg.vocab.bos_id = jc.at("bos_id").get<int>();
        cfg.embed_dim = jc.at("embed_dim").get<int>();
        cfg.window = jc.at("window").get<int>();
        cfg.hidden_dim = jc.at("hidden_dim").get<int>();

        ToyLm model(cfg, /*init_seed=*/0);
        const auto params = j.at("params").get<std::vector<double>>();
        if (static_cast<int>(params.size()) != model.param_count()) {
            throw InvalidInput(path + ": checkpoint holds " + std::to_string(params.size()) +
                               " parameters, model shape needs " +
                               std::to_string(model.param_count()));
        }
        std::copy(params.begin(), params.end(), model.params().begin());

        const auto flat = j.at("frozen_embeddings").get<std::vector<double>>();
        const size_t expected = static_cast<size_t>(cfg.vocab.size) * cfg.embed_dim;
        if (flat.size() != expected) {
            throw InvalidInput(path + ": frozen embeddings hold " + std::to_string(flat.size()) +
                               " values, expected " + std::to_string(expected));
        }
        Matrix rows(cfg.vocab.size, cfg.embed_dim);
        for (int r = 0; r < cfg.vocab.size; ++r) {
            for (int c = 0; c < cfg.embed_dim; ++c) {
                rows(r, c) = flat[static_cast<size_t>(r) * cfg.embed_dim + c];
            }
        }
        return LoadedCheckpoint{std::move(model),
                                std::make_shared<UnitEmbeddings>(std::move(rows))};
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(path + ": malformed checkpoint (" + e.what() + ")");
    }
}

}  // namespace emo

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foqus/dynamics.hpp"

namespace foqus {

inline constexpr double kDefaultBeta = 0.1;

struct TransitionScores {
    int forget = 0;   // epochs t >= 2 with c[t-1] = 1, c[t] = 0
    int persist = 0;  // epochs t >= 2 with c[t-1] = 0, c[t] = 0
};

struct QualityScore {
    double l_accum = 0.0;
    int l_count = 0;
    double s_quality = 0.0;
};

struct AuxMetrics {
    double entropy = 0.0;
    double margin = 0.0;
    double confidence = 0.0;
    double grand = 0.0;

    bool operator==(const AuxMetrics&) const = default;
};

/// Which terms of the combined score are kept; excluded terms count as zero.
struct ScoreTerms {
    bool forget = true;
    bool persist = true;
    bool quality = true;

    bool any() const noexcept { return forget || persist || quality; }
    /// "forget+persist+quality" style label.
    std::string name() const;
    static ScoreTerms parse(std::string_view s);
    bool operator==(const ScoreTerms&) const = default;
};

/// The 7 non-empty term subsets: singles, pairs, then all three.
std::vector<ScoreTerms> all_term_combinations();

TransitionScores transition_scores(std::span<const std::uint8_t> bits);

/// l_accum = sum of losses, l_count = sum of bits,
/// s_quality = l_count/T - beta * l_accum/T.
QualityScore quality_score(std::span<const double> losses, std::span<const std::uint8_t> bits, double beta);

/// forget/(T-1) + persist/(T-1) + quality.
double foqus_score(int forget, int persist, double quality, int T, ScoreTerms terms = {});

/// Entropy, top-two margin, max probability and the norm of the cross-entropy
/// gradient w.r.t. the final dense layer, |p - onehot(label)| * |[h; 1]|.
AuxMetrics aux_metrics(std::span<const double> probs, std::span<const double> embedding, int label);

struct ScoreRow {
    std::int64_t sample_id = 0;
    int label = 0;
    int snr_db = 0;
    int s_forget = 0;
    int s_persist = 0;
    double l_accum = 0.0;
    int l_count = 0;
    double s_quality = 0.0;
    double s_foqus = 0.0;
    AuxMetrics aux;

    bool operator==(const ScoreRow&) const = default;
};

struct ScoreMeta {
    int T = 0;
    int C = 0;
    double beta = kDefaultBeta;
    ScoreTerms terms;
    std::uint64_t trajectory_digest = 0;
    std::uint64_t dataset_digest = 0;

    bool operator==(const ScoreMeta&) const = default;
};

struct ScoreTable {
    ScoreMeta meta;
    std::vector<ScoreRow> rows;  // ascending sample_id

    std::uint64_t digest() const;
    bool operator==(const ScoreTable&) const = default;
};

struct ScoreOptions {
    double beta = kDefaultBeta;
    ScoreTerms terms;
    /// When set, the store must have been recorded on this dataset.
    std::optional<std::uint64_t> dataset_digest;
};

ScoreTable score_dataset(const TrajectoryStore& store, const ScoreOptions& opts = {});

void write_scores(std::ostream& out, const ScoreTable& t);
ScoreTable parse_scores(const std::vector<std::string>& lines, const std::string& where = "<scores>");
void save_scores(const std::filesystem::path& path, const ScoreTable& t, bool force = false);
ScoreTable load_scores(const std::filesystem::path& path);

}  // namespace foqus

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foqus/dynamics.hpp"
#include "foqus/scoring.hpp"

namespace foqus {

enum class Method { foqus, uniform, forgetting, grand, entropy, margin, least_confidence, herding, kcenter };

std::string_view method_name(Method m);
Method parse_method(std::string_view s);
/// All nine methods, foqus first.
std::vector<Method> all_methods();
/// herding and kcenter read embeddings from the trajectory store.
bool needs_embeddings(Method m);

using TierProportions = std::array<double, 3>;

struct SelectionConfig {
    Method method = Method::foqus;
    double rate = 0.1;
    TierProportions tiers{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    bool class_balanced = true;
    bool snr_stratified = false;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SelectionConfig&) const = default;
};

/// Parses "p1,p2,p3".
TierProportions parse_tiers(std::string_view s);

/// Splits `total` into integer parts proportional to `weights` (largest
/// remainder; equal remainders go to the lower index).
std::vector<int> apportion(int total, std::span<const double> weights);

/// Sizes of three contiguous rank tiers over n items; remainders go to the
/// earlier tiers.
std::array<int, 3> tier_sizes(int n);

/// One independently sampled pool: a class, or a (class, SNR) cell in
/// SNR-stratified mode. label / snr_db are absent when not partitioned on them.
struct GroupDraw {
    std::optional<int> label;
    std::optional<int> snr_db;
    int pool = 0;
    int budget = 0;
    std::array<int, 3> tier_sizes{};   // foqus only
    std::array<int, 3> tier_quotas{};  // foqus only
    std::array<int, 3> tier_draws{};   // foqus only, after spilling

    bool operator==(const GroupDraw&) const = default;
};

struct CoresetManifest {
    SelectionConfig config;
    std::uint64_t scores_digest = 0;
    std::optional<std::uint64_t> trajectory_digest;
    std::uint64_t dataset_digest = 0;
    int pool_size = 0;
    std::vector<GroupDraw> groups;

    bool operator==(const CoresetManifest&) const = default;
};

struct Coreset {
    std::vector<std::int64_t> ids;  // ascending
    CoresetManifest manifest;

    bool operator==(const Coreset&) const = default;
};

/// Dispatches on cfg.method. `store` is required for herding and kcenter and
/// must be the store the scores were computed from.
Coreset select_coreset(const ScoreTable& scores, const TrajectoryStore* store, const SelectionConfig& cfg);

/// FoQuS: rank each group by (s_foqus desc, sample_id asc), cut into three
/// equal tiers, draw the tier quotas at random without replacement. A tier
/// that is too small passes its deficit to the next lower tier, wrapping.
Coreset tiered_select(const ScoreTable& scores, const SelectionConfig& cfg);
Coreset uniform_select(const ScoreTable& scores, const SelectionConfig& cfg);

enum class TopkMetric { forget, grand };
Coreset topk_select(const ScoreTable& scores, TopkMetric metric, const SelectionConfig& cfg);

enum class Uncertainty { entropy, margin, least_confidence };
Coreset uncertainty_select(const ScoreTable& scores, Uncertainty kind, const SelectionConfig& cfg);

enum class Geometry { herding, kcenter };
Coreset geometry_select(const ScoreTable& scores, const TrajectoryStore& store, Geometry kind,
                        const SelectionConfig& cfg);

// Meta line (the manifest) followed by one sample_id per line.
void write_coreset(std::ostream& out, const Coreset& c);
Coreset parse_coreset(const std::vector<std::string>& lines, const std::string& where = "<coreset>");
void save_coreset(const std::filesystem::path& path, const Coreset& c, bool force = false);
Coreset load_coreset(const std::filesystem::path& path);

}  // namespace foqus

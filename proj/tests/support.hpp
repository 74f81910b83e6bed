#pragma once

// Test-only generators and independent oracles. Nothing here calls the code
// it is used to check.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "foqus/dynamics.hpp"
#include "foqus/scoring.hpp"
#include "foqus/selection.hpp"

namespace foqus::testing {

/// Random but valid trajectory store. Bit densities vary per record so that
/// all-zero, all-one and mixed histories appear.
TrajectoryStore random_store(std::mt19937_64& rng, int n, int T, int C = 6, int E = 8);

/// Same, with an explicit class for every record.
TrajectoryStore random_store_with_labels(std::mt19937_64& rng, const std::vector<int>& labels, int T, int C, int E,
                                         const std::vector<int>& snrs = {});

struct BruteRow {
    int forget = 0;
    int persist = 0;
    double l_accum = 0.0;
    int l_count = 0;
    double quality = 0.0;
    double foqus = 0.0;
};

/// Re-derives every score from raw bits and losses by direct pairwise scans.
BruteRow brute_force_score(const std::vector<std::uint8_t>& bits, const std::vector<double>& losses, double beta);

/// Largest-remainder apportionment of `total` over integer weights, computed
/// exactly in integers.
std::vector<int> exact_apportion(int total, const std::vector<long long>& weights);

/// Per-class budgets as the selectors must compute them: round(rate * N)
/// split equally across the classes present.
std::map<int, int> expected_class_budgets(const ScoreTable& t, double rate);

/// Sort-and-slice reference for the ranked selectors (every method except
/// foqus, uniform, herding and kcenter).
std::vector<std::int64_t> ranking_oracle(const ScoreTable& t, Method m, double rate);

/// Per-class count of ids in a coreset.
std::map<int, int> class_counts(const ScoreTable& t, const std::vector<std::int64_t>& ids);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace foqus::testing

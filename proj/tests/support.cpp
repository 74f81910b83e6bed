#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unistd.h>

namespace foqus::testing {

TrajectoryStore random_store_with_labels(std::mt19937_64& rng, const std::vector<int>& labels, int T, int C, int E,
                                         const std::vector<int>& snrs)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    TrajectoryStore s;
    s.meta = {T, C, E, rng(), rng(), rng()};
    for (std::size_t k = 0; k < labels.size(); ++k) {
        TrajectoryRecord r;
        r.sample_id = static_cast<std::int64_t>(k);
        r.label = labels[k];
        r.snr_db = snrs.empty() ? 18 : snrs[k];
        const double density = std::vector<double>{0.0, 1.0, 0.5, unit(rng)}[rng() % 4];
        for (int t = 0; t < T; ++t) {
            r.bits.push_back(unit(rng) < density ? 1 : 0);
            r.losses.push_back(rng() % 10 == 0 ? 0.0 : expo(rng));
        }
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            r.final_probs.push_back(rng() % 5 == 0 ? 0.0 : expo(rng));
            sum += r.final_probs.back();
        }
        if (sum == 0.0) {
            r.final_probs[static_cast<std::size_t>(r.label)] = 1.0;
            sum = 1.0;
        }
        for (auto& p : r.final_probs)
            p /= sum;
        for (int e = 0; e < E; ++e)
            r.final_embedding.push_back(gauss(rng));
        s.records.push_back(std::move(r));
    }
    return s;
}

TrajectoryStore random_store(std::mt19937_64& rng, int n, int T, int C, int E)
{
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels)
        l = static_cast<int>(rng() % static_cast<std::uint64_t>(C));
    return random_store_with_labels(rng, labels, T, C, E);
}

BruteRow brute_force_score(const std::vector<std::uint8_t>& bits, const std::vector<double>& losses, double beta)
{
    const int T = static_cast<int>(bits.size());
    BruteRow r;
    // Epochs are numbered 1..T; pair (t-1, t) for t = 2..T.
    for (int t = 2; t <= T; ++t) {
        const bool prev = bits[static_cast<std::size_t>(t - 2)] == 1;
        const bool cur = bits[static_cast<std::size_t>(t - 1)] == 1;
        if (prev && !cur)
            r.forget += 1;
        if (!prev && !cur)
            r.persist += 1;
    }
    for (int t = 1; t <= T; ++t) {
        r.l_accum = r.l_accum + losses[static_cast<std::size_t>(t - 1)];
        r.l_count = r.l_count + (bits[static_cast<std::size_t>(t - 1)] == 1 ? 1 : 0);
    }
    r.quality = double(r.l_count) / double(T) - beta * r.l_accum / double(T);
    r.foqus = double(r.forget) / double(T - 1) + double(r.persist) / double(T - 1) + r.quality;
    return r;
}

std::vector<int> exact_apportion(int total, const std::vector<long long>& weights)
{
    const long long W = std::accumulate(weights.begin(), weights.end(), 0LL);
    std::vector<int> out(weights.size());
    std::vector<long long> rem(weights.size());
    int given = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        out[k] = static_cast<int>(total * weights[k] / W);
        rem[k] = total * weights[k] % W;
        given += out[k];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rem[a] != rem[b] ? rem[a] > rem[b] : a < b;
    });
    for (std::size_t k = 0; given < total; ++k, ++given)
        ++out[order[k]];
    return out;
}

std::map<int, int> expected_class_budgets(const ScoreTable& t, double rate)
{
    std::map<int, int> budgets;
    for (const auto& r : t.rows)
        budgets[r.label] = 0;
    const int total = static_cast<int>(std::llround(rate * static_cast<double>(t.rows.size())));
    const auto shares = exact_apportion(total, std::vector<long long>(budgets.size(), 1));
    std::size_t k = 0;
    for (auto& [label, b] : budgets)
        b = shares[k++];
    return budgets;
}

std::vector<std::int64_t> ranking_oracle(const ScoreTable& t, Method m, double rate)
{
    // Key where a smaller value is selected first.
    auto key = [m](const ScoreRow& r) -> double {
        switch (m) {
        case Method::forgetting: return -static_cast<double>(r.s_forget);
        case Method::grand: return -r.aux.grand;
        case Method::entropy: return -r.aux.entropy;
        case Method::margin: return r.aux.margin;
        case Method::least_confidence: return r.aux.confidence;
        default: throw std::invalid_argument("ranking_oracle: not a ranked method");
        }
    };
    std::vector<std::int64_t> out;
    for (const auto& [label, budget] : expected_class_budgets(t, rate)) {
        std::vector<std::pair<double, std::int64_t>> pool;
        for (const auto& r : t.rows)
            if (r.label == label)
                pool.emplace_back(key(r), r.sample_id);
        std::sort(pool.begin(), pool.end());
        for (int k = 0; k < budget; ++k)
            out.push_back(pool[static_cast<std::size_t>(k)].second);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::map<int, int> class_counts(const ScoreTable& t, const std::vector<std::int64_t>& ids)
{
    std::map<std::int64_t, int> label_of;
    for (const auto& r : t.rows)
        label_of[r.sample_id] = r.label;
    std::map<int, int> counts;
    for (const auto& r : t.rows)
        counts[r.label] = 0;
    for (auto id : ids)
        ++counts.at(label_of.at(id));
    return counts;
}

TempDir::TempDir()
{
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("foqus-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir()
{
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

}  // namespace foqus::testing

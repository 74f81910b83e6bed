#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "foqus/selection.hpp"
#include "foqus/textio.hpp"
#include "support.hpp"

using namespace foqus;

namespace {

ScoreRow row(std::int64_t id, int label, double foqus, int snr = 18)
{
    ScoreRow r;
    r.sample_id = id;
    r.label = label;
    r.snr_db = snr;
    r.s_foqus = foqus;
    r.aux.confidence = 0.5;
    return r;
}

ScoreTable table_of(std::vector<ScoreRow> rows, int C)
{
    ScoreTable t;
    t.meta.T = 5;
    t.meta.C = C;
    t.rows = std::move(rows);
    return t;
}

SelectionConfig config(Method m, double rate, std::uint64_t seed = 1)
{
    SelectionConfig c;
    c.method = m;
    c.rate = rate;
    c.seed = seed;
    return c;
}

/// Scores for `per_class` samples in each of C classes, from a random store.
struct Fixture {
    TrajectoryStore store;
    ScoreTable scores;
};

Fixture random_fixture(std::mt19937_64& rng, int C, int per_class, int T = 10, int E = 4,
                       const std::vector<int>& snrs = {})
{
    std::vector<int> labels;
    for (int k = 0; k < C * per_class; ++k)
        labels.push_back(k % C);
    Fixture f;
    f.store = testing::random_store_with_labels(rng, labels, T, C, E, snrs);
    f.scores = score_dataset(f.store);
    return f;
}

void check_subset(const ScoreTable& t, const Coreset& c)
{
    std::set<std::int64_t> all;
    for (const auto& r : t.rows)
        all.insert(r.sample_id);
    CHECK(std::is_sorted(c.ids.begin(), c.ids.end()));
    CHECK(std::adjacent_find(c.ids.begin(), c.ids.end()) == c.ids.end());
    for (auto id : c.ids)
        CHECK(all.count(id) == 1);
}

}  // namespace

TEST_CASE("method names")
{
    CHECK(all_methods().size() == 9);
    CHECK(all_methods().front() == Method::foqus);
    for (auto m : all_methods())
        CHECK(parse_method(method_name(m)) == m);
    CHECK(method_name(Method::least_confidence) == "least_confidence");
    CHECK_THROWS_AS(parse_method("cal"), std::invalid_argument);
    CHECK(needs_embeddings(Method::herding));
    CHECK(needs_embeddings(Method::kcenter));
    CHECK_FALSE(needs_embeddings(Method::foqus));
}

TEST_CASE("selection config validation")
{
    CHECK_NOTHROW(config(Method::foqus, 1.0).validate());
    CHECK_THROWS_WITH_AS(config(Method::foqus, 0.0).validate(), "rate must be in (0,1]", std::invalid_argument);
    CHECK_THROWS_AS(config(Method::foqus, 1.5).validate(), std::invalid_argument);
    CHECK_THROWS_AS(config(Method::foqus, std::nan("")).validate(), std::invalid_argument);
    auto c = config(Method::foqus, 0.1);
    c.tiers = {0.5, 0.5, 0.1};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.tiers = {0.5, 0.5 + 1e-12, -1e-12};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.tiers = {0.2, 0.3, 0.5 + 1e-12};
    CHECK_NOTHROW(c.validate());

    CHECK(parse_tiers("0.5,0.25,0.25") == TierProportions{0.5, 0.25, 0.25});
    CHECK_THROWS_AS(parse_tiers("0.5,0.5"), std::invalid_argument);
    CHECK_THROWS_AS(parse_tiers("a,b,c"), std::invalid_argument);
}

TEST_CASE("apportionment agrees with an exact integer oracle")
{
    CHECK(apportion(48, std::vector<double>(6, 1.0)) == std::vector<int>(6, 8));
    CHECK(apportion(8, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}) == std::vector<int>{3, 3, 2});
    CHECK(apportion(10, std::vector<double>{1.0, 1.0, 1.0, 1.0}) == std::vector<int>{3, 3, 2, 2});
    CHECK(apportion(7, std::vector<double>{0.0, 1.0}) == std::vector<int>{0, 7});
    CHECK_THROWS_AS(apportion(3, std::vector<double>{0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(apportion(-1, std::vector<double>{1.0}), std::invalid_argument);

    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5000; ++trial) {
        const auto parts = 1 + rng() % 8;
        std::vector<long long> w(parts);
        long long sum = 0;
        for (auto& x : w) {
            x = static_cast<long long>(rng() % 25);
            sum += x;
        }
        if (sum == 0)
            w[0] = sum = 1;
        const int total = static_cast<int>(rng() % 1000);
        const std::vector<double> wd(w.begin(), w.end());
        const auto got = apportion(total, wd);
        REQUIRE(got == testing::exact_apportion(total, w));
    }
}

TEST_CASE("tier sizes")
{
    CHECK(tier_sizes(9) == std::array<int, 3>{3, 3, 3});
    CHECK(tier_sizes(10) == std::array<int, 3>{4, 3, 3});
    CHECK(tier_sizes(11) == std::array<int, 3>{4, 4, 3});
    CHECK(tier_sizes(2) == std::array<int, 3>{1, 1, 0});
    CHECK(tier_sizes(0) == std::array<int, 3>{0, 0, 0});
}

TEST_CASE("tiered selection examples")
{
    SUBCASE("full rate returns the whole pool for any proportions")
    {
        std::mt19937_64 rng(2);
        const auto f = random_fixture(rng, 6, 17);
        for (TierProportions p : {TierProportions{1, 0, 0}, TierProportions{0.2, 0.3, 0.5}}) {
            auto c = config(Method::foqus, 1.0);
            c.tiers = p;
            const auto cs = tiered_select(f.scores, c);
            CHECK(cs.ids.size() == f.scores.rows.size());
        }
    }
    SUBCASE("top tier only picks the highest scores")
    {
        std::vector<ScoreRow> rows;
        const std::vector<double> s{0.3, 0.9, 0.1, 0.5, 0.7, 0.2, 0.8, 0.4, 0.6};
        for (std::size_t k = 0; k < s.size(); ++k)
            rows.push_back(row(static_cast<std::int64_t>(k), 0, s[k]));
        auto c = config(Method::foqus, 3.0 / 9.0);
        c.tiers = {1.0, 0.0, 0.0};
        const auto cs = tiered_select(table_of(rows, 1), c);
        CHECK(cs.ids == std::vector<std::int64_t>{1, 4, 6});
    }
    SUBCASE("six classes of 160 at 5 percent")
    {
        std::mt19937_64 rng(3);
        const auto f = random_fixture(rng, 6, 160);
        const auto cs = tiered_select(f.scores, config(Method::foqus, 0.05));
        CHECK(cs.ids.size() == 48);
        for (const auto& [label, n] : testing::class_counts(f.scores, cs.ids))
            CHECK(n == 8);
        REQUIRE(cs.manifest.groups.size() == 6);
        const auto quotas = testing::exact_apportion(8, {1, 1, 1});
        for (const auto& g : cs.manifest.groups) {
            CHECK(g.budget == 8);
            CHECK(g.tier_sizes == std::array<int, 3>{54, 53, 53});
            CHECK(g.tier_draws == std::array<int, 3>{quotas[0], quotas[1], quotas[2]});
            CHECK(g.tier_draws == std::array<int, 3>{3, 3, 2});
        }
    }
}

TEST_CASE("tier draws come from the right rank ranges")
{
    std::mt19937_64 rng(4);
    const auto f = random_fixture(rng, 3, 31);
    auto c = config(Method::foqus, 0.3);
    c.tiers = {0.5, 0.0, 0.5};
    const auto cs = tiered_select(f.scores, c);
    std::set<std::int64_t> chosen(cs.ids.begin(), cs.ids.end());
    for (const auto& g : cs.manifest.groups) {
        std::vector<ScoreRow> pool;
        for (const auto& r : f.scores.rows)
            if (r.label == *g.label)
                pool.push_back(r);
        std::sort(pool.begin(), pool.end(), [](const ScoreRow& a, const ScoreRow& b) {
            return a.s_foqus != b.s_foqus ? a.s_foqus > b.s_foqus : a.sample_id < b.sample_id;
        });
        const auto sizes = tier_sizes(static_cast<int>(pool.size()));
        CHECK(sizes[0] + sizes[1] + sizes[2] == static_cast<int>(pool.size()));
        CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
        CHECK(g.tier_sizes == sizes);
        std::array<int, 3> seen{};
        int begin = 0;
        for (std::size_t t = 0; t < 3; ++t) {
            for (int k = begin; k < begin + sizes[t]; ++k)
                seen[t] += static_cast<int>(chosen.count(pool[static_cast<std::size_t>(k)].sample_id));
            begin += sizes[t];
        }
        CHECK(seen == g.tier_draws);
        CHECK(seen[1] == 0);
    }
}

TEST_CASE("under-full tiers spill their deficit")
{
    std::vector<ScoreRow> rows;
    for (int k = 0; k < 4; ++k)
        rows.push_back(row(k, 0, 1.0 - 0.1 * k));  // tiers {0,1}, {2}, {3}
    const auto t = table_of(rows, 1);

    auto c = config(Method::foqus, 0.5);
    c.tiers = {0.0, 1.0, 0.0};
    auto cs = tiered_select(t, c);
    CHECK(cs.manifest.groups[0].tier_quotas == std::array<int, 3>{0, 2, 0});
    CHECK(cs.manifest.groups[0].tier_draws == std::array<int, 3>{0, 1, 1});
    CHECK(cs.ids == std::vector<std::int64_t>{2, 3});

    c.tiers = {0.0, 0.0, 1.0};
    cs = tiered_select(t, c);
    CHECK(cs.manifest.groups[0].tier_draws == std::array<int, 3>{1, 0, 1});
    CHECK(cs.ids.size() == 2);
    CHECK(std::count(cs.ids.begin(), cs.ids.end(), 3) == 1);
}

TEST_CASE("tiered selection depends only on ranks")
{
    std::mt19937_64 rng(5);
    const auto f = random_fixture(rng, 6, 40);
    auto transformed = f.scores;
    for (auto& r : transformed.rows)
        r.s_foqus = std::exp(3.0 * r.s_foqus) + 7.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto c = config(Method::foqus, 0.2, seed);
        CHECK(tiered_select(f.scores, c).ids == tiered_select(transformed, c).ids);
    }
}

TEST_CASE("budget and class balance hold for every method")
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 40; ++trial) {
        const int C = 2 + static_cast<int>(rng() % 5);
        const int per_class = 5 + static_cast<int>(rng() % 30);
        const auto f = random_fixture(rng, C, per_class, 3 + static_cast<int>(rng() % 10));
        const int N = C * per_class;
        double rate = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        if (std::llround(rate * N) < C)
            rate = 1.0;
        for (auto m : all_methods()) {
            INFO("method " << method_name(m) << " rate " << rate << " N " << N);
            const auto cs = select_coreset(f.scores, &f.store, config(m, rate, rng()));
            CHECK(static_cast<long long>(cs.ids.size()) == std::llround(rate * N));
            check_subset(f.scores, cs);
            const auto counts = testing::class_counts(f.scores, cs.ids);
            int lo = N, hi = 0;
            for (const auto& [label, n] : counts) {
                lo = std::min(lo, n);
                hi = std::max(hi, n);
            }
            CHECK(hi - lo <= 1);
            CHECK(counts == testing::expected_class_budgets(f.scores, rate));
        }
    }
}

TEST_CASE("insufficient budgets are rejected")
{
    std::mt19937_64 rng(7);
    const auto f = random_fixture(rng, 6, 10);
    for (auto m : all_methods())
        CHECK_THROWS_AS(select_coreset(f.scores, &f.store, config(m, 0.05)), std::invalid_argument);
    auto c = config(Method::uniform, 0.005);
    c.class_balanced = false;
    CHECK_THROWS_AS(uniform_select(f.scores, c), std::invalid_argument);
    CHECK_THROWS_AS(select_coreset(f.scores, nullptr, config(Method::herding, 0.5)), std::invalid_argument);
    CHECK_THROWS_AS(tiered_select(ScoreTable{}, config(Method::foqus, 0.5)), std::invalid_argument);
}

TEST_CASE("stochastic selectors are deterministic per seed")
{
    std::mt19937_64 rng(8);
    const auto f = random_fixture(rng, 6, 50);
    for (auto m : {Method::foqus, Method::uniform}) {
        const auto a = select_coreset(f.scores, nullptr, config(m, 0.1, 11));
        CHECK(a == select_coreset(f.scores, nullptr, config(m, 0.1, 11)));
        int differ = 0;
        for (std::uint64_t s = 100; s < 120; ++s)
            differ += select_coreset(f.scores, nullptr, config(m, 0.1, s)).ids != a.ids ? 1 : 0;
        CHECK(differ == 20);
    }
}

TEST_CASE("uniform selection frequencies are flat")
{
    std::vector<ScoreRow> rows;
    for (int k = 0; k < 120; ++k)
        rows.push_back(row(k, k % 6, 0.0));
    const auto t = table_of(rows, 6);
    std::vector<int> hits(120, 0);
    for (std::uint64_t seed = 0; seed < 2000; ++seed)
        for (auto id : uniform_select(t, config(Method::uniform, 0.1, seed)).ids)
            ++hits[static_cast<std::size_t>(id)];
    for (int h : hits)
        CHECK(std::abs(h / 2000.0 - 0.1) <= 0.03);
}

TEST_CASE("top-k selection")
{
    SUBCASE("ties fall to the lowest ids")
    {
        std::vector<ScoreRow> rows;
        for (int k = 0; k < 30; ++k)
            rows.push_back(row(k, k % 3, 0.0));
        const auto cs = topk_select(table_of(rows, 3), TopkMetric::forget, config(Method::forgetting, 0.2));
        CHECK(cs.ids == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5});
    }
    SUBCASE("direct ranking")
    {
        std::vector<ScoreRow> rows;
        const std::vector<int> f{5, 0, 3, 1};
        for (int k = 0; k < 4; ++k) {
            rows.push_back(row(k + 10, 0, 0.0));
            rows.back().s_forget = f[static_cast<std::size_t>(k)];
        }
        const auto cs = topk_select(table_of(rows, 1), TopkMetric::forget, config(Method::forgetting, 0.5));
        CHECK(cs.ids == std::vector<std::int64_t>{10, 12});
    }
}

TEST_CASE("ranked selectors match a sort-and-slice oracle")
{
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const auto f = random_fixture(rng, 6, 50);
        for (auto m : {Method::forgetting, Method::grand, Method::entropy, Method::margin, Method::least_confidence})
            for (double rate : {0.05, 0.1, 0.3}) {
                INFO(method_name(m) << " " << rate);
                CHECK(select_coreset(f.scores, nullptr, config(m, rate)).ids ==
                      testing::ranking_oracle(f.scores, m, rate));
            }
    }
}

TEST_CASE("uncertainty extremes")
{
    std::vector<ScoreRow> rows;
    for (int k = 0; k < 6; ++k) {
        auto r = row(k, 0, 0.0);
        const bool confident = k < 3;
        const auto a = confident ? aux_metrics(std::vector<double>{1.0, 0.0, 0.0}, std::vector<double>{1.0}, 0)
                                 : aux_metrics(std::vector<double>(3, 1.0 / 3.0), std::vector<double>{1.0}, 0);
        r.aux = a;
        rows.push_back(r);
    }
    const auto t = table_of(rows, 1);
    for (auto u : {Uncertainty::entropy, Uncertainty::margin, Uncertainty::least_confidence})
        CHECK(uncertainty_select(t, u, config(Method::entropy, 0.5)).ids == std::vector<std::int64_t>{3, 4, 5});
}

TEST_CASE("geometry selectors")
{
    auto one_d = [](const std::vector<double>& xs) {
        std::vector<int> labels(xs.size(), 0);
        std::mt19937_64 rng(1);
        Fixture f;
        f.store = testing::random_store_with_labels(rng, labels, 4, 2, 1);
        for (std::size_t k = 0; k < xs.size(); ++k)
            f.store.records[k].final_embedding = {xs[k]};
        f.scores = score_dataset(f.store);
        return f;
    };
    SUBCASE("k-center on collinear points")
    {
        const auto f = one_d({0.0, 1.0, 10.0});
        const auto cs = geometry_select(f.scores, f.store, Geometry::kcenter, config(Method::kcenter, 2.0 / 3.0));
        CHECK(cs.ids == std::vector<std::int64_t>{f.store.records[1].sample_id, f.store.records[2].sample_id});
    }
    SUBCASE("single-step herding picks the mean")
    {
        const auto f = one_d({-1.0, 0.0, 1.0});
        const auto cs = geometry_select(f.scores, f.store, Geometry::herding, config(Method::herding, 1.0 / 3.0));
        CHECK(cs.ids == std::vector<std::int64_t>{f.store.records[1].sample_id});
    }
    SUBCASE("herding keeps the running mean close")
    {
        const auto f = one_d({-3.0, -1.0, 0.5, 2.0, 5.0, 0.0});
        // mean 0.5833: first 0.5; then the x minimizing |mu - (0.5 + x)/2| is 0.0 (mean 0.25) vs 2.0 (1.25)
        const auto cs = geometry_select(f.scores, f.store, Geometry::herding, config(Method::herding, 2.0 / 6.0));
        CHECK(cs.ids == std::vector<std::int64_t>{f.store.records[2].sample_id, f.store.records[5].sample_id});
    }
    SUBCASE("full budget returns every id")
    {
        std::mt19937_64 rng(10);
        const auto f = random_fixture(rng, 3, 12);
        for (auto g : {Geometry::herding, Geometry::kcenter})
            CHECK(geometry_select(f.scores, f.store, g, config(Method::herding, 1.0)).ids.size() == 36);
    }
    SUBCASE("mismatched store is rejected")
    {
        std::mt19937_64 rng(11);
        const auto f = random_fixture(rng, 3, 12);
        const auto other = random_fixture(rng, 3, 12);
        CHECK_THROWS_WITH_AS(geometry_select(f.scores, other.store, Geometry::kcenter, config(Method::kcenter, 0.5)),
                             doctest::Contains("digest mismatch"), std::invalid_argument);
    }
}

TEST_CASE("SNR-stratified draws apportion each class over SNR bins")
{
    std::vector<int> snrs;
    for (int k = 0; k < 240; ++k)
        snrs.push_back((k / 6) % 4 == 0 ? 0 : 18);  // a quarter of each class at 0 dB
    std::mt19937_64 rng(12);
    const auto f = random_fixture(rng, 6, 40, 8, 4, snrs);
    auto c = config(Method::foqus, 0.2);
    c.snr_stratified = true;
    const auto cs = tiered_select(f.scores, c);
    CHECK(cs.ids.size() == 48);
    REQUIRE(cs.manifest.groups.size() == 12);
    for (const auto& g : cs.manifest.groups) {
        REQUIRE(g.snr_db.has_value());
        CHECK(g.budget == (*g.snr_db == 0 ? 2 : 6));
    }
}

TEST_CASE("coreset files round-trip")
{
    std::mt19937_64 rng(13);
    const auto f = random_fixture(rng, 6, 30);
    testing::TempDir dir;
    for (auto m : {Method::foqus, Method::kcenter, Method::margin}) {
        const auto cs = select_coreset(f.scores, &f.store, config(m, 0.2, 5));
        const auto path = dir / (std::string(method_name(m)) + ".coreset");
        save_coreset(path, cs);
        CHECK(load_coreset(path) == cs);
        CHECK_THROWS(save_coreset(path, cs));
    }
    const auto cs = select_coreset(f.scores, nullptr, config(Method::uniform, 0.2, 5));
    std::ostringstream out;
    write_coreset(out, cs);
    std::vector<std::string> lines;
    std::istringstream in(out.str());
    for (std::string l; std::getline(in, l);)
        lines.push_back(l);
    std::swap(lines[1], lines[2]);
    CHECK_THROWS_WITH_AS(parse_coreset(lines, "c"), doctest::Contains("strictly ascending"), FormatError);
    lines.pop_back();
    CHECK_THROWS_AS(parse_coreset(lines, "c"), FormatError);
}

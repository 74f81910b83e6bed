#include "foqus/selection.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "foqus/digest.hpp"
#include "foqus/rng.hpp"
#include "foqus/textio.hpp"

namespace foqus {

namespace {

constexpr std::uint64_t kAnyKey = std::numeric_limits<std::uint64_t>::max();

struct Group {
    GroupDraw draw;
    std::vector<std::size_t> rows;  // indices into ScoreTable::rows, ascending sample_id

    std::uint64_t seed(std::uint64_t base) const
    {
        const auto key = [](const std::optional<int>& v) {
            return v ? static_cast<std::uint64_t>(static_cast<std::int64_t>(*v)) : kAnyKey;
        };
        return derive_seed(base, {key(draw.label), key(draw.snr_db)});
    }
};

// Partitions the pool and assigns every group its budget.
std::vector<Group> plan_groups(const ScoreTable& scores, const SelectionConfig& cfg)
{
    cfg.validate();
    const auto N = scores.rows.size();
    if (N == 0)
        throw std::invalid_argument("insufficient samples: the score table is empty");
    const auto total = static_cast<int>(std::llround(cfg.rate * static_cast<double>(N)));

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t k = 0; k < N; ++k)
        by_class[cfg.class_balanced ? scores.rows[k].label : 0].push_back(k);
    if (cfg.class_balanced && total < static_cast<int>(by_class.size()))
        throw std::invalid_argument("budget " + std::to_string(total) + " is smaller than the number of classes (" +
                                    std::to_string(by_class.size()) + "); raise the rate");
    if (total < 1)
        throw std::invalid_argument("budget is 0; raise the rate");

    const std::vector<double> equal(by_class.size(), 1.0);
    const auto class_budget = apportion(total, equal);

    std::vector<Group> groups;
    std::size_t ci = 0;
    for (auto& [label, rows] : by_class) {
        const int budget = class_budget[ci++];
        std::optional<int> lab;
        if (cfg.class_balanced)
            lab = label;
        if (budget > static_cast<int>(rows.size()))
            throw std::invalid_argument("insufficient samples: " + (lab ? "class " + std::to_string(label) : "pool") +
                                        " has " + std::to_string(rows.size()) + " samples, budget " +
                                        std::to_string(budget));
        if (!cfg.snr_stratified) {
            Group g;
            g.draw.label = lab;
            g.draw.pool = static_cast<int>(rows.size());
            g.draw.budget = budget;
            g.rows = std::move(rows);
            groups.push_back(std::move(g));
            continue;
        }
        std::map<int, std::vector<std::size_t>> by_snr;
        for (auto k : rows)
            by_snr[scores.rows[k].snr_db].push_back(k);
        std::vector<double> sizes;
        for (const auto& [snr, r] : by_snr)
            sizes.push_back(static_cast<double>(r.size()));
        const auto snr_budget = apportion(budget, sizes);
        std::size_t si = 0;
        for (auto& [snr, r] : by_snr) {
            Group g;
            g.draw.label = lab;
            g.draw.snr_db = snr;
            g.draw.pool = static_cast<int>(r.size());
            g.draw.budget = snr_budget[si++];
            g.rows = std::move(r);
            groups.push_back(std::move(g));
        }
    }
    return groups;
}

// First `count` entries of a partial Fisher-Yates shuffle of `items`.
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> items, int count, Rng& rng)
{
    const auto n = static_cast<std::size_t>(count);
    for (std::size_t k = 0; k < n; ++k)
        std::swap(items[k], items[k + uniform_index(rng, items.size() - k)]);
    items.resize(n);
    return items;
}

Coreset assemble(const ScoreTable& scores, const SelectionConfig& cfg, std::vector<Group>& groups,
                 const std::function<std::vector<std::size_t>(Group&)>& pick)
{
    Coreset c;
    c.manifest.config = cfg;
    c.manifest.scores_digest = scores.digest();
    c.manifest.dataset_digest = scores.meta.dataset_digest;
    c.manifest.pool_size = static_cast<int>(scores.rows.size());
    for (auto& g : groups) {
        const auto chosen = pick(g);
        for (auto k : chosen)
            c.ids.push_back(scores.rows[k].sample_id);
        c.manifest.groups.push_back(g.draw);
    }
    std::sort(c.ids.begin(), c.ids.end());
    return c;
}

// Takes the budget from the front of the group ordered by `before`.
Coreset ranked_select(const ScoreTable& scores, const SelectionConfig& cfg,
                      const std::function<bool(const ScoreRow&, const ScoreRow&)>& before)
{
    auto groups = plan_groups(scores, cfg);
    return assemble(scores, cfg, groups, [&](Group& g) {
        auto order = g.rows;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const auto& ra = scores.rows[a];
            const auto& rb = scores.rows[b];
            if (before(ra, rb))
                return true;
            if (before(rb, ra))
                return false;
            return ra.sample_id < rb.sample_id;
        });
        order.resize(static_cast<std::size_t>(g.draw.budget));
        return order;
    });
}

double squared_distance(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

std::vector<std::size_t> herding(const std::vector<std::span<const double>>& x, int budget)
{
    const std::size_t E = x.front().size();
    std::vector<double> mu(E, 0.0), sum(E, 0.0), cand(E);
    for (const auto& v : x)
        for (std::size_t d = 0; d < E; ++d)
            mu[d] += v[d];
    for (auto& m : mu)
        m /= static_cast<double>(x.size());

    std::vector<bool> taken(x.size(), false);
    std::vector<std::size_t> out;
    for (int step = 0; step < budget; ++step) {
        const double inv = 1.0 / static_cast<double>(step + 1);
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (taken[k])
                continue;
            for (std::size_t d = 0; d < E; ++d)
                cand[d] = (sum[d] + x[k][d]) * inv;
            const double dist = squared_distance(mu, cand);
            if (dist < best_d) {
                best_d = dist;
                best = k;
            }
        }
        taken[best] = true;
        out.push_back(best);
        for (std::size_t d = 0; d < E; ++d)
            sum[d] += x[best][d];
    }
    return out;
}

std::vector<std::size_t> kcenter(const std::vector<std::span<const double>>& x, int budget)
{
    const std::size_t E = x.front().size();
    std::vector<double> mu(E, 0.0);
    for (const auto& v : x)
        for (std::size_t d = 0; d < E; ++d)
            mu[d] += v[d];
    for (auto& m : mu)
        m /= static_cast<double>(x.size());

    std::size_t first = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = squared_distance(x[k], mu);
        if (d < best) {
            best = d;
            first = k;
        }
    }
    std::vector<std::size_t> out{first};
    std::vector<double> nearest(x.size());
    for (std::size_t k = 0; k < x.size(); ++k)
        nearest[k] = squared_distance(x[k], x[first]);
    nearest[first] = -1.0;
    while (static_cast<int>(out.size()) < budget) {
        std::size_t next = 0;
        double far = -1.0;
        for (std::size_t k = 0; k < x.size(); ++k)
            if (nearest[k] > far) {
                far = nearest[k];
                next = k;
            }
        out.push_back(next);
        nearest[next] = -1.0;
        for (std::size_t k = 0; k < x.size(); ++k)
            if (nearest[k] >= 0.0)
                nearest[k] = std::min(nearest[k], squared_distance(x[k], x[next]));
    }
    return out;
}

}  // namespace

std::string_view method_name(Method m)
{
    switch (m) {
    case Method::foqus: return "foqus";
    case Method::uniform: return "uniform";
    case Method::forgetting: return "forgetting";
    case Method::grand: return "grand";
    case Method::entropy: return "entropy";
    case Method::margin: return "margin";
    case Method::least_confidence: return "least_confidence";
    case Method::herding: return "herding";
    case Method::kcenter: return "kcenter";
    }
    throw std::invalid_argument("unknown method");
}

Method parse_method(std::string_view s)
{
    for (auto m : all_methods())
        if (method_name(m) == s)
            return m;
    throw std::invalid_argument("unknown method '" + std::string(s) +
                                "' (expected foqus, uniform, forgetting, grand, entropy, margin, least_confidence, "
                                "herding or kcenter)");
}

std::vector<Method> all_methods()
{
    return {Method::foqus,  Method::uniform, Method::forgetting,       Method::grand,  Method::entropy,
            Method::margin, Method::least_confidence, Method::herding, Method::kcenter};
}

bool needs_embeddings(Method m) { return m == Method::herding || m == Method::kcenter; }

void SelectionConfig::validate() const
{
    if (!(rate > 0.0 && rate <= 1.0))
        throw std::invalid_argument("rate must be in (0,1]");
    double sum = 0.0;
    for (double p : tiers) {
        if (!std::isfinite(p) || p < 0.0)
            throw std::invalid_argument("tier proportions must be finite and >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("tier proportions must sum to 1");
}

TierProportions parse_tiers(std::string_view s)
{
    TierProportions t{};
    std::size_t start = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto end = k < 2 ? s.find(',', start) : s.size();
        if (end == std::string_view::npos)
            throw std::invalid_argument("tiers must be three comma-separated numbers, got '" + std::string(s) + "'");
        const std::string part(s.substr(start, end - start));
        std::size_t used = 0;
        try {
            t[k] = std::stod(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (part.empty() || used != part.size())
            throw std::invalid_argument("tiers must be three comma-separated numbers, got '" + std::string(s) + "'");
        start = end + 1;
    }
    return t;
}

std::vector<int> apportion(int total, std::span<const double> weights)
{
    if (total < 0)
        throw std::invalid_argument("apportion: negative total");
    if (weights.empty())
        throw std::invalid_argument("apportion: no parts");
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0)
            throw std::invalid_argument("apportion: weights must be finite and >= 0");
        sum += w;
    }
    if (!(sum > 0.0))
        throw std::invalid_argument("apportion: weights sum to 0");

    std::vector<int> out(weights.size());
    // Remainders are compared at 1e-9 resolution so that shares which are
    // equal in exact arithmetic tie (and fall to the lower index) despite
    // rounding in the quotient.
    std::vector<std::int64_t> rem(weights.size());
    int given = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double exact = static_cast<double>(total) * weights[k] / sum;
        out[k] = static_cast<int>(std::floor(exact));
        rem[k] = std::llround((exact - out[k]) * 1e9);
        given += out[k];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; given < total; ++k, ++given)
        ++out[order[k % order.size()]];
    return out;
}

std::array<int, 3> tier_sizes(int n)
{
    if (n < 0)
        throw std::invalid_argument("tier_sizes: negative count");
    std::array<int, 3> s{n / 3, n / 3, n / 3};
    for (int k = 0; k < n % 3; ++k)
        ++s[static_cast<std::size_t>(k)];
    return s;
}

Coreset tiered_select(const ScoreTable& scores, const SelectionConfig& cfg)
{
    auto groups = plan_groups(scores, cfg);
    return assemble(scores, cfg, groups, [&](Group& g) {
        auto ranked = g.rows;
        std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
            const auto& ra = scores.rows[a];
            const auto& rb = scores.rows[b];
            if (ra.s_foqus != rb.s_foqus)
                return ra.s_foqus > rb.s_foqus;
            return ra.sample_id < rb.sample_id;
        });
        auto& d = g.draw;
        d.tier_sizes = tier_sizes(d.pool);
        const auto quotas = apportion(d.budget, cfg.tiers);
        std::copy(quotas.begin(), quotas.end(), d.tier_quotas.begin());
        for (std::size_t t = 0; t < 3; ++t)
            d.tier_draws[t] = std::min(d.tier_quotas[t], d.tier_sizes[t]);
        for (std::size_t t = 0; t < 3; ++t) {
            int deficit = d.tier_quotas[t] - d.tier_draws[t];
            for (std::size_t step = 1; step < 3 && deficit > 0; ++step) {
                const std::size_t j = (t + step) % 3;
                const int take = std::min(deficit, d.tier_sizes[j] - d.tier_draws[j]);
                d.tier_draws[j] += take;
                deficit -= take;
            }
        }

        Rng rng(g.seed(cfg.seed));
        std::vector<std::size_t> out;
        std::size_t begin = 0;
        for (std::size_t t = 0; t < 3; ++t) {
            const auto end = begin + static_cast<std::size_t>(d.tier_sizes[t]);
            std::vector<std::size_t> tier(ranked.begin() + static_cast<std::ptrdiff_t>(begin),
                                          ranked.begin() + static_cast<std::ptrdiff_t>(end));
            for (auto k : draw_without_replacement(std::move(tier), d.tier_draws[t], rng))
                out.push_back(k);
            begin = end;
        }
        return out;
    });
}

Coreset uniform_select(const ScoreTable& scores, const SelectionConfig& cfg)
{
    auto groups = plan_groups(scores, cfg);
    return assemble(scores, cfg, groups, [&](Group& g) {
        Rng rng(g.seed(cfg.seed));
        return draw_without_replacement(g.rows, g.draw.budget, rng);
    });
}

Coreset topk_select(const ScoreTable& scores, TopkMetric metric, const SelectionConfig& cfg)
{
    if (metric == TopkMetric::forget)
        return ranked_select(scores, cfg, [](const ScoreRow& a, const ScoreRow& b) { return a.s_forget > b.s_forget; });
    return ranked_select(scores, cfg, [](const ScoreRow& a, const ScoreRow& b) { return a.aux.grand > b.aux.grand; });
}

Coreset uncertainty_select(const ScoreTable& scores, Uncertainty kind, const SelectionConfig& cfg)
{
    switch (kind) {
    case Uncertainty::entropy:
        return ranked_select(scores, cfg,
                             [](const ScoreRow& a, const ScoreRow& b) { return a.aux.entropy > b.aux.entropy; });
    case Uncertainty::margin:
        return ranked_select(scores, cfg,
                             [](const ScoreRow& a, const ScoreRow& b) { return a.aux.margin < b.aux.margin; });
    case Uncertainty::least_confidence:
        return ranked_select(scores, cfg, [](const ScoreRow& a, const ScoreRow& b) {
            return a.aux.confidence < b.aux.confidence;
        });
    }
    throw std::invalid_argument("unknown uncertainty kind");
}

Coreset geometry_select(const ScoreTable& scores, const TrajectoryStore& store, Geometry kind,
                        const SelectionConfig& cfg)
{
    if (store.digest() != scores.meta.trajectory_digest)
        throw std::invalid_argument("digest mismatch: the score table was not computed from this trajectory store");
    if (store.records.size() != scores.rows.size())
        throw std::invalid_argument("trajectory store and score table differ in size");
    if (store.meta.E < 1)
        throw std::invalid_argument("geometry selection needs non-empty embeddings");
    auto groups = plan_groups(scores, cfg);
    auto c = assemble(scores, cfg, groups, [&](Group& g) {
        std::vector<std::span<const double>> x;
        for (auto k : g.rows)
            x.emplace_back(store.records[k].final_embedding);
        const auto local = kind == Geometry::herding ? herding(x, g.draw.budget) : kcenter(x, g.draw.budget);
        std::vector<std::size_t> out;
        for (auto k : local)
            out.push_back(g.rows[k]);
        return out;
    });
    c.manifest.trajectory_digest = store.digest();
    return c;
}

Coreset select_coreset(const ScoreTable& scores, const TrajectoryStore* store, const SelectionConfig& cfg)
{
    switch (cfg.method) {
    case Method::foqus: return tiered_select(scores, cfg);
    case Method::uniform: return uniform_select(scores, cfg);
    case Method::forgetting: return topk_select(scores, TopkMetric::forget, cfg);
    case Method::grand: return topk_select(scores, TopkMetric::grand, cfg);
    case Method::entropy: return uncertainty_select(scores, Uncertainty::entropy, cfg);
    case Method::margin: return uncertainty_select(scores, Uncertainty::margin, cfg);
    case Method::least_confidence: return uncertainty_select(scores, Uncertainty::least_confidence, cfg);
    case Method::herding:
    case Method::kcenter:
        if (!store)
            throw std::invalid_argument(std::string(method_name(cfg.method)) + " needs the trajectory store");
        return geometry_select(scores, *store, cfg.method == Method::herding ? Geometry::herding : Geometry::kcenter,
                               cfg);
    }
    throw std::invalid_argument("unknown method");
}

void write_coreset(std::ostream& out, const Coreset& c)
{
    const auto& m = c.manifest;
    nlohmann::ordered_json meta;
    meta["format"] = "foqus-coreset";
    meta["version"] = 1;
    meta["method"] = std::string(method_name(m.config.method));
    meta["rate"] = m.config.rate;
    meta["seed"] = m.config.seed;
    meta["tiers"] = m.config.tiers;
    meta["class_balanced"] = m.config.class_balanced;
    meta["snr_stratified"] = m.config.snr_stratified;
    meta["scores_digest"] = to_hex(m.scores_digest);
    meta["trajectory_digest"] = m.trajectory_digest ? nlohmann::json(to_hex(*m.trajectory_digest)) : nullptr;
    meta["dataset_digest"] = to_hex(m.dataset_digest);
    meta["pool"] = m.pool_size;
    meta["size"] = c.ids.size();
    meta["groups"] = nlohmann::json::array();
    for (const auto& g : m.groups) {
        nlohmann::ordered_json j;
        j["label"] = g.label ? nlohmann::json(*g.label) : nullptr;
        j["snr_db"] = g.snr_db ? nlohmann::json(*g.snr_db) : nullptr;
        j["pool"] = g.pool;
        j["budget"] = g.budget;
        if (m.config.method == Method::foqus) {
            j["tier_sizes"] = g.tier_sizes;
            j["tier_quotas"] = g.tier_quotas;
            j["tier_draws"] = g.tier_draws;
        }
        meta["groups"].push_back(j);
    }
    out << meta.dump() << '\n';
    for (auto id : c.ids)
        out << id << '\n';
}

Coreset parse_coreset(const std::vector<std::string>& lines, const std::string& where)
{
    if (lines.empty())
        throw FormatError(where + ": empty file (missing manifest line)");
    LineContext ctx{where, 1};
    const auto meta = parse_json_line(lines[0], where, 1);
    ctx.only_keys(meta, {"format", "version", "method", "rate", "seed", "tiers", "class_balanced", "snr_stratified",
                         "scores_digest", "trajectory_digest", "dataset_digest", "pool", "size", "groups"});
    if (ctx.string(meta, "format") != "foqus-coreset")
        ctx.fail("not a coreset file");
    if (ctx.integer(meta, "version") != 1)
        ctx.fail("unsupported coreset version");

    Coreset c;
    auto& m = c.manifest;
    try {
        m.config.method = parse_method(ctx.string(meta, "method"));
    } catch (const std::invalid_argument& e) {
        ctx.fail(e.what());
    }
    m.config.rate = ctx.real(meta, "rate");
    const auto& seed = ctx.get(meta, "seed");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
        ctx.fail("field 'seed' must be a non-negative integer");
    m.config.seed = seed.get<std::uint64_t>();
    const auto tiers = ctx.reals(meta, "tiers");
    if (tiers.size() != 3)
        ctx.fail("field 'tiers' must hold 3 numbers");
    std::copy(tiers.begin(), tiers.end(), m.config.tiers.begin());
    const auto& cb = ctx.get(meta, "class_balanced");
    const auto& ss = ctx.get(meta, "snr_stratified");
    if (!cb.is_boolean() || !ss.is_boolean())
        ctx.fail("class_balanced and snr_stratified must be booleans");
    m.config.class_balanced = cb.get<bool>();
    m.config.snr_stratified = ss.get<bool>();
    try {
        m.config.validate();
    } catch (const std::invalid_argument& e) {
        ctx.fail(e.what());
    }
    m.scores_digest = ctx.digest(meta, "scores_digest");
    if (!ctx.get(meta, "trajectory_digest").is_null())
        m.trajectory_digest = ctx.digest(meta, "trajectory_digest");
    m.dataset_digest = ctx.digest(meta, "dataset_digest");
    m.pool_size = static_cast<int>(ctx.integer(meta, "pool"));
    const auto size = ctx.integer(meta, "size");
    const auto& groups = ctx.get(meta, "groups");
    if (!groups.is_array())
        ctx.fail("field 'groups' must be an array");
    for (const auto& j : groups) {
        GroupDraw g;
        if (!j.is_object())
            ctx.fail("groups must be objects");
        const auto& label = ctx.get(j, "label");
        if (!label.is_null())
            g.label = static_cast<int>(ctx.integer(j, "label"));
        const auto& snr = ctx.get(j, "snr_db");
        if (!snr.is_null())
            g.snr_db = static_cast<int>(ctx.integer(j, "snr_db"));
        g.pool = static_cast<int>(ctx.integer(j, "pool"));
        g.budget = static_cast<int>(ctx.integer(j, "budget"));
        if (m.config.method == Method::foqus) {
            for (auto [key, dst] : {std::pair{"tier_sizes", &g.tier_sizes}, {"tier_quotas", &g.tier_quotas},
                                    {"tier_draws", &g.tier_draws}}) {
                const auto v = ctx.integers(j, key);
                if (v.size() != 3)
                    ctx.fail(std::string("field '") + key + "' must hold 3 integers");
                for (std::size_t t = 0; t < 3; ++t)
                    (*dst)[t] = static_cast<int>(v[t]);
            }
        }
        m.groups.push_back(g);
    }

    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        const auto& text = lines[ln];
        std::int64_t id = 0;
        const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
        if (text.empty() || ec != std::errc() || end != text.data() + text.size() || id < 0)
            throw FormatError(where + ":" + std::to_string(ln + 1) + ": expected a non-negative sample_id");
        if (!c.ids.empty() && c.ids.back() >= id)
            throw FormatError(where + ":" + std::to_string(ln + 1) + ": sample_ids must be strictly ascending");
        c.ids.push_back(id);
    }
    if (static_cast<std::int64_t>(c.ids.size()) != size)
        throw FormatError(where + ":1: manifest says " + std::to_string(size) + " ids, file has " +
                          std::to_string(c.ids.size()));
    return c;
}

void save_coreset(const std::filesystem::path& path, const Coreset& c, bool force)
{
    AtomicFile file(path, force);
    write_coreset(file.stream(), c);
    file.commit();
}

Coreset load_coreset(const std::filesystem::path& path) { return parse_coreset(read_lines(path), path.string()); }

}  // namespace foqus

#include "foqus/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "foqus/digest.hpp"
#include "foqus/textio.hpp"

namespace foqus {

std::string ScoreTerms::name() const
{
    std::string out;
    for (auto [on, label] : {std::pair{forget, "forget"}, {persist, "persist"}, {quality, "quality"}}) {
        if (!on)
            continue;
        if (!out.empty())
            out += '+';
        out += label;
    }
    return out.empty() ? "none" : out;
}

ScoreTerms ScoreTerms::parse(std::string_view s)
{
    ScoreTerms t{false, false, false};
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto end = std::min(s.find('+', start), s.size());
        const auto part = s.substr(start, end - start);
        if (part == "forget")
            t.forget = true;
        else if (part == "persist")
            t.persist = true;
        else if (part == "quality")
            t.quality = true;
        else
            throw std::invalid_argument("unknown score term '" + std::string(part) + "'");
        start = end + 1;
    }
    return t;
}

std::vector<ScoreTerms> all_term_combinations()
{
    return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
            {true, false, true},  {false, true, true},  {true, true, true}};
}

TransitionScores transition_scores(std::span<const std::uint8_t> bits)
{
    if (bits.size() < 2)
        throw std::invalid_argument("transition_scores: need T >= 2 epochs, got " + std::to_string(bits.size()));
    TransitionScores s;
    for (std::size_t t = 1; t < bits.size(); ++t) {
        if (bits[t] != 0)
            continue;
        if (bits[t - 1] != 0)
            ++s.forget;
        else
            ++s.persist;
    }
    return s;
}

QualityScore quality_score(std::span<const double> losses, std::span<const std::uint8_t> bits, double beta)
{
    if (losses.size() != bits.size())
        throw std::invalid_argument("quality_score: " + std::to_string(losses.size()) + " losses but " +
                                    std::to_string(bits.size()) + " bits");
    if (bits.empty())
        throw std::invalid_argument("quality_score: empty trajectory");
    if (!std::isfinite(beta) || beta < 0.0)
        throw std::invalid_argument("quality_score: beta must be finite and >= 0");
    QualityScore q;
    for (std::size_t t = 0; t < losses.size(); ++t) {
        if (!std::isfinite(losses[t]) || losses[t] < 0.0)
            throw std::invalid_argument("quality_score: losses must be finite and >= 0");
        q.l_accum += losses[t];
        q.l_count += bits[t] != 0 ? 1 : 0;
    }
    const double T = static_cast<double>(bits.size());
    q.s_quality = static_cast<double>(q.l_count) / T - beta * q.l_accum / T;
    return q;
}

double foqus_score(int forget, int persist, double quality, int T, ScoreTerms terms)
{
    if (T < 2)
        throw std::invalid_argument("foqus_score: T must be >= 2");
    const double n = static_cast<double>(T - 1);
    const double f = terms.forget ? static_cast<double>(forget) / n : 0.0;
    const double p = terms.persist ? static_cast<double>(persist) / n : 0.0;
    const double q = terms.quality ? quality : 0.0;
    return f + p + q;
}

AuxMetrics aux_metrics(std::span<const double> probs, std::span<const double> embedding, int label)
{
    if (probs.size() < 2)
        throw std::invalid_argument("aux_metrics: need at least 2 classes");
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
        throw std::out_of_range("aux_metrics: label out of range");
    double sum = 0.0;
    for (double p : probs) {
        if (!std::isfinite(p) || p < 0.0)
            throw std::invalid_argument("aux_metrics: probabilities must be finite and non-negative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("aux_metrics: probabilities sum to " + format_real(sum) + ", not 1");

    AuxMetrics m;
    double first = -1.0, second = -1.0, residual = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        const double p = probs[c];
        if (p > 0.0)
            m.entropy -= p * std::log(p);
        if (p > first) {
            second = first;
            first = p;
        } else if (p > second) {
            second = p;
        }
        const double d = p - (static_cast<int>(c) == label ? 1.0 : 0.0);
        residual += d * d;
    }
    m.confidence = first;
    m.margin = first - second;
    double h = 1.0;
    for (double v : embedding)
        h += v * v;
    m.grand = std::sqrt(residual) * std::sqrt(h);
    return m;
}

std::uint64_t ScoreTable::digest() const
{
    Digest h;
    h.str("foqus.scores.v1").i64(meta.T).i64(meta.C).f64(meta.beta).str(meta.terms.name());
    h.u64(meta.trajectory_digest).u64(meta.dataset_digest).u64(rows.size());
    for (const auto& r : rows) {
        h.i64(r.sample_id).i64(r.label).i64(r.snr_db).i64(r.s_forget).i64(r.s_persist);
        h.f64(r.l_accum).i64(r.l_count).f64(r.s_quality).f64(r.s_foqus);
        h.f64(r.aux.entropy).f64(r.aux.margin).f64(r.aux.confidence).f64(r.aux.grand);
    }
    return h.value();
}

ScoreTable score_dataset(const TrajectoryStore& store, const ScoreOptions& opts)
{
    store.validate();
    if (!opts.terms.any())
        throw std::invalid_argument("score_dataset: at least one score term must be enabled");
    if (!std::isfinite(opts.beta) || opts.beta < 0.0)
        throw std::invalid_argument("score_dataset: beta must be finite and >= 0");
    if (opts.dataset_digest && *opts.dataset_digest != store.meta.dataset_digest)
        throw std::invalid_argument("digest mismatch: trajectories were recorded on dataset " +
                                    to_hex(store.meta.dataset_digest) + ", not " + to_hex(*opts.dataset_digest));

    ScoreTable t;
    t.meta = {store.meta.T, store.meta.C, opts.beta, opts.terms, store.digest(), store.meta.dataset_digest};
    t.rows.resize(store.records.size());
    const auto n = static_cast<std::int64_t>(store.records.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < n; ++k) {
        const auto& r = store.records[static_cast<std::size_t>(k)];
        auto& row = t.rows[static_cast<std::size_t>(k)];
        const auto tr = transition_scores(r.bits);
        const auto q = quality_score(r.losses, r.bits, opts.beta);
        row.sample_id = r.sample_id;
        row.label = r.label;
        row.snr_db = r.snr_db;
        row.s_forget = tr.forget;
        row.s_persist = tr.persist;
        row.l_accum = q.l_accum;
        row.l_count = q.l_count;
        row.s_quality = q.s_quality;
        row.s_foqus = foqus_score(tr.forget, tr.persist, q.s_quality, store.meta.T, opts.terms);
        row.aux = aux_metrics(r.final_probs, r.final_embedding, r.label);
    }
    return t;
}

void write_scores(std::ostream& out, const ScoreTable& t)
{
    nlohmann::ordered_json meta;
    meta["format"] = "foqus-scores";
    meta["version"] = 1;
    meta["T"] = t.meta.T;
    meta["C"] = t.meta.C;
    meta["beta"] = t.meta.beta;
    meta["terms"] = t.meta.terms.name();
    meta["trajectory_digest"] = to_hex(t.meta.trajectory_digest);
    meta["dataset_digest"] = to_hex(t.meta.dataset_digest);
    meta["rows"] = t.rows.size();
    meta["digest"] = to_hex(t.digest());
    out << meta.dump() << '\n';
    for (const auto& r : t.rows)
        out << JsonLine()
                   .field("sample_id", r.sample_id)
                   .field("label", std::int64_t{r.label})
                   .field("snr_db", std::int64_t{r.snr_db})
                   .field("s_forget", std::int64_t{r.s_forget})
                   .field("s_persist", std::int64_t{r.s_persist})
                   .field("l_accum", r.l_accum)
                   .field("l_count", std::int64_t{r.l_count})
                   .field("s_quality", r.s_quality)
                   .field("s_foqus", r.s_foqus)
                   .field("entropy", r.aux.entropy)
                   .field("margin", r.aux.margin)
                   .field("confidence", r.aux.confidence)
                   .field("grand", r.aux.grand)
                   .str()
            << '\n';
}

ScoreTable parse_scores(const std::vector<std::string>& lines, const std::string& where)
{
    if (lines.empty())
        throw FormatError(where + ": empty file (missing meta line)");
    LineContext ctx{where, 1};
    const auto meta = parse_json_line(lines[0], where, 1);
    ctx.only_keys(meta, {"format", "version", "T", "C", "beta", "terms", "trajectory_digest", "dataset_digest",
                         "rows", "digest"});
    if (ctx.string(meta, "format") != "foqus-scores")
        ctx.fail("not a score table");
    if (ctx.integer(meta, "version") != 1)
        ctx.fail("unsupported score table version");
    ScoreTable t;
    t.meta.T = static_cast<int>(ctx.integer(meta, "T"));
    t.meta.C = static_cast<int>(ctx.integer(meta, "C"));
    t.meta.beta = ctx.real(meta, "beta");
    try {
        t.meta.terms = ScoreTerms::parse(ctx.string(meta, "terms"));
    } catch (const std::invalid_argument& e) {
        ctx.fail(e.what());
    }
    t.meta.trajectory_digest = ctx.digest(meta, "trajectory_digest");
    t.meta.dataset_digest = ctx.digest(meta, "dataset_digest");
    if (t.meta.T < 2 || t.meta.C < 2)
        ctx.fail("T and C must be >= 2");
    const auto expected = ctx.integer(meta, "rows");
    const auto digest = ctx.digest(meta, "digest");

    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        LineContext rc{where, ln + 1};
        const auto rec = parse_json_line(lines[ln], where, ln + 1);
        rc.only_keys(rec, {"sample_id", "label", "snr_db", "s_forget", "s_persist", "l_accum", "l_count",
                           "s_quality", "s_foqus", "entropy", "margin", "confidence", "grand"});
        ScoreRow r;
        r.sample_id = rc.integer(rec, "sample_id");
        r.label = static_cast<int>(rc.integer(rec, "label"));
        r.snr_db = static_cast<int>(rc.integer(rec, "snr_db"));
        r.s_forget = static_cast<int>(rc.integer(rec, "s_forget"));
        r.s_persist = static_cast<int>(rc.integer(rec, "s_persist"));
        r.l_accum = rc.real(rec, "l_accum");
        r.l_count = static_cast<int>(rc.integer(rec, "l_count"));
        r.s_quality = rc.real(rec, "s_quality");
        r.s_foqus = rc.real(rec, "s_foqus");
        r.aux.entropy = rc.real(rec, "entropy");
        r.aux.margin = rc.real(rec, "margin");
        r.aux.confidence = rc.real(rec, "confidence");
        r.aux.grand = rc.real(rec, "grand");
        if (r.label < 0 || r.label >= t.meta.C)
            rc.fail("label out of range");
        if (r.s_forget < 0 || r.s_persist < 0 || r.s_forget + r.s_persist > t.meta.T - 1)
            rc.fail("s_forget + s_persist must lie in [0, T-1]");
        if (r.l_count < 0 || r.l_count > t.meta.T)
            rc.fail("l_count must lie in [0, T]");
        if (!t.rows.empty() && t.rows.back().sample_id >= r.sample_id)
            rc.fail("sample_ids must be strictly ascending");
        t.rows.push_back(r);
    }
    if (static_cast<std::int64_t>(t.rows.size()) != expected)
        throw FormatError(where + ":1: meta says " + std::to_string(expected) + " rows, file has " +
                          std::to_string(t.rows.size()));
    if (t.digest() != digest)
        throw FormatError(where + ":1: digest mismatch (file content does not match its meta digest)");
    return t;
}

void save_scores(const std::filesystem::path& path, const ScoreTable& t, bool force)
{
    AtomicFile file(path, force);
    write_scores(file.stream(), t);
    file.commit();
}

ScoreTable load_scores(const std::filesystem::path& path) { return parse_scores(read_lines(path), path.string()); }

}  // namespace foqus

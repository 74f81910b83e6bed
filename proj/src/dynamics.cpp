#include "foqus/dynamics.hpp"

#include <cmath>
#include <ostream>
#include <set>

#include "foqus/digest.hpp"
#include "foqus/textio.hpp"

namespace foqus {

std::uint64_t TrajectoryStore::digest() const
{
    Digest h;
    h.str("foqus.trajectory.v1").i64(meta.T).i64(meta.C).i64(meta.E);
    h.u64(meta.model_digest).u64(meta.train_digest).u64(meta.dataset_digest).u64(records.size());
    for (const auto& r : records) {
        h.i64(r.sample_id).i64(r.label).i64(r.snr_db);
        h.bytes(r.bits.data(), r.bits.size());
        h.f64s(r.losses).f64s(r.final_probs).f64s(r.final_embedding);
    }
    return h.value();
}

void TrajectoryStore::validate() const
{
    if (meta.T < 2)
        throw std::invalid_argument("trajectory store: T must be >= 2");
    if (meta.C < 2 || meta.E < 1)
        throw std::invalid_argument("trajectory store: C must be >= 2 and E >= 1");
    for (std::size_t k = 0; k < records.size(); ++k) {
        const auto& r = records[k];
        auto bad = [&](const std::string& what) {
            throw std::invalid_argument("trajectory record " + std::to_string(k) + " (sample_id " +
                                        std::to_string(r.sample_id) + "): " + what);
        };
        if (k > 0 && records[k - 1].sample_id >= r.sample_id)
            bad("sample_ids must be strictly ascending");
        if (r.label < 0 || r.label >= meta.C)
            bad("label out of range");
        if (r.bits.size() != static_cast<std::size_t>(meta.T) || r.losses.size() != static_cast<std::size_t>(meta.T))
            bad("expected " + std::to_string(meta.T) + " bits and losses, got " + std::to_string(r.bits.size()) +
                " and " + std::to_string(r.losses.size()));
        for (auto b : r.bits)
            if (b > 1)
                bad("bits must be 0 or 1");
        for (double l : r.losses)
            if (!std::isfinite(l) || l < 0.0)
                bad("losses must be finite and >= 0");
        if (r.final_probs.size() != static_cast<std::size_t>(meta.C))
            bad("final_probs must have C = " + std::to_string(meta.C) + " values");
        if (r.final_embedding.size() != static_cast<std::size_t>(meta.E))
            bad("final_embedding must have E = " + std::to_string(meta.E) + " values");
        double sum = 0.0;
        for (double p : r.final_probs) {
            if (!std::isfinite(p) || p < 0.0)
                bad("final_probs must be finite and non-negative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            bad("final_probs must sum to 1");
        for (double v : r.final_embedding)
            if (!std::isfinite(v))
                bad("final_embedding must be finite");
    }
}

int correctness(int predicted, int label, int num_classes)
{
    if (predicted < 0 || predicted >= num_classes || label < 0 || label >= num_classes)
        throw std::out_of_range("correctness: label outside [0, " + std::to_string(num_classes) + ")");
    return predicted == label ? 1 : 0;
}

TrajectoryStore record_training(const Dataset& d, const ModelSpec& spec, const TrainConfig& cfg,
                                const RecordOptions& opts)
{
    spec.validate();
    cfg.validate();
    if (cfg.epochs < 2)
        throw std::invalid_argument("record_training: need at least 2 epochs");
    if (spec.num_classes != static_cast<int>(d.num_classes()))
        throw std::invalid_argument("record_training: model has " + std::to_string(spec.num_classes) +
                                    " classes, dataset has " + std::to_string(d.num_classes()));
    const auto positions = d.positions(Split::train);
    if (positions.empty())
        throw std::invalid_argument("record_training: empty train split");

    const TrainSet data = make_train_set(spec, d, positions);
    TrainState state = make_train_state(spec, cfg.seed);

    TrajectoryStore store;
    store.meta = {cfg.epochs, spec.num_classes, spec.embedding_dim, spec.digest(), cfg.digest(), d.digest()};
    store.records.resize(positions.size());
    for (std::size_t k = 0; k < positions.size(); ++k) {
        const auto& f = d.frames[positions[k]];
        auto& r = store.records[k];
        r.sample_id = f.sample_id;
        r.label = f.label;
        r.snr_db = f.snr_db;
        r.bits.reserve(static_cast<std::size_t>(cfg.epochs));
        r.losses.reserve(static_cast<std::size_t>(cfg.epochs));
    }

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double loss = train_epoch(spec, state, data, cfg);
        const auto pred = predict(spec, state.params, data.inputs);
        for (std::size_t k = 0; k < positions.size(); ++k) {
            auto& r = store.records[k];
            const auto p = pred.probs.row(k);
            r.bits.push_back(static_cast<std::uint8_t>(correctness(argmax(p), r.label, spec.num_classes)));
            r.losses.push_back(cross_entropy(p, r.label));
            if (opts.keep_epoch_probs)
                r.epoch_probs.emplace_back(p.begin(), p.end());
            if (epoch == cfg.epochs) {
                const auto e = pred.embeddings.row(k);
                r.final_probs.assign(p.begin(), p.end());
                r.final_embedding.assign(e.begin(), e.end());
            }
        }
        if (opts.on_epoch)
            opts.on_epoch(epoch, loss);
    }
    if (opts.final_params)
        *opts.final_params = state.params;
    return store;
}

void write_trajectories(std::ostream& out, const TrajectoryStore& s)
{
    s.validate();
    nlohmann::ordered_json meta;
    meta["format"] = "foqus-trajectory";
    meta["version"] = 1;
    meta["T"] = s.meta.T;
    meta["C"] = s.meta.C;
    meta["E"] = s.meta.E;
    meta["model_digest"] = to_hex(s.meta.model_digest);
    meta["train_digest"] = to_hex(s.meta.train_digest);
    meta["dataset_digest"] = to_hex(s.meta.dataset_digest);
    meta["records"] = s.records.size();
    meta["digest"] = to_hex(s.digest());
    out << meta.dump() << '\n';
    for (const auto& r : s.records) {
        std::string bits;
        for (auto b : r.bits)
            bits.push_back(b ? '1' : '0');
        out << JsonLine()
                   .field("sample_id", r.sample_id)
                   .field("label", std::int64_t{r.label})
                   .field("snr_db", std::int64_t{r.snr_db})
                   .field("bits", bits)
                   .field("losses", std::span<const double>(r.losses))
                   .field("final_probs", std::span<const double>(r.final_probs))
                   .field("final_embedding", std::span<const double>(r.final_embedding))
                   .str()
            << '\n';
    }
}

TrajectoryStore parse_trajectories(const std::vector<std::string>& lines, const std::string& where)
{
    if (lines.empty())
        throw FormatError(where + ": empty file (missing meta line)");
    LineContext ctx{where, 1};
    const auto meta = parse_json_line(lines[0], where, 1);
    ctx.only_keys(meta, {"format", "version", "T", "C", "E", "model_digest", "train_digest", "dataset_digest",
                         "records", "digest"});
    if (ctx.string(meta, "format") != "foqus-trajectory")
        ctx.fail("not a trajectory file");
    if (ctx.integer(meta, "version") != 1)
        ctx.fail("unsupported trajectory version " + std::to_string(ctx.integer(meta, "version")));

    TrajectoryStore s;
    s.meta.T = static_cast<int>(ctx.integer(meta, "T"));
    s.meta.C = static_cast<int>(ctx.integer(meta, "C"));
    s.meta.E = static_cast<int>(ctx.integer(meta, "E"));
    if (s.meta.T < 2)
        ctx.fail("T must be >= 2");
    if (s.meta.C < 2 || s.meta.E < 1)
        ctx.fail("C must be >= 2 and E >= 1");
    s.meta.model_digest = ctx.digest(meta, "model_digest");
    s.meta.train_digest = ctx.digest(meta, "train_digest");
    s.meta.dataset_digest = ctx.digest(meta, "dataset_digest");
    const auto expected = ctx.integer(meta, "records");
    const auto digest = ctx.digest(meta, "digest");

    const auto T = static_cast<std::size_t>(s.meta.T);
    std::set<std::int64_t> seen;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        LineContext rc{where, ln + 1};
        const auto index = "record " + std::to_string(ln - 1) + ": ";
        const auto rec = parse_json_line(lines[ln], where, ln + 1);
        rc.only_keys(rec, {"sample_id", "label", "snr_db", "bits", "losses", "final_probs", "final_embedding"});
        TrajectoryRecord r;
        r.sample_id = rc.integer(rec, "sample_id");
        if (!seen.insert(r.sample_id).second)
            rc.fail(index + "duplicate sample_id " + std::to_string(r.sample_id));
        r.label = static_cast<int>(rc.integer(rec, "label"));
        if (r.label < 0 || r.label >= s.meta.C)
            rc.fail(index + "label out of range");
        r.snr_db = static_cast<int>(rc.integer(rec, "snr_db"));
        for (char c : rc.string(rec, "bits")) {
            if (c != '0' && c != '1')
                rc.fail(index + "bits must be a string of 0 and 1");
            r.bits.push_back(static_cast<std::uint8_t>(c - '0'));
        }
        if (r.bits.size() != T)
            rc.fail(index + "bits has length " + std::to_string(r.bits.size()) + ", meta T = " + std::to_string(T));
        r.losses = rc.reals(rec, "losses");
        if (r.losses.size() != T)
            rc.fail(index + "losses has length " + std::to_string(r.losses.size()) + ", meta T = " +
                    std::to_string(T));
        r.final_probs = rc.reals(rec, "final_probs");
        r.final_embedding = rc.reals(rec, "final_embedding");
        s.records.push_back(std::move(r));
    }
    if (static_cast<std::int64_t>(s.records.size()) != expected)
        throw FormatError(where + ":1: meta says " + std::to_string(expected) + " records, file has " +
                          std::to_string(s.records.size()));
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(where + ": " + e.what());
    }
    if (s.digest() != digest)
        throw FormatError(where + ":1: digest mismatch (file content does not match its meta digest)");
    return s;
}

void save_trajectories(const std::filesystem::path& path, const TrajectoryStore& s, bool force)
{
    AtomicFile file(path, force);
    write_trajectories(file.stream(), s);
    file.commit();
}

TrajectoryStore load_trajectories(const std::filesystem::path& path)
{
    return parse_trajectories(read_lines(path), path.string());
}

}  // namespace foqus

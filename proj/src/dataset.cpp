#include "foqus/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>

#include "foqus/digest.hpp"
#include "foqus/rng.hpp"
#include "foqus/textio.hpp"

namespace foqus {

namespace {

constexpr std::string_view kNames[kModulationCount] = {"BPSK", "QPSK", "PSK8", "QAM16", "PAM4", "CPFSK"};

// CPFSK modulation index.
constexpr double kCpfskIndex = 0.5;

}  // namespace

std::string_view modulation_name(Modulation m)
{
    return kNames[static_cast<int>(modulation_from_index(static_cast<int>(m)))];
}

Modulation parse_modulation(std::string_view name)
{
    for (int k = 0; k < kModulationCount; ++k)
        if (kNames[k] == name)
            return static_cast<Modulation>(k);
    throw std::invalid_argument("unknown modulation class '" + std::string(name) + "'");
}

Modulation modulation_from_index(int index)
{
    if (index < 0 || index >= kModulationCount)
        throw std::invalid_argument("unknown modulation class index " + std::to_string(index));
    return static_cast<Modulation>(index);
}

std::vector<Modulation> all_modulations()
{
    std::vector<Modulation> out;
    for (int k = 0; k < kModulationCount; ++k)
        out.push_back(static_cast<Modulation>(k));
    return out;
}

std::vector<std::complex<double>> constellation(Modulation m)
{
    using C = std::complex<double>;
    std::vector<C> pts;
    switch (modulation_from_index(static_cast<int>(m))) {
    case Modulation::BPSK:
        pts = {C(1, 0), C(-1, 0)};
        break;
    case Modulation::QPSK: {
        const double a = 1.0 / std::sqrt(2.0);
        // Gray order: 00, 01, 11, 10
        pts = {C(a, a), C(-a, a), C(-a, -a), C(a, -a)};
        break;
    }
    case Modulation::PSK8:
        for (int k = 0; k < 8; ++k)
            pts.push_back(std::polar(1.0, 2.0 * std::numbers::pi * k / 8.0));
        break;
    case Modulation::QAM16: {
        const double s = 1.0 / std::sqrt(10.0);
        for (int a : {-3, -1, 1, 3})
            for (int b : {-3, -1, 1, 3})
                pts.emplace_back(a * s, b * s);
        break;
    }
    case Modulation::PAM4: {
        const double s = 1.0 / std::sqrt(5.0);
        for (int a : {-3, -1, 1, 3})
            pts.emplace_back(a * s, 0.0);
        break;
    }
    case Modulation::CPFSK:
        break;
    }
    return pts;
}

std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

void DatasetSpec::validate() const
{
    if (classes.empty())
        throw std::invalid_argument("dataset spec: class list is empty");
    if (snr_grid_db.empty())
        throw std::invalid_argument("dataset spec: SNR grid is empty");
    if (std::set<Modulation>(classes.begin(), classes.end()).size() != classes.size())
        throw std::invalid_argument("dataset spec: duplicate class");
    if (std::set<int>(snr_grid_db.begin(), snr_grid_db.end()).size() != snr_grid_db.size())
        throw std::invalid_argument("dataset spec: duplicate SNR value");
    if (frames_per_class_per_snr < 1)
        throw std::invalid_argument("dataset spec: frames_per_class_per_snr must be >= 1");
    if (frame_len < 1 || samples_per_symbol < 1)
        throw std::invalid_argument("dataset spec: frame_len and samples_per_symbol must be >= 1");
    if (frame_len % samples_per_symbol != 0)
        throw std::invalid_argument("dataset spec: frame_len must be divisible by samples_per_symbol");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("dataset spec: train_fraction must be in (0,1)");
}

IQFrame modulate_frame(Modulation m, int frame_len, int samples_per_symbol, std::uint64_t seed)
{
    modulation_from_index(static_cast<int>(m));
    if (frame_len < 1 || samples_per_symbol < 1 || frame_len % samples_per_symbol != 0)
        throw std::invalid_argument("modulate_frame: frame_len must be a positive multiple of samples_per_symbol");

    Rng rng(seed);
    const int nsym = frame_len / samples_per_symbol;
    std::vector<std::complex<double>> x(static_cast<std::size_t>(frame_len));

    if (m == Modulation::CPFSK) {
        const double step = std::numbers::pi * kCpfskIndex / samples_per_symbol;
        double phase = 0.0;
        for (int k = 0; k < nsym; ++k) {
            const double bit = (rng() & 1) ? 1.0 : -1.0;
            for (int s = 0; s < samples_per_symbol; ++s) {
                phase += bit * step;
                x[static_cast<std::size_t>(k * samples_per_symbol + s)] = std::polar(1.0, phase);
            }
        }
    } else {
        const auto pts = constellation(m);
        for (int k = 0; k < nsym; ++k) {
            const auto sym = pts[uniform_index(rng, pts.size())];
            for (int s = 0; s < samples_per_symbol; ++s)
                x[static_cast<std::size_t>(k * samples_per_symbol + s)] = sym;
        }
    }

    const auto rot = std::polar(1.0, 2.0 * std::numbers::pi * uniform_unit(rng));
    double power = 0.0;
    for (auto& v : x) {
        v *= rot;
        power += std::norm(v);
    }
    const double scale = 1.0 / std::sqrt(power / frame_len);

    IQFrame f;
    f.i.resize(x.size());
    f.q.resize(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
        f.i[n] = x[n].real() * scale;
        f.q[n] = x[n].imag() * scale;
    }
    return f;
}

IQFrame add_awgn(const IQFrame& frame, int snr_db, std::uint64_t seed)
{
    for (std::size_t n = 0; n < frame.length(); ++n)
        if (!std::isfinite(frame.i[n]) || !std::isfinite(frame.q[n]))
            throw std::invalid_argument("add_awgn: non-finite input sample at index " + std::to_string(n));
    if (frame.q.size() != frame.i.size())
        throw std::invalid_argument("add_awgn: I and Q rails differ in length");

    const double noise_power = std::pow(10.0, -snr_db / 10.0);
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, std::sqrt(noise_power / 2.0));

    IQFrame out = frame;
    for (std::size_t n = 0; n < out.length(); ++n) {
        out.i[n] += gauss(rng);
        out.q[n] += gauss(rng);
    }
    out.snr_db = snr_db;
    return out;
}

std::uint64_t frame_seed(std::uint64_t base_seed, Modulation m, int snr_db, std::uint64_t ordinal)
{
    return derive_seed(base_seed, {static_cast<std::uint64_t>(m),
                                   static_cast<std::uint64_t>(static_cast<std::int64_t>(snr_db)), ordinal});
}

Dataset generate_dataset(const DatasetSpec& spec)
{
    spec.validate();

    const std::size_t per_cell = static_cast<std::size_t>(spec.frames_per_class_per_snr);
    const std::size_t n_cells = spec.classes.size() * spec.snr_grid_db.size();
    const std::size_t total = n_cells * per_cell;

    // Every frame is a pure function of its own seed, so slots fill in any order.
    std::vector<IQFrame> raw(total);
#pragma omp parallel for schedule(static)
    for (std::size_t slot = 0; slot < total; ++slot) {
        const std::size_t cell = slot / per_cell;
        const std::size_t ordinal = slot % per_cell;
        const std::size_t c = cell / spec.snr_grid_db.size();
        const int snr = spec.snr_grid_db[cell % spec.snr_grid_db.size()];
        const std::uint64_t seed = frame_seed(spec.seed, spec.classes[c], snr, ordinal);
        IQFrame f = add_awgn(modulate_frame(spec.classes[c], spec.frame_len, spec.samples_per_symbol,
                                            derive_seed(seed, {0})),
                             snr, derive_seed(seed, {1}));
        f.label = static_cast<int>(c);
        raw[slot] = std::move(f);
    }

    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(per_cell)));

    std::vector<std::size_t> train_slots;
    std::vector<std::size_t> test_slots;
    for (std::size_t cell = 0; cell < n_cells; ++cell) {
        const std::size_t c = cell / spec.snr_grid_db.size();
        const int snr = spec.snr_grid_db[cell % spec.snr_grid_db.size()];
        std::vector<std::size_t> order(per_cell);
        for (std::size_t k = 0; k < per_cell; ++k)
            order[k] = k;
        Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(spec.classes[c]),
                                        static_cast<std::uint64_t>(static_cast<std::int64_t>(snr)),
                                        string_tag("split")}));
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<bool> is_train(per_cell, false);
        for (std::size_t k = 0; k < n_train; ++k)
            is_train[order[k]] = true;
        for (std::size_t k = 0; k < per_cell; ++k)
            (is_train[k] ? train_slots : test_slots).push_back(cell * per_cell + k);
    }

    Dataset d;
    d.classes = spec.classes;
    d.snr_grid_db = spec.snr_grid_db;
    d.frame_len = spec.frame_len;
    d.frames.reserve(total);
    d.splits.reserve(total);
    std::int64_t next_id = 0;
    for (auto [slots, split] : {std::pair{&train_slots, Split::train}, std::pair{&test_slots, Split::test}}) {
        for (std::size_t slot : *slots) {
            IQFrame f = std::move(raw[slot]);
            f.sample_id = next_id++;
            d.frames.push_back(std::move(f));
            d.splits.push_back(split);
        }
    }
    return d;
}

std::size_t Dataset::count(Split s) const noexcept
{
    return static_cast<std::size_t>(std::count(splits.begin(), splits.end(), s));
}

std::vector<std::size_t> Dataset::positions(Split s) const
{
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < frames.size(); ++k)
        if (splits[k] == s)
            out.push_back(k);
    std::sort(out.begin(), out.end(),
              [&](std::size_t a, std::size_t b) { return frames[a].sample_id < frames[b].sample_id; });
    return out;
}

std::uint64_t Dataset::digest() const
{
    Digest h;
    h.str("foqus.dataset.v1").u64(classes.size());
    for (auto c : classes)
        h.str(modulation_name(c));
    h.u64(snr_grid_db.size());
    for (int s : snr_grid_db)
        h.i64(s);
    h.i64(frame_len).u64(frames.size());
    for (std::size_t k = 0; k < frames.size(); ++k) {
        const auto& f = frames[k];
        h.i64(f.sample_id).i64(f.label).i64(f.snr_db).i64(static_cast<int>(splits[k]));
        h.f64s(f.i).f64s(f.q);
    }
    return h.value();
}

void Dataset::validate() const
{
    if (classes.empty())
        throw std::invalid_argument("dataset: no classes");
    if (frame_len < 1)
        throw std::invalid_argument("dataset: frame length must be >= 1");
    if (splits.size() != frames.size())
        throw std::invalid_argument("dataset: split tags and frames differ in count");
    std::set<int> grid(snr_grid_db.begin(), snr_grid_db.end());
    std::set<std::int64_t> ids;
    std::int64_t lo[2] = {INT64_MAX, INT64_MAX};
    std::int64_t hi[2] = {INT64_MIN, INT64_MIN};
    std::size_t n[2] = {0, 0};
    for (std::size_t k = 0; k < frames.size(); ++k) {
        const auto& f = frames[k];
        const std::string tag = "dataset: frame " + std::to_string(k) + " (sample_id " + std::to_string(f.sample_id) + ")";
        if (f.sample_id < 0)
            throw std::invalid_argument(tag + ": negative sample_id");
        if (!ids.insert(f.sample_id).second)
            throw std::invalid_argument(tag + ": duplicate sample_id");
        if (f.label < 0 || static_cast<std::size_t>(f.label) >= classes.size())
            throw std::invalid_argument(tag + ": label out of range");
        if (f.i.size() != static_cast<std::size_t>(frame_len) || f.q.size() != static_cast<std::size_t>(frame_len))
            throw std::invalid_argument(tag + ": rail length differs from frame length");
        if (!grid.empty() && !grid.count(f.snr_db))
            throw std::invalid_argument(tag + ": snr_db not in SNR grid");
        for (std::size_t t = 0; t < f.i.size(); ++t)
            if (!std::isfinite(f.i[t]) || !std::isfinite(f.q[t]))
                throw std::invalid_argument(tag + ": non-finite sample");
        const int s = static_cast<int>(splits[k]);
        lo[s] = std::min(lo[s], f.sample_id);
        hi[s] = std::max(hi[s], f.sample_id);
        ++n[s];
    }
    for (int s = 0; s < 2; ++s)
        if (n[s] > 0 && static_cast<std::size_t>(hi[s] - lo[s] + 1) != n[s])
            throw std::invalid_argument(std::string("dataset: ") + std::string(split_name(static_cast<Split>(s))) +
                                        " sample_ids are not contiguous");
}

void write_dataset(std::ostream& out, const Dataset& d)
{
    d.validate();
    nlohmann::ordered_json header;
    header["version"] = 1;
    header["L"] = d.frame_len;
    header["classes"] = nlohmann::json::array();
    for (auto c : d.classes)
        header["classes"].push_back(std::string(modulation_name(c)));
    header["snr_grid"] = d.snr_grid_db;
    header["counts"] = {{"train", d.count(Split::train)}, {"test", d.count(Split::test)}};
    out << header.dump() << '\n';
    for (std::size_t k = 0; k < d.frames.size(); ++k) {
        const auto& f = d.frames[k];
        out << JsonLine()
                   .field("sample_id", f.sample_id)
                   .field("label", std::int64_t{f.label})
                   .field("snr_db", std::int64_t{f.snr_db})
                   .field("split", split_name(d.splits[k]))
                   .field("i", std::span<const double>(f.i))
                   .field("q", std::span<const double>(f.q))
                   .str()
            << '\n';
    }
}

Dataset parse_dataset(const std::vector<std::string>& lines, const std::string& where)
{
    if (lines.empty())
        throw FormatError(where + ": empty file (missing header line)");

    Dataset d;
    LineContext ctx{where, 1};
    const auto header = parse_json_line(lines[0], where, 1);
    ctx.only_keys(header, {"version", "L", "classes", "snr_grid", "counts"});
    if (ctx.integer(header, "version") != 1)
        ctx.fail("unsupported dataset version");
    d.frame_len = static_cast<int>(ctx.integer(header, "L"));
    if (d.frame_len < 1)
        ctx.fail("L must be >= 1");
    const auto& classes = ctx.get(header, "classes");
    if (!classes.is_array() || classes.empty())
        ctx.fail("classes must be a non-empty array");
    for (const auto& c : classes) {
        if (!c.is_string())
            ctx.fail("class names must be strings");
        try {
            d.classes.push_back(parse_modulation(c.get<std::string>()));
        } catch (const std::invalid_argument& e) {
            ctx.fail(e.what());
        }
    }
    for (auto s : ctx.integers(header, "snr_grid"))
        d.snr_grid_db.push_back(static_cast<int>(s));
    const auto& counts = ctx.get(header, "counts");
    if (!counts.is_object())
        ctx.fail("counts must be an object");
    const auto n_train = ctx.integer(counts, "train");
    const auto n_test = ctx.integer(counts, "test");

    std::set<std::int64_t> seen;
    const std::set<int> grid(d.snr_grid_db.begin(), d.snr_grid_db.end());
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        LineContext rc{where, ln + 1};
        if (lines[ln].empty())
            rc.fail("empty record line");
        const auto rec = parse_json_line(lines[ln], where, ln + 1);
        rc.only_keys(rec, {"sample_id", "label", "snr_db", "split", "i", "q"});
        IQFrame f;
        f.sample_id = rc.integer(rec, "sample_id");
        if (f.sample_id < 0)
            rc.fail("sample_id must be non-negative");
        if (!seen.insert(f.sample_id).second)
            rc.fail("duplicate sample_id " + std::to_string(f.sample_id));
        const auto label = rc.integer(rec, "label");
        if (label < 0 || static_cast<std::size_t>(label) >= d.classes.size())
            rc.fail("label " + std::to_string(label) + " out of range");
        f.label = static_cast<int>(label);
        f.snr_db = static_cast<int>(rc.integer(rec, "snr_db"));
        if (!grid.count(f.snr_db))
            rc.fail("snr_db " + std::to_string(f.snr_db) + " not in header snr_grid");
        const auto split = rc.string(rec, "split");
        Split s;
        if (split == "train")
            s = Split::train;
        else if (split == "test")
            s = Split::test;
        else
            rc.fail("split must be 'train' or 'test'");
        f.i = rc.reals(rec, "i");
        f.q = rc.reals(rec, "q");
        if (f.i.size() != static_cast<std::size_t>(d.frame_len))
            rc.fail("i has " + std::to_string(f.i.size()) + " values, header L = " + std::to_string(d.frame_len));
        if (f.q.size() != static_cast<std::size_t>(d.frame_len))
            rc.fail("q has " + std::to_string(f.q.size()) + " values, header L = " + std::to_string(d.frame_len));
        d.frames.push_back(std::move(f));
        d.splits.push_back(s);
    }

    if (static_cast<std::int64_t>(d.count(Split::train)) != n_train ||
        static_cast<std::int64_t>(d.count(Split::test)) != n_test)
        throw FormatError(where + ":1: header counts do not match the records");
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(where + ": " + e.what());
    }
    return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d, bool force)
{
    AtomicFile file(path, force);
    write_dataset(file.stream(), d);
    file.commit();
}

Dataset load_dataset(const std::filesystem::path& path) { return parse_dataset(read_lines(path), path.string()); }

}  // namespace foqus

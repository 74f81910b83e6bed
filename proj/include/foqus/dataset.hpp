#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace foqus {

/// Closed, ordered set of synthetic modulation classes.
enum class Modulation : int { BPSK = 0, QPSK, PSK8, QAM16, PAM4, CPFSK };

inline constexpr int kModulationCount = 6;

std::string_view modulation_name(Modulation m);
Modulation parse_modulation(std::string_view name);
Modulation modulation_from_index(int index);
std::vector<Modulation> all_modulations();

/// Unit-average-power symbol alphabet of a linear modulation. CPFSK has no
/// fixed constellation and returns an empty vector.
std::vector<std::complex<double>> constellation(Modulation m);

/// One labelled frame. `i` and `q` are the two rails of the 2×L I/Q matrix.
/// `label` indexes the owning dataset's class list.
struct IQFrame {
    std::vector<double> i;
    std::vector<double> q;
    int label = 0;
    int snr_db = 0;
    std::int64_t sample_id = 0;

    std::size_t length() const noexcept { return i.size(); }
    bool operator==(const IQFrame&) const = default;
};

enum class Split : int { train = 0, test = 1 };

std::string_view split_name(Split s);

struct DatasetSpec {
    std::vector<Modulation> classes = all_modulations();
    std::vector<int> snr_grid_db{18};
    int frames_per_class_per_snr = 200;
    int frame_len = 128;
    int samples_per_symbol = 8;
    double train_fraction = 0.8;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const DatasetSpec&) const = default;
};

/// Frames plus their split tags. Train and test sample_ids each form a
/// contiguous range.
struct Dataset {
    std::vector<Modulation> classes;
    std::vector<int> snr_grid_db;
    int frame_len = 0;
    std::vector<IQFrame> frames;
    std::vector<Split> splits;

    std::size_t num_classes() const noexcept { return classes.size(); }
    std::size_t count(Split s) const noexcept;
    /// Positions in `frames` belonging to split `s`, in sample_id order.
    std::vector<std::size_t> positions(Split s) const;

    /// Content digest over every field (reals by bit pattern).
    std::uint64_t digest() const;

    /// Throws std::invalid_argument naming the first violated invariant.
    void validate() const;

    bool operator==(const Dataset&) const = default;
};

/// Noiseless frame: random symbols, rectangular shaping by sample repetition,
/// uniform random carrier phase, unit average power. Deterministic in `seed`.
IQFrame modulate_frame(Modulation m, int frame_len, int samples_per_symbol, std::uint64_t seed);

/// Adds complex AWGN of total power 10^(-snr_db/10) (half per rail) and records snr_db.
IQFrame add_awgn(const IQFrame& frame, int snr_db, std::uint64_t seed);

/// Seed of the ordinal-th frame of the (class, snr) cell.
std::uint64_t frame_seed(std::uint64_t base_seed, Modulation m, int snr_db, std::uint64_t ordinal);

Dataset generate_dataset(const DatasetSpec& spec);

// Line-delimited JSON interchange format; see README.
void write_dataset(std::ostream& out, const Dataset& d);
Dataset parse_dataset(const std::vector<std::string>& lines, const std::string& where = "<dataset>");
void save_dataset(const std::filesystem::path& path, const Dataset& d, bool force = false);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace foqus

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "foqus/dataset.hpp"
#include "foqus/nn.hpp"

namespace foqus {

/// Training history of one train-split sample.
struct TrajectoryRecord {
    std::int64_t sample_id = 0;
    int label = 0;
    int snr_db = 0;
    std::vector<std::uint8_t> bits;  // bits[t] = 1 when epoch t+1 predicted the label
    std::vector<double> losses;      // per-epoch cross-entropy
    std::vector<double> final_probs;
    std::vector<double> final_embedding;
    /// Only filled when recording with keep_epoch_probs; never serialized.
    std::vector<std::vector<double>> epoch_probs;

    bool operator==(const TrajectoryRecord&) const = default;
};

struct TrajectoryMeta {
    int T = 0;
    int C = 0;
    int E = 0;
    std::uint64_t model_digest = 0;
    std::uint64_t train_digest = 0;
    std::uint64_t dataset_digest = 0;

    bool operator==(const TrajectoryMeta&) const = default;
};

struct TrajectoryStore {
    TrajectoryMeta meta;
    std::vector<TrajectoryRecord> records;  // ascending sample_id

    /// Digest of meta and every serialized record field.
    std::uint64_t digest() const;
    /// Shape and range checks; throws std::invalid_argument naming the record.
    void validate() const;
    bool operator==(const TrajectoryStore&) const = default;
};

/// 1 iff predicted == label. Both must lie in [0, num_classes).
int correctness(int predicted, int label, int num_classes);

struct RecordOptions {
    bool keep_epoch_probs = false;
    /// Called after every epoch with (epoch, mean train loss).
    std::function<void(int, double)> on_epoch;
    /// Receives the parameters after the last epoch.
    Parameters* final_params = nullptr;
};

/// Trains spec on the whole train split for cfg.epochs epochs. After each
/// epoch a separate inference pass over the train split records the
/// predicted-label correctness and the loss of every sample.
TrajectoryStore record_training(const Dataset& d, const ModelSpec& spec, const TrainConfig& cfg,
                                const RecordOptions& opts = {});

// Line-delimited JSON: meta line, then one record per line.
void write_trajectories(std::ostream& out, const TrajectoryStore& s);
TrajectoryStore parse_trajectories(const std::vector<std::string>& lines, const std::string& where = "<trajectory>");
void save_trajectories(const std::filesystem::path& path, const TrajectoryStore& s, bool force = false);
TrajectoryStore load_trajectories(const std::filesystem::path& path);

}  // namespace foqus

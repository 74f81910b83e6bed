#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "foqus/dataset.hpp"
#include "foqus/rng.hpp"

namespace foqus {

enum class Arch { mlp, cnn1d };

/// Fixed (non-trainable) input stage.
///   iq:        raw rails, [I(L) | Q(L)].
///   invariant: [sorted |x[n]| | sorted |arg(x[n] conj(x[n-lag]))|], which does
///              not change under carrier rotation or a reordering of symbols.
enum class FrontEnd { iq, invariant };

std::string_view arch_name(Arch a);
Arch parse_arch(std::string_view s);
std::string_view front_end_name(FrontEnd f);
FrontEnd parse_front_end(std::string_view s);

/// Reference architectures:
///   mlp:   2L -> dense(hidden) -> ReLU -> dense(E) -> ReLU -> dense(C)
///   cnn1d: [2 x L] -> conv(c1,k,s) -> ReLU -> conv(c2,k,s) -> ReLU -> mean over time
///          -> dense(E) -> dense(C)
/// The embedding is the input of the final dense layer.
struct ModelSpec {
    Arch arch = Arch::mlp;
    FrontEnd front_end = FrontEnd::invariant;
    int frame_len = 128;
    int symbol_lag = 8;
    int hidden = 128;
    int conv1_channels = 16;
    int conv2_channels = 32;
    int kernel = 7;
    int stride = 2;
    int embedding_dim = 64;
    int num_classes = 6;

    void validate() const;
    std::size_t input_size() const noexcept { return 2 * static_cast<std::size_t>(frame_len); }
    std::uint64_t digest() const;
    bool operator==(const ModelSpec&) const = default;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 64;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    bool shuffle = true;

    /// epochs >= 0 here; trajectory recording separately requires >= 2.
    void validate() const;
    std::uint64_t digest() const;
    bool operator==(const TrainConfig&) const = default;
};

struct TensorInfo {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::size_t fan_in = 0;
    bool is_bias = false;

    bool operator==(const TensorInfo&) const = default;
};

/// All trainable tensors, stored back to back in declaration order.
struct Parameters {
    std::vector<TensorInfo> layout;
    std::vector<double> values;

    std::size_t index_of(std::string_view name) const;
    std::span<double> tensor(std::string_view name);
    std::span<const double> tensor(std::string_view name) const;
    bool all_finite() const noexcept;
    bool operator==(const Parameters&) const = default;
};

std::vector<TensorInfo> parameter_layout(const ModelSpec& spec);

/// He-uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases.
Parameters init_params(const ModelSpec& spec, std::uint64_t seed);
Parameters zero_params(const ModelSpec& spec);

/// Row-major matrix of prepared model inputs.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

/// Applies the front end to one frame. Throws on a shape mismatch.
std::vector<double> prepare_input(const ModelSpec& spec, const IQFrame& frame);
Matrix prepare_inputs(const ModelSpec& spec, const Dataset& d, std::span<const std::size_t> positions);

struct Prediction {
    std::vector<double> logits;
    std::vector<double> probs;
    std::vector<double> embedding;
};

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

/// -ln(max(probs[label], 1e-12)).
double cross_entropy(std::span<const double> probs, int label);

/// Lowest index among the maxima.
int argmax(std::span<const double> v);

Prediction forward(const ModelSpec& spec, const Parameters& params, const IQFrame& frame);
Prediction forward_prepared(const ModelSpec& spec, const Parameters& params, std::span<const double> input);

/// Batch inference over prepared inputs: probs [rows x C], embeddings [rows x E].
struct BatchPrediction {
    Matrix probs;
    Matrix embeddings;
};
BatchPrediction predict(const ModelSpec& spec, const Parameters& params, const Matrix& inputs);

/// Mean cross-entropy over the batch and its gradient w.r.t. every parameter
/// (written to `grad`, same layout as params.values).
double loss_and_gradient(const ModelSpec& spec, const Parameters& params, std::span<const double> inputs,
                         std::span<const int> labels, std::span<double> grad);

/// Raised on a non-finite loss or gradient; names the epoch and batch.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainSet {
    Matrix inputs;
    std::vector<int> labels;
};

TrainSet make_train_set(const ModelSpec& spec, const Dataset& d, std::span<const std::size_t> positions);

/// Everything mutated by training: parameters, momentum buffer, shuffle stream.
struct TrainState {
    Parameters params;
    std::vector<double> velocity;
    Rng rng;
    int epochs_done = 0;
};

/// Parameters from init_params(spec, derive(seed, "init")), shuffle stream from derive(seed, "shuffle").
TrainState make_train_state(const ModelSpec& spec, std::uint64_t seed);

/// One epoch of (optionally shuffled) mini-batch SGD with momentum:
///   v = momentum * v + g;  theta -= learning_rate * v
/// Returns the mean mini-batch loss.
double train_epoch(const ModelSpec& spec, TrainState& state, const TrainSet& data, const TrainConfig& cfg);

struct FiniteDiffOptions {
    int batch = 4;
    int samples = 64;
    double step = 1e-4;
    /// Test hook: may alter the analytic gradient before comparison.
    std::function<void(std::span<double>)> corrupt;
};

/// Max relative error between backprop and central differences, with
/// denominator max(|a|, |b|, 1e-8). Checks every parameter when the model has
/// at most 1000 of them, otherwise `samples` random ones.
double finite_diff_check(const ModelSpec& spec, std::uint64_t seed, const FiniteDiffOptions& opts = {});

// Checkpoint: one JSON header line, then float32 little-endian payloads in
// declaration order.
void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const Parameters& params,
                     std::uint64_t seed, bool force = false);

struct Checkpoint {
    ModelSpec spec;
    Parameters params;
    std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace foqus

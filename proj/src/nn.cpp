#include "foqus/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "foqus/digest.hpp"
#include "foqus/kernels.hpp"
#include "foqus/textio.hpp"

namespace foqus {

namespace {

constexpr double kProbFloor = 1e-12;

kernels::Conv1dShape conv1_shape(const ModelSpec& s)
{
    return {2, static_cast<std::size_t>(s.frame_len), static_cast<std::size_t>(s.conv1_channels),
            static_cast<std::size_t>(s.kernel), static_cast<std::size_t>(s.stride)};
}

kernels::Conv1dShape conv2_shape(const ModelSpec& s)
{
    const auto c1 = conv1_shape(s);
    return {c1.out_ch, c1.out_len(), static_cast<std::size_t>(s.conv2_channels), static_cast<std::size_t>(s.kernel),
            static_cast<std::size_t>(s.stride)};
}

// Per-batch activations, reused across batches.
struct Workspace {
    std::size_t batch = 0;
    std::vector<double> z1, a1, z2, a2, pooled, emb, logits, probs;
    std::vector<double> d_logits, d_emb, d_pooled, d_a2, d_a1;

    void resize(const ModelSpec& s, std::size_t n)
    {
        batch = n;
        const std::size_t E = static_cast<std::size_t>(s.embedding_dim);
        const std::size_t C = static_cast<std::size_t>(s.num_classes);
        std::size_t n1 = 0, n2 = 0, np = 0;
        if (s.arch == Arch::mlp) {
            n1 = static_cast<std::size_t>(s.hidden);
            n2 = E;
        } else {
            const auto c1 = conv1_shape(s);
            const auto c2 = conv2_shape(s);
            n1 = c1.out_ch * c1.out_len();
            n2 = c2.out_ch * c2.out_len();
            np = c2.out_ch;
        }
        for (auto* v : {&z1, &a1, &d_a1})
            v->resize(n * n1);
        for (auto* v : {&z2, &a2, &d_a2})
            v->resize(n * n2);
        for (auto* v : {&pooled, &d_pooled})
            v->resize(n * np);
        for (auto* v : {&emb, &d_emb})
            v->resize(n * E);
        for (auto* v : {&logits, &probs, &d_logits})
            v->resize(n * C);
    }
};

void relu(std::span<const double> z, std::span<double> a)
{
    for (std::size_t k = 0; k < z.size(); ++k)
        a[k] = z[k] > 0.0 ? z[k] : 0.0;
}

void relu_backward(std::span<const double> z, std::span<double> d)
{
    for (std::size_t k = 0; k < z.size(); ++k)
        if (!(z[k] > 0.0))
            d[k] = 0.0;
}

void softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t C, std::span<double> probs)
{
    for (std::size_t r = 0; r < rows; ++r) {
        const double* l = logits.data() + r * C;
        double* p = probs.data() + r * C;
        const double m = *std::max_element(l, l + C);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            p[c] = std::exp(l[c] - m);
            sum += p[c];
        }
        for (std::size_t c = 0; c < C; ++c)
            p[c] /= sum;
    }
}

void forward_batch(const ModelSpec& s, const Parameters& P, std::span<const double> x, Workspace& ws)
{
    const std::size_t B = ws.batch;
    const std::size_t E = static_cast<std::size_t>(s.embedding_dim);
    const std::size_t C = static_cast<std::size_t>(s.num_classes);
    if (s.arch == Arch::mlp) {
        const std::size_t D = s.input_size();
        const std::size_t H = static_cast<std::size_t>(s.hidden);
        kernels::dense_forward(x, P.tensor("fc1.weight"), P.tensor("fc1.bias"), B, D, H, ws.z1);
        relu(ws.z1, ws.a1);
        kernels::dense_forward(ws.a1, P.tensor("fc2.weight"), P.tensor("fc2.bias"), B, H, E, ws.z2);
        relu(ws.z2, ws.a2);
        std::copy(ws.a2.begin(), ws.a2.end(), ws.emb.begin());
    } else {
        const auto c1 = conv1_shape(s);
        const auto c2 = conv2_shape(s);
        kernels::conv1d_forward(x, P.tensor("conv1.weight"), P.tensor("conv1.bias"), B, c1, ws.z1);
        relu(ws.z1, ws.a1);
        kernels::conv1d_forward(ws.a1, P.tensor("conv2.weight"), P.tensor("conv2.bias"), B, c2, ws.z2);
        relu(ws.z2, ws.a2);
        const std::size_t T = c2.out_len();
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t c = 0; c < c2.out_ch; ++c) {
                const double* a = ws.a2.data() + (n * c2.out_ch + c) * T;
                double sum = 0.0;
                for (std::size_t t = 0; t < T; ++t)
                    sum += a[t];
                ws.pooled[n * c2.out_ch + c] = sum / static_cast<double>(T);
            }
        kernels::dense_forward(ws.pooled, P.tensor("fc.weight"), P.tensor("fc.bias"), B, c2.out_ch, E, ws.emb);
    }
    kernels::dense_forward(ws.emb, P.tensor("out.weight"), P.tensor("out.bias"), B, E, C, ws.logits);
    softmax_rows(ws.logits, B, C, ws.probs);
}

// Expects ws.d_logits filled; writes the full gradient into grad.
void backward_batch(const ModelSpec& s, const Parameters& P, std::span<const double> x, Workspace& ws,
                    std::span<double> grad)
{
    const std::size_t B = ws.batch;
    const std::size_t E = static_cast<std::size_t>(s.embedding_dim);
    const std::size_t C = static_cast<std::size_t>(s.num_classes);
    auto g = [&](std::string_view name) {
        const auto& info = P.layout[P.index_of(name)];
        return grad.subspan(info.offset, info.size);
    };

    kernels::dense_backward(ws.emb, P.tensor("out.weight"), ws.d_logits, B, E, C, g("out.weight"), g("out.bias"),
                            ws.d_emb);
    if (s.arch == Arch::mlp) {
        const std::size_t D = s.input_size();
        const std::size_t H = static_cast<std::size_t>(s.hidden);
        relu_backward(ws.z2, ws.d_emb);
        kernels::dense_backward(ws.a1, P.tensor("fc2.weight"), ws.d_emb, B, H, E, g("fc2.weight"), g("fc2.bias"),
                                ws.d_a1);
        relu_backward(ws.z1, ws.d_a1);
        kernels::dense_backward(x, P.tensor("fc1.weight"), ws.d_a1, B, D, H, g("fc1.weight"), g("fc1.bias"), {});
    } else {
        const auto c1 = conv1_shape(s);
        const auto c2 = conv2_shape(s);
        kernels::dense_backward(ws.pooled, P.tensor("fc.weight"), ws.d_emb, B, c2.out_ch, E, g("fc.weight"),
                                g("fc.bias"), ws.d_pooled);
        const std::size_t T = c2.out_len();
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t c = 0; c < c2.out_ch; ++c) {
                const double d = ws.d_pooled[n * c2.out_ch + c] / static_cast<double>(T);
                double* da = ws.d_a2.data() + (n * c2.out_ch + c) * T;
                for (std::size_t t = 0; t < T; ++t)
                    da[t] = d;
            }
        relu_backward(ws.z2, ws.d_a2);
        kernels::conv1d_backward(ws.a1, P.tensor("conv2.weight"), ws.d_a2, B, c2, g("conv2.weight"),
                                 g("conv2.bias"), ws.d_a1);
        relu_backward(ws.z1, ws.d_a1);
        kernels::conv1d_backward(x, P.tensor("conv1.weight"), ws.d_a1, B, c1, g("conv1.weight"), g("conv1.bias"),
                                 {});
    }
}

// Mean CE of the batch in ws; fills ws.d_logits = (p - onehot) / B.
double batch_loss(const ModelSpec& s, Workspace& ws, std::span<const int> labels)
{
    const std::size_t C = static_cast<std::size_t>(s.num_classes);
    const double inv = 1.0 / static_cast<double>(ws.batch);
    double loss = 0.0;
    for (std::size_t n = 0; n < ws.batch; ++n) {
        const std::span<const double> p(ws.probs.data() + n * C, C);
        loss += cross_entropy(p, labels[n]);
        for (std::size_t c = 0; c < C; ++c)
            ws.d_logits[n * C + c] = (p[c] - (static_cast<int>(c) == labels[n] ? 1.0 : 0.0)) * inv;
    }
    return loss * inv;
}

}  // namespace

std::string_view arch_name(Arch a) { return a == Arch::mlp ? "mlp" : "cnn1d"; }

Arch parse_arch(std::string_view s)
{
    if (s == "mlp")
        return Arch::mlp;
    if (s == "cnn1d")
        return Arch::cnn1d;
    throw std::invalid_argument("unknown architecture '" + std::string(s) + "' (expected mlp or cnn1d)");
}

std::string_view front_end_name(FrontEnd f) { return f == FrontEnd::iq ? "iq" : "invariant"; }

FrontEnd parse_front_end(std::string_view s)
{
    if (s == "iq")
        return FrontEnd::iq;
    if (s == "invariant")
        return FrontEnd::invariant;
    throw std::invalid_argument("unknown front end '" + std::string(s) + "' (expected iq or invariant)");
}

void ModelSpec::validate() const
{
    if (frame_len < 1)
        throw std::invalid_argument("model spec: frame_len must be >= 1");
    if (num_classes < 2)
        throw std::invalid_argument("model spec: num_classes must be >= 2");
    if (embedding_dim < 1)
        throw std::invalid_argument("model spec: embedding_dim must be >= 1");
    if (front_end == FrontEnd::invariant && (symbol_lag < 1 || symbol_lag >= frame_len))
        throw std::invalid_argument("model spec: symbol_lag must be in [1, frame_len)");
    if (arch == Arch::mlp) {
        if (hidden < 1)
            throw std::invalid_argument("model spec: hidden width must be >= 1");
    } else {
        if (conv1_channels < 1 || conv2_channels < 1 || kernel < 1 || stride < 1)
            throw std::invalid_argument("model spec: conv channels, kernel and stride must be >= 1");
        if (conv2_shape(*this).out_len() == 0 || conv1_shape(*this).out_len() == 0)
            throw std::invalid_argument("model spec: frame too short for the convolution stack");
    }
}

std::uint64_t ModelSpec::digest() const
{
    Digest h;
    h.str("foqus.model.v1").str(arch_name(arch)).str(front_end_name(front_end));
    for (int v : {frame_len, symbol_lag, hidden, conv1_channels, conv2_channels, kernel, stride, embedding_dim,
                  num_classes})
        h.i64(v);
    return h.value();
}

void TrainConfig::validate() const
{
    if (epochs < 0)
        throw std::invalid_argument("train config: epochs must be >= 0");
    if (batch_size < 1)
        throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
        throw std::invalid_argument("train config: learning_rate must be finite and >= 0");
    if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0)
        throw std::invalid_argument("train config: momentum must be in [0, 1)");
}

std::uint64_t TrainConfig::digest() const
{
    return Digest()
        .str("foqus.train.v1")
        .i64(epochs)
        .i64(batch_size)
        .f64(learning_rate)
        .f64(momentum)
        .u64(seed)
        .u64(shuffle ? 1 : 0)
        .value();
}

std::size_t Parameters::index_of(std::string_view name) const
{
    for (std::size_t k = 0; k < layout.size(); ++k)
        if (layout[k].name == name)
            return k;
    throw std::out_of_range("no parameter tensor named '" + std::string(name) + "'");
}

std::span<double> Parameters::tensor(std::string_view name)
{
    const auto& info = layout[index_of(name)];
    return {values.data() + info.offset, info.size};
}

std::span<const double> Parameters::tensor(std::string_view name) const
{
    const auto& info = layout[index_of(name)];
    return {values.data() + info.offset, info.size};
}

bool Parameters::all_finite() const noexcept
{
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::vector<TensorInfo> parameter_layout(const ModelSpec& spec)
{
    spec.validate();
    std::vector<TensorInfo> out;
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<std::size_t> shape, std::size_t fan_in, bool bias) {
        std::size_t n = 1;
        for (auto d : shape)
            n *= d;
        if (n == 0)
            throw std::invalid_argument("model spec: zero-width layer '" + name + "'");
        out.push_back({std::move(name), std::move(shape), offset, n, fan_in, bias});
        offset += n;
    };
    const auto E = static_cast<std::size_t>(spec.embedding_dim);
    const auto C = static_cast<std::size_t>(spec.num_classes);
    if (spec.arch == Arch::mlp) {
        const auto D = spec.input_size();
        const auto H = static_cast<std::size_t>(spec.hidden);
        add("fc1.weight", {H, D}, D, false);
        add("fc1.bias", {H}, D, true);
        add("fc2.weight", {E, H}, H, false);
        add("fc2.bias", {E}, H, true);
    } else {
        const auto c1 = conv1_shape(spec);
        const auto c2 = conv2_shape(spec);
        add("conv1.weight", {c1.out_ch, c1.in_ch, c1.kernel}, c1.in_ch * c1.kernel, false);
        add("conv1.bias", {c1.out_ch}, c1.in_ch * c1.kernel, true);
        add("conv2.weight", {c2.out_ch, c2.in_ch, c2.kernel}, c2.in_ch * c2.kernel, false);
        add("conv2.bias", {c2.out_ch}, c2.in_ch * c2.kernel, true);
        add("fc.weight", {E, c2.out_ch}, c2.out_ch, false);
        add("fc.bias", {E}, c2.out_ch, true);
    }
    add("out.weight", {C, E}, E, false);
    add("out.bias", {C}, E, true);
    return out;
}

Parameters zero_params(const ModelSpec& spec)
{
    Parameters p;
    p.layout = parameter_layout(spec);
    p.values.assign(p.layout.back().offset + p.layout.back().size, 0.0);
    return p;
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed)
{
    Parameters p = zero_params(spec);
    Rng rng(seed);
    for (const auto& t : p.layout) {
        if (t.is_bias)
            continue;
        const double bound = std::sqrt(6.0 / static_cast<double>(t.fan_in));
        for (std::size_t k = 0; k < t.size; ++k)
            p.values[t.offset + k] = (2.0 * uniform_unit(rng) - 1.0) * bound;
    }
    return p;
}

std::vector<double> prepare_input(const ModelSpec& spec, const IQFrame& frame)
{
    const auto L = static_cast<std::size_t>(spec.frame_len);
    if (frame.i.size() != L || frame.q.size() != L)
        throw std::invalid_argument("frame length " + std::to_string(frame.i.size()) + " does not match model input " +
                                    std::to_string(L));
    std::vector<double> out(2 * L);
    if (spec.front_end == FrontEnd::iq) {
        std::copy(frame.i.begin(), frame.i.end(), out.begin());
        std::copy(frame.q.begin(), frame.q.end(), out.begin() + static_cast<std::ptrdiff_t>(L));
        return out;
    }
    const auto lag = static_cast<std::size_t>(spec.symbol_lag);
    for (std::size_t n = 0; n < L; ++n) {
        const double I = frame.i[n], Q = frame.q[n];
        out[n] = std::sqrt(I * I + Q * Q);
        if (n >= lag) {
            const double Ip = frame.i[n - lag], Qp = frame.q[n - lag];
            out[L + n] = std::abs(std::atan2(Q * Ip - I * Qp, I * Ip + Q * Qp));
        } else {
            out[L + n] = 0.0;
        }
    }
    std::sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(L));
    std::sort(out.begin() + static_cast<std::ptrdiff_t>(L), out.end());
    return out;
}

Matrix prepare_inputs(const ModelSpec& spec, const Dataset& d, std::span<const std::size_t> positions)
{
    Matrix m;
    m.rows = positions.size();
    m.cols = spec.input_size();
    m.data.resize(m.rows * m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const auto v = prepare_input(spec, d.frames.at(positions[r]));
        std::copy(v.begin(), v.end(), m.row(r).begin());
    }
    return m;
}

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> p(logits.size());
    softmax_rows(logits, 1, logits.size(), p);
    return p;
}

double cross_entropy(std::span<const double> probs, int label)
{
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
        throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " out of range");
    return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbFloor));
}

int argmax(std::span<const double> v)
{
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

Prediction forward_prepared(const ModelSpec& spec, const Parameters& params, std::span<const double> input)
{
    if (input.size() != spec.input_size())
        throw std::invalid_argument("forward: input has " + std::to_string(input.size()) + " values, model expects " +
                                    std::to_string(spec.input_size()));
    Workspace ws;
    ws.resize(spec, 1);
    forward_batch(spec, params, input, ws);
    return {ws.logits, ws.probs, ws.emb};
}

Prediction forward(const ModelSpec& spec, const Parameters& params, const IQFrame& frame)
{
    return forward_prepared(spec, params, prepare_input(spec, frame));
}

BatchPrediction predict(const ModelSpec& spec, const Parameters& params, const Matrix& inputs)
{
    constexpr std::size_t kChunk = 64;
    const std::size_t C = static_cast<std::size_t>(spec.num_classes);
    const std::size_t E = static_cast<std::size_t>(spec.embedding_dim);
    BatchPrediction out;
    out.probs = {inputs.rows, C, std::vector<double>(inputs.rows * C)};
    out.embeddings = {inputs.rows, E, std::vector<double>(inputs.rows * E)};
    const auto chunks = static_cast<std::int64_t>((inputs.rows + kChunk - 1) / kChunk);

    // Rows are independent, so each chunk writes its own slots.
#pragma omp parallel
    {
        Workspace ws;
#pragma omp for schedule(static)
        for (std::int64_t ch = 0; ch < chunks; ++ch) {
            const std::size_t begin = static_cast<std::size_t>(ch) * kChunk;
            const std::size_t n = std::min(kChunk, inputs.rows - begin);
            ws.resize(spec, n);
            forward_batch(spec, params, std::span<const double>(inputs.data).subspan(begin * inputs.cols, n * inputs.cols),
                          ws);
            std::copy(ws.probs.begin(), ws.probs.end(), out.probs.data.begin() + static_cast<std::ptrdiff_t>(begin * C));
            std::copy(ws.emb.begin(), ws.emb.end(), out.embeddings.data.begin() + static_cast<std::ptrdiff_t>(begin * E));
        }
    }
    return out;
}

double loss_and_gradient(const ModelSpec& spec, const Parameters& params, std::span<const double> inputs,
                         std::span<const int> labels, std::span<double> grad)
{
    if (labels.empty() || inputs.size() != labels.size() * spec.input_size())
        throw std::invalid_argument("loss_and_gradient: inputs and labels disagree in batch size");
    if (grad.size() != params.values.size())
        throw std::invalid_argument("loss_and_gradient: gradient buffer has the wrong size");
    Workspace ws;
    ws.resize(spec, labels.size());
    forward_batch(spec, params, inputs, ws);
    const double loss = batch_loss(spec, ws, labels);
    backward_batch(spec, params, inputs, ws, grad);
    return loss;
}

TrainSet make_train_set(const ModelSpec& spec, const Dataset& d, std::span<const std::size_t> positions)
{
    TrainSet t;
    t.inputs = prepare_inputs(spec, d, positions);
    t.labels.reserve(positions.size());
    for (auto p : positions) {
        const int label = d.frames.at(p).label;
        if (label < 0 || label >= spec.num_classes)
            throw std::invalid_argument("label " + std::to_string(label) + " out of range for a " +
                                        std::to_string(spec.num_classes) + "-class model");
        t.labels.push_back(label);
    }
    return t;
}

TrainState make_train_state(const ModelSpec& spec, std::uint64_t seed)
{
    TrainState st;
    st.params = init_params(spec, derive_seed(seed, {string_tag("init")}));
    st.velocity.assign(st.params.values.size(), 0.0);
    st.rng.seed(derive_seed(seed, {string_tag("shuffle")}));
    return st;
}

double train_epoch(const ModelSpec& spec, TrainState& state, const TrainSet& data, const TrainConfig& cfg)
{
    cfg.validate();
    const std::size_t N = data.labels.size();
    if (N == 0)
        throw std::invalid_argument("train_epoch: empty training set");
    if (!state.params.all_finite())
        throw TrainingError("train_epoch: parameters contain non-finite values");

    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle)
        std::shuffle(order.begin(), order.end(), state.rng);

    const std::size_t D = data.inputs.cols;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<double> x;
    std::vector<int> y;
    std::vector<double> grad(state.params.values.size());
    Workspace ws;
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < N; begin += bs, ++batches) {
        const std::size_t n = std::min(bs, N - begin);
        x.resize(n * D);
        y.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const auto src = data.inputs.row(order[begin + k]);
            std::copy(src.begin(), src.end(), x.begin() + static_cast<std::ptrdiff_t>(k * D));
            y[k] = data.labels[order[begin + k]];
        }
        ws.resize(spec, n);
        forward_batch(spec, state.params, x, ws);
        const double loss = batch_loss(spec, ws, y);
        backward_batch(spec, state.params, x, ws, grad);
        const bool finite = std::isfinite(loss) &&
                            std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
        if (!finite)
            throw TrainingError("non-finite loss or gradient in epoch " + std::to_string(state.epochs_done + 1) +
                                ", batch " + std::to_string(batches));
        for (std::size_t k = 0; k < grad.size(); ++k) {
            state.velocity[k] = cfg.momentum * state.velocity[k] + grad[k];
            state.params.values[k] -= cfg.learning_rate * state.velocity[k];
        }
        total += loss;
    }
    if (!state.params.all_finite())
        throw TrainingError("parameters became non-finite in epoch " + std::to_string(state.epochs_done + 1));
    ++state.epochs_done;
    return total / static_cast<double>(batches);
}

double finite_diff_check(const ModelSpec& spec, std::uint64_t seed, const FiniteDiffOptions& opts)
{
    Parameters params = init_params(spec, derive_seed(seed, {string_tag("fd-init")}));
    Rng rng(derive_seed(seed, {string_tag("fd-batch")}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto B = static_cast<std::size_t>(opts.batch);
    std::vector<double> x(B * spec.input_size());
    for (auto& v : x)
        v = gauss(rng);
    std::vector<int> y(B);
    for (auto& l : y)
        l = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.num_classes)));

    std::vector<double> grad(params.values.size());
    loss_and_gradient(spec, params, x, y, grad);
    if (opts.corrupt)
        opts.corrupt(grad);

    std::vector<std::size_t> idx(params.values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > 1000) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(opts.samples));
    }

    std::vector<double> scratch(params.values.size());
    double worst = 0.0;
    for (auto k : idx) {
        const double orig = params.values[k];
        params.values[k] = orig + opts.step;
        const double up = loss_and_gradient(spec, params, x, y, scratch);
        params.values[k] = orig - opts.step;
        const double down = loss_and_gradient(spec, params, x, y, scratch);
        params.values[k] = orig;
        const double numeric = (up - down) / (2.0 * opts.step);
        const double denom = std::max({std::abs(numeric), std::abs(grad[k]), 1e-8});
        worst = std::max(worst, std::abs(numeric - grad[k]) / denom);
    }
    return worst;
}

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const Parameters& params,
                     std::uint64_t seed, bool force)
{
    if (params.layout != parameter_layout(spec))
        throw std::invalid_argument("save_checkpoint: parameters do not match the model spec");
    nlohmann::ordered_json h;
    h["format"] = "foqus-checkpoint";
    h["version"] = 1;
    h["arch"] = std::string(arch_name(spec.arch));
    h["front_end"] = std::string(front_end_name(spec.front_end));
    h["frame_len"] = spec.frame_len;
    h["symbol_lag"] = spec.symbol_lag;
    h["hidden"] = spec.hidden;
    h["conv1_channels"] = spec.conv1_channels;
    h["conv2_channels"] = spec.conv2_channels;
    h["kernel"] = spec.kernel;
    h["stride"] = spec.stride;
    h["C"] = spec.num_classes;
    h["E"] = spec.embedding_dim;
    h["seed"] = seed;
    h["shapes"] = nlohmann::json::array();
    for (const auto& t : params.layout)
        h["shapes"].push_back({{"name", t.name}, {"shape", t.shape}});

    AtomicFile file(path, force);
    auto& out = file.stream();
    out << h.dump() << '\n';
    for (double v : params.values) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    file.commit();
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::string header;
    std::getline(in, header);
    const auto h = parse_json_line(header, path.string(), 1);
    LineContext ctx{path.string(), 1};
    if (ctx.string(h, "format") != "foqus-checkpoint" || ctx.integer(h, "version") != 1)
        ctx.fail("not a version-1 checkpoint");

    Checkpoint cp;
    try {
        cp.spec.arch = parse_arch(ctx.string(h, "arch"));
        cp.spec.front_end = parse_front_end(ctx.string(h, "front_end"));
    } catch (const std::invalid_argument& e) {
        ctx.fail(e.what());
    }
    cp.spec.frame_len = static_cast<int>(ctx.integer(h, "frame_len"));
    cp.spec.symbol_lag = static_cast<int>(ctx.integer(h, "symbol_lag"));
    cp.spec.hidden = static_cast<int>(ctx.integer(h, "hidden"));
    cp.spec.conv1_channels = static_cast<int>(ctx.integer(h, "conv1_channels"));
    cp.spec.conv2_channels = static_cast<int>(ctx.integer(h, "conv2_channels"));
    cp.spec.kernel = static_cast<int>(ctx.integer(h, "kernel"));
    cp.spec.stride = static_cast<int>(ctx.integer(h, "stride"));
    cp.spec.num_classes = static_cast<int>(ctx.integer(h, "C"));
    cp.spec.embedding_dim = static_cast<int>(ctx.integer(h, "E"));
    cp.seed = ctx.get(h, "seed").get<std::uint64_t>();
    try {
        cp.params = zero_params(cp.spec);
    } catch (const std::invalid_argument& e) {
        ctx.fail(e.what());
    }
    const auto& shapes = ctx.get(h, "shapes");
    if (!shapes.is_array() || shapes.size() != cp.params.layout.size())
        ctx.fail("tensor list does not match the architecture");
    for (std::size_t k = 0; k < shapes.size(); ++k)
        if (shapes[k].value("name", "") != cp.params.layout[k].name ||
            shapes[k].value("shape", std::vector<std::size_t>{}) != cp.params.layout[k].shape)
            ctx.fail("tensor " + std::to_string(k) + " does not match the architecture");

    for (auto& v : cp.params.values) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4))
            throw FormatError(path.string() + ": payload truncated");
        const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        v = static_cast<double>(std::bit_cast<float>(bits));
    }
    if (in.peek() != std::ifstream::traits_type::eof())
        throw FormatError(path.string() + ": trailing bytes after payload");
    return cp;
}

}  // namespace foqus

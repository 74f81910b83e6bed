#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <limits>
#include <random>

#include "foqus/nn.hpp"
#include "support.hpp"

using namespace foqus;

namespace {

ModelSpec tiny_mlp()
{
    ModelSpec s;
    s.arch = Arch::mlp;
    s.front_end = FrontEnd::iq;
    s.frame_len = 8;
    s.hidden = 10;
    s.embedding_dim = 6;
    s.num_classes = 4;
    return s;
}

ModelSpec tiny_cnn()
{
    ModelSpec s;
    s.arch = Arch::cnn1d;
    s.front_end = FrontEnd::iq;
    s.frame_len = 24;
    s.conv1_channels = 3;
    s.conv2_channels = 4;
    s.kernel = 3;
    s.stride = 2;
    s.embedding_dim = 5;
    s.num_classes = 3;
    return s;
}

IQFrame random_frame(std::mt19937_64& rng, int L)
{
    std::normal_distribution<double> g(0.0, 1.0);
    IQFrame f;
    for (int n = 0; n < L; ++n) {
        f.i.push_back(g(rng));
        f.q.push_back(g(rng));
    }
    return f;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b)
{
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Two Gaussian blobs at +/-2 on every input coordinate.
TrainSet separable_set(const ModelSpec& spec, int per_class, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.3);
    TrainSet t;
    t.inputs.rows = static_cast<std::size_t>(2 * per_class);
    t.inputs.cols = spec.input_size();
    for (int k = 0; k < 2 * per_class; ++k) {
        const int label = k % 2;
        for (std::size_t d = 0; d < spec.input_size(); ++d)
            t.inputs.data.push_back((label == 0 ? 2.0 : -2.0) + g(rng));
        t.labels.push_back(label);
    }
    return t;
}

}  // namespace

TEST_CASE("parameter layouts follow the reference architectures")
{
    const ModelSpec mlp;
    const auto L = parameter_layout(mlp);
    REQUIRE(L.size() == 6);
    CHECK(L[0].name == "fc1.weight");
    CHECK(L[0].shape == std::vector<std::size_t>{128, 256});
    CHECK(L[2].shape == std::vector<std::size_t>{64, 128});
    CHECK(L[4].shape == std::vector<std::size_t>{6, 64});

    ModelSpec cnn;
    cnn.arch = Arch::cnn1d;
    const auto C = parameter_layout(cnn);
    REQUIRE(C.size() == 8);
    CHECK(C[0].shape == std::vector<std::size_t>{16, 2, 7});
    CHECK(C[2].shape == std::vector<std::size_t>{32, 16, 7});
    CHECK(C[4].shape == std::vector<std::size_t>{64, 32});
    CHECK(C[6].shape == std::vector<std::size_t>{6, 64});
}

TEST_CASE("zero-width layers are rejected")
{
    auto s = tiny_mlp();
    s.hidden = 0;
    CHECK_THROWS_AS(init_params(s, 1), std::invalid_argument);
    s = tiny_mlp();
    s.embedding_dim = 0;
    CHECK_THROWS_AS(init_params(s, 1), std::invalid_argument);
}

TEST_CASE("initialization is deterministic with zero biases and He variance")
{
    const ModelSpec s;
    const auto a = init_params(s, 11), b = init_params(s, 11);
    CHECK(a == b);
    CHECK_FALSE(a == init_params(s, 12));
    for (const auto& t : a.layout)
        if (t.is_bias)
            for (std::size_t k = 0; k < t.size; ++k)
                CHECK(a.values[t.offset + k] == 0.0);

    const auto w = a.tensor("fc1.weight");
    REQUIRE(w.size() >= 10000);
    double mean = 0.0, var = 0.0;
    for (double v : w)
        mean += v;
    mean /= static_cast<double>(w.size());
    for (double v : w)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size() - 1);
    const double expected = 2.0 / 256.0;
    CHECK(std::abs(var - expected) / expected < 0.2);
}

TEST_CASE("softmax and forward outputs")
{
    SUBCASE("zero final layer gives uniform probabilities")
    {
        const auto s = tiny_mlp();
        auto p = init_params(s, 3);
        for (auto name : {"out.weight", "out.bias"})
            for (auto& v : p.tensor(name))
                v = 0.0;
        std::mt19937_64 rng(1);
        const auto out = forward(s, p, random_frame(rng, s.frame_len));
        for (double q : out.probs)
            CHECK(q == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(out.embedding.size() == 6);
    }
    SUBCASE("probabilities sum to one on random inputs")
    {
        std::mt19937_64 rng(2);
        for (const auto& s : {tiny_mlp(), tiny_cnn()}) {
            const auto p = init_params(s, 4);
            for (int k = 0; k < 50; ++k) {
                const auto out = forward(s, p, random_frame(rng, s.frame_len));
                double sum = 0.0;
                for (double q : out.probs) {
                    CHECK(q >= 0.0);
                    sum += q;
                }
                CHECK(std::abs(sum - 1.0) < 1e-6);
            }
        }
    }
    SUBCASE("shifting logits leaves softmax unchanged")
    {
        const std::vector<double> z{0.3, -1.2, 2.5, 0.0};
        auto shifted = z;
        for (auto& v : shifted)
            v += 123.0;
        const auto a = softmax(z), b = softmax(shifted);
        for (std::size_t k = 0; k < a.size(); ++k)
            CHECK(std::abs(a[k] - b[k]) < 1e-9);
        const auto big = softmax(std::vector<double>{1000.0, 0.0});
        CHECK(std::isfinite(big[1]));
    }
    SUBCASE("shape mismatch is rejected")
    {
        std::mt19937_64 rng(3);
        const auto s = tiny_mlp();
        CHECK_THROWS_AS(forward(s, init_params(s, 1), random_frame(rng, 9)), std::invalid_argument);
    }
}

TEST_CASE("cross entropy")
{
    const std::vector<double> uniform(6, 1.0 / 6.0);
    CHECK(cross_entropy(uniform, 2) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    CHECK(cross_entropy(std::vector<double>{0.0, 1.0}, 1) == 0.0);
    CHECK(cross_entropy(std::vector<double>{0.25, 0.75}, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(cross_entropy(std::vector<double>{0.0, 1.0}, 0) == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(cross_entropy(uniform, 6), std::out_of_range);
    CHECK_THROWS_AS(cross_entropy(uniform, -1), std::out_of_range);
}

TEST_CASE("argmax breaks ties toward the lowest index")
{
    CHECK(argmax(std::vector<double>{0.2, 0.4, 0.4}) == 1);
    CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
}

TEST_CASE("backprop agrees with finite differences")
{
    CHECK(finite_diff_check(tiny_mlp(), 1) < 1e-3);
    CHECK(finite_diff_check(tiny_cnn(), 2) < 1e-3);

    ModelSpec full;  // more than 1000 parameters: random subset
    CHECK(finite_diff_check(full, 3) < 1e-3);
    full.arch = Arch::cnn1d;
    CHECK(finite_diff_check(full, 4) < 1e-3);
}

TEST_CASE("a corrupted gradient is detected")
{
    FiniteDiffOptions opts;
    opts.corrupt = [](std::span<double> g) {
        // fc2.weight[0] sits right after fc1.weight (10 x 16) and fc1.bias (10).
        g[170] = -g[170] + 1.0;
    };
    CHECK(finite_diff_check(tiny_mlp(), 1, opts) > 0.1);
}

TEST_CASE("final-bias gradient for zero inputs and zero parameters")
{
    const auto s = tiny_mlp();
    const auto p = zero_params(s);
    const std::vector<double> x(3 * s.input_size(), 0.0);
    const std::vector<int> y{0, 2, 2};
    std::vector<double> grad(p.values.size());
    const double loss = loss_and_gradient(s, p, x, y, grad);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    const auto& info = p.layout[p.index_of("out.bias")];
    const std::vector<double> expected{(0.25 * 3 - 1) / 3, 0.25, (0.25 * 3 - 2) / 3, 0.25};
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(std::abs(grad[info.offset + c] - expected[c]) < 1e-6);
}

TEST_CASE("training steps")
{
    const auto s = tiny_mlp();
    const auto data = separable_set(s, 20, 5);
    TrainConfig cfg;
    cfg.batch_size = 8;

    SUBCASE("zero learning rate leaves parameters bit-identical")
    {
        auto st = make_train_state(s, 9);
        const auto before = st.params.values;
        cfg.learning_rate = 0.0;
        train_epoch(s, st, data, cfg);
        CHECK(same_bits(before, st.params.values));
    }
    SUBCASE("two runs are bit-identical")
    {
        auto a = make_train_state(s, 9), b = make_train_state(s, 9);
        for (int e = 0; e < 3; ++e) {
            train_epoch(s, a, data, cfg);
            train_epoch(s, b, data, cfg);
        }
        CHECK(same_bits(a.params.values, b.params.values));
    }
    SUBCASE("a separable two-class set is fitted within 20 epochs")
    {
        auto s2 = s;
        s2.num_classes = 2;
        auto st = make_train_state(s2, 9);
        double loss = 0.0;
        for (int e = 0; e < 20; ++e)
            loss = train_epoch(s2, st, data, cfg);
        CHECK(loss < 0.1);
    }
    SUBCASE("non-finite values are a hard failure naming the batch")
    {
        auto bad = data;
        bad.inputs.data[bad.inputs.cols * 17] = std::numeric_limits<double>::infinity();
        auto st = make_train_state(s, 9);
        cfg.shuffle = false;
        try {
            train_epoch(s, st, bad, cfg);
            FAIL("expected TrainingError");
        } catch (const TrainingError& e) {
            CHECK(std::string(e.what()).find("epoch 1, batch 2") != std::string::npos);
        }
    }
}

TEST_CASE("the invariant front end ignores carrier phase")
{
    const ModelSpec s;
    const auto f = generate_dataset(DatasetSpec{.frames_per_class_per_snr = 5}).frames.front();
    auto rotated = f;
    const std::complex<double> r = std::polar(1.0, 1.234);
    for (std::size_t n = 0; n < f.length(); ++n) {
        const auto z = std::complex<double>(f.i[n], f.q[n]) * r;
        rotated.i[n] = z.real();
        rotated.q[n] = z.imag();
    }
    const auto a = prepare_input(s, f), b = prepare_input(s, rotated);
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(std::abs(a[k] - b[k]) < 1e-9);
    auto iq = s;
    iq.front_end = FrontEnd::iq;
    CHECK(prepare_input(iq, f) != prepare_input(iq, rotated));
}

TEST_CASE("checkpoints store float32 parameters")
{
    testing::TempDir dir;
    for (const auto& s : {tiny_mlp(), tiny_cnn()}) {
        const auto p = init_params(s, 21);
        save_checkpoint(dir / "m.ckpt", s, p, 21, true);
        const auto cp = load_checkpoint(dir / "m.ckpt");
        CHECK(cp.spec == s);
        CHECK(cp.seed == 21);
        REQUIRE(cp.params.values.size() == p.values.size());
        for (std::size_t k = 0; k < p.values.size(); ++k)
            CHECK(cp.params.values[k] == static_cast<double>(static_cast<float>(p.values[k])));
    }
    CHECK_THROWS(save_checkpoint(dir / "m.ckpt", tiny_mlp(), init_params(tiny_mlp(), 1), 1));
    CHECK_THROWS_AS(save_checkpoint(dir / "x.ckpt", tiny_cnn(), init_params(tiny_mlp(), 1), 1), std::invalid_argument);
}

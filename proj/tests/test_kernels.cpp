#include <doctest.h>

#include <array>

#include <cstring>
#include <random>
#include <vector>

#include <omp.h>

#include "foqus/kernels.hpp"

namespace k = foqus::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v)
        x = g(rng);
    return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b)
{
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("dense kernels match the serial reference bit for bit")
{
    std::mt19937_64 rng(1);
    for (int threads : {1, 2, 4}) {
        omp_set_num_threads(threads);
        // The large shape crosses the parallel threshold, the small one does not.
        using Shape = std::array<std::size_t, 3>;
        for (auto [B, in, out] : {Shape{3, 5, 4}, Shape{64, 256, 128}}) {
            auto x = random_vector(B * in, rng), w = random_vector(out * in, rng), b = random_vector(out, rng);
            auto dy = random_vector(B * out, rng);
            std::vector<double> y1(B * out), y2(B * out);
            k::reference::dense_forward(x, w, b, B, in, out, y1);
            k::dense_forward(x, w, b, B, in, out, y2);
            CHECK(same_bits(y1, y2));

            std::vector<double> dw1(out * in), db1(out), dx1(B * in), dw2(out * in, 7.0), db2(out, 7.0), dx2(B * in, 7.0);
            k::reference::dense_backward(x, w, dy, B, in, out, dw1, db1, dx1);
            k::dense_backward(x, w, dy, B, in, out, dw2, db2, dx2);
            CHECK(same_bits(dw1, dw2));
            CHECK(same_bits(db1, db2));
            CHECK(same_bits(dx1, dx2));
        }
    }
    omp_set_num_threads(omp_get_num_procs());
}

TEST_CASE("conv1d kernels match the serial reference bit for bit")
{
    std::mt19937_64 rng(2);
    for (int threads : {1, 3}) {
        omp_set_num_threads(threads);
        for (const auto& s : {k::Conv1dShape{2, 17, 3, 5, 2}, k::Conv1dShape{2, 128, 16, 7, 2},
                              k::Conv1dShape{16, 61, 32, 7, 2}}) {
            const std::size_t B = 9;
            auto x = random_vector(B * s.in_ch * s.in_len, rng);
            auto w = random_vector(s.out_ch * s.in_ch * s.kernel, rng);
            auto b = random_vector(s.out_ch, rng);
            auto dy = random_vector(B * s.out_ch * s.out_len(), rng);
            std::vector<double> y1(dy.size()), y2(dy.size());
            k::reference::conv1d_forward(x, w, b, B, s, y1);
            k::conv1d_forward(x, w, b, B, s, y2);
            CHECK(same_bits(y1, y2));

            std::vector<double> dw1(w.size()), db1(b.size()), dx1(x.size()), dw2(w.size()), db2(b.size()),
                dx2(x.size());
            k::reference::conv1d_backward(x, w, dy, B, s, dw1, db1, dx1);
            k::conv1d_backward(x, w, dy, B, s, dw2, db2, dx2);
            CHECK(same_bits(dw1, dw2));
            CHECK(same_bits(db1, db2));
            CHECK(same_bits(dx1, dx2));
        }
    }
    omp_set_num_threads(omp_get_num_procs());
}

TEST_CASE("conv1d forward against a hand-computed output")
{
    // One channel, kernel [1, -1], stride 2 over [1, 2, 4, 8, 16]: outputs at
    // t = 0, 1 are (1 - 2) + b and (4 - 8) + b.
    const k::Conv1dShape s{1, 5, 1, 2, 2};
    CHECK(s.out_len() == 2);
    const std::vector<double> x{1, 2, 4, 8, 16}, w{1, -1}, b{0.5};
    std::vector<double> y(2);
    k::conv1d_forward(x, w, b, 1, s, y);
    CHECK(y == std::vector<double>{-0.5, -3.5});
    CHECK(k::Conv1dShape{1, 3, 1, 5, 1}.out_len() == 0);
}

TEST_CASE("dense backward without an input gradient")
{
    const std::vector<double> x{1, 2}, w{3, 4}, dy{0.5};
    std::vector<double> dw(2), db(1);
    k::dense_backward(x, w, dy, 1, 2, 1, dw, db, {});
    CHECK(dw == std::vector<double>{0.5, 1.0});
    CHECK(db == std::vector<double>{0.5});
}

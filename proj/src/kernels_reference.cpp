// Serial reference kernels. Straightforward scatter loops; kept for testing
// the OpenMP kernels and as the benchmark baseline.

#include "foqus/kernels.hpp"

#include <algorithm>

namespace foqus::kernels::reference {

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::size_t batch, std::size_t in, std::size_t out, std::span<double> y)
{
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out; ++o) {
            y[n * out + o] = b[o];
            for (std::size_t i = 0; i < in; ++i)
                y[n * out + o] += w[o * in + i] * x[n * in + i];
        }
}

void dense_backward(std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                    std::size_t batch, std::size_t in, std::size_t out,
                    std::span<double> dw, std::span<double> db, std::span<double> dx)
{
    std::fill(dw.begin(), dw.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy[n * out + o];
            db[o] += g;
            for (std::size_t i = 0; i < in; ++i) {
                dw[o * in + i] += g * x[n * in + i];
                if (!dx.empty())
                    dx[n * in + i] += g * w[o * in + i];
            }
        }
}

void conv1d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::size_t batch, const Conv1dShape& s, std::span<double> y)
{
    const std::size_t lo = s.out_len();
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < s.out_ch; ++c)
            for (std::size_t t = 0; t < lo; ++t) {
                double acc = b[c];
                for (std::size_t ci = 0; ci < s.in_ch; ++ci)
                    for (std::size_t k = 0; k < s.kernel; ++k)
                        acc += w[(c * s.in_ch + ci) * s.kernel + k] * x[(n * s.in_ch + ci) * s.in_len + t * s.stride + k];
                y[(n * s.out_ch + c) * lo + t] = acc;
            }
}

void conv1d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                     std::size_t batch, const Conv1dShape& s,
                     std::span<double> dw, std::span<double> db, std::span<double> dx)
{
    const std::size_t lo = s.out_len();
    std::fill(dw.begin(), dw.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < s.out_ch; ++c)
            for (std::size_t t = 0; t < lo; ++t) {
                const double g = dy[(n * s.out_ch + c) * lo + t];
                db[c] += g;
                for (std::size_t ci = 0; ci < s.in_ch; ++ci)
                    for (std::size_t k = 0; k < s.kernel; ++k) {
                        const std::size_t xi = (n * s.in_ch + ci) * s.in_len + t * s.stride + k;
                        const std::size_t wi = (c * s.in_ch + ci) * s.kernel + k;
                        dw[wi] += g * x[xi];
                        if (!dx.empty())
                            dx[xi] += g * w[wi];
                    }
            }
}

}  // namespace foqus::kernels::reference

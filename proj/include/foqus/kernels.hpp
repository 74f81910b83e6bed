#pragma once

#include <cstddef>
#include <span>

// Batched layer kernels used by the trainer. Layouts are row-major:
//   dense:  x[batch][in], w[out][in], y[batch][out]
//   conv1d: x[batch][in_ch][in_len], w[out_ch][in_ch][kernel], y[batch][out_ch][out_len]
// Backward kernels overwrite dw/db/dx. dx may be empty to skip the input gradient.
//
// Every output element is reduced by exactly one thread in a fixed order
// (batch ascending, then position ascending), so the OpenMP kernels are
// bit-identical to the serial versions in `reference` at any thread count.

namespace foqus::kernels {

struct Conv1dShape {
    std::size_t in_ch = 0;
    std::size_t in_len = 0;
    std::size_t out_ch = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;

    /// Valid (unpadded) output length; 0 when the kernel does not fit.
    std::size_t out_len() const noexcept { return in_len < kernel ? 0 : (in_len - kernel) / stride + 1; }
};

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::size_t batch, std::size_t in, std::size_t out, std::span<double> y);

void dense_backward(std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                    std::size_t batch, std::size_t in, std::size_t out,
                    std::span<double> dw, std::span<double> db, std::span<double> dx);

void conv1d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::size_t batch, const Conv1dShape& s, std::span<double> y);

void conv1d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                     std::size_t batch, const Conv1dShape& s,
                     std::span<double> dw, std::span<double> db, std::span<double> dx);

namespace reference {

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::size_t batch, std::size_t in, std::size_t out, std::span<double> y);

void dense_backward(std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                    std::size_t batch, std::size_t in, std::size_t out,
                    std::span<double> dw, std::span<double> db, std::span<double> dx);

void conv1d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::size_t batch, const Conv1dShape& s, std::span<double> y);

void conv1d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                     std::size_t batch, const Conv1dShape& s,
                     std::span<double> dw, std::span<double> db, std::span<double> dx);

}  // namespace reference
}  // namespace foqus::kernels

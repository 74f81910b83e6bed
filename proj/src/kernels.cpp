#include "foqus/kernels.hpp"

#include <cstdint>

namespace foqus::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

using Index = std::int64_t;

}  // namespace

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::size_t batch, std::size_t in, std::size_t out, std::span<double> y)
{
    const Index rows = static_cast<Index>(batch * out);
#pragma omp parallel for schedule(static) if (batch * out * in >= kParallelWork)
    for (Index r = 0; r < rows; ++r) {
        const std::size_t n = static_cast<std::size_t>(r) / out;
        const std::size_t o = static_cast<std::size_t>(r) % out;
        const double* xr = x.data() + n * in;
        const double* wr = w.data() + o * in;
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i)
            acc += wr[i] * xr[i];
        y[static_cast<std::size_t>(r)] = acc;
    }
}

void dense_backward(std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                    std::size_t batch, std::size_t in, std::size_t out,
                    std::span<double> dw, std::span<double> db, std::span<double> dx)
{
    const bool par = batch * out * in >= kParallelWork;
#pragma omp parallel if (par)
    {
#pragma omp for schedule(static) nowait
        for (Index oi = 0; oi < static_cast<Index>(out); ++oi) {
            const std::size_t o = static_cast<std::size_t>(oi);
            double* dwr = dw.data() + o * in;
            for (std::size_t i = 0; i < in; ++i)
                dwr[i] = 0.0;
            double bias = 0.0;
            for (std::size_t n = 0; n < batch; ++n) {
                const double g = dy[n * out + o];
                const double* xr = x.data() + n * in;
                for (std::size_t i = 0; i < in; ++i)
                    dwr[i] += g * xr[i];
                bias += g;
            }
            db[o] = bias;
        }
        if (!dx.empty()) {
#pragma omp for schedule(static)
            for (Index ni = 0; ni < static_cast<Index>(batch); ++ni) {
                const std::size_t n = static_cast<std::size_t>(ni);
                double* dxr = dx.data() + n * in;
                for (std::size_t i = 0; i < in; ++i)
                    dxr[i] = 0.0;
                for (std::size_t o = 0; o < out; ++o) {
                    const double g = dy[n * out + o];
                    const double* wr = w.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i)
                        dxr[i] += g * wr[i];
                }
            }
        }
    }
}

void conv1d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::size_t batch, const Conv1dShape& s, std::span<double> y)
{
    const std::size_t lo = s.out_len();
    const Index planes = static_cast<Index>(batch * s.out_ch);
#pragma omp parallel for schedule(static) if (batch * s.out_ch * lo * s.in_ch * s.kernel >= kParallelWork)
    for (Index p = 0; p < planes; ++p) {
        const std::size_t n = static_cast<std::size_t>(p) / s.out_ch;
        const std::size_t c = static_cast<std::size_t>(p) % s.out_ch;
        double* yr = y.data() + static_cast<std::size_t>(p) * lo;
        for (std::size_t t = 0; t < lo; ++t) {
            double acc = b[c];
            for (std::size_t ci = 0; ci < s.in_ch; ++ci) {
                const double* xr = x.data() + (n * s.in_ch + ci) * s.in_len + t * s.stride;
                const double* wr = w.data() + (c * s.in_ch + ci) * s.kernel;
                for (std::size_t k = 0; k < s.kernel; ++k)
                    acc += wr[k] * xr[k];
            }
            yr[t] = acc;
        }
    }
}

void conv1d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                     std::size_t batch, const Conv1dShape& s,
                     std::span<double> dw, std::span<double> db, std::span<double> dx)
{
    const std::size_t lo = s.out_len();
    const bool par = batch * s.out_ch * lo * s.in_ch * s.kernel >= kParallelWork;
#pragma omp parallel if (par)
    {
#pragma omp for schedule(static) nowait
        for (Index ci_ = 0; ci_ < static_cast<Index>(s.out_ch); ++ci_) {
            const std::size_t c = static_cast<std::size_t>(ci_);
            double* dwc = dw.data() + c * s.in_ch * s.kernel;
            for (std::size_t j = 0; j < s.in_ch * s.kernel; ++j)
                dwc[j] = 0.0;
            double bias = 0.0;
            for (std::size_t n = 0; n < batch; ++n) {
                const double* g = dy.data() + (n * s.out_ch + c) * lo;
                for (std::size_t t = 0; t < lo; ++t) {
                    for (std::size_t ci = 0; ci < s.in_ch; ++ci) {
                        const double* xr = x.data() + (n * s.in_ch + ci) * s.in_len + t * s.stride;
                        double* dwr = dwc + ci * s.kernel;
                        for (std::size_t k = 0; k < s.kernel; ++k)
                            dwr[k] += g[t] * xr[k];
                    }
                    bias += g[t];
                }
            }
            db[c] = bias;
        }
        if (!dx.empty()) {
#pragma omp for schedule(static)
            for (Index ni = 0; ni < static_cast<Index>(batch); ++ni) {
                const std::size_t n = static_cast<std::size_t>(ni);
                double* dxn = dx.data() + n * s.in_ch * s.in_len;
                for (std::size_t j = 0; j < s.in_ch * s.in_len; ++j)
                    dxn[j] = 0.0;
                for (std::size_t c = 0; c < s.out_ch; ++c) {
                    const double* g = dy.data() + (n * s.out_ch + c) * lo;
                    for (std::size_t t = 0; t < lo; ++t) {
                        for (std::size_t ci = 0; ci < s.in_ch; ++ci) {
                            double* dxr = dxn + ci * s.in_len + t * s.stride;
                            const double* wr = w.data() + (c * s.in_ch + ci) * s.kernel;
                            for (std::size_t k = 0; k < s.kernel; ++k)
                                dxr[k] += g[t] * wr[k];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace foqus::kernels

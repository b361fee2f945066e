#include "fd/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace fd::kernels {

namespace {

thread_local int g_threads = 0;

// Work below this many flops is not worth a parallel region.
constexpr int64_t kParallelCutoff = 1 << 18;

inline bool go_parallel(int64_t work) {
    return effective_threads() > 1 && work >= kParallelCutoff;
}

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double mish_one(double x) { return x * std::tanh(softplus(x)); }

inline double mish_grad_one(double x) {
    const double sp = softplus(x);
    const double t = std::tanh(sp);
    const double sig = 1.0 / (1.0 + std::exp(-x));
    return t + x * (1.0 - t * t) * sig;
}

}  // namespace

void set_threads(int n) { g_threads = n; }

int effective_threads() {
    return g_threads > 0 ? g_threads : omp_get_max_threads();
}

bool all_finite(const double* x, int64_t n) {
    // x*0 is exactly 0 for finite x and NaN for inf/NaN, so the sum is a
    // branch-free detector the compiler can vectorize.
    double probe = 0.0;
    for (int64_t i = 0; i < n; ++i) probe += x[i] * 0.0;
    return probe == 0.0;
}

// ---------------------------------------------------------------------------
// GEMM. AXPY loop order (i,k,j): the j loop vectorizes and the k accumulation
// order per output element matches ref::gemm exactly.
// ---------------------------------------------------------------------------

namespace ref {
void gemm(double* c, const double* a, const double* b, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double aip = a[static_cast<size_t>(i) * k + p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}
}  // namespace ref

void gemm(double* c, const double* a, const double* b, int m, int k, int n) {
    const int64_t work = static_cast<int64_t>(m) * k * n;
    if (!go_parallel(work)) {
        ref::gemm(c, a, b, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(effective_threads())
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        std::memset(ci, 0, sizeof(double) * static_cast<size_t>(n));
        for (int p = 0; p < k; ++p) {
            const double aip = a[static_cast<size_t>(i) * k + p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_acc(double* c, const double* a, const double* b, int m, int k, int n) {
    const int64_t work = static_cast<int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) num_threads(effective_threads()) \
    if (go_parallel(work))
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double aip = a[static_cast<size_t>(i) * k + p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_at_acc(double* c, const double* a, const double* b, int m, int k, int n) {
    const int64_t work = static_cast<int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) num_threads(effective_threads()) \
    if (go_parallel(work))
    for (int i = 0; i < k; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        for (int r = 0; r < m; ++r) {
            const double ari = a[static_cast<size_t>(r) * k + i];
            const double* br = b + static_cast<size_t>(r) * n;
            for (int j = 0; j < n; ++j) ci[j] += ari * br[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

void add(double* y, const double* a, const double* b, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void sub(double* y, const double* a, const double* b, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void mul(double* y, const double* a, const double* b, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy(double* y, double alpha, const double* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu(double* y, const double* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(double* dx, const double* x, const double* dy, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}

namespace ref {
void mish(double* y, const double* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = mish_one(x[i]);
}
}  // namespace ref

void mish_cached(double* y, double* tanh_sp, const double* x, int64_t n) {
#pragma omp parallel for schedule(static) num_threads(effective_threads()) \
    if (go_parallel(n * 16))
    for (int64_t i = 0; i < n; ++i) {
        const double t = std::tanh(softplus(x[i]));
        tanh_sp[i] = t;
        y[i] = x[i] * t;
    }
}

void mish_backward_cached(double* dx, const double* x, const double* tanh_sp,
                          const double* dy, int64_t n) {
#pragma omp parallel for schedule(static) num_threads(effective_threads()) \
    if (go_parallel(n * 12))
    for (int64_t i = 0; i < n; ++i) {
        const double t = tanh_sp[i];
        const double sig = 1.0 / (1.0 + std::exp(-x[i]));
        dx[i] += dy[i] * (t + x[i] * (1.0 - t * t) * sig);
    }
}

void mish(double* y, const double* x, int64_t n) {
#pragma omp parallel for schedule(static) num_threads(effective_threads()) \
    if (go_parallel(n * 16))
    for (int64_t i = 0; i < n; ++i) y[i] = mish_one(x[i]);
}

void mish_backward(double* dx, const double* x, const double* dy, int64_t n) {
#pragma omp parallel for schedule(static) num_threads(effective_threads()) \
    if (go_parallel(n * 24))
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * mish_grad_one(x[i]);
}

// ---------------------------------------------------------------------------
// 1D convolution. Both paths accumulate per output element in (ci,k)
// ascending order with the bias added last, so the scatter form used by the
// OpenMP kernels is bitwise-equal to the serial gather reference.
// ---------------------------------------------------------------------------

namespace {

// w[co][ci][k] -> wt[ci][k][co]; contiguous co for vector AXPY updates.
std::vector<double> transpose_w_conv(const double* w, int co, int ci, int k) {
    std::vector<double> wt(static_cast<size_t>(ci) * k * co);
    for (int oc = 0; oc < co; ++oc)
        for (int ic = 0; ic < ci; ++ic)
            for (int ik = 0; ik < k; ++ik)
                wt[(static_cast<size_t>(ic) * k + ik) * co + oc] =
                    w[(static_cast<size_t>(oc) * ci + ic) * k + ik];
    return wt;
}

// w[co][ci][k] -> wt[co][k][ci]; contiguous ci for the dx scatter.
std::vector<double> transpose_w_conv_ci(const double* w, int co, int ci, int k) {
    std::vector<double> wt(static_cast<size_t>(co) * k * ci);
    for (int oc = 0; oc < co; ++oc)
        for (int ic = 0; ic < ci; ++ic)
            for (int ik = 0; ik < k; ++ik)
                wt[(static_cast<size_t>(oc) * k + ik) * ci + ic] =
                    w[(static_cast<size_t>(oc) * ci + ic) * k + ik];
    return wt;
}

// dy[b][co][lo] -> dyt[b][lo][co]
std::vector<double> transpose_dy(const double* dy, int b, int co, int lo) {
    std::vector<double> dyt(static_cast<size_t>(b) * lo * co);
    for (int ib = 0; ib < b; ++ib)
        for (int oc = 0; oc < co; ++oc)
            for (int ol = 0; ol < lo; ++ol)
                dyt[(static_cast<size_t>(ib) * lo + ol) * co + oc] =
                    dy[(static_cast<size_t>(ib) * co + oc) * lo + ol];
    return dyt;
}

inline void conv1d_one_batch(double* yb, const double* xb, const double* wt,
                             const double* bias, int ci, int l, int co, int k, int stride,
                             int pad, int lo, double* ws) {
    std::memset(ws, 0, sizeof(double) * static_cast<size_t>(lo) * co);
    for (int ic = 0; ic < ci; ++ic) {
        const double* xr = xb + static_cast<size_t>(ic) * l;
        for (int ik = 0; ik < k; ++ik) {
            const double* wr = wt + (static_cast<size_t>(ic) * k + ik) * co;
            // valid lo range for il = lo*stride + ik - pad in [0, l)
            int lo_begin = 0;
            while (lo_begin < lo && lo_begin * stride + ik - pad < 0) ++lo_begin;
            for (int ol = lo_begin; ol < lo; ++ol) {
                const int il = ol * stride + ik - pad;
                if (il >= l) break;
                const double xv = xr[il];
                double* row = ws + static_cast<size_t>(ol) * co;
                for (int oc = 0; oc < co; ++oc) row[oc] += xv * wr[oc];
            }
        }
    }
    for (int oc = 0; oc < co; ++oc)
        for (int ol = 0; ol < lo; ++ol)
            yb[static_cast<size_t>(oc) * lo + ol] =
                ws[static_cast<size_t>(ol) * co + oc] + (bias ? bias[oc] : 0.0);
}

}  // namespace

namespace ref {
void conv1d(double* y, const double* x, const double* w, const double* bias,
            int b, int ci, int l, int co, int k, int stride, int pad, int lo) {
    for (int ib = 0; ib < b; ++ib)
        for (int oc = 0; oc < co; ++oc)
            for (int ol = 0; ol < lo; ++ol) {
                double acc = 0.0;
                for (int ic = 0; ic < ci; ++ic) {
                    const double* xr = x + (static_cast<size_t>(ib) * ci + ic) * l;
                    const double* wr = w + (static_cast<size_t>(oc) * ci + ic) * k;
                    for (int ik = 0; ik < k; ++ik) {
                        const int il = ol * stride + ik - pad;
                        if (il >= 0 && il < l) acc += xr[il] * wr[ik];
                    }
                }
                y[(static_cast<size_t>(ib) * co + oc) * lo + ol] = acc + (bias ? bias[oc] : 0.0);
            }
}
}  // namespace ref

void conv1d(double* y, const double* x, const double* w, const double* bias,
            int b, int ci, int l, int co, int k, int stride, int pad, int lo) {
    const auto wt = transpose_w_conv(w, co, ci, k);
    const int64_t work = static_cast<int64_t>(b) * co * lo * ci * k;
#pragma omp parallel num_threads(effective_threads()) if (go_parallel(work))
    {
        std::vector<double> ws(static_cast<size_t>(lo) * co);
#pragma omp for schedule(static)
        for (int ib = 0; ib < b; ++ib)
            conv1d_one_batch(y + static_cast<size_t>(ib) * co * lo,
                             x + static_cast<size_t>(ib) * ci * l, wt.data(), bias, ci, l, co,
                             k, stride, pad, lo, ws.data());
    }
}

namespace ref {
void conv1d_backward(double* dx, double* dw, double* dbias, const double* dy,
                     const double* x, const double* w, int b, int ci, int l,
                     int co, int k, int stride, int pad, int lo) {
    if (dbias)
        for (int oc = 0; oc < co; ++oc) {
            double acc = 0.0;
            for (int ib = 0; ib < b; ++ib) {
                const double* dyr = dy + (static_cast<size_t>(ib) * co + oc) * lo;
                for (int ol = 0; ol < lo; ++ol) acc += dyr[ol];
            }
            dbias[oc] += acc;
        }
    if (dw)
        for (int oc = 0; oc < co; ++oc)
            for (int ic = 0; ic < ci; ++ic)
                for (int ik = 0; ik < k; ++ik) {
                    double acc = 0.0;
                    for (int ib = 0; ib < b; ++ib) {
                        const double* dyr = dy + (static_cast<size_t>(ib) * co + oc) * lo;
                        const double* xr = x + (static_cast<size_t>(ib) * ci + ic) * l;
                        for (int ol = 0; ol < lo; ++ol) {
                            const int il = ol * stride + ik - pad;
                            if (il >= 0 && il < l) acc += dyr[ol] * xr[il];
                        }
                    }
                    dw[(static_cast<size_t>(oc) * ci + ic) * k + ik] += acc;
                }
    if (dx)
        for (int ib = 0; ib < b; ++ib)
            for (int ic = 0; ic < ci; ++ic) {
                double* dxr = dx + (static_cast<size_t>(ib) * ci + ic) * l;
                for (int oc = 0; oc < co; ++oc) {
                    const double* dyr = dy + (static_cast<size_t>(ib) * co + oc) * lo;
                    const double* wr = w + (static_cast<size_t>(oc) * ci + ic) * k;
                    for (int ik = 0; ik < k; ++ik)
                        for (int ol = 0; ol < lo; ++ol) {
                            const int il = ol * stride + ik - pad;
                            if (il >= 0 && il < l) dxr[il] += dyr[ol] * wr[ik];
                        }
                }
            }
}
}  // namespace ref

void conv1d_backward(double* dx, double* dw, double* dbias, const double* dy,
                     const double* x, const double* w, int b, int ci, int l,
                     int co, int k, int stride, int pad, int lo) {
    const int64_t work = static_cast<int64_t>(b) * co * lo * ci * k;
    if (!go_parallel(work)) {
        ref::conv1d_backward(dx, dw, dbias, dy, x, w, b, ci, l, co, k, stride, pad, lo);
        return;
    }
    const int nt = effective_threads();
    const auto dyt = transpose_dy(dy, b, co, lo);
    if (dbias) {
        for (int oc = 0; oc < co; ++oc) {
            double acc = 0.0;
            for (int ib = 0; ib < b; ++ib) {
                const double* dyr = dy + (static_cast<size_t>(ib) * co + oc) * lo;
                for (int ol = 0; ol < lo; ++ol) acc += dyr[ol];
            }
            dbias[oc] += acc;
        }
    }
    if (dw) {
        // dwt[ci][k][co] accumulated in (b, lo) order per element, matching
        // the reference (b outer, ol inner) gather.
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int ic = 0; ic < ci; ++ic) {
            std::vector<double> dwt(static_cast<size_t>(k) * co, 0.0);
            for (int ib = 0; ib < b; ++ib) {
                const double* xr = x + (static_cast<size_t>(ib) * ci + ic) * l;
                const double* dyb = dyt.data() + static_cast<size_t>(ib) * lo * co;
                for (int ik = 0; ik < k; ++ik) {
                    double* acc = dwt.data() + static_cast<size_t>(ik) * co;
                    int lo_begin = 0;
                    while (lo_begin < lo && lo_begin * stride + ik - pad < 0) ++lo_begin;
                    for (int ol = lo_begin; ol < lo; ++ol) {
                        const int il = ol * stride + ik - pad;
                        if (il >= l) break;
                        const double xv = xr[il];
                        const double* dyr = dyb + static_cast<size_t>(ol) * co;
                        for (int oc = 0; oc < co; ++oc) acc[oc] += xv * dyr[oc];
                    }
                }
            }
            for (int oc = 0; oc < co; ++oc)
                for (int ik = 0; ik < k; ++ik)
                    dw[(static_cast<size_t>(oc) * ci + ic) * k + ik] +=
                        dwt[static_cast<size_t>(ik) * co + oc];
        }
    }
    if (dx) {
        const auto wt = transpose_w_conv_ci(w, co, ci, k);
#pragma omp parallel num_threads(nt)
        {
            std::vector<double> ws(static_cast<size_t>(l) * ci);
#pragma omp for schedule(static)
            for (int ib = 0; ib < b; ++ib) {
                std::memset(ws.data(), 0, sizeof(double) * ws.size());
                const double* dyb = dyt.data() + static_cast<size_t>(ib) * lo * co;
                for (int oc = 0; oc < co; ++oc)
                    for (int ik = 0; ik < k; ++ik) {
                        const double* wr = wt.data() + (static_cast<size_t>(oc) * k + ik) * ci;
                        int lo_begin = 0;
                        while (lo_begin < lo && lo_begin * stride + ik - pad < 0) ++lo_begin;
                        for (int ol = lo_begin; ol < lo; ++ol) {
                            const int il = ol * stride + ik - pad;
                            if (il >= l) break;
                            const double dyv = dyb[static_cast<size_t>(ol) * co + oc];
                            double* row = ws.data() + static_cast<size_t>(il) * ci;
                            for (int ic = 0; ic < ci; ++ic) row[ic] += dyv * wr[ic];
                        }
                    }
                double* dxb = dx + static_cast<size_t>(ib) * ci * l;
                for (int ic = 0; ic < ci; ++ic)
                    for (int il = 0; il < l; ++il)
                        dxb[static_cast<size_t>(ic) * l + il] +=
                            ws[static_cast<size_t>(il) * ci + ic];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Transposed 1D convolution: lo = li*stride + k - pad. Per output element the
// contributions are accumulated in (ci asc, li asc) order in every path.
// ---------------------------------------------------------------------------

namespace {

// w[ci][co][k] -> wt[ci][k][co]
std::vector<double> transpose_w_convt(const double* w, int ci, int co, int k) {
    std::vector<double> wt(static_cast<size_t>(ci) * k * co);
    for (int ic = 0; ic < ci; ++ic)
        for (int oc = 0; oc < co; ++oc)
            for (int ik = 0; ik < k; ++ik)
                wt[(static_cast<size_t>(ic) * k + ik) * co + oc] =
                    w[(static_cast<size_t>(ic) * co + oc) * k + ik];
    return wt;
}

// w[ci][co][k] -> wt[co][k][ci]
std::vector<double> transpose_w_convt_ci(const double* w, int ci, int co, int k) {
    std::vector<double> wt(static_cast<size_t>(co) * k * ci);
    for (int ic = 0; ic < ci; ++ic)
        for (int oc = 0; oc < co; ++oc)
            for (int ik = 0; ik < k; ++ik)
                wt[(static_cast<size_t>(oc) * k + ik) * ci + ic] =
                    w[(static_cast<size_t>(ic) * co + oc) * k + ik];
    return wt;
}

}  // namespace

namespace ref {
void convt1d(double* y, const double* x, const double* w, const double* bias,
             int b, int ci, int l, int co, int k, int stride, int pad, int lo) {
    for (int ib = 0; ib < b; ++ib)
        for (int oc = 0; oc < co; ++oc)
            for (int ol = 0; ol < lo; ++ol) {
                double acc = 0.0;
                for (int ic = 0; ic < ci; ++ic) {
                    const double* xr = x + (static_cast<size_t>(ib) * ci + ic) * l;
                    const double* wr = w + (static_cast<size_t>(ic) * co + oc) * k;
                    for (int il = 0; il < l; ++il) {
                        const int ik = ol + pad - il * stride;
                        if (ik >= 0 && ik < k) acc += xr[il] * wr[ik];
                    }
                }
                y[(static_cast<size_t>(ib) * co + oc) * lo + ol] = acc + (bias ? bias[oc] : 0.0);
            }
}
}  // namespace ref

void convt1d(double* y, const double* x, const double* w, const double* bias,
             int b, int ci, int l, int co, int k, int stride, int pad, int lo) {
    const auto wt = transpose_w_convt(w, ci, co, k);
    const int64_t work = static_cast<int64_t>(b) * co * lo * ci * k;
#pragma omp parallel num_threads(effective_threads()) if (go_parallel(work))
    {
        std::vector<double> ws(static_cast<size_t>(lo) * co);
#pragma omp for schedule(static)
        for (int ib = 0; ib < b; ++ib) {
            std::memset(ws.data(), 0, sizeof(double) * ws.size());
            const double* xb = x + static_cast<size_t>(ib) * ci * l;
            for (int ic = 0; ic < ci; ++ic) {
                const double* xr = xb + static_cast<size_t>(ic) * l;
                for (int il = 0; il < l; ++il) {
                    const double xv = xr[il];
                    const int base = il * stride - pad;
                    const int k_lo = base < 0 ? -base : 0;
                    for (int ik = k_lo; ik < k; ++ik) {
                        const int ol = base + ik;
                        if (ol >= lo) break;
                        const double* wr = wt.data() + (static_cast<size_t>(ic) * k + ik) * co;
                        double* row = ws.data() + static_cast<size_t>(ol) * co;
                        for (int oc = 0; oc < co; ++oc) row[oc] += xv * wr[oc];
                    }
                }
            }
            double* yb = y + static_cast<size_t>(ib) * co * lo;
            for (int oc = 0; oc < co; ++oc)
                for (int ol = 0; ol < lo; ++ol)
                    yb[static_cast<size_t>(oc) * lo + ol] =
                        ws[static_cast<size_t>(ol) * co + oc] + (bias ? bias[oc] : 0.0);
        }
    }
}

namespace ref {
void convt1d_backward(double* dx, double* dw, double* dbias, const double* dy,
                      const double* x, const double* w, int b, int ci, int l,
                      int co, int k, int stride, int pad, int lo) {
    if (dbias)
        for (int oc = 0; oc < co; ++oc) {
            double acc = 0.0;
            for (int ib = 0; ib < b; ++ib) {
                const double* dyr = dy + (static_cast<size_t>(ib) * co + oc) * lo;
                for (int ol = 0; ol < lo; ++ol) acc += dyr[ol];
            }
            dbias[oc] += acc;
        }
    if (dw)
        for (int ic = 0; ic < ci; ++ic)
            for (int oc = 0; oc < co; ++oc)
                for (int ik = 0; ik < k; ++ik) {
                    double acc = 0.0;
                    for (int ib = 0; ib < b; ++ib) {
                        const double* xr = x + (static_cast<size_t>(ib) * ci + ic) * l;
                        const double* dyr = dy + (static_cast<size_t>(ib) * co + oc) * lo;
                        for (int il = 0; il < l; ++il) {
                            const int ol = il * stride + ik - pad;
                            if (ol >= 0 && ol < lo) acc += xr[il] * dyr[ol];
                        }
                    }
                    dw[(static_cast<size_t>(ic) * co + oc) * k + ik] += acc;
                }
    if (dx)
        for (int ib = 0; ib < b; ++ib)
            for (int ic = 0; ic < ci; ++ic) {
                double* dxr = dx + (static_cast<size_t>(ib) * ci + ic) * l;
                for (int il = 0; il < l; ++il) {
                    double acc = 0.0;
                    for (int oc = 0; oc < co; ++oc) {
                        const double* dyr = dy + (static_cast<size_t>(ib) * co + oc) * lo;
                        const double* wr = w + (static_cast<size_t>(ic) * co + oc) * k;
                        for (int ik = 0; ik < k; ++ik) {
                            const int ol = il * stride + ik - pad;
                            if (ol >= 0 && ol < lo) acc += dyr[ol] * wr[ik];
                        }
                    }
                    dxr[il] += acc;
                }
            }
}
}  // namespace ref

void convt1d_backward(double* dx, double* dw, double* dbias, const double* dy,
                      const double* x, const double* w, int b, int ci, int l,
                      int co, int k, int stride, int pad, int lo) {
    const int64_t work = static_cast<int64_t>(b) * co * lo * ci * k;
    if (!go_parallel(work)) {
        ref::convt1d_backward(dx, dw, dbias, dy, x, w, b, ci, l, co, k, stride, pad, lo);
        return;
    }
    const int nt = effective_threads();
    const auto dyt = transpose_dy(dy, b, co, lo);
    if (dbias) {
        for (int oc = 0; oc < co; ++oc) {
            double acc = 0.0;
            for (int ib = 0; ib < b; ++ib) {
                const double* dyr = dy + (static_cast<size_t>(ib) * co + oc) * lo;
                for (int ol = 0; ol < lo; ++ol) acc += dyr[ol];
            }
            dbias[oc] += acc;
        }
    }
    if (dw) {
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int ic = 0; ic < ci; ++ic) {
            std::vector<double> dwt(static_cast<size_t>(k) * co, 0.0);
            for (int ib = 0; ib < b; ++ib) {
                const double* xr = x + (static_cast<size_t>(ib) * ci + ic) * l;
                const double* dyb = dyt.data() + static_cast<size_t>(ib) * lo * co;
                for (int ik = 0; ik < k; ++ik) {
                    double* acc = dwt.data() + static_cast<size_t>(ik) * co;
                    for (int il = 0; il < l; ++il) {
                        const int ol = il * stride + ik - pad;
                        if (ol < 0 || ol >= lo) continue;
                        const double xv = xr[il];
                        const double* dyr = dyb + static_cast<size_t>(ol) * co;
                        for (int oc = 0; oc < co; ++oc) acc[oc] += xv * dyr[oc];
                    }
                }
            }
            for (int oc = 0; oc < co; ++oc)
                for (int ik = 0; ik < k; ++ik)
                    dw[(static_cast<size_t>(ic) * co + oc) * k + ik] +=
                        dwt[static_cast<size_t>(ik) * co + oc];
        }
    }
    if (dx) {
        const auto wt = transpose_w_convt_ci(w, ci, co, k);
#pragma omp parallel num_threads(nt)
        {
            std::vector<double> ws(static_cast<size_t>(l) * ci);
#pragma omp for schedule(static)
            for (int ib = 0; ib < b; ++ib) {
                std::memset(ws.data(), 0, sizeof(double) * ws.size());
                const double* dyb = dyt.data() + static_cast<size_t>(ib) * lo * co;
                for (int oc = 0; oc < co; ++oc)
                    for (int ik = 0; ik < k; ++ik) {
                        const double* wr = wt.data() + (static_cast<size_t>(oc) * k + ik) * ci;
                        for (int il = 0; il < l; ++il) {
                            const int ol = il * stride + ik - pad;
                            if (ol < 0) continue;
                            if (ol >= lo) break;
                            const double dyv = dyb[static_cast<size_t>(ol) * co + oc];
                            double* row = ws.data() + static_cast<size_t>(il) * ci;
                            for (int ic = 0; ic < ci; ++ic) row[ic] += dyv * wr[ic];
                        }
                    }
                double* dxb = dx + static_cast<size_t>(ib) * ci * l;
                for (int ic = 0; ic < ci; ++ic)
                    for (int il = 0; il < l; ++il)
                        dxb[static_cast<size_t>(ic) * l + il] +=
                            ws[static_cast<size_t>(il) * ci + ic];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Group normalization
// ---------------------------------------------------------------------------

namespace ref {
void group_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* bias, int b, int c, int l,
                int groups, double eps) {
    const int cpg = c / groups;
    const int m = cpg * l;
    for (int ib = 0; ib < b; ++ib)
        for (int g = 0; g < groups; ++g) {
            const double* xg = x + (static_cast<size_t>(ib) * c + g * cpg) * l;
            double mu = 0.0;
            for (int i = 0; i < m; ++i) mu += xg[i];
            mu /= m;
            double var = 0.0;
            for (int i = 0; i < m; ++i) {
                const double d = xg[i] - mu;
                var += d * d;
            }
            var /= m;
            const double is = 1.0 / std::sqrt(var + eps);
            mean[ib * groups + g] = mu;
            inv_std[ib * groups + g] = is;
            double* yg = y + (static_cast<size_t>(ib) * c + g * cpg) * l;
            for (int cc = 0; cc < cpg; ++cc) {
                const double gc = gain[g * cpg + cc];
                const double bc = bias[g * cpg + cc];
                for (int il = 0; il < l; ++il) {
                    const int i = cc * l + il;
                    yg[i] = gc * (xg[i] - mu) * is + bc;
                }
            }
        }
}

void group_norm_backward(double* dx, double* dgain, double* dbias,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std, int b,
                         int c, int l, int groups) {
    const int cpg = c / groups;
    const int m = cpg * l;
    if (dgain || dbias)
        for (int cc = 0; cc < c; ++cc) {
            const int g = cc / cpg;
            double dg = 0.0, db = 0.0;
            for (int ib = 0; ib < b; ++ib) {
                const double mu = mean[ib * groups + g];
                const double is = inv_std[ib * groups + g];
                const double* xr = x + (static_cast<size_t>(ib) * c + cc) * l;
                const double* dyr = dy + (static_cast<size_t>(ib) * c + cc) * l;
                for (int il = 0; il < l; ++il) {
                    dg += dyr[il] * (xr[il] - mu) * is;
                    db += dyr[il];
                }
            }
            if (dgain) dgain[cc] += dg;
            if (dbias) dbias[cc] += db;
        }
    if (dx)
        for (int ib = 0; ib < b; ++ib)
            for (int g = 0; g < groups; ++g) {
                const double mu = mean[ib * groups + g];
                const double is = inv_std[ib * groups + g];
                const double* xg = x + (static_cast<size_t>(ib) * c + g * cpg) * l;
                const double* dyg = dy + (static_cast<size_t>(ib) * c + g * cpg) * l;
                double* dxg = dx + (static_cast<size_t>(ib) * c + g * cpg) * l;
                // dxhat = dy * gain; reduce sums, then the standard normalization adjoint.
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const double gc = gain[g * cpg + cc];
                    for (int il = 0; il < l; ++il) {
                        const int i = cc * l + il;
                        const double dxh = dyg[i] * gc;
                        const double xh = (xg[i] - mu) * is;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                }
                for (int cc = 0; cc < cpg; ++cc) {
                    const double gc = gain[g * cpg + cc];
                    for (int il = 0; il < l; ++il) {
                        const int i = cc * l + il;
                        const double dxh = dyg[i] * gc;
                        const double xh = (xg[i] - mu) * is;
                        dxg[i] += is * (dxh - (sum_dxh + xh * sum_dxh_xh) / m);
                    }
                }
            }
}
}  // namespace ref

void group_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* bias, int b, int c, int l,
                int groups, double eps) {
    const int64_t work = static_cast<int64_t>(b) * c * l * 4;
    if (!go_parallel(work)) {
        ref::group_norm(y, mean, inv_std, x, gain, bias, b, c, l, groups, eps);
        return;
    }
    const int cpg = c / groups;
    const int m = cpg * l;
    const int rows = b * groups;
#pragma omp parallel for schedule(static) num_threads(effective_threads())
    for (int row = 0; row < rows; ++row) {
        const int ib = row / groups;
        const int g = row % groups;
        const double* xg = x + (static_cast<size_t>(ib) * c + g * cpg) * l;
        double mu = 0.0;
        for (int i = 0; i < m; ++i) mu += xg[i];
        mu /= m;
        double var = 0.0;
        for (int i = 0; i < m; ++i) {
            const double d = xg[i] - mu;
            var += d * d;
        }
        var /= m;
        const double is = 1.0 / std::sqrt(var + eps);
        mean[row] = mu;
        inv_std[row] = is;
        double* yg = y + (static_cast<size_t>(ib) * c + g * cpg) * l;
        for (int cc = 0; cc < cpg; ++cc) {
            const double gc = gain[g * cpg + cc];
            const double bc = bias[g * cpg + cc];
            for (int il = 0; il < l; ++il) {
                const int i = cc * l + il;
                yg[i] = gc * (xg[i] - mu) * is + bc;
            }
        }
    }
}

void group_norm_backward(double* dx, double* dgain, double* dbias,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std, int b,
                         int c, int l, int groups) {
    // Serial path only: the reductions are cheap relative to the convolutions
    // around them and the reference order keeps results bit-stable.
    ref::group_norm_backward(dx, dgain, dbias, dy, x, gain, mean, inv_std, b, c, l, groups);
}

// ---------------------------------------------------------------------------
// Set max-pool, FiLM scale/shift, loss, embedding
// ---------------------------------------------------------------------------

void max_pool_set(double* y, int* argmax, const double* x, int r, int n, int c) {
#pragma omp parallel for schedule(static) num_threads(effective_threads()) \
    if (go_parallel(static_cast<int64_t>(r) * n * c))
    for (int ir = 0; ir < r; ++ir) {
        const double* xr = x + static_cast<size_t>(ir) * n * c;
        double* yr = y + static_cast<size_t>(ir) * c;
        int* ar = argmax + static_cast<size_t>(ir) * c;
        for (int ic = 0; ic < c; ++ic) {
            yr[ic] = xr[ic];
            ar[ic] = 0;
        }
        for (int in = 1; in < n; ++in) {
            const double* row = xr + static_cast<size_t>(in) * c;
            for (int ic = 0; ic < c; ++ic)
                if (row[ic] > yr[ic]) {
                    yr[ic] = row[ic];
                    ar[ic] = in;
                }
        }
    }
}

void max_pool_set_backward(double* dx, const double* dy, const int* argmax,
                           int r, int n, int c) {
    for (int ir = 0; ir < r; ++ir) {
        const double* dyr = dy + static_cast<size_t>(ir) * c;
        const int* ar = argmax + static_cast<size_t>(ir) * c;
        double* dxr = dx + static_cast<size_t>(ir) * n * c;
        for (int ic = 0; ic < c; ++ic) dxr[static_cast<size_t>(ar[ic]) * c + ic] += dyr[ic];
    }
}

void scale_shift(double* y, const double* h, const double* gamma,
                 const double* delta, int b, int c, int l) {
    const int rows = b * c;
#pragma omp parallel for schedule(static) num_threads(effective_threads()) \
    if (go_parallel(static_cast<int64_t>(rows) * l * 2))
    for (int row = 0; row < rows; ++row) {
        const double g = 1.0 + gamma[row];
        const double d = delta[row];
        const double* hr = h + static_cast<size_t>(row) * l;
        double* yr = y + static_cast<size_t>(row) * l;
        for (int il = 0; il < l; ++il) yr[il] = g * hr[il] + d;
    }
}

void scale_shift_backward(double* dh, double* dgamma, double* ddelta,
                          const double* dy, const double* h,
                          const double* gamma, int b, int c, int l) {
    const int rows = b * c;
    for (int row = 0; row < rows; ++row) {
        const double g = 1.0 + gamma[row];
        const double* dyr = dy + static_cast<size_t>(row) * l;
        const double* hr = h + static_cast<size_t>(row) * l;
        double* dhr = dh + static_cast<size_t>(row) * l;
        double sg = 0.0, sd = 0.0;
        for (int il = 0; il < l; ++il) {
            dhr[il] += g * dyr[il];
            sg += dyr[il] * hr[il];
            sd += dyr[il];
        }
        dgamma[row] += sg;
        ddelta[row] += sd;
    }
}

double mse(const double* a, const double* b, int64_t n) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

void sin_embed(double* e, const double* k, int b, int dim) {
    const int half = dim / 2;
    const double lmax = std::log(10000.0);
    for (int ib = 0; ib < b; ++ib) {
        double* er = e + static_cast<size_t>(ib) * dim;
        for (int i = 0; i < half; ++i) {
            const double freq =
                half > 1 ? std::exp(-lmax * static_cast<double>(i) / (half - 1)) : 1.0;
            const double a = k[ib] * freq;
            er[i] = std::sin(a);
            er[half + i] = std::cos(a);
        }
    }
}

}  // namespace fd::kernels

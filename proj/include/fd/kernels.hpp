// Dense compute kernels. Every parallel kernel partitions output elements
// across threads and keeps the per-element accumulation order identical to the
// serial reference in kernels::ref, so both produce bitwise-equal results.
#pragma once

#include <cstdint>

namespace fd::kernels {

// Caps OpenMP threads for kernels launched from the calling thread.
// 0 restores the OpenMP default.
void set_threads(int n);
int effective_threads();

bool all_finite(const double* x, int64_t n);

// C[M,N] = A[M,K] * B[K,N]  (row-major, overwrite)
void gemm(double* c, const double* a, const double* b, int m, int k, int n);
// C[M,N] += A[M,K] * B[K,N]
void gemm_acc(double* c, const double* a, const double* b, int m, int k, int n);
// C[K,N] += A^T[K,M] * B[M,N] with A given as [M,K] (no transpose buffer).
void gemm_at_acc(double* c, const double* a, const double* b, int m, int k, int n);

void add(double* y, const double* a, const double* b, int64_t n);
void sub(double* y, const double* a, const double* b, int64_t n);
void mul(double* y, const double* a, const double* b, int64_t n);
void axpy(double* y, double alpha, const double* x, int64_t n);  // y += alpha*x

void relu(double* y, const double* x, int64_t n);
void relu_backward(double* dx, const double* x, const double* dy, int64_t n);
void mish(double* y, const double* x, int64_t n);
void mish_backward(double* dx, const double* x, const double* dy, int64_t n);
// Variant pair that caches tanh(softplus(x)) for a cheaper backward pass.
void mish_cached(double* y, double* tanh_sp, const double* x, int64_t n);
void mish_backward_cached(double* dx, const double* x, const double* tanh_sp,
                          const double* dy, int64_t n);

// x:[B,Ci,L] w:[Co,Ci,K] bias:[Co] -> y:[B,Co,Lo], li = lo*stride + k - pad
void conv1d(double* y, const double* x, const double* w, const double* bias,
            int b, int ci, int l, int co, int k, int stride, int pad, int lo);
void conv1d_backward(double* dx, double* dw, double* dbias, const double* dy,
                     const double* x, const double* w, int b, int ci, int l,
                     int co, int k, int stride, int pad, int lo);

// x:[B,Ci,L] w:[Ci,Co,K] bias:[Co] -> y:[B,Co,Lo], lo = li*stride + k - pad
void convt1d(double* y, const double* x, const double* w, const double* bias,
             int b, int ci, int l, int co, int k, int stride, int pad, int lo);
void convt1d_backward(double* dx, double* dw, double* dbias, const double* dy,
                      const double* x, const double* w, int b, int ci, int l,
                      int co, int k, int stride, int pad, int lo);

// x:[B,C,L], per-(batch,group) statistics; mean/inv_std are [B*G] caches.
void group_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* bias, int b, int c, int l,
                int groups, double eps);
void group_norm_backward(double* dx, double* dgain, double* dbias,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std, int b,
                         int c, int l, int groups);

// x:[R,N,C] -> y:[R,C] max over the set axis; argmax:[R,C] first-max index.
void max_pool_set(double* y, int* argmax, const double* x, int r, int n, int c);
void max_pool_set_backward(double* dx, const double* dy, const int* argmax,
                           int r, int n, int c);

// h:[B,C,L] gamma,delta:[B,C] -> y = (1+gamma)*h + delta
void scale_shift(double* y, const double* h, const double* gamma,
                 const double* delta, int b, int c, int l);
void scale_shift_backward(double* dh, double* dgamma, double* ddelta,
                          const double* dy, const double* h,
                          const double* gamma, int b, int c, int l);

double mse(const double* a, const double* b, int64_t n);

// k:[B] -> e:[B,dim], first half sines, second half cosines.
void sin_embed(double* e, const double* k, int b, int dim);

// Serial reference implementations, kept for the bitwise-equality tests and
// the kernel benchmark.
namespace ref {
void gemm(double* c, const double* a, const double* b, int m, int k, int n);
void conv1d(double* y, const double* x, const double* w, const double* bias,
            int b, int ci, int l, int co, int k, int stride, int pad, int lo);
void conv1d_backward(double* dx, double* dw, double* dbias, const double* dy,
                     const double* x, const double* w, int b, int ci, int l,
                     int co, int k, int stride, int pad, int lo);
void convt1d(double* y, const double* x, const double* w, const double* bias,
             int b, int ci, int l, int co, int k, int stride, int pad, int lo);
void convt1d_backward(double* dx, double* dw, double* dbias, const double* dy,
                      const double* x, const double* w, int b, int ci, int l,
                      int co, int k, int stride, int pad, int lo);
void group_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* bias, int b, int c, int l,
                int groups, double eps);
void group_norm_backward(double* dx, double* dgain, double* dbias,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std, int b,
                         int c, int l, int groups);
void mish(double* y, const double* x, int64_t n);
}  // namespace ref

}  // namespace fd::kernels

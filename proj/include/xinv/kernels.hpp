#pragma once

#include <cstdint>

// Numeric kernels behind every layer. Each op has a naive serial reference
// (namespace serial) and an optimized path (im2col + blocked GEMM, OpenMP
// over independent outputs). The dispatch functions pick one via the global
// parallel() toggle. Both paths accumulate reductions in the same fixed
// order, so results agree to within compiler-level rounding on one machine
// and training stays deterministic for a fixed seed.
//
// Layouts: activations N,C,H,W row-major; conv weights [OC][IC][k][k];
// transposed-conv weights [IC][OC][k][k]; fc weights [in][out].

namespace xinv::kern {

bool& parallel();  // default true

inline int64_t conv_out(int64_t in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }
inline int64_t tconv_out(int64_t in, int k, int s, int p) { return (in - 1) * s - 2 * p + k; }

// C(MxN) = A(MxK) * B(KxN), row-major; accumulate adds into C.
template <typename T>
void gemm(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate);

// B(N x M) <- transpose of A(M x N)
template <typename T>
void transpose(int64_t M, int64_t N, const T* A, T* B);

// im2col for one image: im[C][H][W] -> col[C*k*k][oh*ow], zero padding.
template <typename T>
void im2col(const T* im, int64_t C, int64_t H, int64_t W, int k, int s, int p, T* col);

// col2im gather (adjoint of im2col): col[C*k*k][oh*ow] -> im[C][H][W].
template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int k, int s, int p, T* im);

template <typename T>
void conv2d_fwd(const T* x, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w, const T* b,
                int64_t OC, int k, int s, int p, T* y);
template <typename T>
void conv2d_bwd_data(const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w,
                     int64_t OC, int k, int s, int p, T* dx);
template <typename T>
void conv2d_bwd_filter(const T* x, const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W,
                       int64_t OC, int k, int s, int p, T* dw, T* db);

template <typename T>
void tconv2d_fwd(const T* x, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w, const T* b,
                 int64_t OC, int k, int s, int p, T* y);
template <typename T>
void tconv2d_bwd_data(const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w,
                      int64_t OC, int k, int s, int p, T* dx);
template <typename T>
void tconv2d_bwd_filter(const T* x, const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W,
                        int64_t OC, int k, int s, int p, T* dw, T* db);

// Max pooling, no padding; idx records the flat offset inside the H*W plane
// of the winning input (first-scanned wins ties).
template <typename T>
void maxpool_fwd(const T* x, int64_t N, int64_t C, int64_t H, int64_t W, int k, int s, T* y,
                 int32_t* idx);
template <typename T>
void maxpool_bwd(const T* dy, const int32_t* idx, int64_t N, int64_t C, int64_t H, int64_t W,
                 int k, int s, T* dx);

template <typename T>
void relu_fwd(const T* x, int64_t n, T* y);
template <typename T>
void relu_bwd(const T* dy, const T* y, int64_t n, T* dx);

template <typename T>
void add_bias_nchw(T* y, const T* b, int64_t N, int64_t C, int64_t HW);
template <typename T>
void add_bias_rows(T* y, const T* b, int64_t N, int64_t F);

// Row-wise stable softmax: x[N][C] -> y[N][C].
template <typename T>
void softmax_rows(const T* x, int64_t N, int64_t C, T* y);

namespace serial {

template <typename T>
void gemm(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate);
template <typename T>
void conv2d_fwd(const T* x, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w, const T* b,
                int64_t OC, int k, int s, int p, T* y);
template <typename T>
void conv2d_bwd_data(const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w,
                     int64_t OC, int k, int s, int p, T* dx);
template <typename T>
void conv2d_bwd_filter(const T* x, const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W,
                       int64_t OC, int k, int s, int p, T* dw, T* db);
template <typename T>
void tconv2d_fwd(const T* x, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w, const T* b,
                 int64_t OC, int k, int s, int p, T* y);
template <typename T>
void tconv2d_bwd_data(const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w,
                      int64_t OC, int k, int s, int p, T* dx);
template <typename T>
void tconv2d_bwd_filter(const T* x, const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W,
                        int64_t OC, int k, int s, int p, T* dw, T* db);
template <typename T>
void maxpool_fwd(const T* x, int64_t N, int64_t C, int64_t H, int64_t W, int k, int s, T* y,
                 int32_t* idx);

}  // namespace serial

}  // namespace xinv::kern

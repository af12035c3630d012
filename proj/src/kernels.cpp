#include "xinv/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

namespace xinv::kern {

bool& parallel() {
  static bool on = true;
  return on;
}

// ---------------------------------------------------------------- GEMM

namespace {

template <typename T>
struct Tile {
  static constexpr int MR = 8;
  static constexpr int NR = sizeof(T) == 4 ? 32 : 16;
  static constexpr int64_t KC = 256;
};

// Pack B rows [k0, k0+kc) x cols [j0, j0+nr) into a dense kc x NR panel,
// zero-padding the column tail so the microkernel always runs full width.
template <typename T>
inline void pack_b(const T* B, int64_t N, int64_t k0, int64_t kc, int64_t j0, int64_t nr, T* Bp) {
  constexpr int NR = Tile<T>::NR;
  for (int64_t kk = 0; kk < kc; ++kk) {
    const T* src = B + (k0 + kk) * N + j0;
    T* dst = Bp + kk * NR;
    int64_t j = 0;
    for (; j < nr; ++j) dst[j] = src[j];
    for (; j < NR; ++j) dst[j] = T(0);
  }
}

template <typename T>
inline void micro_full(int64_t kc, const T* __restrict A, int64_t lda, const T* __restrict Bp,
                       T* __restrict C, int64_t ldc, int64_t nr, bool first) {
  constexpr int MR = Tile<T>::MR;
  constexpr int NR = Tile<T>::NR;
  T acc[MR][NR];
  for (int r = 0; r < MR; ++r) {
    if (first)
      for (int j = 0; j < NR; ++j) acc[r][j] = T(0);
    else {
      const T* crow = C + r * ldc;
      for (int64_t j = 0; j < nr; ++j) acc[r][j] = crow[j];
      for (int64_t j = nr; j < NR; ++j) acc[r][j] = T(0);
    }
  }
  for (int64_t k = 0; k < kc; ++k) {
    const T* __restrict bk = Bp + k * NR;
    for (int r = 0; r < MR; ++r) {
      T a = A[r * lda + k];
#pragma omp simd
      for (int j = 0; j < NR; ++j) acc[r][j] += a * bk[j];
    }
  }
  for (int r = 0; r < MR; ++r) {
    T* crow = C + r * ldc;
    for (int64_t j = 0; j < nr; ++j) crow[j] = acc[r][j];
  }
}

// Row tail: same contraction order, mr < MR rows.
template <typename T>
inline void micro_tail(int64_t mr, int64_t kc, const T* __restrict A, int64_t lda,
                       const T* __restrict Bp, T* __restrict C, int64_t ldc, int64_t nr,
                       bool first) {
  constexpr int NR = Tile<T>::NR;
  for (int64_t r = 0; r < mr; ++r) {
    T acc[NR];
    if (first)
      for (int j = 0; j < NR; ++j) acc[j] = T(0);
    else {
      for (int64_t j = 0; j < nr; ++j) acc[j] = C[r * ldc + j];
      for (int64_t j = nr; j < NR; ++j) acc[j] = T(0);
    }
    for (int64_t k = 0; k < kc; ++k) {
      T a = A[r * lda + k];
      const T* bk = Bp + k * NR;
#pragma omp simd
      for (int j = 0; j < NR; ++j) acc[j] += a * bk[j];
    }
    for (int64_t j = 0; j < nr; ++j) C[r * ldc + j] = acc[j];
  }
}

}  // namespace

namespace serial {

template <typename T>
void gemm(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      T sum = accumulate ? C[i * N + j] : T(0);
      for (int64_t k = 0; k < K; ++k) sum += A[i * K + k] * B[k * N + j];
      C[i * N + j] = sum;
    }
}

}  // namespace serial

template <typename T>
void gemm(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
  if (!parallel() || M * N * K < 32768) {
    serial::gemm(M, N, K, A, B, C, accumulate);
    return;
  }
  constexpr int MR = Tile<T>::MR;
  constexpr int NR = Tile<T>::NR;
  constexpr int64_t KC = Tile<T>::KC;
  int64_t jt = (N + NR - 1) / NR;
#pragma omp parallel
  {
    std::vector<T> panel(KC * NR);
#pragma omp for schedule(static)
    for (int64_t t = 0; t < jt; ++t) {
      int64_t j0 = t * NR;
      int64_t nr = std::min<int64_t>(NR, N - j0);
      for (int64_t k0 = 0; k0 < K; k0 += KC) {
        int64_t kc = std::min(KC, K - k0);
        pack_b(B, N, k0, kc, j0, nr, panel.data());
        bool first = (k0 == 0) && !accumulate;
        int64_t i0 = 0;
        for (; i0 + MR <= M; i0 += MR)
          micro_full(kc, A + i0 * K + k0, K, panel.data(), C + i0 * N + j0, N, nr, first);
        if (i0 < M)
          micro_tail(M - i0, kc, A + i0 * K + k0, K, panel.data(), C + i0 * N + j0, N, nr, first);
      }
    }
  }
}

template <typename T>
void transpose(int64_t M, int64_t N, const T* A, T* B) {
  constexpr int64_t BL = 64;
#pragma omp parallel for schedule(static) if (parallel() && M * N > 1 << 16)
  for (int64_t i0 = 0; i0 < M; i0 += BL)
    for (int64_t j0 = 0; j0 < N; j0 += BL) {
      int64_t im = std::min(M, i0 + BL), jm = std::min(N, j0 + BL);
      for (int64_t i = i0; i < im; ++i)
        for (int64_t j = j0; j < jm; ++j) B[j * M + i] = A[i * N + j];
    }
}

// ---------------------------------------------------------------- im2col

template <typename T>
void im2col(const T* im, int64_t C, int64_t H, int64_t W, int k, int s, int p, T* col) {
  int64_t oh = conv_out(H, k, s, p), ow = conv_out(W, k, s, p);
  int64_t ohw = oh * ow;
  for (int64_t c = 0; c < C; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        T* dst = col + ((c * k + kh) * k + kw) * ohw;
        const T* src = im + c * H * W;
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t iy = oy * s - p + kh;
          if (iy < 0 || iy >= H) {
            for (int64_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
            continue;
          }
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t ix = ox * s - p + kw;
            dst[oy * ow + ox] = (ix >= 0 && ix < W) ? src[iy * W + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int k, int s, int p, T* im) {
  int64_t oh = conv_out(H, k, s, p), ow = conv_out(W, k, s, p);
  int64_t ohw = oh * ow;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t iy = 0; iy < H; ++iy)
      for (int64_t ix = 0; ix < W; ++ix) {
        T v = T(0);
        for (int kh = 0; kh < k; ++kh) {
          int64_t t = iy + p - kh;
          if (t < 0 || t % s != 0) continue;
          int64_t oy = t / s;
          if (oy >= oh) continue;
          for (int kw = 0; kw < k; ++kw) {
            int64_t u = ix + p - kw;
            if (u < 0 || u % s != 0) continue;
            int64_t ox = u / s;
            if (ox >= ow) continue;
            v += col[((c * k + kh) * k + kw) * ohw + oy * ow + ox];
          }
        }
        im[(c * H + iy) * W + ix] = v;
      }
}

// ---------------------------------------------------------------- conv2d

namespace serial {

template <typename T>
void conv2d_fwd(const T* x, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w, const T* b,
                int64_t OC, int k, int s, int p, T* y) {
  int64_t oh = conv_out(H, k, s, p), ow = conv_out(W, k, s, p);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oc = 0; oc < OC; ++oc)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          T sum = T(0);
          for (int64_t ic = 0; ic < IC; ++ic)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                int64_t iy = oy * s - p + kh, ix = ox * s - p + kw;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                sum += x[((n * IC + ic) * H + iy) * W + ix] *
                       w[((oc * IC + ic) * k + kh) * k + kw];
              }
          y[((n * OC + oc) * oh + oy) * ow + ox] = sum + (b ? b[oc] : T(0));
        }
}

template <typename T>
void conv2d_bwd_data(const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w,
                     int64_t OC, int k, int s, int p, T* dx) {
  int64_t oh = conv_out(H, k, s, p), ow = conv_out(W, k, s, p);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t ic = 0; ic < IC; ++ic)
      for (int64_t iy = 0; iy < H; ++iy)
        for (int64_t ix = 0; ix < W; ++ix) {
          T sum = T(0);
          for (int64_t oc = 0; oc < OC; ++oc)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                int64_t t = iy + p - kh, u = ix + p - kw;
                if (t < 0 || u < 0 || t % s || u % s) continue;
                int64_t oy = t / s, ox = u / s;
                if (oy >= oh || ox >= ow) continue;
                sum += dy[((n * OC + oc) * oh + oy) * ow + ox] *
                       w[((oc * IC + ic) * k + kh) * k + kw];
              }
          dx[((n * IC + ic) * H + iy) * W + ix] = sum;
        }
}

template <typename T>
void conv2d_bwd_filter(const T* x, const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W,
                       int64_t OC, int k, int s, int p, T* dw, T* db) {
  int64_t oh = conv_out(H, k, s, p), ow = conv_out(W, k, s, p);
  for (int64_t oc = 0; oc < OC; ++oc) {
    for (int64_t ic = 0; ic < IC; ++ic)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          T sum = T(0);
          for (int64_t n = 0; n < N; ++n)
            for (int64_t oy = 0; oy < oh; ++oy)
              for (int64_t ox = 0; ox < ow; ++ox) {
                int64_t iy = oy * s - p + kh, ix = ox * s - p + kw;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                sum += x[((n * IC + ic) * H + iy) * W + ix] *
                       dy[((n * OC + oc) * oh + oy) * ow + ox];
              }
          dw[((oc * IC + ic) * k + kh) * k + kw] = sum;
        }
    if (db) {
      T sum = T(0);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < oh * ow; ++i) sum += dy[(n * OC + oc) * oh * ow + i];
      db[oc] = sum;
    }
  }
}

}  // namespace serial

template <typename T>
void conv2d_fwd(const T* x, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w, const T* b,
                int64_t OC, int k, int s, int p, T* y) {
  if (!parallel()) {
    serial::conv2d_fwd(x, N, IC, H, W, w, b, OC, k, s, p, y);
    return;
  }
  int64_t oh = conv_out(H, k, s, p), ow = conv_out(W, k, s, p);
  int64_t ohw = oh * ow, K = IC * k * k;
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    std::vector<T> col(K * ohw);
    im2col(x + n * IC * H * W, IC, H, W, k, s, p, col.data());
    T* yn = y + n * OC * ohw;
    gemm(OC, ohw, K, w, col.data(), yn, false);
    if (b)
      for (int64_t oc = 0; oc < OC; ++oc)
        for (int64_t i = 0; i < ohw; ++i) yn[oc * ohw + i] += b[oc];
  }
}

template <typename T>
void conv2d_bwd_data(const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w,
                     int64_t OC, int k, int s, int p, T* dx) {
  if (!parallel()) {
    serial::conv2d_bwd_data(dy, N, IC, H, W, w, OC, k, s, p, dx);
    return;
  }
  int64_t oh = conv_out(H, k, s, p), ow = conv_out(W, k, s, p);
  int64_t ohw = oh * ow, K = IC * k * k;
  std::vector<T> wt(K * OC);
  transpose(OC, K, w, wt.data());
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    std::vector<T> colg(K * ohw);
    gemm(K, ohw, OC, wt.data(), dy + n * OC * ohw, colg.data(), false);
    col2im(colg.data(), IC, H, W, k, s, p, dx + n * IC * H * W);
  }
}

template <typename T>
void conv2d_bwd_filter(const T* x, const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W,
                       int64_t OC, int k, int s, int p, T* dw, T* db) {
  if (!parallel()) {
    serial::conv2d_bwd_filter(x, dy, N, IC, H, W, OC, k, s, p, dw, db);
    return;
  }
  int64_t oh = conv_out(H, k, s, p), ow = conv_out(W, k, s, p);
  int64_t ohw = oh * ow, K = IC * k * k;
  std::fill(dw, dw + OC * K, T(0));
  if (db) std::fill(db, db + OC, T(0));
  std::vector<T> col(K * ohw), colt(ohw * K);
  // images accumulated in order so gradients are reproducible
  for (int64_t n = 0; n < N; ++n) {
    im2col(x + n * IC * H * W, IC, H, W, k, s, p, col.data());
    transpose(K, ohw, col.data(), colt.data());
    const T* dyn = dy + n * OC * ohw;
    gemm(OC, K, ohw, dyn, colt.data(), dw, true);
    if (db)
      for (int64_t oc = 0; oc < OC; ++oc) {
        T sum = T(0);
        for (int64_t i = 0; i < ohw; ++i) sum += dyn[oc * ohw + i];
        db[oc] += sum;
      }
  }
}

// ---------------------------------------------------------------- tconv2d
// y = tconv(x) is the adjoint of x = conv(y) with the same k,s,p, so the
// optimized path reuses im2col/col2im on the *output* geometry.

namespace serial {

template <typename T>
void tconv2d_fwd(const T* x, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w, const T* b,
                 int64_t OC, int k, int s, int p, T* y) {
  int64_t oh = tconv_out(H, k, s, p), ow = tconv_out(W, k, s, p);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oc = 0; oc < OC; ++oc)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          T sum = T(0);
          for (int64_t ic = 0; ic < IC; ++ic)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                int64_t t = oy + p - kh, u = ox + p - kw;
                if (t < 0 || u < 0 || t % s || u % s) continue;
                int64_t iy = t / s, ix = u / s;
                if (iy >= H || ix >= W) continue;
                sum += x[((n * IC + ic) * H + iy) * W + ix] *
                       w[((ic * OC + oc) * k + kh) * k + kw];
              }
          y[((n * OC + oc) * oh + oy) * ow + ox] = sum + (b ? b[oc] : T(0));
        }
}

template <typename T>
void tconv2d_bwd_data(const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w,
                      int64_t OC, int k, int s, int p, T* dx) {
  int64_t oh = tconv_out(H, k, s, p), ow = tconv_out(W, k, s, p);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t ic = 0; ic < IC; ++ic)
      for (int64_t iy = 0; iy < H; ++iy)
        for (int64_t ix = 0; ix < W; ++ix) {
          T sum = T(0);
          for (int64_t oc = 0; oc < OC; ++oc)
            for (int kh = 0; kh < k; ++kh)
              for (int kw = 0; kw < k; ++kw) {
                int64_t oy = iy * s - p + kh, ox = ix * s - p + kw;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                sum += dy[((n * OC + oc) * oh + oy) * ow + ox] *
                       w[((ic * OC + oc) * k + kh) * k + kw];
              }
          dx[((n * IC + ic) * H + iy) * W + ix] = sum;
        }
}

template <typename T>
void tconv2d_bwd_filter(const T* x, const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W,
                        int64_t OC, int k, int s, int p, T* dw, T* db) {
  int64_t oh = tconv_out(H, k, s, p), ow = tconv_out(W, k, s, p);
  for (int64_t ic = 0; ic < IC; ++ic)
    for (int64_t oc = 0; oc < OC; ++oc)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          T sum = T(0);
          for (int64_t n = 0; n < N; ++n)
            for (int64_t iy = 0; iy < H; ++iy)
              for (int64_t ix = 0; ix < W; ++ix) {
                int64_t oy = iy * s - p + kh, ox = ix * s - p + kw;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                sum += x[((n * IC + ic) * H + iy) * W + ix] *
                       dy[((n * OC + oc) * oh + oy) * ow + ox];
              }
          dw[((ic * OC + oc) * k + kh) * k + kw] = sum;
        }
  if (db)
    for (int64_t oc = 0; oc < OC; ++oc) {
      T sum = T(0);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < oh * ow; ++i) sum += dy[(n * OC + oc) * oh * ow + i];
      db[oc] = sum;
    }
}

}  // namespace serial

template <typename T>
void tconv2d_fwd(const T* x, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w, const T* b,
                 int64_t OC, int k, int s, int p, T* y) {
  if (!parallel()) {
    serial::tconv2d_fwd(x, N, IC, H, W, w, b, OC, k, s, p, y);
    return;
  }
  int64_t oh = tconv_out(H, k, s, p), ow = tconv_out(W, k, s, p);
  int64_t ihw = H * W, K = OC * k * k;
  std::vector<T> wt(K * IC);
  transpose(IC, K, w, wt.data());
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    std::vector<T> colg(K * ihw);
    gemm(K, ihw, IC, wt.data(), x + n * IC * ihw, colg.data(), false);
    T* yn = y + n * OC * oh * ow;
    col2im(colg.data(), OC, oh, ow, k, s, p, yn);
    if (b)
      for (int64_t oc = 0; oc < OC; ++oc)
        for (int64_t i = 0; i < oh * ow; ++i) yn[oc * oh * ow + i] += b[oc];
  }
}

template <typename T>
void tconv2d_bwd_data(const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W, const T* w,
                      int64_t OC, int k, int s, int p, T* dx) {
  if (!parallel()) {
    serial::tconv2d_bwd_data(dy, N, IC, H, W, w, OC, k, s, p, dx);
    return;
  }
  int64_t oh = tconv_out(H, k, s, p), ow = tconv_out(W, k, s, p);
  int64_t ihw = H * W, K = OC * k * k;
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    std::vector<T> col(K * ihw);
    im2col(dy + n * OC * oh * ow, OC, oh, ow, k, s, p, col.data());
    gemm(IC, ihw, K, w, col.data(), dx + n * IC * ihw, false);
  }
}

template <typename T>
void tconv2d_bwd_filter(const T* x, const T* dy, int64_t N, int64_t IC, int64_t H, int64_t W,
                        int64_t OC, int k, int s, int p, T* dw, T* db) {
  if (!parallel()) {
    serial::tconv2d_bwd_filter(x, dy, N, IC, H, W, OC, k, s, p, dw, db);
    return;
  }
  int64_t oh = tconv_out(H, k, s, p), ow = tconv_out(W, k, s, p);
  int64_t ihw = H * W, K = OC * k * k;
  std::fill(dw, dw + IC * K, T(0));
  if (db) std::fill(db, db + OC, T(0));
  std::vector<T> col(K * ihw), colt(ihw * K);
  for (int64_t n = 0; n < N; ++n) {
    const T* dyn = dy + n * OC * oh * ow;
    im2col(dyn, OC, oh, ow, k, s, p, col.data());
    transpose(K, ihw, col.data(), colt.data());
    gemm(IC, K, ihw, x + n * IC * ihw, colt.data(), dw, true);
    if (db)
      for (int64_t oc = 0; oc < OC; ++oc) {
        T sum = T(0);
        for (int64_t i = 0; i < oh * ow; ++i) sum += dyn[oc * oh * ow + i];
        db[oc] += sum;
      }
  }
}

// ---------------------------------------------------------------- pooling

namespace serial {

template <typename T>
void maxpool_fwd(const T* x, int64_t N, int64_t C, int64_t H, int64_t W, int k, int s, T* y,
                 int32_t* idx) {
  int64_t oh = (H - k) / s + 1, ow = (W - k) / s + 1;
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x + nc * H * W;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        int32_t bi = 0;
        for (int kh = 0; kh < k; ++kh)
          for (int kw = 0; kw < k; ++kw) {
            int64_t iy = oy * s + kh, ix = ox * s + kw;
            if (iy >= H || ix >= W) continue;
            T v = plane[iy * W + ix];
            if (v > best) {
              best = v;
              bi = int32_t(iy * W + ix);
            }
          }
        y[nc * oh * ow + oy * ow + ox] = best;
        if (idx) idx[nc * oh * ow + oy * ow + ox] = bi;
      }
  }
}

}  // namespace serial

template <typename T>
void maxpool_fwd(const T* x, int64_t N, int64_t C, int64_t H, int64_t W, int k, int s, T* y,
                 int32_t* idx) {
  if (!parallel()) {
    serial::maxpool_fwd(x, N, C, H, W, k, s, y, idx);
    return;
  }
  int64_t oh = (H - k) / s + 1, ow = (W - k) / s + 1;
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x + nc * H * W;
    T* yp = y + nc * oh * ow;
    int32_t* ip = idx ? idx + nc * oh * ow : nullptr;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        int32_t bi = 0;
        for (int kh = 0; kh < k; ++kh)
          for (int kw = 0; kw < k; ++kw) {
            int64_t iy = oy * s + kh, ix = ox * s + kw;
            if (iy >= H || ix >= W) continue;
            T v = plane[iy * W + ix];
            if (v > best) {
              best = v;
              bi = int32_t(iy * W + ix);
            }
          }
        yp[oy * ow + ox] = best;
        if (ip) ip[oy * ow + ox] = bi;
      }
  }
}

template <typename T>
void maxpool_bwd(const T* dy, const int32_t* idx, int64_t N, int64_t C, int64_t H, int64_t W,
                 int k, int s, T* dx) {
  int64_t oh = (H - k) / s + 1, ow = (W - k) / s + 1;
  std::fill(dx, dx + N * C * H * W, T(0));
#pragma omp parallel for schedule(static) if (parallel())
  for (int64_t nc = 0; nc < N * C; ++nc) {
    T* plane = dx + nc * H * W;
    for (int64_t i = 0; i < oh * ow; ++i) plane[idx[nc * oh * ow + i]] += dy[nc * oh * ow + i];
  }
}

// ---------------------------------------------------------------- misc

template <typename T>
void relu_fwd(const T* x, int64_t n, T* y) {
#pragma omp parallel for schedule(static) if (parallel() && n > 1 << 16)
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_bwd(const T* dy, const T* y, int64_t n, T* dx) {
#pragma omp parallel for schedule(static) if (parallel() && n > 1 << 16)
  for (int64_t i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void add_bias_nchw(T* y, const T* b, int64_t N, int64_t C, int64_t HW) {
#pragma omp parallel for schedule(static) if (parallel() && N * C > 64)
  for (int64_t nc = 0; nc < N * C; ++nc) {
    T v = b[nc % C];
    for (int64_t i = 0; i < HW; ++i) y[nc * HW + i] += v;
  }
}

template <typename T>
void add_bias_rows(T* y, const T* b, int64_t N, int64_t F) {
  for (int64_t n = 0; n < N; ++n)
    for (int64_t f = 0; f < F; ++f) y[n * F + f] += b[f];
}

template <typename T>
void softmax_rows(const T* x, int64_t N, int64_t C, T* y) {
#pragma omp parallel for schedule(static) if (parallel() && N > 8)
  for (int64_t n = 0; n < N; ++n) {
    const T* xr = x + n * C;
    T* yr = y + n * C;
    T mx = xr[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    T sum = T(0);
    for (int64_t c = 0; c < C; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (int64_t c = 0; c < C; ++c) yr[c] /= sum;
  }
}

// explicit instantiations: float drives training, double backs the
// finite-difference and oracle tests
#define XINV_INSTANTIATE(T)                                                                     \
  template void gemm<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool);               \
  template void transpose<T>(int64_t, int64_t, const T*, T*);                                   \
  template void im2col<T>(const T*, int64_t, int64_t, int64_t, int, int, int, T*);              \
  template void col2im<T>(const T*, int64_t, int64_t, int64_t, int, int, int, T*);              \
  template void conv2d_fwd<T>(const T*, int64_t, int64_t, int64_t, int64_t, const T*, const T*, \
                              int64_t, int, int, int, T*);                                      \
  template void conv2d_bwd_data<T>(const T*, int64_t, int64_t, int64_t, int64_t, const T*,      \
                                   int64_t, int, int, int, T*);                                 \
  template void conv2d_bwd_filter<T>(const T*, const T*, int64_t, int64_t, int64_t, int64_t,    \
                                     int64_t, int, int, int, T*, T*);                           \
  template void tconv2d_fwd<T>(const T*, int64_t, int64_t, int64_t, int64_t, const T*,          \
                               const T*, int64_t, int, int, int, T*);                           \
  template void tconv2d_bwd_data<T>(const T*, int64_t, int64_t, int64_t, int64_t, const T*,     \
                                    int64_t, int, int, int, T*);                                \
  template void tconv2d_bwd_filter<T>(const T*, const T*, int64_t, int64_t, int64_t, int64_t,   \
                                      int64_t, int, int, int, T*, T*);                          \
  template void maxpool_fwd<T>(const T*, int64_t, int64_t, int64_t, int64_t, int, int, T*,      \
                               int32_t*);                                                       \
  template void maxpool_bwd<T>(const T*, const int32_t*, int64_t, int64_t, int64_t, int64_t,    \
                               int, int, T*);                                                   \
  template void relu_fwd<T>(const T*, int64_t, T*);                                             \
  template void relu_bwd<T>(const T*, const T*, int64_t, T*);                                   \
  template void add_bias_nchw<T>(T*, const T*, int64_t, int64_t, int64_t);                      \
  template void add_bias_rows<T>(T*, const T*, int64_t, int64_t);                               \
  template void softmax_rows<T>(const T*, int64_t, int64_t, T*);                                \
  namespace serial {                                                                            \
  template void gemm<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool);               \
  template void conv2d_fwd<T>(const T*, int64_t, int64_t, int64_t, int64_t, const T*, const T*, \
                              int64_t, int, int, int, T*);                                      \
  template void conv2d_bwd_data<T>(const T*, int64_t, int64_t, int64_t, int64_t, const T*,      \
                                   int64_t, int, int, int, T*);                                 \
  template void conv2d_bwd_filter<T>(const T*, const T*, int64_t, int64_t, int64_t, int64_t,    \
                                     int64_t, int, int, int, T*, T*);                           \
  template void tconv2d_fwd<T>(const T*, int64_t, int64_t, int64_t, int64_t, const T*,          \
                               const T*, int64_t, int, int, int, T*);                           \
  template void tconv2d_bwd_data<T>(const T*, int64_t, int64_t, int64_t, int64_t, const T*,     \
                                    int64_t, int, int, int, T*);                                \
  template void tconv2d_bwd_filter<T>(const T*, const T*, int64_t, int64_t, int64_t, int64_t,   \
                                      int64_t, int, int, int, T*, T*);                          \
  template void maxpool_fwd<T>(const T*, int64_t, int64_t, int64_t, int64_t, int, int, T*,      \
                               int32_t*);                                                       \
  }

XINV_INSTANTIATE(float)
XINV_INSTANTIATE(double)

}  // namespace xinv::kern

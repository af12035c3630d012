#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "xinv/kernels.hpp"
#include "xinv/rng.hpp"

using namespace xinv;
namespace k = xinv::kern;

namespace {

template <typename T>
std::vector<T> randn(Rng& rng, int64_t n, T scale = T(1)) {
  std::vector<T> v(n);
  for (auto& x : v) x = T(rng.normal()) * scale;
  return v;
}

template <typename T>
double max_rel_err(const std::vector<T>& a, const std::vector<T>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = std::abs(double(a[i]) - double(b[i]));
    double m = std::max({std::abs(double(a[i])), std::abs(double(b[i])), 1.0});
    worst = std::max(worst, d / m);
  }
  return worst;
}

}  // namespace

TEST_CASE("gemm matches serial reference across tail shapes") {
  Rng rng(7);
  // shapes chosen to exercise full tiles, row tails, column tails, k blocking
  struct Sh {
    int64_t m, n, k;
  };
  for (Sh s : {Sh{8, 32, 16}, Sh{7, 33, 5}, Sh{1, 1, 1}, Sh{13, 77, 300}, Sh{64, 96, 520},
               Sh{40, 40, 31}}) {
    auto A = randn<double>(rng, s.m * s.k);
    auto B = randn<double>(rng, s.k * s.n);
    std::vector<double> C1(s.m * s.n), C2(s.m * s.n);
    k::serial::gemm(s.m, s.n, s.k, A.data(), B.data(), C1.data(), false);
    k::gemm(s.m, s.n, s.k, A.data(), B.data(), C2.data(), false);
    CHECK(max_rel_err(C1, C2) < 1e-13);
  }
}

TEST_CASE("gemm accumulate adds onto existing C") {
  Rng rng(8);
  int64_t m = 17, n = 41, k = 260;  // large enough for the blocked path
  auto A = randn<double>(rng, m * k);
  auto B = randn<double>(rng, k * n);
  auto C0 = randn<double>(rng, m * n);
  auto C1 = C0;
  auto C2 = C0;
  k::serial::gemm(m, n, k, A.data(), B.data(), C1.data(), true);
  k::gemm(m, n, k, A.data(), B.data(), C2.data(), true);
  CHECK(max_rel_err(C1, C2) < 1e-13);
}

TEST_CASE("gemm is bitwise reproducible") {
  Rng rng(9);
  int64_t m = 24, n = 70, k = 512;
  auto A = randn<float>(rng, m * k);
  auto B = randn<float>(rng, k * n);
  std::vector<float> C1(m * n), C2(m * n);
  k::gemm(m, n, k, A.data(), B.data(), C1.data(), false);
  k::gemm(m, n, k, A.data(), B.data(), C2.data(), false);
  CHECK(std::memcmp(C1.data(), C2.data(), C1.size() * sizeof(float)) == 0);
}

TEST_CASE("transpose round trip") {
  Rng rng(10);
  int64_t m = 37, n = 129;
  auto A = randn<float>(rng, m * n);
  std::vector<float> B(m * n), C(m * n);
  k::transpose(m, n, A.data(), B.data());
  k::transpose(n, m, B.data(), C.data());
  CHECK(std::memcmp(A.data(), C.data(), A.size() * sizeof(float)) == 0);
  CHECK(B[5 * m + 3] == A[3 * n + 5]);
}

TEST_CASE("col2im is the adjoint of im2col") {
  Rng rng(11);
  struct P {
    int64_t c, h, w;
    int k, s, p;
  };
  for (P q : {P{3, 8, 8, 3, 1, 1}, P{2, 9, 7, 2, 2, 0}, P{1, 8, 8, 4, 2, 1}, P{4, 5, 5, 5, 1, 2}}) {
    int64_t oh = k::conv_out(q.h, q.k, q.s, q.p), ow = k::conv_out(q.w, q.k, q.s, q.p);
    int64_t rows = q.c * q.k * q.k, cols = oh * ow;
    auto x = randn<double>(rng, q.c * q.h * q.w);
    auto u = randn<double>(rng, rows * cols);
    std::vector<double> cx(rows * cols), xu(q.c * q.h * q.w);
    k::im2col(x.data(), q.c, q.h, q.w, q.k, q.s, q.p, cx.data());
    k::col2im(u.data(), q.c, q.h, q.w, q.k, q.s, q.p, xu.data());
    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < rows * cols; ++i) lhs += cx[i] * u[i];
    for (int64_t i = 0; i < q.c * q.h * q.w; ++i) rhs += x[i] * xu[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("conv2d forward/backward matches serial reference") {
  Rng rng(12);
  struct P {
    int64_t n, ic, h, w, oc;
    int k, s, p;
  };
  for (P q : {P{2, 3, 8, 8, 5, 3, 1, 1}, P{3, 2, 9, 9, 4, 2, 2, 0}, P{1, 4, 8, 8, 6, 4, 2, 1},
              P{2, 1, 7, 7, 3, 5, 1, 2}}) {
    int64_t oh = k::conv_out(q.h, q.k, q.s, q.p), ow = k::conv_out(q.w, q.k, q.s, q.p);
    auto x = randn<double>(rng, q.n * q.ic * q.h * q.w);
    auto w = randn<double>(rng, q.oc * q.ic * q.k * q.k);
    auto b = randn<double>(rng, q.oc);
    auto dy = randn<double>(rng, q.n * q.oc * oh * ow);

    std::vector<double> y1(q.n * q.oc * oh * ow), y2 = y1;
    k::serial::conv2d_fwd(x.data(), q.n, q.ic, q.h, q.w, w.data(), b.data(), q.oc, q.k, q.s, q.p,
                          y1.data());
    k::conv2d_fwd(x.data(), q.n, q.ic, q.h, q.w, w.data(), b.data(), q.oc, q.k, q.s, q.p,
                  y2.data());
    CHECK(max_rel_err(y1, y2) < 1e-12);

    std::vector<double> dx1(x.size()), dx2(x.size());
    k::serial::conv2d_bwd_data(dy.data(), q.n, q.ic, q.h, q.w, w.data(), q.oc, q.k, q.s, q.p,
                               dx1.data());
    k::conv2d_bwd_data(dy.data(), q.n, q.ic, q.h, q.w, w.data(), q.oc, q.k, q.s, q.p, dx2.data());
    CHECK(max_rel_err(dx1, dx2) < 1e-12);

    std::vector<double> dw1(w.size()), dw2(w.size()), db1(q.oc), db2(q.oc);
    k::serial::conv2d_bwd_filter(x.data(), dy.data(), q.n, q.ic, q.h, q.w, q.oc, q.k, q.s, q.p,
                                 dw1.data(), db1.data());
    k::conv2d_bwd_filter(x.data(), dy.data(), q.n, q.ic, q.h, q.w, q.oc, q.k, q.s, q.p, dw2.data(),
                         db2.data());
    CHECK(max_rel_err(dw1, dw2) < 1e-12);
    CHECK(max_rel_err(db1, db2) < 1e-12);
  }
}

TEST_CASE("conv2d backward-data is the adjoint of forward") {
  Rng rng(13);
  int64_t n = 2, ic = 3, h = 10, w = 10, oc = 4;
  int kk = 3, s = 1, p = 1;
  int64_t oh = k::conv_out(h, kk, s, p), ow = k::conv_out(w, kk, s, p);
  auto x = randn<double>(rng, n * ic * h * w);
  auto wt = randn<double>(rng, oc * ic * kk * kk);
  auto dy = randn<double>(rng, n * oc * oh * ow);
  std::vector<double> y(n * oc * oh * ow), dx(n * ic * h * w);
  k::conv2d_fwd(x.data(), n, ic, h, w, wt.data(), (double*)nullptr, oc, kk, s, p, y.data());
  k::conv2d_bwd_data(dy.data(), n, ic, h, w, wt.data(), oc, kk, s, p, dx.data());
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
  for (size_t i = 0; i < x.size(); ++i) rhs += x[i] * dx[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("tconv2d matches serial reference and inverts conv shapes") {
  CHECK(k::tconv_out(1, 4, 1, 0) == 4);
  CHECK(k::tconv_out(4, 4, 2, 1) == 8);
  CHECK(k::tconv_out(16, 4, 2, 1) == 32);

  Rng rng(14);
  struct P {
    int64_t n, ic, h, w, oc;
    int k, s, p;
  };
  for (P q : {P{2, 5, 1, 1, 4, 4, 1, 0}, P{2, 3, 4, 4, 2, 4, 2, 1}, P{1, 2, 5, 5, 3, 3, 1, 1},
              P{2, 4, 3, 3, 2, 2, 2, 0}}) {
    int64_t oh = k::tconv_out(q.h, q.k, q.s, q.p), ow = k::tconv_out(q.w, q.k, q.s, q.p);
    auto x = randn<double>(rng, q.n * q.ic * q.h * q.w);
    auto w = randn<double>(rng, q.ic * q.oc * q.k * q.k);
    auto b = randn<double>(rng, q.oc);
    auto dy = randn<double>(rng, q.n * q.oc * oh * ow);

    std::vector<double> y1(q.n * q.oc * oh * ow), y2 = y1;
    k::serial::tconv2d_fwd(x.data(), q.n, q.ic, q.h, q.w, w.data(), b.data(), q.oc, q.k, q.s, q.p,
                           y1.data());
    k::tconv2d_fwd(x.data(), q.n, q.ic, q.h, q.w, w.data(), b.data(), q.oc, q.k, q.s, q.p,
                   y2.data());
    CHECK(max_rel_err(y1, y2) < 1e-12);

    std::vector<double> dx1(x.size()), dx2(x.size());
    k::serial::tconv2d_bwd_data(dy.data(), q.n, q.ic, q.h, q.w, w.data(), q.oc, q.k, q.s, q.p,
                                dx1.data());
    k::tconv2d_bwd_data(dy.data(), q.n, q.ic, q.h, q.w, w.data(), q.oc, q.k, q.s, q.p, dx2.data());
    CHECK(max_rel_err(dx1, dx2) < 1e-12);

    std::vector<double> dw1(w.size()), dw2(w.size()), db1(q.oc), db2(q.oc);
    k::serial::tconv2d_bwd_filter(x.data(), dy.data(), q.n, q.ic, q.h, q.w, q.oc, q.k, q.s, q.p,
                                  dw1.data(), db1.data());
    k::tconv2d_bwd_filter(x.data(), dy.data(), q.n, q.ic, q.h, q.w, q.oc, q.k, q.s, q.p,
                          dw2.data(), db2.data());
    CHECK(max_rel_err(dw1, dw2) < 1e-12);
    CHECK(max_rel_err(db1, db2) < 1e-12);
  }
}

TEST_CASE("maxpool forward records first max and backward scatters") {
  // 1x1x4x4 plane, 2x2 stride 2; duplicate max in the first window
  std::vector<float> x = {5, 5, 1, 2,  //
                          3, 4, 0, 9,  //
                          1, 1, 7, 7,  //
                          1, 1, 7, 0};
  std::vector<float> y(4);
  std::vector<int32_t> idx(4);
  k::maxpool_fwd(x.data(), 1, 1, 4, 4, 2, 2, y.data(), idx.data());
  CHECK(y == std::vector<float>{5, 9, 1, 7});
  CHECK(idx[0] == 0);  // first-scanned 5 wins the tie
  CHECK(idx[1] == 7);
  CHECK(idx[3] == 10);

  std::vector<float> dy = {1, 2, 3, 4}, dx(16);
  k::maxpool_bwd(dy.data(), idx.data(), 1, 1, 4, 4, 2, 2, dx.data());
  CHECK(dx[0] == 1.f);
  CHECK(dx[7] == 2.f);
  CHECK(dx[10] == 4.f);
  float total = 0;
  for (float v : dx) total += v;
  CHECK(total == 10.f);

  // grads for y (winners) only, everything else zero
  Rng rng(15);
  auto xr = randn<float>(rng, 2 * 3 * 8 * 8);
  std::vector<float> yr(2 * 3 * 16), ys(2 * 3 * 16);
  std::vector<int32_t> i1(2 * 3 * 16), i2(2 * 3 * 16);
  k::maxpool_fwd(xr.data(), 2, 3, 8, 8, 2, 2, yr.data(), i1.data());
  k::serial::maxpool_fwd(xr.data(), 2, 3, 8, 8, 2, 2, ys.data(), i2.data());
  CHECK(std::memcmp(yr.data(), ys.data(), yr.size() * sizeof(float)) == 0);
  CHECK(i1 == i2);
}

TEST_CASE("relu forward and backward") {
  std::vector<float> x = {-1, 0, 2.5f, -0.1f}, y(4), dy = {1, 1, 3, 4}, dx(4);
  k::relu_fwd(x.data(), 4, y.data());
  CHECK(y == std::vector<float>{0, 0, 2.5f, 0});
  k::relu_bwd(dy.data(), y.data(), 4, dx.data());
  CHECK(dx == std::vector<float>{0, 0, 3, 0});
}

TEST_CASE("softmax rows are stable and normalized") {
  std::vector<double> x = {1000, 1001, 999, 0, 0, 0};
  std::vector<double> y(6);
  k::softmax_rows(x.data(), 2, 3, y.data());
  for (int r = 0; r < 2; ++r) {
    double s = y[r * 3] + y[r * 3 + 1] + y[r * 3 + 2];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(y[1] > y[0]);
  CHECK(y[0] > y[2]);
  CHECK(y[3] == doctest::Approx(1.0 / 3));
}

TEST_CASE("parallel toggle reroutes to reference kernels") {
  Rng rng(16);
  int64_t n = 1, ic = 2, h = 6, w = 6, oc = 3;
  auto x = randn<float>(rng, n * ic * h * w);
  auto wt = randn<float>(rng, oc * ic * 9);
  auto b = randn<float>(rng, oc);
  std::vector<float> y1(n * oc * h * w), y2(n * oc * h * w);
  k::conv2d_fwd(x.data(), n, ic, h, w, wt.data(), b.data(), oc, 3, 1, 1, y1.data());
  k::parallel() = false;
  k::conv2d_fwd(x.data(), n, ic, h, w, wt.data(), b.data(), oc, 3, 1, 1, y2.data());
  k::parallel() = true;
  CHECK(max_rel_err(y1, y2) < 1e-5);
}

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "fidn/kernels.hpp"
#include "fidn/ops.hpp"
#include "fidn/rng.hpp"
#include "fidn/tape.hpp"
#include "fidn/tensor.hpp"
#include "fidn/verify.hpp"

using namespace fidn;

namespace {

Tensor<float> randn(Rng& rng, Shape s, float scale = 1.0f) {
  Tensor<float> t(std::move(s));
  for (float& x : t.data()) x = scale * static_cast<float>(rng.normal());
  return t;
}

template <typename T>
Tensor<T> eval1(Tensor<T> x, Var (*op)(Tape<T>&, Var)) {
  Tape<T> tape;
  return tape.value(op(tape, tape.constant(std::move(x))));
}

// Independent direct convolution, zero padding 1.
Tensor<float> naive_conv(const Tensor<float>& x, const Tensor<float>& w, const Tensor<float>& b) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), l = w.dim(0);
  Tensor<float> y({n, l, h, wd});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < l; ++o)
      for (std::size_t yy = 0; yy < h; ++yy)
        for (std::size_t xx = 0; xx < wd; ++xx) {
          double acc = b[o];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < 3; ++dy)
              for (int dx = 0; dx < 3; ++dx) {
                const long sy = static_cast<long>(yy) + dy - 1, sx = static_cast<long>(xx) + dx - 1;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x.at(s, ci, sy, sx)) * w.at(o, ci, dy, dx);
              }
          y.at(s, o, yy, xx) = static_cast<float>(acc);
        }
  return y;
}

}  // namespace

// ---------------------------------------------------------------- tensor

TEST(Tensor, ShapeInvariants) {
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{}), ShapeError);
}

TEST(Tensor, TnsrRoundTripIsExact) {
  Rng rng(3);
  const Tensor<float> t = randn(rng, {2, 3, 4});
  std::stringstream ss;
  write_tnsr(ss, t);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "TNSR");
  EXPECT_EQ(bytes.size(), 4 + 4 + 4 + 3 * 4 + 24 * 4u);
  EXPECT_TRUE(bit_equal(read_tnsr(ss), t));
}

TEST(Tensor, TnsrRejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_tnsr(bad), FormatError);
  std::stringstream ss;
  write_tnsr(ss, Tensor<float>({4}, 1.0f));
  std::string s = ss.str();
  std::stringstream cut(s.substr(0, s.size() - 2));
  EXPECT_THROW(read_tnsr(cut), FormatError);
}

// ---------------------------------------------------------------- kernels

TEST(Kernels, Avx2MatchesScalarGemm) {
  if (!kernels::isa_supported(kernels::Isa::Avx2)) GTEST_SKIP() << "no AVX2";
  Rng rng(1);
  for (auto [m, n, k] : std::vector<std::tuple<int, int, int>>{{1, 1, 1}, {3, 5, 7}, {4, 16, 9}, {7, 33, 20},
                                                                {13, 8, 1}, {64, 70, 144}}) {
    const Tensor<float> a = randn(rng, {std::size_t(m), std::size_t(k)});
    const Tensor<float> b = randn(rng, {std::size_t(k), std::size_t(n)});
    for (bool acc : {false, true}) {
      Tensor<float> c0 = randn(rng, {std::size_t(m), std::size_t(n)});
      Tensor<float> c1 = c0;
      kernels::scalar::gemm<float>(m, n, k, a.ptr(), k, b.ptr(), n, c0.ptr(), n, acc);
      kernels::avx2::gemm(m, n, k, a.ptr(), k, b.ptr(), n, c1.ptr(), n, acc);
      for (std::size_t i = 0; i < c0.size(); ++i) EXPECT_NEAR(c0[i], c1[i], 1e-4f * (1.0f + std::abs(c0[i])));
    }
  }
}

TEST(Kernels, Avx2MatchesScalarDotAxpy) {
  if (!kernels::isa_supported(kernels::Isa::Avx2)) GTEST_SKIP() << "no AVX2";
  Rng rng(2);
  for (std::size_t n : {1u, 7u, 8u, 9u, 31u, 100u}) {
    const Tensor<float> x = randn(rng, {n}), y = randn(rng, {n});
    EXPECT_NEAR(kernels::scalar::dot(x.ptr(), y.ptr(), n), kernels::avx2::dot(x.ptr(), y.ptr(), n), 1e-4);
    Tensor<float> y0 = y, y1 = y;
    kernels::scalar::axpy(n, 0.3f, x.ptr(), y0.ptr());
    kernels::avx2::axpy(n, 0.3f, x.ptr(), y1.ptr());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y0[i], y1[i], 1e-6f);
  }
}

TEST(Kernels, GemmRowsIndependentOfPosition) {
  Rng rng(5);
  const Tensor<float> a = randn(rng, {6, 11}), b = randn(rng, {11, 19});
  Tensor<float> full({6, 19});
  kernels::gemm(6, 19, 11, a.ptr(), 11, b.ptr(), 19, full.ptr(), 19, false);
  for (std::size_t r = 0; r < 6; ++r) {
    Tensor<float> one({1, 19});
    kernels::gemm(1, 19, 11, a.ptr() + r * 11, 11, b.ptr(), 19, one.ptr(), 19, false);
    EXPECT_EQ(0, std::memcmp(one.ptr(), full.ptr() + r * 19, 19 * sizeof(float)));
  }
}

TEST(Kernels, IsaOverrideRoundTrip) {
  const auto before = kernels::active_isa();
  kernels::set_active_isa(kernels::Isa::Scalar);
  EXPECT_EQ(kernels::active_isa(), kernels::Isa::Scalar);
  kernels::set_active_isa(before);
}

// ---------------------------------------------------------------- conv2d

TEST(Conv2d, AllOnesHandSum) {
  Tape<float> t;
  const Var y = ops::conv2d(t, t.constant(Tensor<float>({1, 1, 3, 3}, 1.0f)),
                            t.constant(Tensor<float>({1, 1, 3, 3}, 1.0f)), t.constant(Tensor<float>({1})));
  const auto& o = t.value(y);
  EXPECT_EQ(o.at(0, 0, 1, 1), 9.0f);
  EXPECT_EQ(o.at(0, 0, 0, 1), 6.0f);
  EXPECT_EQ(o.at(0, 0, 1, 0), 6.0f);
  EXPECT_EQ(o.at(0, 0, 0, 0), 4.0f);
  EXPECT_EQ(o.at(0, 0, 2, 2), 4.0f);
}

TEST(Conv2d, ZeroWeightGivesZero) {
  Rng rng(1);
  Tape<float> t;
  const Var y = ops::conv2d(t, t.constant(randn(rng, {2, 3, 4, 4})), t.constant(Tensor<float>({2, 3, 3, 3})),
                            t.constant(Tensor<float>({2})));
  for (float v : t.value(y).data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  Rng rng(7);
  const auto x = randn(rng, {2, 2, 5, 5}), w = randn(rng, {3, 2, 3, 3}), b = randn(rng, {3});
  for (auto isa : {kernels::Isa::Scalar, kernels::Isa::Avx2}) {
    if (!kernels::isa_supported(isa)) continue;
    const auto before = kernels::active_isa();
    kernels::set_active_isa(isa);
    Tape<float> t;
    const auto& y = t.value(ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b)));
    const auto ref = naive_conv(x, w, b);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_LT(std::abs(y[i] - ref[i]), 1e-5f);
    kernels::set_active_isa(before);
  }
}

TEST(Conv2d, RejectsChannelMismatchNamingDimension) {
  Tape<float> t;
  try {
    ops::conv2d(t, t.constant(Tensor<float>({1, 2, 4, 4})), t.constant(Tensor<float>({1, 3, 3, 3})),
                t.constant(Tensor<float>({1})));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
}

TEST(Conv2d, Homogeneous) {
  Rng rng(8);
  const auto x = randn(rng, {1, 2, 4, 4}), w = randn(rng, {2, 2, 3, 3});
  Tensor<float> x2 = x;
  for (float& v : x2.data()) v *= 2.5f;
  Tape<float> t;
  const Tensor<float> zero({2});
  const auto y = t.value(ops::conv2d(t, t.constant(x), t.constant(w), t.constant(zero)));
  const auto y2 = t.value(ops::conv2d(t, t.constant(x2), t.constant(w), t.constant(zero)));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y2[i], 2.5f * y[i], 1e-5f * (1 + std::abs(y2[i])));
}

// ---------------------------------------------------------------- pooling

TEST(MaxPool, WindowMaxAndConstant) {
  Tensor<float> x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_EQ(eval1<float>(x, ops::maxpool2x2<float>)[0], 4.0f);
  const auto c = eval1<float>(Tensor<float>({1, 2, 4, 4}, 3.5f), ops::maxpool2x2<float>);
  EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 2}));
  for (float v : c.data()) EXPECT_EQ(v, 3.5f);
}

TEST(MaxPool, MatchesBruteForceWindows) {
  Rng rng(9);
  const auto x = randn(rng, {1, 1, 4, 4});
  const auto y = eval1<float>(x, ops::maxpool2x2<float>);
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox) {
      float m = -1e30f;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x.at(0, 0, 2 * oy + dy, 2 * ox + dx));
      EXPECT_EQ(y.at(0, 0, oy, ox), m);
    }
}

TEST(MaxPool, TieGoesToFirstInScanOrder) {
  Tape<float> t;
  const Var x = t.leaf(Tensor<float>({1, 1, 2, 2}, 1.0f));
  t.backward(ops::sum(t, ops::maxpool2x2(t, x)));
  const auto g = t.grad(x);
  EXPECT_EQ(g[0], 1.0f);
  EXPECT_EQ(g[1] + g[2] + g[3], 0.0f);
}

TEST(MaxPool, RejectsOddSize) {
  Tape<float> t;
  EXPECT_THROW(ops::maxpool2x2(t, t.constant(Tensor<float>({1, 1, 3, 4}))), ShapeError);
}

TEST(GlobalAvgPool, Mean) {
  Tensor<float> x({1, 1, 2, 2}, std::vector<float>{1, 3, 5, 7});
  EXPECT_EQ(eval1<float>(x, ops::global_avg_pool<float>)[0], 4.0f);
  EXPECT_EQ(eval1<float>(Tensor<float>({2, 3, 2, 2}), ops::global_avg_pool<float>)[4], 0.0f);
  Rng rng(4);
  const auto r = randn(rng, {2, 3, 3, 5});
  const auto y = eval1<float>(r, ops::global_avg_pool<float>);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 15; ++i) s += r[(n * 3 + c) * 15 + i];
      EXPECT_NEAR(y.at(n, c), s / 15.0, 1e-6);
    }
}

// ---------------------------------------------------------------- pointwise

TEST(Relu, ValuesAndMask) {
  const auto y = eval1<float>(Tensor<float>({3}, std::vector<float>{-1, 0, 2}), ops::relu<float>);
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[1], 0.0f);
  EXPECT_EQ(y[2], 2.0f);
  Tape<float> t;
  const Var x = t.leaf(Tensor<float>({4}, std::vector<float>{-1, 0, 0.5f, 3}));
  t.backward(ops::sum(t, ops::relu(t, x)));
  const auto g = t.grad(x);
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[1], 0.0f);  // subgradient at zero
  EXPECT_EQ(g[2], 1.0f);
  EXPECT_EQ(g[3], 1.0f);
}

TEST(FullyConnected, IdentityAndBias) {
  Rng rng(1);
  const auto x = randn(rng, {3, 4});
  Tensor<float> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0f;
  Tape<float> t;
  const auto y = t.value(ops::fully_connected(t, t.constant(x), t.constant(eye), t.constant(Tensor<float>({4}))));
  EXPECT_TRUE(bit_equal(y, x));
  const Tensor<float> b({2}, std::vector<float>{1.5f, -2});
  const auto z = t.value(ops::fully_connected(t, t.constant(x), t.constant(Tensor<float>({4, 2})), t.constant(b)));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(z.at(i, 0), 1.5f);
    EXPECT_EQ(z.at(i, 1), -2.0f);
  }
}

TEST(FullyConnected, MatchesTripleLoop) {
  Rng rng(2);
  const auto x = randn(rng, {3, 4}), w = randn(rng, {4, 2}), b = randn(rng, {2});
  Tape<float> t;
  const auto y = t.value(ops::fully_connected(t, t.constant(x), t.constant(w), t.constant(b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      double s = b[k];
      for (std::size_t d = 0; d < 4; ++d) s += static_cast<double>(x.at(i, d)) * w.at(d, k);
      EXPECT_NEAR(y.at(i, k), s, 1e-5);
    }
  EXPECT_THROW(ops::fully_connected(t, t.constant(x), t.constant(Tensor<float>({3, 2})), t.constant(b)), ShapeError);
}

// ---------------------------------------------------------------- batchnorm

TEST(BatchNorm, TwoSampleBatch) {
  Tape<double> t;
  const Var x = t.constant(Tensor<double>({2, 1}, std::vector<double>{1, 3}));
  const auto y = t.value(ops::batchnorm(t, x, t.constant(Tensor<double>({1}, 1.0)),
                                        t.constant(Tensor<double>({1}, 0.0)), Mode::Train, {}));
  EXPECT_NEAR(y[0], -1.0, 1e-3);
  EXPECT_NEAR(y[1], 1.0, 1e-3);
  const auto z = t.value(ops::batchnorm(t, x, t.constant(Tensor<double>({1}, 2.0)),
                                        t.constant(Tensor<double>({1}, 5.0)), Mode::Train, {}));
  EXPECT_NEAR(z[0], 3.0, 1e-3);
  EXPECT_NEAR(z[1], 7.0, 1e-3);
}

TEST(BatchNorm, RunningStatsUpdateAndEvalFormula) {
  Tensor<double> mean({1}, 0.0), var({1}, 1.0);
  Tape<double> t;
  const Var x = t.constant(Tensor<double>({2, 1}, std::vector<double>{1, 3}));
  ops::batchnorm(t, x, t.constant(Tensor<double>({1}, 1.0)), t.constant(Tensor<double>({1}, 0.0)), Mode::Train,
                 {&mean, &var});
  // batch mean 2, unbiased variance 2
  EXPECT_DOUBLE_EQ(mean[0], 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(var[0], 0.9 + 0.1 * 2.0);
  const auto y = t.value(ops::batchnorm(t, t.constant(Tensor<double>({1, 1}, 4.0)),
                                        t.constant(Tensor<double>({1}, 2.0)), t.constant(Tensor<double>({1}, 0.5)),
                                        Mode::Eval, {&mean, &var}));
  EXPECT_NEAR(y[0], 2.0 * (4.0 - 0.2) / std::sqrt(1.1 + 1e-5) + 0.5, 1e-12);
}

TEST(BatchNorm, Errors) {
  Tape<float> t;
  const Var g = t.constant(Tensor<float>({1}, 1.0f)), b = t.constant(Tensor<float>({1}));
  EXPECT_THROW(ops::batchnorm(t, t.constant(Tensor<float>({1, 1})), g, b, Mode::Train, {}), ValidationError);
  EXPECT_THROW(ops::batchnorm(t, t.constant(Tensor<float>({2, 1})), g, b, Mode::Eval, {}), ValidationError);
}

TEST(BatchNorm, ConvActivationsUseSpatialStatistics) {
  Rng rng(3);
  Tape<double> t;
  const auto y = t.value(ops::batchnorm(t, t.constant(randn(rng, {3, 2, 4, 4}).cast<double>()),
                                        t.constant(Tensor<double>({2}, 1.0)), t.constant(Tensor<double>({2})),
                                        Mode::Train, {}));
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) m += y[(n * 2 + c) * 16 + i];
    m /= 48;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) v += std::pow(y[(n * 2 + c) * 16 + i] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 48, 1.0, 1e-3);
  }
}

// ---------------------------------------------------------------- softmax / kron

TEST(Softmax, UniformAndShiftInvariant) {
  const auto y = eval1<float>(Tensor<float>({1, 2}), ops::softmax<float>);
  EXPECT_EQ(y[0], 0.5f);
  EXPECT_EQ(y[1], 0.5f);
  Rng rng(4);
  const auto x = randn(rng, {3, 7}, 3.0f);
  Tensor<float> shifted = x;
  for (float& v : shifted.data()) v += 50.0f;
  const auto a = eval1<float>(x, ops::softmax<float>), b = eval1<float>(shifted, ops::softmax<float>);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      s += a[i * 7 + j];
      EXPECT_GT(a[i * 7 + j], 0.0f);
      EXPECT_NEAR(a[i * 7 + j], b[i * 7 + j], 1e-6);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, MatchesLongDoubleOracle) {
  Rng rng(5);
  const auto x = randn(rng, {1, 9}, 4.0f);
  const auto y = eval1<float>(x, ops::softmax<float>);
  long double z = 0;
  for (float v : x.data()) z += std::exp(static_cast<long double>(v));
  for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(y[j], static_cast<double>(std::exp(static_cast<long double>(x[j])) / z), 1e-7);
}

TEST(Kronecker, BlockOrder) {
  Tape<float> t;
  const auto y = t.value(ops::kronecker(t, t.constant(Tensor<float>({2}, std::vector<float>{1, 2})),
                                        t.constant(Tensor<float>({3}, std::vector<float>{3, 4, 5}))));
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), (std::vector<float>{3, 4, 5, 6, 8, 10}));
  const Tensor<float> v({3}, std::vector<float>{7, 8, 9});
  const auto e = t.value(ops::kronecker(t, t.constant(Tensor<float>({3}, std::vector<float>{1, 0, 0})), t.constant(v)));
  EXPECT_EQ(std::vector<float>(e.data().begin(), e.data().end()), (std::vector<float>{7, 8, 9, 0, 0, 0, 0, 0, 0}));
}

TEST(Kronecker, BilinearAndNormMultiplicative) {
  Rng rng(6);
  const auto u = randn(rng, {4}), v = randn(rng, {5});
  Tensor<float> u3 = u, v3 = v;
  for (float& x : u3.data()) x *= 3.0f;
  for (float& x : v3.data()) x *= 3.0f;
  Tape<float> t;
  const auto a = t.value(ops::kronecker(t, t.constant(u3), t.constant(v)));
  const auto b = t.value(ops::kronecker(t, t.constant(u), t.constant(v3)));
  const auto c = t.value(ops::kronecker(t, t.constant(u), t.constant(v)));
  double nk = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_NEAR(a[i], 3.0f * c[i], 1e-6 * (1 + std::abs(a[i])));
    EXPECT_NEAR(b[i], 3.0f * c[i], 1e-6 * (1 + std::abs(b[i])));
    nk += double(c[i]) * c[i];
  }
  for (float x : u.data()) nu += double(x) * x;
  for (float x : v.data()) nv += double(x) * x;
  EXPECT_NEAR(std::sqrt(nk), std::sqrt(nu * nv), 1e-5 * std::sqrt(nu * nv));
}

TEST(Kronecker, RowWiseAndRejectsMatrixVector) {
  Tape<float> t;
  const auto y = t.value(ops::kronecker(t, t.constant(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3, 4})),
                                        t.constant(Tensor<float>({2, 1}, std::vector<float>{10, 100}))));
  EXPECT_EQ(y.shape(), (Shape{2, 2}));
  EXPECT_EQ(y[3], 400.0f);
  EXPECT_THROW(ops::kronecker(t, t.constant(Tensor<float>({2, 2})), t.constant(Tensor<float>({3}))), ShapeError);
}

TEST(Kronecker, GradientMatchesFiniteDifferences) {
  const auto r = verify::check_op("kronecker", verify::Options{});
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// ---------------------------------------------------------------- tape

TEST(Tape, LinearLossGradientIsExact) {
  Rng rng(7);
  const auto a = randn(rng, {6}).cast<double>();
  Tape<double> t;
  const Var x = t.leaf(randn(rng, {6}).cast<double>());
  t.backward(ops::weighted_sum(t, x, a));
  EXPECT_TRUE(bit_equal(t.grad(x), a));
}

TEST(Tape, UnusedLeafGetsExactZero) {
  Tape<float> t;
  const Var x = t.leaf(Tensor<float>({3}, 1.0f));
  const Var unused = t.leaf(Tensor<float>({2}, 5.0f));
  t.backward(ops::sum(t, x));
  EXPECT_TRUE(t.has_grad(unused));
  const auto g_unused = t.grad(unused);
  for (float g : g_unused.data()) EXPECT_EQ(g, 0.0f);
}

TEST(Tape, RejectsNonScalarLoss) {
  Tape<float> t;
  const Var x = t.leaf(Tensor<float>({3}, 1.0f));
  EXPECT_THROW(t.backward(ops::relu(t, x)), ShapeError);
}

TEST(Tape, TopologicalOrder) {
  Tape<float> t;
  const Var x = t.leaf(Tensor<float>({1, 4}, 1.0f));
  const Var y = ops::softmax(t, ops::relu(t, x));
  ops::sum(t, y);
  for (std::size_t id = 0; id < t.size(); ++id)
    for (Var in : t.inputs(id)) EXPECT_LT(in.id, id);
}

TEST(Tape, SharedInputAccumulates) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>({1}, 3.0));
  t.backward(ops::add_scaled(t, x, x, 2.0));
  EXPECT_EQ(t.grad(x)[0], 3.0);
}

// ---------------------------------------------------------------- suite-level

TEST(GradientSuite, EveryOpPassesIn64Bit) {
  for (const auto& r : verify::check_all_ops(verify::Options{})) {
    EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
    EXPECT_GE(r.samples, 20u) << r.name;
  }
}

TEST(GradientSuite, FaultInjectionIsCaughtPerOp) {
  for (const auto& name : verify::op_names()) {
    verify::Options o;
    o.faulty_op = name;
    const auto results = verify::check_all_ops(o);
    for (const auto& r : results) EXPECT_EQ(r.passed, r.name != name) << "fault on " << name << ", check " << r.name;
  }
}

TEST(Determinism, IdenticalInputsGiveIdenticalBits) {
  Rng rng(11);
  const auto x = randn(rng, {2, 3, 6, 6}), w = randn(rng, {4, 3, 3, 3}), b = randn(rng, {4});
  auto run = [&] {
    Tape<float> t;
    const Var y = ops::relu(t, ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b)));
    return t.value(ops::global_avg_pool(t, ops::maxpool2x2(t, y)));
  };
  EXPECT_TRUE(bit_equal(run(), run()));
}

TEST(Ops, FiniteOutputsForFiniteInputs) {
  Rng rng(12);
  const auto x = randn(rng, {2, 40}, 200.0f);
  EXPECT_TRUE(all_finite(eval1<float>(x, ops::softmax<float>)));
  EXPECT_TRUE(all_finite(eval1<float>(x, ops::sigmoid<float>)));
}

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fpt/kernels.hpp"
#include "fpt/rng.hpp"

using namespace fpt;
using namespace fpt::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-12) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "index " << i;
}

// Restores the thread count a test changed.
class ThreadGuard {
 public:
  ThreadGuard() : saved_(max_threads()) {}
  ~ThreadGuard() { set_num_threads(saved_); }

 private:
  int saved_;
};

ConvDims conv_case(std::size_t stride, std::size_t kh, std::size_t kw, std::size_t ph,
                   std::size_t pw) {
  ConvDims d;
  d.n = 2;
  d.cin = 3;
  d.h = 7;
  d.w = 6;
  d.cout = 4;
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad_h = ph;
  d.pad_w = pw;
  d.out_h = (d.h + 2 * ph - kh) / stride + 1;
  d.out_w = (d.w + 2 * pw - kw) / stride + 1;
  return d;
}

const ConvDims kConvCases[] = {conv_case(1, 3, 3, 1, 1), conv_case(2, 3, 3, 1, 1),
                               conv_case(1, 1, 1, 0, 0), conv_case(1, 5, 1, 2, 0),
                               conv_case(1, 1, 5, 0, 2), conv_case(3, 3, 3, 0, 0)};

}  // namespace

TEST(Kernels, ConvForwardMatchesHandComputedValue) {
  // 1 channel 3x3 input, 3x3 kernel of ones, pad 1: centre output sums all nine inputs.
  ConvDims d;
  d.h = d.w = d.out_h = d.out_w = 3;
  d.kh = d.kw = 3;
  d.pad_h = d.pad_w = 1;
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::vector<double> w(9, 1.0);
  const std::vector<double> b{0.5};
  std::vector<double> y(9);
  conv2d_forward(d, x, w, b, y);
  EXPECT_EQ(y[4], 45.5);
  EXPECT_EQ(y[0], 1 + 2 + 4 + 5 + 0.5);
  EXPECT_EQ(y[8], 5 + 6 + 8 + 9 + 0.5);
}

TEST(Kernels, ConvParallelMatchesReference) {
  for (const ConvDims& d : kConvCases) {
    const auto x = noise(d.input_size(), 1);
    const auto w = noise(d.weight_size(), 2);
    const auto b = noise(d.cout, 3);
    const auto dy = noise(d.output_size(), 4);

    std::vector<double> y1(d.output_size()), y2(d.output_size());
    conv2d_forward(d, x, w, b, y1);
    conv2d_forward_reference(d, x, w, b, y2);
    expect_close(y1, y2);

    std::vector<double> dx1(d.input_size(), 0.25), dx2(d.input_size(), 0.25);
    conv2d_backward_input(d, dy, w, dx1);
    conv2d_backward_input_reference(d, dy, w, dx2);
    expect_close(dx1, dx2);

    std::vector<double> dw1(d.weight_size(), -0.5), dw2(d.weight_size(), -0.5);
    conv2d_backward_weight(d, dy, x, dw1);
    conv2d_backward_weight_reference(d, dy, x, dw2);
    expect_close(dw1, dw2);
  }
}

// <conv(x, w), dy> = <x, conv^T(dy, w)> = <w, corr(dy, x)>
TEST(Kernels, ConvBackwardIsTheAdjoint) {
  for (const ConvDims& d : kConvCases) {
    const auto x = noise(d.input_size(), 11);
    const auto w = noise(d.weight_size(), 12);
    const auto dy = noise(d.output_size(), 13);
    std::vector<double> y(d.output_size());
    conv2d_forward_reference(d, x, w, {}, y);
    std::vector<double> dx(d.input_size()), dw(d.weight_size());
    conv2d_backward_input_reference(d, dy, w, dx);
    conv2d_backward_weight_reference(d, dy, x, dw);
    double lhs = 0.0, rx = 0.0, rw = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
    for (std::size_t i = 0; i < x.size(); ++i) rx += x[i] * dx[i];
    for (std::size_t i = 0; i < w.size(); ++i) rw += w[i] * dw[i];
    EXPECT_NEAR(lhs, rx, 1e-10);
    EXPECT_NEAR(lhs, rw, 1e-10);
  }
}

TEST(Kernels, ConvBiasGradientIsChannelSum) {
  const ConvDims d = conv_case(1, 3, 3, 1, 1);
  const auto dy = noise(d.output_size(), 5);
  std::vector<double> db(d.cout, 1.0);
  conv2d_backward_bias(d, dy, db);
  for (std::size_t co = 0; co < d.cout; ++co) {
    double s = 1.0;
    for (std::size_t b = 0; b < d.n; ++b)
      for (std::size_t p = 0; p < d.out_h * d.out_w; ++p) s += dy[(b * d.cout + co) * d.out_h * d.out_w + p];
    EXPECT_NEAR(db[co], s, 1e-12);
  }
}

TEST(Kernels, GemmVariantsMatchReference) {
  const GemmDims d{3, 5, 7, 4};
  const auto a = noise(d.batch * d.m * d.k, 1);
  const auto b = noise(d.batch * d.k * d.n, 2);
  std::vector<double> ref(d.batch * d.m * d.n), out(d.batch * d.m * d.n);

  gemm_reference(d, false, false, a, b, ref);
  gemm_nn(d, a, b, out, false);
  expect_close(out, ref);

  // Same buffers reinterpreted as transposed operands.
  gemm_reference(d, false, true, a, noise(d.batch * d.n * d.k, 3), ref);
  gemm_nt(d, a, noise(d.batch * d.n * d.k, 3), out, false);
  expect_close(out, ref);

  gemm_reference(d, true, false, noise(d.batch * d.k * d.m, 4), b, ref);
  gemm_tn(d, noise(d.batch * d.k * d.m, 4), b, out, false);
  expect_close(out, ref);

  // accumulate adds onto what is there
  std::vector<double> acc(out.size(), 1.0);
  gemm_nn(d, a, b, acc, true);
  gemm_reference(d, false, false, a, b, ref);
  for (double& v : ref) v += 1.0;
  expect_close(acc, ref);
}

TEST(Kernels, NegSqDistMatchesReferenceAndBackwardMatchesFormula) {
  const DistDims d{2, 5, 6, 3};
  const auto q = noise(d.batch * d.pq * d.dim, 1);
  const auto k = noise(d.batch * d.pk * d.dim, 2);
  std::vector<double> s1(d.batch * d.pq * d.pk), s2(s1.size());
  neg_sq_dist(d, q, k, s1);
  neg_sq_dist_reference(d, q, k, s2);
  expect_close(s1, s2);
  EXPECT_LE(*std::max_element(s1.begin(), s1.end()), 0.0);

  const auto ds = noise(s1.size(), 3);
  std::vector<double> dq(q.size()), dk(k.size());
  neg_sq_dist_backward(d, ds, q, k, dq, dk);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t i = 0; i < d.pq; ++i)
      for (std::size_t t = 0; t < d.dim; ++t) {
        double g = 0.0;
        for (std::size_t j = 0; j < d.pk; ++j) {
          const double diff = q[(b * d.pq + i) * d.dim + t] - k[(b * d.pk + j) * d.dim + t];
          g += ds[(b * d.pq + i) * d.pk + j] * -2.0 * diff;
        }
        EXPECT_NEAR(dq[(b * d.pq + i) * d.dim + t], g, 1e-12);
      }
}

TEST(Kernels, SoftmaxRowsSumToOneAndSurviveLargeLogits) {
  const std::vector<double> x{1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0};
  std::vector<double> y(6);
  softmax_rows(2, 3, x, y);
  for (double v : y) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(y[0] + y[1] + y[2], 1.0, 1e-15);
  EXPECT_NEAR(y[3] + y[4] + y[5], 1.0, 1e-15);
  const double e = std::exp(1.0);
  EXPECT_NEAR(y[1], e / (1.0 + e + 1.0 / e), 1e-15);
}

TEST(Kernels, ResultsAreBitIdenticalAcrossThreadCounts) {
  ThreadGuard guard;
  const ConvDims d = conv_case(1, 3, 3, 1, 1);
  const auto x = noise(d.input_size(), 1);
  const auto w = noise(d.weight_size(), 2);
  const auto dy = noise(d.output_size(), 3);
  const GemmDims g{2, 17, 9, 13};
  const auto a = noise(g.batch * g.m * g.k, 4);
  const auto b = noise(g.batch * g.k * g.n, 5);

  std::vector<std::vector<double>> baseline;
  for (int threads : {1, 2, 3, 4}) {
    set_num_threads(threads);
    std::vector<std::vector<double>> outs(4);
    outs[0].resize(d.output_size());
    conv2d_forward(d, x, w, {}, outs[0]);
    outs[1].assign(d.input_size(), 0.0);
    conv2d_backward_input(d, dy, w, outs[1]);
    outs[2].assign(d.weight_size(), 0.0);
    conv2d_backward_weight(d, dy, x, outs[2]);
    outs[3].resize(g.batch * g.m * g.n);
    gemm_nn(g, a, b, outs[3], false);
    if (baseline.empty()) {
      baseline = outs;
    } else {
      for (std::size_t i = 0; i < outs.size(); ++i) EXPECT_EQ(outs[i], baseline[i]) << threads;
    }
  }
}

TEST(Kernels, WindowCentresFollowFloorRule) {
  WindowDims d;
  d.fine_h = d.fine_w = 8;
  d.coarse_h = d.coarse_w = 4;
  d.size = 5;
  EXPECT_EQ(d.pad(), 2u);
  EXPECT_EQ(d.padded_h(), 8u);
  EXPECT_EQ(d.center_y(0), 0u);
  EXPECT_EQ(d.center_y(1), 0u);
  EXPECT_EQ(d.center_y(7), 3u);
  d.fine_w = 6;
  d.coarse_w = 4;
  EXPECT_EQ(d.center_x(5), 3u);  // floor(5 * 4 / 6)
}

TEST(Kernels, WindowScoresMatchDirectLoop) {
  WindowDims d;
  d.batch = 2;
  d.parts = 2;
  d.part_dim = 3;
  d.fine_h = 4;
  d.fine_w = 4;
  d.coarse_h = 2;
  d.coarse_w = 2;
  d.size = 3;
  const auto q = noise(d.batch * d.parts * d.queries() * d.part_dim, 1);
  const auto kpad = noise(d.batch * d.channels() * d.padded_h() * d.padded_w(), 2);
  std::vector<double> s(d.batch * d.parts * d.queries() * d.window());
  window_neg_sq_dist(d, q, kpad, s);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t p = 0; p < d.parts; ++p)
      for (std::size_t i = 0; i < d.queries(); ++i) {
        const std::size_t cy = d.center_y(i / d.fine_w), cx = d.center_x(i % d.fine_w);
        for (std::size_t u = 0; u < d.window(); ++u) {
          const std::size_t py = cy + u / d.size, px = cx + u % d.size;
          double acc = 0.0;
          for (std::size_t t = 0; t < d.part_dim; ++t) {
            const double qv = q[((b * d.parts + p) * d.queries() + i) * d.part_dim + t];
            const double kv = kpad[((b * d.channels() + p * d.part_dim + t) * d.padded_h() + py) * d.padded_w() + px];
            acc -= (qv - kv) * (qv - kv);
          }
          EXPECT_NEAR(s[((b * d.parts + p) * d.queries() + i) * d.window() + u], acc, 1e-12);
        }
      }
}

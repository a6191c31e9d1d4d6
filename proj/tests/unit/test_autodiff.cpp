#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "fpt/autodiff.hpp"
#include "fpt/ops.hpp"
#include "support/fixtures.hpp"

using namespace fpt;
using testing_support::random_tensor;

namespace {

constexpr double kTol = 1e-6;

// Checks d(sum(op(inputs) * R))/d(inputs) against central differences.
void check_op(const std::function<Var(Tape&, std::vector<Var>&)>& op, std::vector<Tensor> inputs,
              double tol = kTol) {
  Tensor projection;
  {
    Tape probe(false);
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(probe.parameter(t));
    projection = random_tensor(op(probe, vars).shape(), 999);
  }
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < inputs.size(); ++i) named.push_back({"in" + std::to_string(i), &inputs[i]});
  const auto result = gradcheck(
      [&](Tape& tape) {
        std::vector<Var> vars;
        for (const Tensor& t : inputs) vars.push_back(tape.parameter(t));
        return ops::weighted_sum(op(tape, vars), projection);
      },
      named);
  for (const auto& e : result.entries) EXPECT_LE(e.max_rel_error, tol) << e.name;
}

}  // namespace

TEST(Tape, BackwardOfSimpleExpressionMatchesCalculus) {
  Tape tape;
  Tensor xt({1, 1, 1, 3}, {1.0, 2.0, 3.0});
  Tensor yt({1, 1, 1, 3}, {4.0, -1.0, 0.5});
  const Var x = tape.parameter(xt);
  const Var y = tape.parameter(yt);
  const Var loss = ops::sum(ops::mul(ops::add(x, y), x));  // sum(x^2 + xy)
  const GradStore g = tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(g.of(xt)[i], 2 * xt[i] + yt[i]);
    EXPECT_DOUBLE_EQ(g.of(yt)[i], xt[i]);
  }
}

TEST(Tape, ReusedValuesAccumulateGradient) {
  Tape tape;
  Tensor xt = Tensor::full({1, 1, 2, 2}, 3.0);
  const Var x = tape.parameter(xt);
  EXPECT_EQ(tape.parameter(xt).id(), x.id());
  const Var loss = ops::sum(ops::add(ops::add(x, x), x));
  const GradStore g = tape.backward(loss);
  for (double v : g.of(xt).data()) EXPECT_EQ(v, 3.0);
}

TEST(Tape, UnusedParameterGetsZeroGradient) {
  Tape tape;
  Tensor used = Tensor::full({1, 1, 1, 2}, 1.0);
  Tensor unused = Tensor::full({1, 1, 1, 2}, 1.0);
  const Var a = tape.parameter(used);
  tape.parameter(unused);
  const GradStore g = tape.backward(ops::sum(a));
  for (double v : g.of(unused).data()) EXPECT_EQ(v, 0.0);
}

TEST(Tape, RejectsNonScalarLossAndForeignVars) {
  Tape tape;
  Tape other;
  Tensor xt = Tensor::full({1, 1, 1, 2}, 1.0);
  const Var x = tape.parameter(xt);
  EXPECT_THROW(tape.backward(x), ContractError);
  const Var y = other.parameter(xt);
  EXPECT_THROW(ops::add(x, y), ContractError);
  EXPECT_THROW(other.backward(ops::sum(x)), ContractError);
}

TEST(Tape, NonFiniteValuesFailFast) {
  Tape tape;
  Tensor xt({1, 1, 1, 2}, {1.0, INFINITY});
  EXPECT_THROW(tape.parameter(xt), NumericalError);
  Tensor big = Tensor::full({1, 1, 1, 1}, 1e200);
  const Var b = tape.parameter(big);
  EXPECT_THROW(ops::mul(b, b), NumericalError);
}

TEST(Tape, GradFreeTapeStoresNoRules) {
  Tape tape(false);
  Tensor xt = Tensor::full({1, 1, 1, 2}, 1.0);
  const Var y = ops::scale(tape.parameter(xt), 2.0);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(y.value()[1], 2.0);
}

TEST(FiniteDiff, CentralDifferenceOfCubic) {
  const Tensor x({1, 1, 1, 2}, {0.5, -2.0});
  const Tensor g = finite_diff_grad(
      [](const Tensor& t) { return t[0] * t[0] * t[0] + 3.0 * t[1]; }, x, 1e-4);
  EXPECT_NEAR(g[0], 0.75, 1e-8);  // error term h^2 f'''/6 = 1e-8
  EXPECT_NEAR(g[1], 3.0, 1e-10);
  EXPECT_THROW(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0), ContractError);
}

TEST(Gradcheck, CatchesInjectedFaultAndNamesTensor) {
  Tensor w = random_tensor({2, 3, 3, 3}, 1);
  Tensor x = random_tensor({1, 3, 4, 4}, 2);
  const LossBuilder build = [&](Tape& tape) {
    return ops::sum(ops::conv2d(tape.parameter(x), tape.parameter(w), std::nullopt, {1, 1, 1}));
  };
  const std::vector<NamedTensor> named{{"w", &w}, {"x", &x}};
  EXPECT_TRUE(gradcheck(build, named).passed(1e-6));
  GradcheckOptions bad;
  bad.fault = std::make_pair(std::string("conv2d"), 0.9);
  const auto result = gradcheck(build, named, bad);
  EXPECT_FALSE(result.passed(1e-6));
  EXPECT_EQ(result.failing(1e-6), (std::vector<std::string>{"w", "x"}));
  EXPECT_FALSE(gradcheck(build, named).passed(0.0));
}

TEST(OpGradients, Elementwise) {
  check_op([](Tape&, std::vector<Var>& v) { return ops::add(v[0], v[1]); },
           {random_tensor({2, 2, 2, 2}, 1), random_tensor({2, 2, 2, 2}, 2)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::sub(v[0], v[1]); },
           {random_tensor({2, 2, 2, 2}, 1), random_tensor({2, 2, 2, 2}, 2)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::mul(v[0], v[1]); },
           {random_tensor({2, 2, 2, 2}, 1), random_tensor({2, 2, 2, 2}, 2)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::scale(v[0], -1.5); },
           {random_tensor({1, 2, 3, 2}, 3)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::sum(v[0]); }, {random_tensor({1, 2, 3, 2}, 4)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::mask_multiply(v[0], random_tensor({1, 2, 3, 2}, 8)); },
           {random_tensor({1, 2, 3, 2}, 5)});
}

TEST(OpGradients, MatrixAndLayout) {
  check_op([](Tape&, std::vector<Var>& v) { return ops::matmul(v[0], v[1]); },
           {random_tensor({2, 2, 3, 4}, 1), random_tensor({2, 2, 4, 5}, 2)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::transpose(v[0]); }, {random_tensor({1, 2, 3, 4}, 3)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::reshape(v[0], Shape{1, 1, 6, 4}); },
           {random_tensor({1, 2, 3, 4}, 4)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::to_positions(v[0], 2); },
           {random_tensor({2, 4, 3, 2}, 5)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::from_positions(v[0], 2, 3); },
           {random_tensor({2, 1, 6, 4}, 6)});
  check_op(
      [](Tape&, std::vector<Var>& v) {
        const Var parts[] = {v[0], v[1]};
        return ops::concat_channels(parts);
      },
      {random_tensor({2, 1, 3, 3}, 7), random_tensor({2, 3, 3, 3}, 8)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::pad_spatial(v[0], 2); }, {random_tensor({1, 2, 2, 3}, 9)});
}

TEST(OpGradients, SoftmaxAndMixing) {
  check_op([](Tape&, std::vector<Var>& v) { return ops::softmax(v[0]); }, {random_tensor({2, 2, 3, 5}, 1, -3, 3)});
  check_op(
      [](Tape&, std::vector<Var>& v) { return ops::mix_parts(v[0], ops::softmax(v[1])); },
      {random_tensor({2, 3, 4, 5}, 2), random_tensor({2, 1, 1, 3}, 3)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::neg_sq_dist(v[0], v[1]); },
           {random_tensor({2, 2, 3, 4}, 4), random_tensor({2, 2, 5, 4}, 5)});
}

TEST(OpGradients, Convolution) {
  struct Case {
    Shape x, w;
    ops::Conv2dOptions opt;
  };
  const Case cases[] = {
      {{2, 3, 5, 5}, {4, 3, 3, 3}, {1, 1, 1}},
      {{1, 2, 6, 6}, {2, 2, 3, 3}, {2, 1, 1, ops::Rounding::floor}},
      {{1, 2, 5, 5}, {2, 2, 3, 3}, {2, 1, 1}},
      {{1, 2, 4, 5}, {3, 2, 1, 1}, {}},
      {{1, 2, 7, 4}, {2, 2, 5, 1}, {1, 2, 0}},
      {{1, 2, 4, 7}, {2, 2, 1, 5}, {1, 0, 2}},
  };
  for (const Case& c : cases) {
    check_op(
        [&](Tape&, std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2], c.opt); },
        {random_tensor(c.x, 1), random_tensor(c.w, 2), random_tensor({1, c.w.n, 1, 1}, 3)});
  }
}

TEST(OpGradients, PoolingAndScaling) {
  check_op([](Tape&, std::vector<Var>& v) { return ops::global_avg_pool(v[0]); }, {random_tensor({2, 3, 4, 2}, 1)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::channel_scale(v[0], v[1]); },
           {random_tensor({2, 3, 4, 2}, 2), random_tensor({2, 3, 1, 1}, 3)});
  check_op([](Tape&, std::vector<Var>& v) { return ops::weighted_sum(v[0], random_tensor({1, 2, 2, 2}, 7)); },
           {random_tensor({1, 2, 2, 2}, 4)});
}

TEST(OpGradients, WindowedAttention) {
  kernels::WindowDims d;
  d.batch = 2;
  d.parts = 2;
  d.part_dim = 2;
  d.fine_h = 4;
  d.fine_w = 4;
  d.coarse_h = 2;
  d.coarse_w = 2;
  d.size = 3;
  check_op([&](Tape&, std::vector<Var>& v) { return ops::window_neg_sq_dist(v[0], v[1], d); },
           {random_tensor({2, 2, 16, 2}, 1), random_tensor({2, 4, d.padded_h(), d.padded_w()}, 2)});
  kernels::WindowDims a = d;
  a.parts = 1;
  a.part_dim = 4;
  check_op([&](Tape&, std::vector<Var>& v) { return ops::window_aggregate(v[0], v[1], a); },
           {random_tensor({2, 1, 16, 9}, 3), random_tensor({2, 4, a.padded_h(), a.padded_w()}, 4)});
}

TEST(Ops, ConvGeometryErrors) {
  EXPECT_EQ(ops::conv_out_size(5, 3, 1, 2, ops::Rounding::exact), 3u);
  EXPECT_THROW(ops::conv_out_size(6, 3, 1, 2, ops::Rounding::exact), ShapeError);
  EXPECT_EQ(ops::conv_out_size(6, 3, 1, 2, ops::Rounding::floor), 3u);
  EXPECT_THROW(ops::conv_out_size(2, 5, 1, 1, ops::Rounding::floor), ShapeError);
  Tape tape(false);
  Tensor x({1, 3, 4, 4});
  Tensor w({2, 2, 3, 3});
  EXPECT_THROW(ops::conv2d(tape.parameter(x), tape.parameter(w), std::nullopt), ShapeError);
}

TEST(Ops, VectorSoftmaxMatchesDefinition) {
  const std::vector<double> x{0.0, std::log(2.0), std::log(5.0)};
  const auto y = ops::softmax(x);
  EXPECT_NEAR(y[0], 1.0 / 8.0, 1e-15);
  EXPECT_NEAR(y[1], 2.0 / 8.0, 1e-15);
  EXPECT_NEAR(y[2], 5.0 / 8.0, 1e-15);
  EXPECT_THROW(ops::softmax(std::span<const double>{}), ShapeError);
}

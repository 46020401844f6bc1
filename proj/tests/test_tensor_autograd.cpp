#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dca/autograd.hpp"
#include "dca/grad_check.hpp"
#include "dca/ops.hpp"
#include "test_util.hpp"

using namespace dca;
using dca::testing::conv2d_oracle;
using dca::testing::max_abs_diff;
using dca::testing::max_relative_error;
using dca::testing::numeric_gradient;
using dca::testing::random_tensor;

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}, {1.0}), ShapeError);
  Tensor t({2, 3}, std::vector<double>(6), true);
  EXPECT_EQ(t.grad().size(), t.size());
}

TEST(Tensor, CloneIsDeep) {
  Tensor a({2}, {1.0, 2.0});
  Tensor b = a.clone();
  b.mutable_values()[0] = 5.0;
  EXPECT_EQ(a[0], 1.0);
  EXPECT_FALSE(a.same_storage(b));
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST(Conv2d, ScalarAffine) {
  Tape tape;
  Tensor y = conv2d(tape, Tensor({1, 1, 1, 1}, {2.0}), Tensor({1, 1, 1, 1}, {3.0}), Tensor({1}, {1.0}));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 7.0);
}

TEST(Conv2d, ValidPaddingSumsWindow) {
  Tape tape;
  Tensor y = conv2d(tape, Tensor::full({1, 3, 3, 1}, 1.0), Tensor::full({3, 3, 1, 1}, 1.0), Tensor::zeros({1}), 1,
                    Padding::valid);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 9.0);
}

TEST(Conv2d, MatchesDirectOracleOnRandomInput) {
  Rng rng(7);
  Tensor x = random_tensor({2, 5, 5, 3}, rng);
  Tensor k = random_tensor({3, 3, 3, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  Tape tape;
  Tensor y = conv2d(tape, x, k, b, 1, Padding::same);
  ASSERT_EQ(y.shape(), (Shape{2, 5, 5, 4}));
  EXPECT_LE(max_abs_diff(y.values(), conv2d_oracle(x, k, b, 1, true)), 1e-12);
}

TEST(Conv2d, MatchesOracleOnAllSmallShapes) {
  Rng rng(11);
  for (std::size_t h = 1; h <= 8; ++h)
    for (std::size_t w = 1; w <= 8; ++w)
      for (std::size_t k : {1u, 3u})
        for (std::size_t stride : {1u, 2u})
          for (bool same : {true, false}) {
            if (!same && (h < k || w < k)) continue;
            Tensor x = random_tensor({1, h, w, 2}, rng);
            Tensor kw = random_tensor({k, k, 2, 3}, rng);
            Tensor b = random_tensor({3}, rng);
            Tape tape;
            Tensor y = conv2d(tape, x, kw, b, stride, same ? Padding::same : Padding::valid);
            auto expected = conv2d_oracle(x, kw, b, stride, same);
            ASSERT_EQ(y.size(), expected.size()) << h << "x" << w << " k" << k << " s" << stride;
            ASSERT_LE(max_abs_diff(y.values(), expected), 1e-12) << h << "x" << w << " k" << k << " s" << stride;
          }
}

TEST(Conv2d, SamePaddingOutputExtent) {
  Tape tape;
  Tensor y = conv2d(tape, Tensor::zeros({1, 7, 8, 1}), Tensor::zeros({3, 3, 1, 2}), Tensor::zeros({2}), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 2}));
}

TEST(Conv2d, ChannelMismatchNamesAxis) {
  Tape tape;
  try {
    conv2d(tape, Tensor::zeros({1, 3, 3, 2}), Tensor::zeros({3, 3, 3, 1}), Tensor::zeros({1}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(conv2d(tape, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({3, 3, 3, 2}), Tensor::zeros({3})), ShapeError);
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

TEST(Dense, IdentityAndHandArithmetic) {
  Tape tape;
  Tensor y = dense(tape, Tensor({1, 2}, {1, 2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}));
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[1], 2.0);
  Tensor z = dense(tape, Tensor({1, 2}, {1, 1}), Tensor({2, 1}, {2, 3}), Tensor({1}, {1}));
  EXPECT_EQ(z.item(), 6.0);
}

TEST(Dense, MatchesTripleLoop) {
  Rng rng(3);
  Tensor x = random_tensor({4, 8}, rng);
  Tensor w = random_tensor({8, 5}, rng);
  Tensor b = random_tensor({5}, rng);
  std::vector<double> expected(20);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 5; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 8; ++i) acc += x[r * 8 + i] * w[i * 5 + o];
      expected[r * 5 + o] = acc + b[o];
    }
  Tape tape;
  EXPECT_LE(max_abs_diff(dense(tape, x, w, b).values(), expected), 1e-12);
}

TEST(Dense, RejectsWrongRank) {
  Tape tape;
  EXPECT_THROW(dense(tape, Tensor::zeros({2}), Tensor::zeros({2, 2}), Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(dense(tape, Tensor::zeros({1, 3}), Tensor::zeros({2, 2}), Tensor::zeros({2})), ShapeError);
}

// ---------------------------------------------------------------------------
// activations, softmax, elementwise, pooling
// ---------------------------------------------------------------------------

TEST(Activation, Definitions) {
  Tape tape;
  EXPECT_EQ(sigmoid(tape, Tensor::scalar(0.0)).item(), 0.5);
  Tensor r = relu(tape, Tensor({3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()), (std::vector<double>{0, 0, 2}));
}

TEST(Activation, SigmoidGradientMatchesFiniteDifference) {
  Tensor x = Tensor::scalar(1.0, true);
  Tape tape;
  tape.backward(sigmoid(tape, x));
  const double analytic = x.grad()[0];
  auto numeric = numeric_gradient(x, [&] {
    Tape t;
    return sigmoid(t, x).item();
  });
  EXPECT_NEAR(analytic, numeric[0], 1e-7);
}

TEST(Activation, ReluGradientAtZeroIsZero) {
  Tensor x({3}, {-1.0, 0.0, 2.0}, true);
  Tape tape;
  tape.backward(sum(tape, relu(tape, x)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(SpatialSoftmax, AnalyticCases) {
  Tape tape;
  Tensor u = spatial_softmax(tape, Tensor::zeros({1, 2, 2, 1}));
  for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  Tensor p = spatial_softmax(tape, Tensor({1, 1, 2, 1}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(SpatialSoftmax, SlicesSumToOneAndJvpMatchesFiniteDifference) {
  Rng rng(5);
  Tensor x = random_tensor({2, 4, 4, 3}, rng, -3.0, 3.0, true);
  Tape tape;
  Tensor y = spatial_softmax(tape, x);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t c = 0; c < 3; ++c) {
      double total = 0.0;
      for (std::size_t p = 0; p < 16; ++p) {
        const double v = y[(s * 16 + p) * 3 + c];
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }

  // Jacobian-vector product along a random direction vs directional finite difference.
  Tensor weights = random_tensor({2, 4, 4, 3}, rng);
  Tensor dir = random_tensor({2, 4, 4, 3}, rng);
  tape.backward(sum(tape, mul(tape, y, weights)));
  double jvp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) jvp += x.grad()[i] * dir[i];
  auto f = [&](double t) {
    Tensor shifted = x.clone();
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted.mutable_values()[i] += t * dir[i];
    Tape scratch;
    return sum(scratch, mul(scratch, spatial_softmax(scratch, shifted), weights)).item();
  };
  const double h = 1e-5;
  EXPECT_NEAR(jvp, (f(h) - f(-h)) / (2 * h), 1e-6);
}

TEST(Elementwise, MulAndAdd) {
  Tape tape;
  Tensor m = mul(tape, Tensor({3}, {1, 2, 3}), Tensor({3}, {2, 2, 2}));
  EXPECT_EQ(std::vector<double>(m.values().begin(), m.values().end()), (std::vector<double>{2, 4, 6}));
  Rng rng(1);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor a = add(tape, x, Tensor::zeros({2, 3}));
  EXPECT_EQ(max_abs_diff(a.values(), x.values()), 0.0);
}

TEST(Elementwise, ShapeMismatchRejected) {
  Tape tape;
  EXPECT_THROW(mul(tape, Tensor::zeros({3}), Tensor::zeros({4})), ShapeError);
  EXPECT_THROW(add(tape, Tensor::zeros({1, 3}), Tensor::zeros({3, 1})), ShapeError);
}

TEST(Elementwise, MulGradientBothOperands) {
  Rng rng(9);
  Tensor a = random_tensor({5}, rng, -1, 1, true);
  Tensor b = random_tensor({5}, rng, -1, 1, true);
  Tensor w = random_tensor({5}, rng);
  auto loss = [&] {
    Tape t;
    return sum(t, mul(t, mul(t, a, b), w)).item();
  };
  Tape tape;
  tape.backward(sum(tape, mul(tape, mul(tape, a, b), w)));
  std::vector<double> ga(a.grad().begin(), a.grad().end()), gb(b.grad().begin(), b.grad().end());
  a.set_requires_grad(false);
  b.set_requires_grad(false);
  EXPECT_LE(max_abs_diff(ga, numeric_gradient(a, loss)), 1e-7);
  EXPECT_LE(max_abs_diff(gb, numeric_gradient(b, loss)), 1e-7);
}

TEST(GlobalAveragePool, Values) {
  Tape tape;
  Tensor c = global_average_pool(tape, Tensor::full({1, 3, 3, 2}, 3.0));
  EXPECT_EQ(c[0], 3.0);
  EXPECT_EQ(c[1], 3.0);
  EXPECT_EQ(global_average_pool(tape, Tensor({1, 2, 2, 1}, {1, 2, 3, 4})).item(), 2.5);

  Rng rng(2);
  Tensor x = random_tensor({3, 4, 5, 2}, rng);
  Tensor y = global_average_pool(tape, x);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t ch = 0; ch < 2; ++ch) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) acc += x[((s * 4 + i) * 5 + j) * 2 + ch];
      EXPECT_NEAR(y[s * 2 + ch], acc / 20.0, 1e-12);
    }
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

TEST(Dropout, InferenceAndZeroRateAreIdentity) {
  Rng rng(1);
  Tensor x = random_tensor({4, 4}, rng);
  Tape tape;
  EXPECT_EQ(max_abs_diff(dropout(tape, x, 0.5, false, rng).values(), x.values()), 0.0);
  EXPECT_EQ(max_abs_diff(dropout(tape, x, 0.0, true, rng).values(), x.values()), 0.0);
}

TEST(Dropout, RejectsRateOfOne) {
  Rng rng(1);
  Tape tape;
  EXPECT_THROW(dropout(tape, Tensor::zeros({2}), 1.0, true, rng), std::invalid_argument);
}

TEST(Dropout, MonteCarloSurvivalAndMean) {
  Rng data_rng(7);
  Tensor x = random_tensor({100000}, data_rng, 0.5, 1.5);
  Rng drop_rng(42);
  Tape tape;
  Tensor y = dropout(tape, x, 0.3, true, drop_rng);
  std::size_t alive = 0;
  double in_mean = 0.0, out_mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    alive += y[i] != 0.0;
    in_mean += x[i];
    out_mean += y[i];
  }
  EXPECT_NEAR(static_cast<double>(alive) / 1e5, 0.7, 0.01);
  EXPECT_NEAR(out_mean / in_mean, 1.0, 0.01);
}

TEST(Dropout, BackwardUsesSameMask) {
  Rng rng(4);
  Tensor x = Tensor::full({1000}, 1.0, true);
  Tape tape;
  Tensor y = dropout(tape, x, 0.5, true, rng);
  tape.backward(sum(tape, y));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x.grad()[i], y[i]);
}

// ---------------------------------------------------------------------------
// backward / tape
// ---------------------------------------------------------------------------

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::full({2, 3}, 0.7, true);
  Tape tape;
  tape.backward(sum(tape, x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, QuadraticAndFanOut) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tape tape;
  tape.backward(sum(tape, mul(tape, x, x)));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);

  // y = sigmoid(x) + relu(x): x feeds two branches, grads add.
  Tensor z({2}, {0.5, -0.25}, true);
  Tape t2;
  t2.backward(sum(t2, add(t2, sigmoid(t2, z), relu(t2, z))));
  for (std::size_t i = 0; i < 2; ++i) {
    const double s = sigmoid(z[i]);
    EXPECT_NEAR(z.grad()[i], s * (1 - s) + (z[i] > 0 ? 1.0 : 0.0), 1e-15);
  }
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x = Tensor::full({2}, 1.0, true);
  Tape tape;
  Tensor y = relu(tape, x);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Tape, BackwardVisitsNodesInReverseRecordingOrder) {
  Tape tape;
  std::vector<int> visits;
  Tensor x = Tensor::scalar(1.0, true);
  Tensor prev = x;
  for (int i = 0; i < 5; ++i) {
    Tensor out = Tensor::scalar(prev.item(), true);
    tape.record("probe", {prev}, out, [&visits, i] { visits.push_back(i); });
    prev = out;
  }
  tape.backward(prev);
  EXPECT_EQ(visits, (std::vector<int>{4, 3, 2, 1, 0}));
  EXPECT_EQ(tape.node(2).op, "probe");
}

TEST(Tape, NothingRecordedWithoutGrad) {
  Tape tape;
  relu(tape, Tensor::zeros({3}));
  EXPECT_TRUE(tape.empty());
}

// Each op's gradient vs central differences at 10 random points.
TEST(Backward, EveryOpMatchesFiniteDifferences) {
  Rng rng(2024);
  using Op = std::function<Tensor(Tape&, Tensor&)>;
  struct Case {
    const char* name;
    Shape shape;
    Op op;
  };
  Tensor kernel = random_tensor({3, 3, 2, 2}, rng);
  Tensor bias = random_tensor({2}, rng);
  Tensor dw = random_tensor({3, 3}, rng);
  Tensor db = random_tensor({3}, rng);
  Tensor other4 = random_tensor({2, 3, 3, 2}, rng);
  std::vector<Case> cases = {
      {"conv2d", {2, 3, 3, 2}, [&](Tape& t, Tensor& x) { return conv2d(t, x, kernel, bias, 1, Padding::same); }},
      {"conv2d_s2", {2, 3, 3, 2}, [&](Tape& t, Tensor& x) { return conv2d(t, x, kernel, bias, 2, Padding::same); }},
      {"dense", {2, 3}, [&](Tape& t, Tensor& x) { return dense(t, x, dw, db); }},
      {"relu", {2, 3, 3, 2}, [&](Tape& t, Tensor& x) { return relu(t, x); }},
      {"sigmoid", {2, 3, 3, 2}, [&](Tape& t, Tensor& x) { return sigmoid(t, x); }},
      {"spatial_softmax", {2, 3, 3, 2}, [&](Tape& t, Tensor& x) { return spatial_softmax(t, x); }},
      {"mul", {2, 3, 3, 2}, [&](Tape& t, Tensor& x) { return mul(t, x, other4); }},
      {"add", {2, 3, 3, 2}, [&](Tape& t, Tensor& x) { return add(t, x, other4); }},
      {"gap", {2, 3, 3, 2}, [&](Tape& t, Tensor& x) { return global_average_pool(t, x); }},
      {"softmax_rows", {2, 3}, [&](Tape& t, Tensor& x) { return softmax_rows(t, x); }},
  };
  for (auto& c : cases) {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = random_tensor(c.shape, rng, -1.0, 1.0, true);
      // Keep relu away from its kink so central differences are valid.
      if (std::string(c.name) == "relu")
        for (double& v : x.mutable_values())
          if (std::abs(v) < 1e-3) v = 0.5;
      auto loss = [&](Tape& t, Tensor& in) {
        Tensor y = c.op(t, in);
        Tensor wts = Tensor::zeros(y.shape());
        Rng wr(99);
        for (double& v : wts.mutable_values()) v = wr.uniform(-1, 1);
        return sum(t, mul(t, y, wts));
      };
      Tape tape;
      tape.backward(loss(tape, x));
      std::vector<double> analytic(x.grad().begin(), x.grad().end());
      x.set_requires_grad(false);
      auto numeric = numeric_gradient(x, [&] {
        Tape t;
        return loss(t, x).item();
      });
      ASSERT_LT(max_relative_error(analytic, numeric), 1e-6) << c.name << " trial " << trial;
    }
  }
}

TEST(CrossEntropy, AnalyticValues) {
  Tape tape;
  Tensor y = one_hot({0, 1}, 2);
  EXPECT_LE(cross_entropy(tape, Tensor({2, 2}, {1, 0, 0, 1}), y).item(), 1e-11);
  EXPECT_NEAR(cross_entropy(tape, Tensor::full({2, 2}, 0.5), y).item(), std::log(2.0), 1e-9);
  EXPECT_THROW(cross_entropy(tape, Tensor::full({1, 2}, 0.5), Tensor({1, 2}, {0.5, 0.5})), std::invalid_argument);
  EXPECT_THROW(cross_entropy(tape, Tensor::full({1, 2}, 0.5), Tensor({1, 2}, {1, 1})), std::invalid_argument);
}

TEST(CrossEntropy, GradientAtLogitsIsPMinusYOverN) {
  Rng rng(8);
  Tensor z = random_tensor({3, 4}, rng, -2, 2, true);
  Tensor y = one_hot({1, 3, 0}, 4);
  Tape tape;
  Tensor p = softmax_rows(tape, z);
  tape.backward(cross_entropy(tape, p, y));
  std::vector<double> analytic(z.grad().begin(), z.grad().end());
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(analytic[i], (p[i] - y[i]) / 3.0, 1e-10);
  z.set_requires_grad(false);
  auto numeric = numeric_gradient(z, [&] {
    Tape t;
    return cross_entropy(t, softmax_rows(t, z), y).item();
  });
  EXPECT_LE(max_abs_diff(analytic, numeric), 1e-7);
}

// ---------------------------------------------------------------------------
// grad_check
// ---------------------------------------------------------------------------

TEST(GradCheck, LinearScalarModelIsExact) {
  Parameter theta("theta", Tensor::scalar(0.7));
  auto report = grad_check([&](Tape& t) { return scale(t, theta.tensor, 3.0); }, {&theta}, 1e-5, 1e-10);
  EXPECT_LT(report.max_relative_error(), 1e-10);
  EXPECT_TRUE(report.passed());
}

TEST(GradCheck, ConvSigmoidSum) {
  Rng rng(12);
  Tensor input = random_tensor({1, 5, 5, 2}, rng);
  Parameter k("k", random_tensor({3, 3, 2, 3}, rng));
  Parameter b("b", random_tensor({3}, rng));
  auto report = grad_check(
      [&](Tape& t) { return sum(t, sigmoid(t, conv2d(t, input, k.tensor, b.tensor, 1, Padding::same))); }, {&k, &b},
      1e-5, 1e-6);
  EXPECT_TRUE(report.passed()) << report;
  EXPECT_EQ(report.entries.size(), 2u);
}

TEST(GradCheck, RestoresParametersAndRejectsNondeterminism) {
  Parameter theta("theta", Tensor({2}, {0.3, -0.2}));
  grad_check([&](Tape& t) { return sum(t, mul(t, theta.tensor, theta.tensor)); }, {&theta}, 1e-5, 1e-6);
  EXPECT_EQ(theta.tensor[0], 0.3);
  EXPECT_EQ(theta.tensor[1], -0.2);

  int calls = 0;
  EXPECT_THROW(grad_check(
                   [&](Tape& t) {
                     ++calls;
                     return add(t, sum(t, theta.tensor), Tensor::scalar(calls * 1e-3));
                   },
                   {&theta}, 1e-5, 1e-6),
               std::logic_error);
}

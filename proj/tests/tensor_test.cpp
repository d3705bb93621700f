#include "declab/tensor.hpp"

#include <gtest/gtest.h>

#include "declab/gradcheck.hpp"
#include "oracles.hpp"

using namespace declab;

namespace {

TensorT<double> random_tensor(std::vector<int> shape, Rng& rng, bool grad = false) {
  return TensorT<double>::randn(std::move(shape), 0.7, rng, grad);
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor identity = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {3.5f, -1.0f, 2.0f, 0.25f});
  Tensor c = matmul<float>(nullptr, identity, a);
  for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(c.data()[i], a.data()[i]);
}

TEST(Matmul, OneByOne) {
  Tensor a = Tensor::from({1, 1}, {2});
  Tensor b = Tensor::from({1, 1}, {3});
  EXPECT_FLOAT_EQ(matmul<float>(nullptr, a, b).item(), 6.0f);
}

TEST(Matmul, MatchesNaiveTripleLoopOracle) {
  Rng rng(42);
  TensorT<double> a = random_tensor({4, 5}, rng);
  TensorT<double> b = random_tensor({5, 3}, rng);
  TensorT<double> c = matmul<double>(nullptr, a, b);
  std::vector<double> want = oracles::naive_matmul(a.values(), b.values(), 4, 5, 3);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(c.data()[i], want[static_cast<size_t>(i)], 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  EXPECT_THROW(matmul<float>(nullptr, a, b), ShapeError);
}

TEST(Softmax, UniformLogitsGiveUniformProbs) {
  Tensor x = Tensor::zeros({4});
  Tensor p = softmax<float>(nullptr, x, 0);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p.data()[i], 0.25, 1e-7);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(1);
  TensorT<double> x = random_tensor({3, 6}, rng);
  TensorT<double> shifted = TensorT<double>::zeros({3, 6});
  for (int i = 0; i < 18; ++i) shifted.data()[i] = x.data()[i] + 123.456;
  TensorT<double> p = softmax<double>(nullptr, x, 1);
  TensorT<double> q = softmax<double>(nullptr, shifted, 1);
  for (int i = 0; i < 18; ++i) EXPECT_NEAR(p.data()[i], q.data()[i], 1e-12);
}

TEST(Softmax, AnalyticTwoClass) {
  Tensor x = Tensor::from({2}, {0.0f, std::log(3.0f)});
  Tensor p = softmax<float>(nullptr, x, 0);
  EXPECT_NEAR(p.data()[0], 0.25, 1e-6);
  EXPECT_NEAR(p.data()[1], 0.75, 1e-6);
}

TEST(Softmax, RowsSumToOneOnEveryAxis) {
  Rng rng(7);
  TensorT<double> x = random_tensor({2, 3, 4}, rng);
  for (int axis = 0; axis < 3; ++axis) {
    TensorT<double> p = softmax<double>(nullptr, x, axis);
    // sum along 'axis' must be 1 for every lane
    std::int64_t inner = 1, outer = 1;
    int n = x.dim(axis);
    for (int i = axis + 1; i < 3; ++i) inner *= x.dim(i);
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in_i = 0; in_i < inner; ++in_i) {
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += p.data()[o * n * inner + i * inner + in_i];
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
  }
}

TEST(LayerNorm, ConstantRowMapsToBias) {
  Tensor x = Tensor::full({1, 8}, 3.25f);
  Tensor g = Tensor::full({8}, 1.0f);
  Tensor b = Tensor::zeros({8});
  Tensor y = layer_norm<float>(nullptr, x, g, b);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(y.data()[i], 0.0, 1e-5);
}

TEST(LayerNorm, NormalizedStatistics) {
  Rng rng(3);
  TensorT<double> x = random_tensor({5, 32}, rng);
  TensorT<double> g = TensorT<double>::full({32}, 1.0);
  TensorT<double> b = TensorT<double>::zeros({32});
  TensorT<double> y = layer_norm<double>(nullptr, x, g, b);
  for (int r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < 32; ++c) mean += y.data()[r * 32 + c];
    mean /= 32;
    for (int c = 0; c < 32; ++c) {
      double d = y.data()[r * 32 + c] - mean;
      var += d * d;
    }
    var /= 32;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  const int rows = 3, d = 8;
  std::vector<double> theta(static_cast<size_t>(rows * d + 2 * d));
  for (double& v : theta) v = rng.normal();

  auto loss_of = [&](const std::vector<double>& flat) {
    TensorT<double> x = TensorT<double>::from(
        {rows, d}, std::vector<double>(flat.begin(), flat.begin() + rows * d));
    TensorT<double> g = TensorT<double>::from(
        {d}, std::vector<double>(flat.begin() + rows * d, flat.begin() + rows * d + d));
    TensorT<double> b = TensorT<double>::from(
        {d}, std::vector<double>(flat.begin() + rows * d + d, flat.end()));
    TensorT<double> y = layer_norm<double>(nullptr, x, g, b);
    // weighted sum so the gradient is non-trivial
    double acc = 0.0;
    for (std::int64_t i = 0; i < y.size(); ++i)
      acc += y.data()[i] * std::sin(0.37 * static_cast<double>(i) + 0.5);
    return acc;
  };

  std::vector<double> fd = finite_difference_gradient(loss_of, theta, 1e-4);

  TensorT<double> x = TensorT<double>::from(
      {rows, d}, std::vector<double>(theta.begin(), theta.begin() + rows * d), true);
  TensorT<double> g = TensorT<double>::from(
      {d}, std::vector<double>(theta.begin() + rows * d, theta.begin() + rows * d + d), true);
  TensorT<double> b = TensorT<double>::from(
      {d}, std::vector<double>(theta.begin() + rows * d + d, theta.end()), true);
  TapeT<double> tape;
  TensorT<double> y = layer_norm(&tape, x, g, b);
  TensorT<double> w = TensorT<double>::zeros({rows, d});
  for (std::int64_t i = 0; i < w.size(); ++i)
    w.data()[i] = std::sin(0.37 * static_cast<double>(i) + 0.5);
  TensorT<double> loss = sum_all(&tape, mul(&tape, y, w));
  tape.backward(loss);

  std::vector<double> analytic;
  analytic.insert(analytic.end(), x.grad_values().begin(), x.grad_values().end());
  analytic.insert(analytic.end(), g.grad_values().begin(), g.grad_values().end());
  analytic.insert(analytic.end(), b.grad_values().begin(), b.grad_values().end());
  EXPECT_LT(max_relative_error(analytic, fd), 1e-3);
}

TEST(Backward, SquareFunction) {
  TensorT<double> x = TensorT<double>::from({1}, {3.0}, true);
  TapeT<double> tape;
  TensorT<double> y = mul(&tape, x, x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad_values()[0], 6.0);
}

TEST(Backward, UnusedLeafGetsExactZero) {
  TensorT<double> x = TensorT<double>::from({1}, {3.0}, true);
  TensorT<double> unused = TensorT<double>::from({1}, {5.0}, true);
  TapeT<double> tape;
  TensorT<double> y = mul(&tape, x, x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(unused.grad_values()[0], 0.0);
}

TEST(Backward, NonScalarLossThrows) {
  TensorT<double> x = TensorT<double>::from({2}, {1.0, 2.0}, true);
  TapeT<double> tape;
  TensorT<double> y = mul(&tape, x, x);
  EXPECT_THROW(tape.backward(y), ContractError);
}

// Two-layer MLP with softmax cross-entropy against central differences.
TEST(Backward, MlpCrossEntropyMatchesFiniteDifferences) {
  Rng rng(23);
  const int in_dim = 6, hidden = 10, classes = 4, batch = 3;
  TensorT<double> input = random_tensor({batch, in_dim}, rng);
  std::vector<int> targets = {1, 3, 0};
  std::vector<std::uint8_t> mask = {1, 1, 1};

  const int n_w1 = in_dim * hidden, n_b1 = hidden, n_w2 = hidden * classes, n_b2 = classes;
  std::vector<double> theta(static_cast<size_t>(n_w1 + n_b1 + n_w2 + n_b2));
  for (double& v : theta) v = 0.4 * rng.normal();

  auto unpack = [&](const std::vector<double>& flat, bool grad) {
    size_t o = 0;
    auto take = [&](std::vector<int> shape, int n) {
      TensorT<double> t = TensorT<double>::from(
          std::move(shape), std::vector<double>(flat.begin() + o, flat.begin() + o + n), grad);
      o += static_cast<size_t>(n);
      return t;
    };
    struct Params {
      TensorT<double> w1, b1, w2, b2;
    } p{take({in_dim, hidden}, n_w1), take({hidden}, n_b1), take({hidden, classes}, n_w2),
      take({classes}, n_b2)};
    return p;
  };

  auto forward = [&](auto& p, TapeT<double>* tape) {
    TensorT<double> h = gelu(tape, add_bias(tape, matmul(tape, input, p.w1), p.b1));
    TensorT<double> logits = add_bias(tape, matmul(tape, h, p.w2), p.b2);
    return smoothed_cross_entropy(tape, logits, targets, mask, 0.0);
  };

  std::vector<double> fd = finite_difference_gradient(
      [&](const std::vector<double>& flat) {
        auto p = unpack(flat, false);
        return forward(p, static_cast<TapeT<double>*>(nullptr)).item();
      },
      theta, 1e-5);

  auto p = unpack(theta, true);
  TapeT<double> tape;
  TensorT<double> loss = forward(p, &tape);
  tape.backward(loss);
  std::vector<double> analytic;
  for (TensorT<double>* t : {&p.w1, &p.b1, &p.w2, &p.b2})
    analytic.insert(analytic.end(), t->grad_values().begin(), t->grad_values().end());
  EXPECT_LT(max_relative_error(analytic, fd), 1e-3);
}

TEST(FiniteDifference, SumGivesOnes) {
  auto f = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  };
  std::vector<double> grad = finite_difference_gradient(f, {0.3, -2.0, 5.5}, 1e-5);
  for (double g : grad) EXPECT_NEAR(g, 1.0, 1e-8);
}

TEST(FiniteDifference, HalfNormSquaredGivesTheta) {
  auto f = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += 0.5 * x * x;
    return s;
  };
  std::vector<double> theta = {0.25, -1.5, 2.0};
  std::vector<double> grad = finite_difference_gradient(f, theta, 1e-4);
  for (size_t i = 0; i < theta.size(); ++i) EXPECT_NEAR(grad[i], theta[i], 1e-7);
}

TEST(FiniteDifference, RejectsNonPositiveStep) {
  auto f = [](const std::vector<double>& v) { return v[0]; };
  EXPECT_THROW(finite_difference_gradient(f, {1.0}, 0.0), ContractError);
}

TEST(Attention, CausalGradientsMatchFiniteDifferences) {
  Rng rng(31);
  const int rows = 5, d = 8, heads = 2;
  Segments segs{{0, 3}, {3, 5}};
  std::vector<double> theta(static_cast<size_t>(3 * rows * d));
  for (double& v : theta) v = 0.6 * rng.normal();

  auto forward = [&](const std::vector<double>& flat, bool grad, TapeT<double>* tape,
                     std::vector<TensorT<double>>* out_qkv) {
    auto take = [&](int part) {
      return TensorT<double>::from(
          {rows, d},
          std::vector<double>(flat.begin() + part * rows * d,
                              flat.begin() + (part + 1) * rows * d),
          grad);
    };
    TensorT<double> q = take(0), k = take(1), v = take(2);
    if (out_qkv) *out_qkv = {q, k, v};
    TensorT<double> o = causal_self_attention(tape, q, k, v, segs, heads);
    double acc = 0.0;
    TensorT<double> w = TensorT<double>::zeros({rows, d});
    for (std::int64_t i = 0; i < w.size(); ++i)
      w.data()[i] = std::cos(0.21 * static_cast<double>(i));
    (void)acc;
    return sum_all(tape, mul(tape, o, w));
  };

  std::vector<double> fd = finite_difference_gradient(
      [&](const std::vector<double>& flat) {
        return forward(flat, false, nullptr, nullptr).item();
      },
      theta, 1e-5);

  TapeT<double> tape;
  std::vector<TensorT<double>> qkv;
  TensorT<double> loss = forward(theta, true, &tape, &qkv);
  tape.backward(loss);
  std::vector<double> analytic;
  for (auto& t : qkv)
    analytic.insert(analytic.end(), t.grad_values().begin(), t.grad_values().end());
  EXPECT_LT(max_relative_error(analytic, fd), 1e-3);
}

TEST(Attention, CrossGradientsMatchFiniteDifferences) {
  Rng rng(37);
  const int rows = 4, n_enc = 6, d = 8, heads = 4;
  Segments q_segs{{0, 2}, {2, 4}};
  Segments kv_segs{{0, 3}, {3, 6}};
  const int nq = rows * d, nk = n_enc * d;
  std::vector<double> theta(static_cast<size_t>(nq + 2 * nk));
  for (double& v : theta) v = 0.5 * rng.normal();

  auto forward = [&](const std::vector<double>& flat, bool grad, TapeT<double>* tape,
                     std::vector<TensorT<double>>* out) {
    TensorT<double> q = TensorT<double>::from(
        {rows, d}, std::vector<double>(flat.begin(), flat.begin() + nq), grad);
    TensorT<double> k = TensorT<double>::from(
        {n_enc, d}, std::vector<double>(flat.begin() + nq, flat.begin() + nq + nk), grad);
    TensorT<double> v = TensorT<double>::from(
        {n_enc, d}, std::vector<double>(flat.begin() + nq + nk, flat.end()), grad);
    if (out) *out = {q, k, v};
    TensorT<double> o = cross_attention(tape, q, k, v, q_segs, kv_segs, heads);
    TensorT<double> w = TensorT<double>::zeros({rows, d});
    for (std::int64_t i = 0; i < w.size(); ++i)
      w.data()[i] = std::sin(0.4 * static_cast<double>(i) - 0.2);
    return sum_all(tape, mul(tape, o, w));
  };

  std::vector<double> fd = finite_difference_gradient(
      [&](const std::vector<double>& flat) {
        return forward(flat, false, nullptr, nullptr).item();
      },
      theta, 1e-5);

  TapeT<double> tape;
  std::vector<TensorT<double>> qkv;
  TensorT<double> loss = forward(theta, true, &tape, &qkv);
  tape.backward(loss);
  std::vector<double> analytic;
  for (auto& t : qkv)
    analytic.insert(analytic.end(), t.grad_values().begin(), t.grad_values().end());
  EXPECT_LT(max_relative_error(analytic, fd), 1e-3);
}

TEST(Dropout, DisabledAtRateZeroAndInverted) {
  Rng rng(5);
  Tensor x = Tensor::full({64}, 2.0f);
  Tensor same = dropout<float>(nullptr, x, 0.0, rng);
  EXPECT_TRUE(same.same_storage(x));
  Tensor dropped = dropout<float>(nullptr, x, 0.5, rng);
  int zeros = 0;
  for (std::int64_t i = 0; i < dropped.size(); ++i) {
    if (dropped.data()[i] == 0.0f)
      zeros++;
    else
      EXPECT_FLOAT_EQ(dropped.data()[i], 4.0f);  // 2.0 / keep_prob
  }
  EXPECT_GT(zeros, 10);
  EXPECT_LT(zeros, 54);
}

TEST(Determinism, SameSeedGivesBitIdenticalResults) {
  auto run = [] {
    Rng rng(99);
    TensorT<double> a = random_tensor({6, 6}, rng);
    TensorT<double> b = random_tensor({6, 6}, rng);
    TensorT<double> c = matmul<double>(nullptr, softmax<double>(nullptr, a, 1), b);
    return c.values();
  };
  EXPECT_EQ(run(), run());
}

TEST(Numerics, NonFiniteValuesAreAnErrorState) {
  Tensor a = Tensor::full({2}, std::numeric_limits<float>::max());
  EXPECT_THROW(mul<float>(nullptr, a, a), NumericError);
}

#include "petbench/gradcheck.hpp"
#include "petbench/layers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace petbench {
namespace {

using T = Tensor<double>;

void fill_normal(T& t, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  for (auto& v : t.mutable_value()) v = d(rng);
}

T random_input(Shape shape, std::mt19937_64& rng) {
  T t = T::zeros(std::move(shape));
  fill_normal(t, rng);
  return t;
}

std::vector<T> tensors(const Parameters<double>& params) {
  std::vector<T> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

TEST(Dense, IdentityWeights) {
  auto layer = DenseLayer<double>::create(3, 3);
  for (Index i = 0; i < 3; ++i) layer.weight.mutable_value()[i * 3 + i] = 1.0;
  T x = T::from({2, 3}, {1, -2, 3, 4, 5, -6});
  T y = dense_forward(layer, x);
  EXPECT_TRUE((y.value() == x.value()).all());
}

TEST(Dense, SmallArithmetic) {
  auto layer = DenseLayer<double>::create(2, 1);
  layer.weight.mutable_value() << 1, 1;
  layer.bias.mutable_value() << 1;
  EXPECT_EQ(dense_forward(layer, T::from({1, 2}, {2, 3})).item(), 6.0);
}

TEST(Dense, DimensionMismatch) {
  auto layer = DenseLayer<double>::create(3, 2);
  EXPECT_THROW(dense_forward(layer, T::zeros({1, 4})), ShapeError);
}

TEST(Dense, Gradcheck) {
  std::mt19937_64 rng(1);
  auto layer = DenseLayer<double>::create(3, 2);
  fill_normal(layer.weight, rng);
  fill_normal(layer.bias, rng);
  T x = random_input({4, 3}, rng);
  Parameters<double> params;
  layer.collect("dense", params);
  auto ts = tensors(params);
  auto r = finite_diff_gradcheck([&] { return sum(square(dense_forward(layer, x))); }, ts);
  EXPECT_LE(r.max_discrepancy, 1e-4);
}

TEST(Conv2d, OneByOneIdentityKernel) {
  auto layer = Conv2dLayer<double>::create(1, 1, 1, 1, 0);
  layer.kernels.mutable_value()[0] = 1.0;
  std::mt19937_64 rng(2);
  T x = random_input({2, 1, 4, 5}, rng);
  T y = conv2d_forward(layer, x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE((y.value() == x.value()).all());
}

TEST(Conv2d, AllOnesKernelOnConstantInput) {
  auto layer = Conv2dLayer<double>::create(1, 1, 3, 1, 0);
  layer.kernels.mutable_value().setOnes();
  T y = conv2d_forward(layer, T::full({1, 1, 3, 3}, 1.0));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 9.0);
}

TEST(Conv2d, IsCrossCorrelation) {
  // Kernel with a single 1 at the top-left picks x[i-1, j-1] (padding 1).
  auto layer = Conv2dLayer<double>::create(1, 1, 3, 1, 1);
  layer.kernels.mutable_value()[0] = 1.0;
  T x = T::from({1, 1, 2, 2}, {1, 2, 3, 4});
  T y = conv2d_forward(layer, x);
  EXPECT_EQ(y.value()[3], 1.0);
  EXPECT_EQ(y.value()[0], 0.0);
}

TEST(Conv2d, OutputExtents) {
  auto layer = Conv2dLayer<double>::create(1, 3, 3, 2, 1);
  T y = conv2d_forward(layer, T::zeros({1, 1, 28, 28}));
  EXPECT_EQ(y.shape(), (Shape{1, 3, 14, 14}));
}

TEST(Conv2d, InvalidGeometry) {
  auto layer = Conv2dLayer<double>::create(1, 1, 5, 1, 0);
  EXPECT_THROW(conv2d_forward(layer, T::zeros({1, 1, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d_forward(layer, T::zeros({1, 2, 8, 8})), ShapeError);
}

TEST(Conv2d, Gradcheck) {
  std::mt19937_64 rng(3);
  auto layer = Conv2dLayer<double>::create(1, 2, 3, 1, 1);
  fill_normal(layer.kernels, rng);
  fill_normal(layer.bias, rng);
  T x = T::zeros({1, 1, 5, 5}, true);
  fill_normal(x, rng);
  Parameters<double> params;
  layer.collect("conv", params);
  auto ts = tensors(params);
  ts.push_back(x);
  auto r = finite_diff_gradcheck([&] { return sum(square(conv2d_forward(layer, x))); }, ts);
  EXPECT_LE(r.max_discrepancy, 1e-4);
}

TEST(MaxPool, PicksMaximum) {
  EXPECT_EQ(max_pool2d(T::from({1, 1, 2, 2}, {1, 2, 3, 4}), 2).item(), 4.0);
}

TEST(MaxPool, ConstantInputStaysConstant) {
  T y = max_pool2d(T::full({2, 3, 6, 6}, 0.7), 2);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 3, 3}));
  EXPECT_TRUE((y.value() == 0.7).all());
}

TEST(MaxPool, TieRoutesGradientToFirstIndex) {
  T x = T::from({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  backward(sum(max_pool2d(x, 2)));
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad().tail(3).abs().sum(), 0.0);
}

TEST(MaxPool, TruncatesOddTrailingRowAndColumn) {
  T y = max_pool2d(T::zeros({1, 1, 7, 5}), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 2}));
}

TEST(Activation, ReferencePoints) {
  T zero = T::from({1}, {0.0});
  EXPECT_DOUBLE_EQ(activation(Activation::sigmoid, zero).item(), 0.5);
  EXPECT_EQ(activation(Activation::relu, T::from({2}, {-1.0, 2.0})).value()[0], 0.0);
  EXPECT_EQ(activation(Activation::relu, T::from({2}, {-1.0, 2.0})).value()[1], 2.0);
  EXPECT_EQ(activation(Activation::silu, zero).item(), 0.0);
  EXPECT_EQ(activation(Activation::gelu, zero).item(), 0.0);
}

TEST(Activation, GeluTanhApproximationCloseToExact) {
  for (double x = -5; x <= 5; x += 0.05) {
    double exact = 0.5 * x * (1 + std::erf(x / std::numbers::sqrt2));
    EXPECT_NEAR(activation(Activation::gelu, T::from({1}, {x})).item(), exact, 1e-3);
  }
}

TEST(Activation, UnknownKind) { EXPECT_THROW(parse_activation("swish"), std::invalid_argument); }

TEST(Activation, ParsesAllKinds) {
  for (auto a : {Activation::sigmoid, Activation::tanh, Activation::relu, Activation::gelu, Activation::silu}) {
    EXPECT_EQ(parse_activation(name(a)), a);
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  auto ln = LayerNormParams<double>::create(5);
  T y = layer_norm(ln, T::full({2, 5}, 3.0));
  EXPECT_TRUE((y.value() == 0.0).all());
}

TEST(LayerNorm, StandardizesRows) {
  std::mt19937_64 rng(4);
  auto ln = LayerNormParams<double>::create(16);
  T x = random_input({8, 16}, rng);
  for (auto& v : x.mutable_value()) v = 3.0 * v + 2.0;
  T y = layer_norm(ln, x);
  auto Y = y.matrix();
  for (Index r = 0; r < Y.rows(); ++r) {
    double mu = Y.row(r).mean();
    double var = (Y.row(r).array() - mu).square().mean();
    EXPECT_LE(std::abs(mu), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(LayerNorm, Gradcheck) {
  std::mt19937_64 rng(5);
  auto ln = LayerNormParams<double>::create(6);
  fill_normal(ln.gamma, rng);
  fill_normal(ln.beta, rng);
  T x = T::zeros({3, 6}, true);
  fill_normal(x, rng);
  T w = random_input({3, 6}, rng);
  Parameters<double> params;
  ln.collect("ln", params);
  auto ts = tensors(params);
  ts.push_back(x);
  auto r = finite_diff_gradcheck([&] { return sum(mul(layer_norm(ln, x), w)); }, ts);
  EXPECT_LE(r.max_discrepancy, 1e-4);
}

TEST(CrossEntropy, UniformLogitsGiveLogTen) {
  std::vector<int> labels{3, 7};
  EXPECT_NEAR(softmax_cross_entropy(T::zeros({2, 10}), labels).item(), std::log(10.0), 1e-12);
}

TEST(CrossEntropy, SaturatedCorrectLogit) {
  T logits = T::zeros({1, 10});
  logits.mutable_value()[4] = 1000.0;
  std::vector<int> labels{4};
  EXPECT_NEAR(softmax_cross_entropy(logits, labels).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(6);
  T logits = T::zeros({3, 10}, true);
  fill_normal(logits, rng, 2.0);
  std::vector<int> labels{0, 9, 4};
  backward(softmax_cross_entropy(logits, labels));
  for (Index i = 0; i < 3; ++i) {
    Eigen::ArrayXd row = logits.matrix().row(i).transpose().array();
    Eigen::ArrayXd p = (row - row.maxCoeff()).exp();
    p /= p.sum();
    p[labels[static_cast<std::size_t>(i)]] -= 1.0;
    for (Index k = 0; k < 10; ++k) EXPECT_NEAR(logits.grad()[i * 10 + k], p[k] / 3.0, 1e-6);
  }
}

TEST(CrossEntropy, ShiftInvariant) {
  std::mt19937_64 rng(7);
  T logits = random_input({4, 10}, rng);
  std::vector<int> labels{1, 2, 3, 4};
  T shifted = T::from({4, 10}, logits.value() + 123.456);
  EXPECT_NEAR(softmax_cross_entropy(logits, labels).item(), softmax_cross_entropy(shifted, labels).item(), 1e-9);
}

TEST(CrossEntropy, LabelOutOfRange) {
  std::vector<int> labels{10};
  EXPECT_THROW(softmax_cross_entropy(T::zeros({1, 10}), labels), std::out_of_range);
}

AttentionParams<double> random_attention(Index d_model, Index heads, std::mt19937_64& rng) {
  auto p = AttentionParams<double>::create(d_model, heads);
  for (auto* layer : {&p.query, &p.key, &p.value, &p.output}) {
    fill_normal(layer->weight, rng, 0.5);
    fill_normal(layer->bias, rng, 0.1);
  }
  return p;
}

TEST(Attention, SingleTokenPassesValueProjection) {
  std::mt19937_64 rng(8);
  auto p = random_attention(4, 2, rng);
  T x = random_input({2, 1, 4}, rng);
  T y = scaled_dot_attention(p, x);
  T expected = dense_forward(p.output, dense_forward(p.value, x));
  EXPECT_LE((y.value() - expected.value()).abs().maxCoeff(), 1e-12);
}

TEST(Attention, RowsSumToOne) {
  std::mt19937_64 rng(9);
  auto p = random_attention(8, 4, rng);
  AttentionProbe<double> probe;
  scaled_dot_attention(p, random_input({3, 5, 8}, rng), &probe);
  ASSERT_EQ(probe.weights.size(), 4u);
  for (const auto& w : probe.weights) {
    ConstMatrixMap<double> W(w.data(), w.size() / 5, 5);
    EXPECT_LE((W.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
  }
}

TEST(Attention, Gradcheck) {
  std::mt19937_64 rng(10);
  auto p = random_attention(4, 2, rng);
  T x = T::zeros({1, 3, 4}, true);
  fill_normal(x, rng);
  Parameters<double> params;
  p.collect("attn", params);
  auto ts = tensors(params);
  ts.push_back(x);
  auto r = finite_diff_gradcheck([&] { return sum(square(scaled_dot_attention(p, x))); }, ts);
  EXPECT_LE(r.max_discrepancy, 1e-4);
}

TEST(Attention, HeadsMustDivideModelWidth) {
  EXPECT_THROW(AttentionParams<double>::create(6, 4), std::invalid_argument);
}

TEST(PositionalEncoding, FirstPositionIsSinCosOfZero) {
  T pe = sinusoidal_positional_encoding<double>(28, 64);
  for (Index i = 0; i < 32; ++i) {
    EXPECT_EQ(pe.value()[2 * i], 0.0);
    EXPECT_EQ(pe.value()[2 * i + 1], 1.0);
  }
  EXPECT_NEAR(pe.value()[64], 0.841471, 1e-6);
  EXPECT_LE(pe.value().abs().maxCoeff(), 1.0);
}

TEST(PositionalEncoding, OddWidthRejected) {
  EXPECT_THROW(sinusoidal_positional_encoding<double>(4, 5), std::invalid_argument);
}

TEST(Dropout, IdentityWhenDisabled) {
  std::mt19937_64 rng(11);
  T x = random_input({10, 10}, rng);
  EXPECT_EQ(dropout(x, 0.0, true, rng).node(), x.node());
  EXPECT_EQ(dropout(x, 0.5, false, rng).node(), x.node());
}

TEST(Dropout, EmpiricalDropFraction) {
  std::mt19937_64 rng(12);
  T x = T::full({1000, 1000}, 1.0);
  T y = dropout(x, 0.25, true, rng);
  double dropped = (y.value() == 0.0).template cast<double>().mean();
  EXPECT_NEAR(dropped, 0.25, 0.01);
  EXPECT_NEAR(y.value().maxCoeff(), 1.0 / 0.75, 1e-12);
}

TEST(Dropout, RejectsBadProbability) {
  std::mt19937_64 rng(13);
  EXPECT_THROW(dropout(T::zeros({2}), 1.0, true, rng), std::invalid_argument);
  EXPECT_THROW(dropout(T::zeros({2}), -0.1, true, rng), std::invalid_argument);
}

TEST(Init, OrthogonalRowsAreOrthonormal) {
  std::mt19937_64 rng(14);
  for (Shape shape : {Shape{6, 6}, Shape{4, 9}, Shape{9, 4}}) {
    T w = T::zeros(shape);
    init_orthogonal(w, rng);
    Eigen::MatrixXd M = w.matrix();
    Eigen::MatrixXd G = shape[0] <= shape[1] ? Eigen::MatrixXd(M * M.transpose()) : Eigen::MatrixXd(M.transpose() * M);
    EXPECT_TRUE(G.isApprox(Eigen::MatrixXd::Identity(G.rows(), G.cols()), 1e-10));
  }
}

TEST(Init, SameSeedSameValues) {
  std::mt19937_64 a(42), b(42);
  T x = T::zeros({5, 7}), y = T::zeros({5, 7});
  init_xavier_uniform(x, 7, 5, a);
  init_xavier_uniform(y, 7, 5, b);
  EXPECT_TRUE((x.value() == y.value()).all());
  EXPECT_LE(x.value().abs().maxCoeff(), std::sqrt(6.0 / 12.0));
}

}  // namespace
}  // namespace petbench

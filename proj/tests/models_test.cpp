#include "petbench/gradsuite.hpp"
#include "petbench/models/cnn.hpp"
#include "petbench/models/jem.hpp"
#include "petbench/models/kan.hpp"
#include "petbench/models/mlp.hpp"
#include "petbench/models/petnn.hpp"
#include "petbench/models/recurrent.hpp"
#include "petbench/models/transformer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace petbench {
namespace {

using T = Tensor<double>;

T random_images(Index batch, Index size, std::mt19937_64& rng) {
  T x = T::zeros({batch, 1, size, size});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : x.mutable_value()) v = u(rng);
  return x;
}

T random_normal(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  T t = T::zeros(std::move(shape));
  std::normal_distribution<double> d(0.0, sd);
  for (auto& v : t.mutable_value()) v = d(rng);
  return t;
}

void zero_all(const Parameters<double>& params) {
  for (auto p : params) p.tensor.mutable_value().setZero();
}

const Tensor<double>& param(const Model<double>& m, const std::string& name) {
  for (const auto& p : m.parameters()) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range(name);
}

TEST(ModelKinds, ElevenInTableOrder) {
  ASSERT_EQ(kAllModelKinds.size(), 11u);
  EXPECT_EQ(name(kAllModelKinds.front()), "MLP");
  EXPECT_EQ(name(kAllModelKinds.back()), "PETNN_SiLU");
  for (ModelKind k : kAllModelKinds) EXPECT_EQ(parse_model_kind(name(k)), k);
  EXPECT_EQ(parse_model_kind("petnn-gelu"), ModelKind::petnn_gelu);
  EXPECT_EQ(parse_model_kind("fastkan"), ModelKind::fast_kan);
  EXPECT_THROW(parse_model_kind("resnet"), std::invalid_argument);
}

TEST(ModelSpec, DefaultsMatchArchitectureTable) {
  EXPECT_EQ(default_spec(ModelKind::mlp).hidden_dims, (std::vector<Index>{256, 128}));
  EXPECT_EQ(default_spec(ModelKind::mlp).layers, 3);
  EXPECT_EQ(default_spec(ModelKind::cnn).hidden_dims, (std::vector<Index>{32, 64}));
  EXPECT_EQ(default_spec(ModelKind::lstm).layers, 2);
  EXPECT_EQ(default_spec(ModelKind::gru).hidden_dims, (std::vector<Index>{192}));
  EXPECT_EQ(default_spec(ModelKind::transformer).hidden_dims, (std::vector<Index>{64}));
  EXPECT_EQ(default_spec(ModelKind::transformer).heads, 4);
  EXPECT_EQ(default_spec(ModelKind::jem).hidden_dims, (std::vector<Index>{16, 32, 64}));
  EXPECT_EQ(default_spec(ModelKind::jem).layers, 5);
  EXPECT_EQ(default_spec(ModelKind::efficient_kan).hidden_dims, (std::vector<Index>{64}));
  for (ModelKind k : {ModelKind::petnn_sigmoid, ModelKind::petnn_gelu, ModelKind::petnn_silu}) {
    EXPECT_EQ(default_spec(k).layers, 3);
    EXPECT_EQ(default_spec(k).hidden_dims, (std::vector<Index>{192}));
    EXPECT_EQ(default_spec(k).cell_dim, 48);
  }
  EXPECT_EQ(petnn_activation(default_spec(ModelKind::petnn_gelu)), Activation::gelu);
  EXPECT_EQ(petnn_activation(default_spec(ModelKind::petnn_silu)), Activation::silu);
  EXPECT_EQ(petnn_activation(default_spec(ModelKind::petnn_sigmoid)), Activation::sigmoid);
}

TEST(ModelSpec, ValidationRejectsBadFields) {
  auto s = default_spec(ModelKind::transformer);
  s.heads = 3;
  EXPECT_THROW(validate(s), std::invalid_argument);
  s = default_spec(ModelKind::mlp);
  s.dropout = 1.0;
  EXPECT_THROW(validate(s), std::invalid_argument);
  s = default_spec(ModelKind::jem);
  s.jem.langevin_steps = 0;
  EXPECT_THROW(validate(s), std::invalid_argument);
  s = default_spec(ModelKind::cnn);
  s.image_size = 2;
  EXPECT_THROW(validate(s), std::invalid_argument);
}

TEST(BuildModel, MlpWidths) {
  auto m = build_model<double>(default_spec(ModelKind::mlp), 1);
  auto& mlp = dynamic_cast<MlpModel<double>&>(*m);
  ASSERT_EQ(mlp.layers().size(), 3u);
  EXPECT_EQ(mlp.layers()[0].in(), 784);
  EXPECT_EQ(mlp.layers()[0].out(), 256);
  EXPECT_EQ(mlp.layers()[1].out(), 128);
  EXPECT_EQ(mlp.layers()[2].out(), 10);
}

TEST(BuildModel, SameSeedIsBitIdentical) {
  for (ModelKind k : kAllModelKinds) {
    auto a = build_model<float>(default_spec(k), 42);
    auto b = build_model<float>(default_spec(k), 42);
    auto c = build_model<float>(default_spec(k), 43);
    ASSERT_EQ(a->parameters().size(), b->parameters().size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a->parameters().size(); ++i) {
      EXPECT_EQ(a->parameters()[i].name, b->parameters()[i].name);
      EXPECT_TRUE((a->parameters()[i].tensor.value() == b->parameters()[i].tensor.value()).all()) << name(k);
      any_diff = any_diff || (a->parameters()[i].tensor.value() != c->parameters()[i].tensor.value()).any();
    }
    EXPECT_TRUE(any_diff) << name(k);
  }
}

TEST(BuildModel, LstmForgetBiasIsOne) {
  auto m = build_model<double>(default_spec(ModelKind::lstm), 3);
  for (const char* layer : {"lstm1.input.bias", "lstm2.input.bias"}) {
    const auto& b = param(*m, layer).value();
    EXPECT_TRUE((b.segment(0, 192) == 1.0).all());
    const auto rest = b.segment(192, 3 * 192);
    EXPECT_LE(rest.abs().maxCoeff(), 1.0 / std::sqrt(192.0));
    EXPECT_GT(rest.abs().maxCoeff(), 0.0);
  }
}

TEST(BuildModel, GruUpdateBiasIsHalf) {
  auto m = build_model<double>(default_spec(ModelKind::gru), 3);
  const auto& b = param(*m, "gru1.input.bias").value();
  EXPECT_TRUE((b.segment(0, 192) == 0.5).all());
  const auto rest = b.segment(192, 2 * 192);
  EXPECT_LE(rest.abs().maxCoeff(), 1.0 / std::sqrt(192.0));
  EXPECT_GT(rest.abs().maxCoeff(), 0.0);
}

TEST(BuildModel, PetnnBiasesBreakSymmetry) {
  // With all-zero biases a blank image row feeds the recurrent LayerNorm a
  // constant vector and the backward pass blows up by 1/sqrt(eps) per step.
  auto m = build_model<double>(default_spec(ModelKind::petnn_gelu), 42);
  ForwardContext<double> ctx;
  auto blank = Tensor<double>::zeros({2, 1, 28, 28});
  std::vector<int> labels{0, 1};
  auto loss = m->loss(blank, labels, ctx);
  backward(loss);
  for (const auto& p : m->parameters()) {
    // The transition potential only reaches the loss through the mask.
    if (!p.tensor.has_grad()) continue;
    EXPECT_LT(p.tensor.grad().abs().maxCoeff(), 1e3) << p.name;
  }
}

TEST(BuildModel, RecurrentBlocksAreOrthogonal) {
  auto m = build_model<double>(default_spec(ModelKind::lstm), 5);
  const auto& w = param(*m, "lstm1.recurrent.weight").value();
  for (Index g = 0; g < 4; ++g) {
    Eigen::Map<const RowMatrix<double>> block(w.data() + g * 192 * 192, 192, 192);
    EXPECT_LE((block * block.transpose() - RowMatrix<double>::Identity(192, 192)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(BuildModel, GruHasAboutThreeQuartersOfLstmParameters) {
  auto lstm = build_model<float>(default_spec(ModelKind::lstm), 1);
  auto gru = build_model<float>(default_spec(ModelKind::gru), 1);
  double ratio = static_cast<double>(gru->parameter_count()) / static_cast<double>(lstm->parameter_count());
  EXPECT_NEAR(ratio, 0.75, 0.02);
}

TEST(AllModels, MapImagesToTenLogits) {
  std::mt19937_64 rng(7);
  for (ModelKind k : kAllModelKinds) {
    auto m = build_model<float>(default_spec(k), 42);
    for (Index batch : {1, 7, 128}) {
      Tensor<float> x = Tensor<float>::zeros({batch, 1, 28, 28});
      std::uniform_real_distribution<float> u(0.0f, 1.0f);
      for (auto& v : x.mutable_value()) v = u(rng);
      ForwardContext<float> ctx;
      Tensor<float> y = m->forward(x, ctx);
      EXPECT_EQ(y.shape(), (Shape{batch, 10})) << name(k);
      EXPECT_TRUE(y.value().allFinite()) << name(k);
    }
  }
}

TEST(AllModels, RejectWrongImageShape) {
  for (ModelKind k : kAllModelKinds) {
    auto m = build_model<double>(tiny_spec(k), 1);
    ForwardContext<double> ctx;
    EXPECT_THROW(m->forward(T::zeros({2, 1, 5, 6}), ctx), ShapeError) << name(k);
  }
}

TEST(AllModels, GradcheckTinyConfigs) {
  for (ModelKind k : kAllModelKinds) {
    auto c = gradcheck_model(k);
    EXPECT_LE(c.result.max_discrepancy, 1e-4) << c.name << " worst at " << c.result.worst_param;
    EXPECT_GT(c.result.probes, 0);
  }
}

TEST(AllModels, TrainingRequiresRngOnlyWithDropout) {
  auto m = build_model<double>(tiny_spec(ModelKind::mlp), 1);
  ForwardContext<double> ctx;
  ctx.training = true;
  std::mt19937_64 rng(1);
  EXPECT_THROW(m->forward(random_images(2, 8, rng), ctx), std::logic_error);
}

TEST(Mlp, ZeroParametersGiveLn10) {
  auto m = build_model<double>(default_spec(ModelKind::mlp), 1);
  zero_all(m->parameters());
  std::mt19937_64 rng(2);
  ForwardContext<double> ctx;
  T logits = m->forward(random_images(128, 28, rng), ctx);
  EXPECT_EQ(logits.shape(), (Shape{128, 10}));
  EXPECT_TRUE((logits.value() == 0.0).all());
  std::vector<int> labels(128, 4);
  EXPECT_NEAR(m->loss(random_images(128, 28, rng), labels, ctx).item(), std::log(10.0), 1e-12);
}

TEST(Mlp, FlatInputMustMatch) {
  auto m = build_model<double>(default_spec(ModelKind::mlp), 1);
  ForwardContext<double> ctx;
  EXPECT_THROW(mlp_forward(dynamic_cast<MlpModel<double>&>(*m), T::zeros({2, 783}), ctx), ShapeError);
}

TEST(Cnn, SpatialTrace) {
  auto m = build_model<double>(default_spec(ModelKind::cnn), 1);
  const auto& cnn = dynamic_cast<CnnModel<double>&>(*m);
  EXPECT_EQ(cnn.extents(), (std::vector<Index>{28, 14, 7}));
  EXPECT_EQ(cnn.flatten_dim(), 3136);
  EXPECT_EQ(param(*m, "fc1.weight").shape(), (Shape{128, 3136}));
}

TEST(Lstm, ZeroParametersHalveTheCell) {
  auto cell = LstmCellParams<double>::create(28, 5);
  std::mt19937_64 rng(3);
  RecurrentState<double> s{random_normal({2, 5}, rng), random_normal({2, 5}, rng)};
  auto next = lstm_step(cell, random_normal({2, 28}, rng), s);
  Array<double> c = 0.5 * s.c.value();
  EXPECT_LE((next.c.value() - c).abs().maxCoeff(), 1e-15);
  EXPECT_LE((next.h.value() - 0.5 * c.tanh()).abs().maxCoeff(), 1e-15);
}

TEST(Lstm, ZeroEverythingStaysZero) {
  auto cell = LstmCellParams<double>::create(28, 5);
  auto next = lstm_step(cell, T::zeros({3, 28}), RecurrentState<double>::zeros(3, 5, true));
  EXPECT_TRUE((next.h.value() == 0.0).all());
}

TEST(Lstm, StateShapeChecked) {
  auto cell = LstmCellParams<double>::create(4, 5);
  EXPECT_THROW(lstm_step(cell, T::zeros({3, 4}), RecurrentState<double>::zeros(3, 5, false)), ShapeError);
  EXPECT_THROW(lstm_step(cell, T::zeros({3, 3}), RecurrentState<double>::zeros(3, 5, true)), ShapeError);
}

TEST(Gru, UpdateGateLimits) {
  std::mt19937_64 rng(4);
  auto cell = GruCellParams<double>::create(3, 4);
  for (auto* w : {&cell.input.weight, &cell.input.bias, &cell.recurrent.weight, &cell.candidate.weight}) {
    *w = random_normal(w->shape(), rng);
  }
  RecurrentState<double> s{random_normal({2, 4}, rng), {}};
  T x = random_normal({2, 3}, rng);

  cell.input.bias.mutable_value().segment(0, 4).setConstant(-1000.0);  // z = 0
  GruStepTrace<double> trace;
  auto closed = gru_step(cell, x, s, &trace);
  EXPECT_TRUE((trace.update == 0.0).all());
  EXPECT_TRUE((closed.h.value() == s.h.value()).all());

  cell.input.bias.mutable_value().segment(0, 4).setConstant(1000.0);  // z = 1
  auto open = gru_step(cell, x, s, &trace);
  EXPECT_TRUE((trace.update == 1.0).all());
  EXPECT_TRUE((open.h.value() == trace.candidate).all());
}

TEST(Gru, ConvexCombinationOnRandomRollouts) {
  std::mt19937_64 rng(5);
  auto cell = GruCellParams<double>::create(6, 8);
  for (auto* w : {&cell.input.weight, &cell.input.bias, &cell.recurrent.weight, &cell.candidate.weight}) {
    *w = random_normal(w->shape(), rng);
  }
  auto s = RecurrentState<double>::zeros(16, 8, false);
  for (int t = 0; t < 28; ++t) {
    GruStepTrace<double> trace;
    auto next = gru_step(cell, random_normal({16, 6}, rng), s, &trace);
    const auto& prev = s.h.value();
    Array<double> lo = prev.min(trace.candidate);
    Array<double> hi = prev.max(trace.candidate);
    EXPECT_TRUE((next.h.value() >= lo).all() && (next.h.value() <= hi).all()) << "step " << t;
    s = next;
  }
}

TEST(Recurrent, ConsumesTwentyEightRows) {
  std::mt19937_64 rng(6);
  for (ModelKind k : {ModelKind::lstm, ModelKind::gru}) {
    auto m = build_model<double>(default_spec(k), 1);
    ForwardContext<double> ctx;
    EXPECT_EQ(m->forward(random_images(2, 28, rng), ctx).shape(), (Shape{2, 10}));
    EXPECT_EQ(dynamic_cast<RecurrentModel<double>&>(*m).last_sequence_length(), 28);
  }
}

TEST(Recurrent, BatchPermutationPermutesLogits) {
  std::mt19937_64 rng(7);
  for (ModelKind k : {ModelKind::lstm, ModelKind::gru, ModelKind::petnn_gelu, ModelKind::transformer}) {
    auto m = build_model<double>(tiny_spec(k), 2);
    const Index n = tiny_spec(k).image_size;
    T x = random_images(3, n, rng);
    const Index per = n * n;
    Array<double> swapped = x.value();
    swapped.segment(0, per) = x.value().segment(2 * per, per);
    swapped.segment(2 * per, per) = x.value().segment(0, per);
    ForwardContext<double> ctx;
    T a = m->forward(x, ctx);
    T b = m->forward(T::from(x.shape(), swapped), ctx);
    EXPECT_LE((a.value().segment(0, 10) - b.value().segment(20, 10)).abs().maxCoeff(), 1e-12) << name(k);
    EXPECT_LE((a.value().segment(10, 10) - b.value().segment(10, 10)).abs().maxCoeff(), 1e-12) << name(k);
  }
}

TEST(Transformer, TokensAndWidth) {
  auto m = build_model<double>(default_spec(ModelKind::transformer), 1);
  const auto& tr = dynamic_cast<TransformerModel<double>&>(*m);
  EXPECT_EQ(tr.tokens(), 28);
  EXPECT_EQ(tr.d_model(), 64);
  EXPECT_EQ(tr.blocks().size(), 2u);
  EXPECT_EQ(param(*m, "embed.weight").shape(), (Shape{64, 28}));
}

TEST(Transformer, AttentionRowsSumToOneInEveryBlock) {
  std::mt19937_64 rng(8);
  auto m = build_model<double>(default_spec(ModelKind::transformer), 1);
  AttentionProbe<double> probe;
  ForwardContext<double> ctx;
  ctx.attention = &probe;
  m->forward(random_images(3, 28, rng), ctx);
  ASSERT_EQ(probe.weights.size(), 8u);  // 2 blocks x 4 heads
  for (const auto& w : probe.weights) {
    Eigen::Map<const RowMatrix<double>> rows(w.data(), w.size() / 28, 28);
    EXPECT_LE((rows.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
  }
}

TEST(Transformer, LearnedPositionIsAParameter) {
  auto spec = default_spec(ModelKind::transformer);
  spec.positional = PositionalEncoding::learned;
  auto m = build_model<double>(spec, 1);
  EXPECT_EQ(param(*m, "position").shape(), (Shape{28, 64}));
  auto fixed = build_model<double>(default_spec(ModelKind::transformer), 1);
  EXPECT_EQ(m->parameter_count() - fixed->parameter_count(), 28 * 64);
}

TEST(KanBasis, RbfPeaksOnGridPoints) {
  KanGridConfig cfg;
  auto grid = kan_rbf_centres(cfg);
  ASSERT_EQ(grid.size(), 8u);
  T x = T::from({8}, Array<double>::Map(grid.data(), 8));
  T b = kan_basis_rbf(x, grid);
  ASSERT_EQ(b.shape(), (Shape{8, 8}));
  for (Index j = 0; j < 8; ++j) EXPECT_EQ(b[j * 8 + j], 1.0);
}

TEST(KanBasis, RbfRangeAndSymmetry) {
  KanGridConfig cfg;
  auto grid = kan_rbf_centres(cfg);
  std::mt19937_64 rng(9);
  T x = random_normal({200}, rng, 2.0);
  T b = kan_basis_rbf(x, grid);
  EXPECT_TRUE((b.value() > 0.0).all() && (b.value() <= 1.0).all());
  for (double delta : {0.1, 0.37, 1.3}) {
    T pair = T::from({2}, {grid[3] + delta, grid[3] - delta});
    T v = kan_basis_rbf(pair, grid);
    EXPECT_NEAR(v[3], v[8 + 3], 1e-15);
  }
}

TEST(KanBasis, BsplinePartitionOfUnityAndPositivity) {
  KanGridConfig cfg;
  auto knots = kan_bspline_knots(cfg);
  ASSERT_EQ(knots.size(), 12u);
  EXPECT_DOUBLE_EQ(knots[3], -2.0);
  EXPECT_DOUBLE_EQ(knots[8], 2.0);
  Array<double> xs = Array<double>::LinSpaced(401, -2.0, 1.999);
  T b = kan_basis_bspline(T::from({401}, xs), knots, 3);
  ASSERT_EQ(b.shape(), (Shape{401, 8}));
  Eigen::Map<const RowMatrix<double>> rows(b.value().data(), 401, 8);
  EXPECT_LE((rows.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
  EXPECT_TRUE((b.value() >= 0.0).all());
}

TEST(KanBasis, BsplineContinuousAcrossKnots) {
  KanGridConfig cfg;
  auto knots = kan_bspline_knots(cfg);
  for (std::size_t k = 4; k < 8; ++k) {
    const double t = knots[k];
    const double left = std::nextafter(t, -10.0);
    T v = kan_basis_bspline(T::from({2}, {left, t}), knots, 3);
    EXPECT_LE((v.value().segment(0, 8) - v.value().segment(8, 8)).abs().maxCoeff(), 1e-9) << "knot " << t;
  }
}

TEST(KanLayer, ZeroCoefficientsGiveZeroOutput) {
  KanGridConfig cfg;
  auto layer = KanLayerParams<double>::create(784, 64, cfg);
  std::mt19937_64 rng(10);
  T y = kan_layer_forward(layer, random_normal({5, 784}, rng));
  EXPECT_EQ(y.shape(), (Shape{5, 64}));
  EXPECT_TRUE((y.value() == 0.0).all());
}

TEST(KanLayer, ArchitectureAndBasePath) {
  auto fast = build_model<double>(default_spec(ModelKind::fast_kan), 1);
  auto eff = build_model<double>(default_spec(ModelKind::efficient_kan), 1);
  EXPECT_EQ(param(*fast, "kan1.coefficients").shape(), (Shape{64, 784, 8}));
  EXPECT_EQ(param(*fast, "kan2.coefficients").shape(), (Shape{10, 64, 8}));
  EXPECT_EQ(param(*eff, "kan1.coefficients").shape(), (Shape{64, 784, 8}));
  EXPECT_EQ(param(*eff, "kan1.base_weight").shape(), (Shape{64, 784}));
  EXPECT_THROW(param(*fast, "kan1.base_weight"), std::out_of_range);
  std::mt19937_64 rng(11);
  auto& kan = dynamic_cast<KanModel<double>&>(*fast);
  EXPECT_EQ(kan_layer_forward(kan.layers()[0], random_normal({7, 784}, rng)).shape(), (Shape{7, 64}));
}

TEST(KanLayer, InputWidthChecked) {
  auto layer = KanLayerParams<double>::create(3, 2, KanGridConfig{});
  EXPECT_THROW(kan_layer_forward(layer, T::zeros({2, 4})), ShapeError);
}

TEST(Petnn, TransitionBoundaryFires) {
  T R = T::full({1, 3}, 2.0);
  T T_prev = T::from({1, 3}, {0.5, -1.0, 0.0});
  T Z = T::from({1, 3}, {-0.5, 1.0, 0.0});
  T t = petnn_transition(R, T_prev, Z, Activation::sigmoid);
  EXPECT_TRUE((t.value() == 0.0).all());
  EXPECT_TRUE((indicator_nonpositive(t).value() == 1.0).all());
}

TEST(Petnn, NoFiringAndNoWriteKeepsMemory) {
  std::mt19937_64 rng(12);
  T C_prev = random_normal({2, 4}, rng);
  T I = random_normal({2, 4}, rng);
  T C = petnn_memory_update(T::zeros({2, 4}), C_prev, I, T::zeros({2, 4}));
  EXPECT_TRUE((C.value() == C_prev.value()).all());
  T fired = petnn_memory_update(T::full({2, 4}, 1.0), C_prev, I, T::zeros({2, 4}));
  EXPECT_TRUE((fired.value() == I.value()).all());
}

TEST(Petnn, GatesHaveDocumentedWidths) {
  auto m = build_model<double>(default_spec(ModelKind::petnn_gelu), 1);
  const auto& p = dynamic_cast<PetnnModel<double>&>(*m);
  ASSERT_EQ(p.layers().size(), 3u);
  const auto& g = p.layers()[0];
  EXPECT_EQ(g.input.weight.shape(), (Shape{4 * 48 + 2 * 192, 28}));
  EXPECT_EQ(g.recurrent.weight.shape(), (Shape{4 * 48 + 2 * 192, 192}));
  EXPECT_EQ(g.memory.weight.shape(), (Shape{192, 48}));
  EXPECT_EQ(g.residual.weight.shape(), (Shape{192, 28}));
  EXPECT_FALSE(g.residual.bias.defined());
  EXPECT_EQ(g.reexcitation.shape(), (Shape{48}));
  EXPECT_EQ(p.layers()[1].in(), 192);
}

TEST(Petnn, StatesFiniteAfterFullScan) {
  std::mt19937_64 rng(13);
  for (ModelKind k : {ModelKind::petnn_sigmoid, ModelKind::petnn_gelu, ModelKind::petnn_silu}) {
    auto m = build_model<double>(default_spec(k), 5);
    ForwardContext<double> ctx;
    EXPECT_EQ(m->forward(random_images(4, 28, rng), ctx).shape(), (Shape{4, 10}));
    const auto& states = dynamic_cast<PetnnModel<double>&>(*m).last_states();
    ASSERT_EQ(states.size(), 3u);
    for (const auto& s : states) {
      EXPECT_TRUE(s.h.value().allFinite() && s.C.value().allFinite() && s.T.value().allFinite());
      EXPECT_EQ(s.C.shape(), (Shape{4, 48}));
    }
  }
}

TEST(Petnn, BlockedGatesIgnoreTheImage) {
  std::mt19937_64 rng(14);
  auto m = build_model<double>(default_spec(ModelKind::petnn_silu), 6);
  for (const auto& g : dynamic_cast<PetnnModel<double>&>(*m).layers()) {
    for (auto t : {g.input.weight, g.input.bias, g.recurrent.weight, g.memory.weight, g.residual.weight}) {
      t.mutable_value().setZero();
    }
  }
  ForwardContext<double> ctx;
  T blank = m->forward(T::zeros({1, 1, 28, 28}), ctx);
  T y = m->forward(random_images(5, 28, rng), ctx);
  for (Index b = 0; b < 5; ++b) {
    EXPECT_LE((y.value().segment(b * 10, 10) - blank.value()).abs().maxCoeff(), 1e-12);
  }
}

// Memory update and mask re-evaluated from the recorded gate values of a
// random rollout at full width.
TEST(Petnn, MemoryAndMaskFollowTheirDefinitionsExactly) {
  std::mt19937_64 rng(15);
  for (ModelKind k : {ModelKind::petnn_sigmoid, ModelKind::petnn_gelu, ModelKind::petnn_silu}) {
    auto m = build_model<double>(default_spec(k), 7);
    PetnnTrace<double> trace;
    ForwardContext<double> ctx;
    ctx.petnn_trace = &trace;
    m->forward(random_images(6, 28, rng), ctx);
    ASSERT_EQ(trace.steps.size(), 3u * 28u);
    Index fired = 0;
    for (const auto& r : trace.steps) {
      Array<double> expect_mask = (r.T_fired <= 0.0).cast<double>();
      EXPECT_TRUE((r.mask == expect_mask).all());
      Array<double> rhs = (1.0 - r.mask) * r.C_prev + r.mask * r.I + r.Zc;
      EXPECT_TRUE(((r.C - rhs) == 0.0).all()) << name(k) << " layer " << r.layer << " step " << r.step;
      fired += static_cast<Index>(r.mask.sum());
    }
    EXPECT_GT(fired, 0);
  }
}

TEST(Petnn, ReexcitationRefillsFiredUnits) {
  std::mt19937_64 rng(16);
  auto spec = tiny_spec(ModelKind::petnn_sigmoid);
  auto m = build_model<double>(spec, 8);
  const auto& gates = dynamic_cast<PetnnModel<double>&>(*m).layers()[0];
  PetnnTrace<double> trace;
  ForwardContext<double> ctx;
  ctx.petnn_trace = &trace;
  m->forward(random_images(3, spec.image_size, rng), ctx);
  const double refill = std::log1p(std::exp(gates.reexcitation[0]));
  for (const auto& r : trace.steps) {
    if (r.layer != 0) continue;
    for (Index i = 0; i < r.mask.size(); ++i) {
      if (r.mask[i] == 1.0) {
        EXPECT_NEAR(r.T[i], refill, 1e-12);
      } else {
        EXPECT_EQ(r.T[i], r.T_fired[i]);
      }
    }
  }

  spec.reexcite = false;
  auto plain = build_model<double>(spec, 8);
  trace.steps.clear();
  plain->forward(random_images(3, spec.image_size, rng), ctx);
  for (const auto& r : trace.steps) EXPECT_TRUE((r.T == r.T_fired).all());
}

TEST(Petnn, ReplayRunsPastRecordingThrows) {
  auto m = build_model<double>(tiny_spec(ModelKind::petnn_gelu), 1);
  ForwardContext<double> ctx;
  ctx.mask_mode = MaskMode::replay;
  std::mt19937_64 rng(17);
  EXPECT_THROW(m->forward(random_images(1, 4, rng), ctx), std::logic_error);
}

TEST(Jem, EnergyOfZeroLogits) {
  T e = energy_from_logits(T::zeros({3, 10}));
  EXPECT_EQ(e.shape(), (Shape{3}));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(e[i], -std::log(10.0), 1e-15);
}

TEST(Jem, EnergyShiftIdentity) {
  std::mt19937_64 rng(18);
  T logits = random_normal({50, 10}, rng, 3.0);
  T e = energy_from_logits(logits);
  for (double c : {-7.5, 0.25, 3.0, 40.0}) {
    T shifted = energy_from_logits(add_scalar(logits, c));
    EXPECT_LE((e.value() - c - shifted.value()).abs().maxCoeff(), 1e-9);
  }
}

TEST(Jem, EnergyFiniteOnRandomInput) {
  std::mt19937_64 rng(19);
  auto m = build_model<double>(default_spec(ModelKind::jem), 1);
  ForwardContext<double> ctx;
  T e = jem_marginal_energy(*m, random_images(4, 28, rng), ctx);
  EXPECT_EQ(e.shape(), (Shape{4}));
  EXPECT_TRUE(e.value().allFinite());
}

TEST(Sgld, FixedPointWithoutGradientOrNoise) {
  auto m = build_model<double>(default_spec(ModelKind::jem), 1);
  zero_all(m->parameters());
  JemConfig cfg;
  cfg.noise_scale = 0.0;
  std::mt19937_64 rng(20);
  T init = random_images(4, 28, rng);
  SgldStats stats;
  T out = sgld_sample(*m, cfg, rng, init.shape(), &stats, &init);
  EXPECT_TRUE((out.value() == init.value()).all());
  EXPECT_EQ(stats.gradient_evaluations, 5);
}

TEST(Sgld, FiveGradientEvaluationsAndClampedRange) {
  auto m = build_model<double>(default_spec(ModelKind::jem), 2);
  std::mt19937_64 rng(21);
  SgldStats stats;
  T out = sgld_sample(*m, JemConfig{}, rng, {8, 1, 28, 28}, &stats);
  EXPECT_EQ(stats.gradient_evaluations, 5);
  EXPECT_EQ(stats.batches, 1);
  EXPECT_TRUE((out.value() >= 0.0).all() && (out.value() <= 1.0).all());
  EXPECT_FALSE(out.requires_grad());
}

TEST(Sgld, LeavesParameterGradientsAlone) {
  auto m = build_model<double>(tiny_spec(ModelKind::jem), 3);
  std::mt19937_64 rng(22);
  sgld_sample(*m, JemConfig{}, rng, {2, 1, 8, 8});
  for (const auto& p : m->parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}

TEST(JemLoss, ZeroWeightIsCrossEntropy) {
  auto m = build_model<double>(tiny_spec(ModelKind::jem), 4);
  std::mt19937_64 rng(23);
  T x = random_images(3, 8, rng);
  const std::vector<int> labels = {1, 2, 3};
  JemConfig cfg;
  cfg.energy_weight = 0.0;
  ForwardContext<double> ctx;
  T ce = softmax_cross_entropy(m->forward(x, ctx), labels);
  EXPECT_EQ(jem_loss(*m, x, labels, cfg, rng, ctx).item(), ce.item());
}

TEST(JemLoss, IdenticalNegativesCancel) {
  auto m = build_model<double>(tiny_spec(ModelKind::jem), 5);
  std::mt19937_64 rng(24);
  T x = random_images(3, 8, rng);
  const std::vector<int> labels = {0, 5, 9};
  ForwardContext<double> ctx;
  T ce = softmax_cross_entropy(m->forward(x, ctx), labels);
  EXPECT_EQ(jem_loss_with_negatives(*m, x, labels, x, 1.0, ctx).item(), ce.item());
}

TEST(JemLoss, TrainingLossSamplesNegatives) {
  auto m = build_model<double>(tiny_spec(ModelKind::jem), 6);
  std::mt19937_64 rng(25);
  T x = random_images(4, 8, rng);
  const std::vector<int> labels = {0, 1, 2, 3};
  ForwardContext<double> ctx;
  ctx.training = true;
  ctx.rng = &rng;
  T loss = m->loss(x, labels, ctx);
  EXPECT_TRUE(std::isfinite(loss.item()));
  const auto& stats = dynamic_cast<JemModel<double>&>(*m).sampler_stats();
  EXPECT_EQ(stats.gradient_evaluations, 5);
  backward(loss);
  for (const auto& p : m->parameters()) EXPECT_TRUE(p.tensor.has_grad()) << p.name;
}

TEST(JemLoss, ReplayBufferKeepsPastSamples) {
  auto spec = tiny_spec(ModelKind::jem);
  spec.jem.replay_buffer = true;
  auto m = build_model<double>(spec, 7);
  std::mt19937_64 rng(26);
  ForwardContext<double> ctx;
  ctx.training = true;
  ctx.rng = &rng;
  const std::vector<int> labels = {0, 1};
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(std::isfinite(m->loss(random_images(2, 8, rng), labels, ctx).item()));
  EXPECT_EQ(dynamic_cast<JemModel<double>&>(*m).sampler_stats().batches, 3);
}

}  // namespace
}  // namespace petbench

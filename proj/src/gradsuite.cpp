#include "petbench/gradsuite.hpp"

#include "petbench/models/kan.hpp"
#include "petbench/models/petnn.hpp"
#include "petbench/models/recurrent.hpp"

#include <algorithm>
#include <cstdio>
#include <chrono>

namespace petbench {

namespace {

using T = Tensor<double>;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void fill_normal(T& t, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  for (auto& v : t.mutable_value()) v = d(rng);
}

T random(Shape shape, std::mt19937_64& rng, double sd = 1.0, bool requires_grad = false) {
  T t = T::zeros(std::move(shape), requires_grad);
  fill_normal(t, rng, sd);
  return t;
}

void randomize(Parameters<double>& params, std::mt19937_64& rng, double sd = 0.5) {
  for (auto& p : params) fill_normal(p.tensor, rng, sd);
}

GradcheckCase run(std::string name, std::string family, const std::function<T()>& f, Parameters<double>& params,
                  const GradcheckOptions& options) {
  Timer timer;
  std::vector<T> tensors;
  std::vector<std::string> names;
  for (const auto& p : params) {
    tensors.push_back(p.tensor);
    names.push_back(p.name);
  }
  GradcheckCase c{std::move(name), std::move(family), {}, 0.0};
  c.result = finite_diff_gradcheck(f, tensors, options, names);
  c.seconds = timer.seconds();
  return c;
}

}  // namespace

GradcheckCase gradcheck_model(ModelKind kind, std::uint64_t seed, const GradcheckOptions& options) {
  ModelSpec spec = tiny_spec(kind);
  auto model = build_model<double>(spec, seed);
  Parameters<double> params = model->parameters();
  std::mt19937_64 rng(seed + 1);
  // Zero-initialized biases and unit norms would hide wiring mistakes.
  randomize(params, rng, 0.5);
  const Index n = spec.image_size;
  T images = T::zeros({2, 1, n, n});
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  for (auto& v : images.mutable_value()) v = pixel(rng);
  const std::vector<int> labels = {3, 7};

  ForwardContext<double> ctx;
  if (is_petnn(kind)) {
    ctx.mask_mode = MaskMode::record;
    model->loss(images, labels, ctx);
    ctx.mask_mode = MaskMode::replay;
  }
  auto f = [&]() {
    ctx.mask_cursor = 0;
    return model->loss(images, labels, ctx);
  };
  return run(std::string(name(kind)), "model", f, params, options);
}

std::vector<GradcheckCase> gradcheck_layers(std::uint64_t seed, const GradcheckOptions& options) {
  std::vector<GradcheckCase> out;
  std::mt19937_64 rng(seed);

  {
    auto layer = DenseLayer<double>::create(3, 2);
    Parameters<double> params;
    layer.collect("dense", params);
    randomize(params, rng);
    T x = random({4, 3}, rng);
    T w = random({4, 2}, rng);
    out.push_back(run("dense", "layer", [&] { return sum(mul(dense_forward(layer, x), w)); }, params, options));
  }
  {
    auto layer = Conv2dLayer<double>::create(2, 3, 3, 1, 1);
    Parameters<double> params;
    layer.collect("conv", params);
    randomize(params, rng);
    T x = random({2, 2, 5, 5}, rng, 1.0, true);
    params.push_back({"input", x});
    T w = random({2, 3, 5, 5}, rng);
    out.push_back(run("conv2d", "layer", [&] { return sum(mul(conv2d_forward(layer, x), w)); }, params, options));
  }
  {
    Parameters<double> params{{"input", random({1, 2, 4, 4}, rng, 1.0, true)}};
    T w = random({1, 2, 2, 2}, rng);
    T x = params[0].tensor;
    out.push_back(run("max_pool2d", "layer", [&] { return sum(mul(max_pool2d(x, 2), w)); }, params, options));
  }
  {
    auto norm = LayerNormParams<double>::create(5);
    Parameters<double> params;
    norm.collect("norm", params);
    randomize(params, rng);
    T x = random({3, 5}, rng, 1.0, true);
    params.push_back({"input", x});
    T w = random({3, 5}, rng);
    out.push_back(run("layer_norm", "layer", [&] { return sum(mul(layer_norm(norm, x), w)); }, params, options));
  }
  {
    auto attn = AttentionParams<double>::create(4, 2);
    Parameters<double> params;
    attn.collect("attn", params);
    randomize(params, rng);
    T x = random({1, 3, 4}, rng, 1.0, true);
    params.push_back({"input", x});
    T w = random({1, 3, 4}, rng);
    out.push_back(
        run("attention", "layer", [&] { return sum(mul(scaled_dot_attention(attn, x), w)); }, params, options));
  }
  {
    Parameters<double> params{{"logits", random({4, 10}, rng, 1.0, true)}};
    T logits = params[0].tensor;
    const std::vector<int> labels = {0, 3, 9, 3};
    out.push_back(run("cross_entropy", "layer", [&] { return softmax_cross_entropy(logits, labels); }, params,
                      options));
  }
  for (Activation a : {Activation::sigmoid, Activation::tanh, Activation::relu, Activation::gelu, Activation::silu}) {
    Parameters<double> params{{"input", random({6}, rng, 1.0, true)}};
    T x = params[0].tensor;
    T w = random({6}, rng);
    out.push_back(run("activation_" + std::string(name(a)), "layer",
                      [&] { return sum(mul(activation(a, x), w)); }, params, options));
  }
  {
    auto cell = LstmCellParams<double>::create(3, 4);
    Parameters<double> params;
    cell.collect("lstm", params);
    randomize(params, rng);
    std::vector<T> xs = {random({2, 3}, rng), random({2, 3}, rng), random({2, 3}, rng)};
    T wh = random({2, 4}, rng);
    T wc = random({2, 4}, rng);
    auto f = [&] {
      auto s = RecurrentState<double>::zeros(2, 4, true);
      for (const auto& x : xs) s = lstm_step(cell, x, s);
      return add(sum(mul(s.h, wh)), sum(mul(s.c, wc)));
    };
    out.push_back(run("lstm_step", "layer", f, params, options));
  }
  {
    auto cell = GruCellParams<double>::create(3, 4);
    Parameters<double> params;
    cell.collect("gru", params);
    randomize(params, rng);
    std::vector<T> xs = {random({2, 3}, rng), random({2, 3}, rng), random({2, 3}, rng)};
    T wh = random({2, 4}, rng);
    auto f = [&] {
      auto s = RecurrentState<double>::zeros(2, 4, false);
      for (const auto& x : xs) s = gru_step(cell, x, s);
      return sum(mul(s.h, wh));
    };
    out.push_back(run("gru_step", "layer", f, params, options));
  }
  for (KanBasis basis : {KanBasis::rbf, KanBasis::bspline}) {
    KanGridConfig cfg;
    cfg.basis = basis;
    cfg.rbf_points = 5;
    cfg.grid_size = 5;
    auto layer = KanLayerParams<double>::create(3, 2, cfg);
    Parameters<double> params;
    layer.collect("kan", params);
    randomize(params, rng);
    T x = random({4, 3}, rng, 1.0, true);
    params.push_back({"input", x});
    T w = random({4, 2}, rng);
    out.push_back(run(basis == KanBasis::rbf ? "kan_rbf" : "kan_bspline", "layer",
                      [&] { return sum(mul(kan_layer_forward(layer, x), w)); }, params, options));
  }
  for (Activation a : {Activation::sigmoid, Activation::gelu, Activation::silu}) {
    auto gates = PetnnGates<double>::create(3, 4, 3, a, true);
    Parameters<double> params;
    gates.collect("petnn", params);
    randomize(params, rng);
    std::vector<T> xs = {random({2, 3}, rng), random({2, 3}, rng), random({2, 3}, rng)};
    T wh = random({2, 4}, rng);
    T wc = random({2, 3}, rng);
    T wt = random({2, 3}, rng);
    ForwardContext<double> ctx;
    auto f = [&] {
      ctx.mask_cursor = 0;
      auto s = PetnnState<double>::zeros(2, 4, 3);
      for (const auto& x : xs) s = petnn_step(gates, x, s, ctx);
      return add(add(sum(mul(s.h, wh)), sum(mul(s.C, wc))), sum(mul(s.T, wt)));
    };
    ctx.mask_mode = MaskMode::record;
    f();
    ctx.mask_mode = MaskMode::replay;
    out.push_back(run("petnn_step_" + std::string(name(a)), "layer", f, params, options));
  }
  return out;
}

std::vector<GradcheckCase> gradcheck_all(std::uint64_t seed, const GradcheckOptions& options) {
  auto out = gradcheck_layers(seed, options);
  for (ModelKind kind : kAllModelKinds) out.push_back(gradcheck_model(kind, seed, options));
  return out;
}

std::string_view convention(const GradcheckCase& c) {
  return c.name.starts_with("petnn") || c.name.starts_with("PETNN") ? "frozen-mask" : "exact";
}

bool passes(const GradcheckCase& c, double tolerance) {
  // NaN discrepancies fail too.
  return c.result.max_discrepancy <= tolerance;
}

bool all_pass(std::span<const GradcheckCase> cases, double tolerance) {
  return std::all_of(cases.begin(), cases.end(), [&](const GradcheckCase& c) { return passes(c, tolerance); });
}

std::string format_gradcheck_table(std::span<const GradcheckCase> cases, double tolerance) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof line, "%-22s %-6s %14s %7s %-5s %s\n", "item", "family", "max_rel_diff", "probes",
                "status", "convention");
  out += line;
  for (const auto& c : cases) {
    std::snprintf(line, sizeof line, "%-22s %-6s %14.3e %7lld %-5s %s\n", c.name.c_str(), c.family.c_str(),
                  c.result.max_discrepancy, static_cast<long long>(c.result.probes), passes(c, tolerance) ? "ok" : "FAIL",
                  std::string(convention(c)).c_str());
    out += line;
  }
  return out;
}

}  // namespace petbench

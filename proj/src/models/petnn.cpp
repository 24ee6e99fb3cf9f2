#include "petbench/models/petnn.hpp"

#include <cmath>

namespace petbench {

template <typename S>
PetnnState<S> PetnnState<S>::zeros(Index batch, Index hidden, Index cell) {
  return {Tensor<S>::zeros({batch, hidden}), Tensor<S>::zeros({batch, cell}), Tensor<S>::zeros({batch, cell})};
}

template <typename S>
PetnnGates<S> PetnnGates<S>::create(Index in, Index hidden, Index cell, Activation act, bool reexcite) {
  PetnnGates g;
  g.hidden = hidden;
  g.cell = cell;
  g.act = act;
  g.reexcite = reexcite;
  const Index width = 4 * cell + 2 * hidden;
  g.input = DenseLayer<S>::create(in, width);
  g.recurrent = DenseLayer<S>::create(hidden, width, false);
  g.memory = DenseLayer<S>::create(cell, hidden, false);
  g.residual = DenseLayer<S>::create(in, hidden, false);
  g.reexcitation = Tensor<S>::zeros({cell}, true);
  g.norm = LayerNormParams<S>::create(hidden);
  return g;
}

template <typename S>
void PetnnGates<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  input.collect(prefix + ".input", into);
  recurrent.collect(prefix + ".recurrent", into);
  memory.collect(prefix + ".memory", into);
  residual.collect(prefix + ".residual", into);
  into.push_back({prefix + ".reexcitation", reexcitation});
  norm.collect(prefix + ".norm", into);
}

template <typename S>
Tensor<S> petnn_transition(const Tensor<S>& R, const Tensor<S>& T_prev, const Tensor<S>& Z, Activation act) {
  return add_scalar(mul(R, activation(act, add(T_prev, Z))), S(-1));
}

template <typename S>
Tensor<S> petnn_memory_update(const Tensor<S>& mask, const Tensor<S>& C_prev, const Tensor<S>& I,
                              const Tensor<S>& Zc) {
  Tensor<S> keep = add_scalar(neg(mask), S(1));
  return add(add(mul(keep, C_prev), mul(mask, I)), Zc);
}

namespace {

template <typename S>
Tensor<S> transition_mask(const Tensor<S>& T, ForwardContext<S>& ctx) {
  switch (ctx.mask_mode) {
    case MaskMode::compute:
      return indicator_nonpositive(T);
    case MaskMode::record: {
      Tensor<S> m = indicator_nonpositive(T);
      ctx.masks.push_back(m.value());
      return m;
    }
    case MaskMode::replay: {
      if (ctx.mask_cursor >= ctx.masks.size()) throw std::logic_error("PETNN mask replay ran past the recorded masks");
      const Array<S>& m = ctx.masks[ctx.mask_cursor++];
      if (m.size() != T.size()) throw ShapeError("replayed PETNN mask does not match the transition shape");
      return Tensor<S>::from(T.shape(), m);
    }
  }
  return indicator_nonpositive(T);
}

}  // namespace

template <typename S>
PetnnState<S> petnn_step_projected(const PetnnGates<S>& gates, const Tensor<S>& input_proj, const Tensor<S>& res,
                                   const PetnnState<S>& state, ForwardContext<S>& ctx, int layer, Index step) {
  const Index c = gates.cell;
  const Index H = gates.hidden;
  const Index batch = input_proj.dim(0);
  if (input_proj.ndim() != 2 || input_proj.dim(1) != gates.projection_width()) {
    throw ShapeError("PETNN projection has shape " + to_string(input_proj.shape()));
  }
  auto check = [&](const Tensor<S>& t, Index width, const char* what) {
    if (!t.defined() || t.ndim() != 2 || t.dim(0) != batch || t.dim(1) != width) {
      throw ShapeError(std::string("PETNN state ") + what + " does not match [" + std::to_string(batch) + ", " +
                       std::to_string(width) + "]");
    }
  };
  check(state.h, H, "h");
  check(state.C, c, "C");
  check(state.T, c, "T");

  Tensor<S> z = add(input_proj, linear(state.h, gates.recurrent.weight, gates.recurrent.bias));
  Tensor<S> R = softplus(slice(z, 1, 0, c));
  Tensor<S> Z = slice(z, 1, c, c);
  Tensor<S> I = slice(z, 1, 2 * c, c);
  Tensor<S> Zc = slice(z, 1, 3 * c, c);
  Tensor<S> Zw = sigmoid(slice(z, 1, 4 * c, H));
  Tensor<S> cand_pre = slice(z, 1, 4 * c + H, H);

  Tensor<S> T_fired = petnn_transition(R, state.T, Z, gates.act);
  Tensor<S> m = transition_mask(T_fired, ctx);
  Tensor<S> T = T_fired;
  if (gates.reexcite) {
    Tensor<S> keep = add_scalar(neg(m), S(1));
    T = add(mul(keep, T_fired), mul(m, softplus(gates.reexcitation)));
  }
  Tensor<S> C = petnn_memory_update(m, state.C, I, Zc);

  Tensor<S> cand = activation(gates.act, add(cand_pre, linear(C, gates.memory.weight, gates.memory.bias)));
  Tensor<S> mixed = add(add(mul(add_scalar(neg(Zw), S(1)), state.h), mul(Zw, cand)), res);
  PetnnState<S> next;
  next.h = layer_norm(gates.norm, activation(gates.act, mixed));
  next.C = C;
  next.T = T;

  if (!next.h.value().allFinite() || !C.value().allFinite() || !T.value().allFinite()) {
    throw NumericError("non-finite PETNN state at layer " + std::to_string(layer) + ", step " + std::to_string(step));
  }
  if (ctx.petnn_trace) {
    PetnnStepRecord<S> r;
    r.layer = layer;
    r.step = step;
    r.R = R.value();
    r.Z = Z.value();
    r.I = I.value();
    r.Zc = Zc.value();
    r.T_prev = state.T.value();
    r.T_fired = T_fired.value();
    r.mask = m.value();
    r.T = T.value();
    r.C_prev = state.C.value();
    r.C = C.value();
    ctx.petnn_trace->steps.push_back(std::move(r));
  }
  return next;
}

template <typename S>
PetnnState<S> petnn_step(const PetnnGates<S>& gates, const Tensor<S>& x_t, const PetnnState<S>& state,
                         ForwardContext<S>& ctx, int layer, Index step) {
  if (x_t.ndim() != 2 || x_t.dim(1) != gates.in()) {
    throw ShapeError("PETNN step expects x_t [B," + std::to_string(gates.in()) + "], got " + to_string(x_t.shape()));
  }
  return petnn_step_projected(gates, dense_forward(gates.input, x_t), linear(x_t, gates.residual.weight, Tensor<S>()),
                              state, ctx, layer, step);
}

template <typename S>
PetnnModel<S>::PetnnModel(const ModelSpec& spec, std::mt19937_64& rng) : Model<S>(spec) {
  Parameters<S> params;
  const Index H = spec.hidden_dims[0];
  const Index c = spec.cell_dim;
  const Activation act = petnn_activation(spec);
  // softplus(b) = 2 puts the transition gate of a sigmoid cell at the
  // firing boundary when T_{t-1} + Z = 0.
  const S r_bias = static_cast<S>(std::log(std::expm1(2.0)));
  Index in = spec.image_size;
  for (int l = 0; l < spec.layers; ++l) {
    auto g = PetnnGates<S>::create(in, H, c, act, spec.reexcite);
    init_xavier_uniform(g.input.weight, in + H, H, rng);
    init_xavier_uniform(g.recurrent.weight, in + H, H, rng);
    init_xavier_uniform(g.memory.weight, c, H, rng);
    init_xavier_uniform(g.residual.weight, in, H, rng);
    init_bias_uniform(g.input.bias, in + H, rng);
    g.input.bias.mutable_value().segment(0, c).setConstant(r_bias);
    g.collect("petnn" + std::to_string(l + 1), params);
    layers_.push_back(std::move(g));
    in = H;
  }
  head_ = DenseLayer<S>::create(H, kNumClasses);
  init_xavier_uniform(head_.weight, H, kNumClasses, rng);
  init_bias_uniform(head_.bias, H, rng);
  head_.collect("head", params);
  this->register_parameters(std::move(params));
}

template <typename S>
Tensor<S> PetnnModel<S>::forward(const Tensor<S>& images, ForwardContext<S>& ctx) const {
  const Index batch = this->check_images(images);
  const Index H = this->spec().hidden_dims[0];
  Tensor<S> seq = rows_as_sequence(images);
  const Index steps = seq.dim(1);
  last_states_.clear();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& g = layers_[l];
    if (l > 0) seq = ctx.dropout(seq, this->spec().dropout);
    Tensor<S> proj = dense_forward(g.input, seq);
    Tensor<S> res = linear(seq, g.residual.weight, Tensor<S>());
    auto state = PetnnState<S>::zeros(batch, H, g.cell);
    const bool keep = l + 1 < layers_.size();
    std::vector<Tensor<S>> outputs;
    for (Index t = 0; t < steps; ++t) {
      state = petnn_step_projected(g, select(proj, 1, t), select(res, 1, t), state, ctx, static_cast<int>(l), t);
      if (keep) outputs.push_back(reshape(state.h, {batch, 1, H}));
    }
    if (keep) seq = concat(outputs, 1);
    last_states_.push_back(state);
  }
  return dense_forward(head_, last_states_.back().h);
}

#define PETBENCH_INSTANTIATE(S)                                                                                    \
  template struct PetnnState<S>;                                                                                   \
  template struct PetnnGates<S>;                                                                                   \
  template class PetnnModel<S>;                                                                                    \
  template Tensor<S> petnn_transition(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Activation);          \
  template Tensor<S> petnn_memory_update(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&); \
  template PetnnState<S> petnn_step(const PetnnGates<S>&, const Tensor<S>&, const PetnnState<S>&,                  \
                                    ForwardContext<S>&, int, Index);                                               \
  template PetnnState<S> petnn_step_projected(const PetnnGates<S>&, const Tensor<S>&, const Tensor<S>&,            \
                                              const PetnnState<S>&, ForwardContext<S>&, int, Index);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench

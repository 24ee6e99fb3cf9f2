#include "petbench/models/recurrent.hpp"

namespace petbench {

template <typename S>
RecurrentState<S> RecurrentState<S>::zeros(Index batch, Index hidden, bool with_cell) {
  RecurrentState s;
  s.h = Tensor<S>::zeros({batch, hidden});
  if (with_cell) s.c = Tensor<S>::zeros({batch, hidden});
  return s;
}

template <typename S>
LstmCellParams<S> LstmCellParams<S>::create(Index in, Index hidden) {
  return {DenseLayer<S>::create(in, 4 * hidden), DenseLayer<S>::create(hidden, 4 * hidden, false)};
}

template <typename S>
void LstmCellParams<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  input.collect(prefix + ".input", into);
  recurrent.collect(prefix + ".recurrent", into);
}

template <typename S>
GruCellParams<S> GruCellParams<S>::create(Index in, Index hidden) {
  return {DenseLayer<S>::create(in, 3 * hidden), DenseLayer<S>::create(hidden, 2 * hidden, false),
          DenseLayer<S>::create(hidden, hidden, false)};
}

template <typename S>
void GruCellParams<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  input.collect(prefix + ".input", into);
  recurrent.collect(prefix + ".recurrent", into);
  candidate.collect(prefix + ".candidate", into);
}

namespace {

template <typename S>
void check_state(const RecurrentState<S>& state, Index batch, Index hidden, bool with_cell, const char* who) {
  auto bad = [&](const Tensor<S>& t) {
    return !t.defined() || t.ndim() != 2 || t.dim(0) != batch || t.dim(1) != hidden;
  };
  if (bad(state.h) || (with_cell && bad(state.c))) {
    throw ShapeError(std::string(who) + " state does not match [" + std::to_string(batch) + ", " +
                     std::to_string(hidden) + "]");
  }
}

}  // namespace

template <typename S>
RecurrentState<S> lstm_step_projected(const LstmCellParams<S>& params, const Tensor<S>& input_proj,
                                      const RecurrentState<S>& state) {
  const Index H = params.hidden();
  check_state(state, input_proj.dim(0), H, true, "LSTM");
  Tensor<S> z = add(input_proj, linear(state.h, params.recurrent.weight, params.recurrent.bias));
  Tensor<S> f = sigmoid(slice(z, 1, 0, H));
  Tensor<S> i = sigmoid(slice(z, 1, H, H));
  Tensor<S> o = sigmoid(slice(z, 1, 2 * H, H));
  Tensor<S> cand = tanh(slice(z, 1, 3 * H, H));
  RecurrentState<S> next;
  next.c = add(mul(f, state.c), mul(i, cand));
  next.h = mul(o, tanh(next.c));
  return next;
}

template <typename S>
RecurrentState<S> lstm_step(const LstmCellParams<S>& params, const Tensor<S>& x_t, const RecurrentState<S>& state) {
  if (x_t.ndim() != 2 || x_t.dim(1) != params.input.in()) {
    throw ShapeError("LSTM step expects x_t [B," + std::to_string(params.input.in()) + "], got " +
                     to_string(x_t.shape()));
  }
  return lstm_step_projected(params, dense_forward(params.input, x_t), state);
}

template <typename S>
RecurrentState<S> gru_step_projected(const GruCellParams<S>& params, const Tensor<S>& input_proj,
                                     const RecurrentState<S>& state, GruStepTrace<S>* trace) {
  const Index H = params.hidden();
  check_state(state, input_proj.dim(0), H, false, "GRU");
  Tensor<S> gates = linear(state.h, params.recurrent.weight, params.recurrent.bias);
  Tensor<S> z = sigmoid(add(slice(input_proj, 1, 0, H), slice(gates, 1, 0, H)));
  Tensor<S> r = sigmoid(add(slice(input_proj, 1, H, H), slice(gates, 1, H, H)));
  Tensor<S> cand = tanh(add(slice(input_proj, 1, 2 * H, H),
                            linear(mul(r, state.h), params.candidate.weight, params.candidate.bias)));
  if (trace) {
    trace->update = z.value();
    trace->candidate = cand.value();
  }
  // (1 - z) * h + z * h~
  Tensor<S> keep = add_scalar(neg(z), S(1));
  RecurrentState<S> next;
  next.h = add(mul(keep, state.h), mul(z, cand));
  return next;
}

template <typename S>
RecurrentState<S> gru_step(const GruCellParams<S>& params, const Tensor<S>& x_t, const RecurrentState<S>& state,
                           GruStepTrace<S>* trace) {
  if (x_t.ndim() != 2 || x_t.dim(1) != params.input.in()) {
    throw ShapeError("GRU step expects x_t [B," + std::to_string(params.input.in()) + "], got " +
                     to_string(x_t.shape()));
  }
  return gru_step_projected(params, dense_forward(params.input, x_t), state, trace);
}

namespace {

template <typename S>
void init_recurrent_blocks(Tensor<S>& weight, Index blocks, Index hidden, std::mt19937_64& rng) {
  // Each gate's H x H block is orthogonal on its own.
  for (Index b = 0; b < blocks; ++b) {
    Tensor<S> block = Tensor<S>::zeros({hidden, hidden});
    init_orthogonal(block, rng);
    weight.mutable_value().segment(b * hidden * hidden, hidden * hidden) = block.value();
  }
}

}  // namespace

template <typename S>
RecurrentModel<S>::RecurrentModel(const ModelSpec& spec, std::mt19937_64& rng) : Model<S>(spec) {
  Parameters<S> params;
  const Index H = spec.hidden_dims[0];
  Index in = spec.image_size;
  for (int l = 0; l < spec.layers; ++l) {
    const std::string prefix = (is_gru() ? "gru" : "lstm") + std::to_string(l + 1);
    if (l > 0) {
      norms_.push_back(LayerNormParams<S>::create(H));
      norms_.back().collect("norm" + std::to_string(l), params);
    }
    if (is_gru()) {
      auto cell = GruCellParams<S>::create(in, H);
      init_xavier_uniform(cell.input.weight, in, 3 * H, rng);
      init_recurrent_blocks(cell.recurrent.weight, 2, H, rng);
      init_orthogonal(cell.candidate.weight, rng);
      init_bias_uniform(cell.input.bias, H, rng);
      cell.input.bias.mutable_value().segment(0, H).setConstant(S(0.5));
      cell.collect(prefix, params);
      gru_.push_back(std::move(cell));
    } else {
      auto cell = LstmCellParams<S>::create(in, H);
      init_xavier_uniform(cell.input.weight, in, 4 * H, rng);
      init_recurrent_blocks(cell.recurrent.weight, 4, H, rng);
      init_bias_uniform(cell.input.bias, H, rng);
      cell.input.bias.mutable_value().segment(0, H).setConstant(S(1));
      cell.collect(prefix, params);
      lstm_.push_back(std::move(cell));
    }
    in = H;
  }
  head_ = DenseLayer<S>::create(H, kNumClasses);
  init_xavier_uniform(head_.weight, H, kNumClasses, rng);
  init_bias_uniform(head_.bias, H, rng);
  head_.collect("head", params);
  this->register_parameters(std::move(params));
}

template <typename S>
Tensor<S> RecurrentModel<S>::forward(const Tensor<S>& images, ForwardContext<S>& ctx) const {
  const Index batch = this->check_images(images);
  const Index H = this->spec().hidden_dims[0];
  const int layers = this->spec().layers;
  Tensor<S> seq = rows_as_sequence(images);  // [B, T, in]
  const Index steps = seq.dim(1);
  Tensor<S> last;
  for (int l = 0; l < layers; ++l) {
    if (l > 0) seq = ctx.dropout(layer_norm(norms_[l - 1], seq), this->spec().dropout);
    // Input half of every gate for all steps in one product.
    Tensor<S> proj = is_gru() ? dense_forward(gru_[l].input, seq) : dense_forward(lstm_[l].input, seq);
    auto state = RecurrentState<S>::zeros(batch, H, !is_gru());
    std::vector<Tensor<S>> outputs;
    const bool keep = l + 1 < layers;
    if (keep) outputs.reserve(static_cast<std::size_t>(steps));
    for (Index t = 0; t < steps; ++t) {
      Tensor<S> p = select(proj, 1, t);
      state = is_gru() ? gru_step_projected(gru_[l], p, state) : lstm_step_projected(lstm_[l], p, state);
      if (keep) outputs.push_back(reshape(state.h, {batch, 1, H}));
    }
    if (keep) seq = concat(outputs, 1);
    last = state.h;
  }
  last_steps_ = steps;
  return dense_forward(head_, last);
}

#define PETBENCH_INSTANTIATE(S)                                                                                     \
  template struct RecurrentState<S>;                                                                                \
  template struct LstmCellParams<S>;                                                                                \
  template struct GruCellParams<S>;                                                                                 \
  template class RecurrentModel<S>;                                                                                 \
  template RecurrentState<S> lstm_step(const LstmCellParams<S>&, const Tensor<S>&, const RecurrentState<S>&);       \
  template RecurrentState<S> lstm_step_projected(const LstmCellParams<S>&, const Tensor<S>&,                        \
                                                 const RecurrentState<S>&);                                         \
  template RecurrentState<S> gru_step(const GruCellParams<S>&, const Tensor<S>&, const RecurrentState<S>&,         \
                                      GruStepTrace<S>*);                                                            \
  template RecurrentState<S> gru_step_projected(const GruCellParams<S>&, const Tensor<S>&, const RecurrentState<S>&, \
                                                GruStepTrace<S>*);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench

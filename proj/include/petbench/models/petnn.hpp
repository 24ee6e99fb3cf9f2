#pragma once

#include "petbench/models/model.hpp"

namespace petbench {

template <typename S>
struct PetnnState {
  Tensor<S> h;  // [B, hidden]
  Tensor<S> C;  // [B, cell]
  Tensor<S> T;  // [B, cell]

  static PetnnState zeros(Index batch, Index hidden, Index cell);
};

/// Learned maps of one PETNN layer. `input` and `recurrent` together form the
/// affine map of [h_{t-1}, x_t]; their rows are stacked
/// [R | Z | I | Z_c] (cell width each) then [Z_w | h~] (hidden width each).
template <typename S>
struct PetnnGates {
  Index hidden = 0;
  Index cell = 0;
  Activation act = Activation::sigmoid;
  bool reexcite = true;

  DenseLayer<S> input;      // [4c + 2H, in]
  DenseLayer<S> recurrent;  // [4c + 2H, H], no bias
  DenseLayer<S> memory;     // [H, c], no bias: C_t into the candidate
  DenseLayer<S> residual;   // [H, in], no bias: res(x_t)
  Tensor<S> reexcitation;   // [c]; T restarts at softplus of this after firing
  LayerNormParams<S> norm;  // [H]

  static PetnnGates create(Index in, Index hidden, Index cell, Activation act, bool reexcite);
  Index in() const { return input.in(); }
  Index projection_width() const { return 4 * cell + 2 * hidden; }
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

/// Values seen at one step of one layer.
template <typename S>
struct PetnnStepRecord {
  int layer = 0;
  Index step = 0;
  Array<S> R, Z, I, Zc;
  Array<S> T_prev;
  Array<S> T_fired;  // transition value before any re-excitation reset
  Array<S> mask;
  Array<S> T;        // carried forward
  Array<S> C_prev, C;
};

template <typename S>
struct PetnnTrace {
  std::vector<PetnnStepRecord<S>> steps;
};

/// T_t = R * act(T_{t-1} + Z) - 1
template <typename S>
Tensor<S> petnn_transition(const Tensor<S>& R, const Tensor<S>& T_prev, const Tensor<S>& Z, Activation act);
/// C_t = (1 - m) * C_{t-1} + m * I + Z_c, with m a constant 0/1 tensor.
template <typename S>
Tensor<S> petnn_memory_update(const Tensor<S>& mask, const Tensor<S>& C_prev, const Tensor<S>& I,
                              const Tensor<S>& Zc);

template <typename S>
PetnnState<S> petnn_step(const PetnnGates<S>& gates, const Tensor<S>& x_t, const PetnnState<S>& state,
                         ForwardContext<S>& ctx, int layer = 0, Index step = 0);
/// Same step with the input halves (gate projection and res(x_t)) applied
/// beforehand.
template <typename S>
PetnnState<S> petnn_step_projected(const PetnnGates<S>& gates, const Tensor<S>& input_proj, const Tensor<S>& res,
                                   const PetnnState<S>& state, ForwardContext<S>& ctx, int layer = 0,
                                   Index step = 0);

/// Stacked PETNN layers scanning image rows; the top layer's last h feeds a
/// dense head.
template <typename S>
class PetnnModel : public Model<S> {
 public:
  PetnnModel(const ModelSpec& spec, std::mt19937_64& rng);

  Tensor<S> forward(const Tensor<S>& images, ForwardContext<S>& ctx) const override;

  const std::vector<PetnnGates<S>>& layers() const { return layers_; }
  /// Final state of every layer from the last forward call.
  const std::vector<PetnnState<S>>& last_states() const { return last_states_; }

 private:
  std::vector<PetnnGates<S>> layers_;
  DenseLayer<S> head_;
  mutable std::vector<PetnnState<S>> last_states_;
};

}  // namespace petbench

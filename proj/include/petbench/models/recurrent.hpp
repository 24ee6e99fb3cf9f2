#pragma once

#include "petbench/models/model.hpp"

namespace petbench {

template <typename S>
struct RecurrentState {
  Tensor<S> h;  // [B, hidden]
  Tensor<S> c;  // [B, hidden], LSTM only

  static RecurrentState zeros(Index batch, Index hidden, bool with_cell);
};

/// Gate rows are stacked [forget, input, output, candidate]. The input map
/// carries the bias, the recurrent map has none; together they are the
/// affine map of [h_{t-1}, x_t].
template <typename S>
struct LstmCellParams {
  DenseLayer<S> input;      // [4H, in]
  DenseLayer<S> recurrent;  // [4H, H]

  static LstmCellParams create(Index in, Index hidden);
  Index hidden() const { return recurrent.in(); }
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

/// Rows stacked [update z, reset r, candidate]. The candidate sees r * h
/// through its own recurrent block.
template <typename S>
struct GruCellParams {
  DenseLayer<S> input;          // [3H, in]
  DenseLayer<S> recurrent;      // [2H, H] for z and r
  DenseLayer<S> candidate;      // [H, H] applied to r * h

  static GruCellParams create(Index in, Index hidden);
  Index hidden() const { return candidate.in(); }
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

/// Gate values seen by one GRU step, for inspection.
template <typename S>
struct GruStepTrace {
  Array<S> update;     // z
  Array<S> candidate;  // h~
};

template <typename S>
RecurrentState<S> lstm_step(const LstmCellParams<S>& params, const Tensor<S>& x_t, const RecurrentState<S>& state);
/// Same step with the input half of the affine map already applied.
template <typename S>
RecurrentState<S> lstm_step_projected(const LstmCellParams<S>& params, const Tensor<S>& input_proj,
                                      const RecurrentState<S>& state);

template <typename S>
RecurrentState<S> gru_step(const GruCellParams<S>& params, const Tensor<S>& x_t, const RecurrentState<S>& state,
                           GruStepTrace<S>* trace = nullptr);
template <typename S>
RecurrentState<S> gru_step_projected(const GruCellParams<S>& params, const Tensor<S>& input_proj,
                                     const RecurrentState<S>& state, GruStepTrace<S>* trace = nullptr);

/// Stacked LSTM or GRU over image rows. Between layers the hidden sequence
/// is layer-normalized and dropped out; the top layer's last h feeds a
/// dense head.
template <typename S>
class RecurrentModel : public Model<S> {
 public:
  RecurrentModel(const ModelSpec& spec, std::mt19937_64& rng);

  Tensor<S> forward(const Tensor<S>& images, ForwardContext<S>& ctx) const override;

  bool is_gru() const { return this->kind() == ModelKind::gru; }
  const std::vector<LstmCellParams<S>>& lstm_cells() const { return lstm_; }
  const std::vector<GruCellParams<S>>& gru_cells() const { return gru_; }
  /// Time steps consumed by the last forward call.
  Index last_sequence_length() const { return last_steps_; }

 private:
  std::vector<LstmCellParams<S>> lstm_;
  std::vector<GruCellParams<S>> gru_;
  std::vector<LayerNormParams<S>> norms_;
  DenseLayer<S> head_;
  mutable Index last_steps_ = 0;
};

}  // namespace petbench

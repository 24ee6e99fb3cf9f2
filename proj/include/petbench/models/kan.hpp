#pragma once

#include "petbench/models/model.hpp"

namespace petbench {

/// Evenly spaced RBF centres on [lo, hi].
std::vector<double> kan_rbf_centres(const KanGridConfig& cfg);
/// grid_size + 1 evenly spaced knots on [lo, hi], extended by spline_order
/// knots of the same spacing on each side.
std::vector<double> kan_bspline_knots(const KanGridConfig& cfg);

/// exp(-((x - g_j) / h)^2) with h the spacing of `grid`; appends a dimension
/// of size grid.size().
template <typename S>
Tensor<S> kan_basis_rbf(const Tensor<S>& x, std::span<const double> grid);
/// Cox-de Boor B-spline bases over already extended knots; appends a
/// dimension of size knots.size() - order - 1.
template <typename S>
Tensor<S> kan_basis_bspline(const Tensor<S>& x, std::span<const double> knots, int order = 3);

template <typename S>
struct KanLayerParams {
  KanBasis basis = KanBasis::rbf;
  int order = 3;
  std::vector<double> grid;     // RBF centres or extended B-spline knots
  LayerNormParams<S> norm;      // applied to the input first
  Tensor<S> coefficients;       // [out, in, n_basis]
  Tensor<S> base_weight;        // [out, in], SiLU path; B-spline layers only

  static KanLayerParams create(Index in, Index out, const KanGridConfig& cfg);
  Index in() const { return coefficients.dim(1); }
  Index out() const { return coefficients.dim(0); }
  Index n_basis() const { return coefficients.dim(2); }
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

/// out_i = sum_p sum_j c[i,p,j] basis_j(LN(x)_p)  (+ sum_p w[i,p] silu(LN(x)_p))
template <typename S>
Tensor<S> kan_layer_forward(const KanLayerParams<S>& params, const Tensor<S>& x);

/// FastKAN (RBF) or EfficientKAN (B-spline + SiLU base) over flattened pixels.
template <typename S>
class KanModel : public Model<S> {
 public:
  KanModel(const ModelSpec& spec, std::mt19937_64& rng);

  Tensor<S> forward(const Tensor<S>& images, ForwardContext<S>& ctx) const override;

  const std::vector<KanLayerParams<S>>& layers() const { return layers_; }

 private:
  std::vector<KanLayerParams<S>> layers_;
};

}  // namespace petbench

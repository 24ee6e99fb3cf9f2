#include "petbench/models/kan.hpp"

#include <stdexcept>

namespace petbench {

std::vector<double> kan_rbf_centres(const KanGridConfig& cfg) {
  std::vector<double> g(static_cast<std::size_t>(cfg.rbf_points));
  const double step = (cfg.hi - cfg.lo) / (cfg.rbf_points - 1);
  for (int j = 0; j < cfg.rbf_points; ++j) g[static_cast<std::size_t>(j)] = cfg.lo + j * step;
  g.back() = cfg.hi;
  return g;
}

std::vector<double> kan_bspline_knots(const KanGridConfig& cfg) {
  const double step = (cfg.hi - cfg.lo) / cfg.grid_size;
  std::vector<double> knots;
  for (int i = -cfg.spline_order; i <= cfg.grid_size + cfg.spline_order; ++i) knots.push_back(cfg.lo + i * step);
  return knots;
}

namespace {

void check_increasing(std::span<const double> grid, const char* what) {
  if (grid.size() < 2) throw std::invalid_argument(std::string(what) + " needs at least two points");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw std::invalid_argument(std::string(what) + " must be strictly increasing");
  }
}

}  // namespace

template <typename S>
Tensor<S> kan_basis_rbf(const Tensor<S>& x, std::span<const double> grid) {
  check_increasing(grid, "RBF grid");
  return rbf_basis(x, grid, (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1));
}

template <typename S>
Tensor<S> kan_basis_bspline(const Tensor<S>& x, std::span<const double> knots, int order) {
  return bspline_basis(x, knots, order);
}

template <typename S>
KanLayerParams<S> KanLayerParams<S>::create(Index in, Index out, const KanGridConfig& cfg) {
  KanLayerParams p;
  p.basis = cfg.basis;
  p.order = cfg.spline_order;
  p.grid = cfg.basis == KanBasis::rbf ? kan_rbf_centres(cfg) : kan_bspline_knots(cfg);
  const Index nb = cfg.basis == KanBasis::rbf ? cfg.rbf_points
                                              : static_cast<Index>(p.grid.size()) - cfg.spline_order - 1;
  p.norm = LayerNormParams<S>::create(in);
  p.coefficients = Tensor<S>::zeros({out, in, nb}, true);
  if (cfg.basis == KanBasis::bspline) p.base_weight = Tensor<S>::zeros({out, in}, true);
  return p;
}

template <typename S>
void KanLayerParams<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  norm.collect(prefix + ".norm", into);
  into.push_back({prefix + ".coefficients", coefficients});
  if (base_weight.defined()) into.push_back({prefix + ".base_weight", base_weight});
}

template <typename S>
Tensor<S> kan_layer_forward(const KanLayerParams<S>& params, const Tensor<S>& x) {
  if (x.ndim() != 2 || x.dim(1) != params.in()) {
    throw ShapeError("KAN layer expects [B," + std::to_string(params.in()) + "], got " + to_string(x.shape()));
  }
  const Index batch = x.dim(0);
  Tensor<S> xn = layer_norm(params.norm, x);
  Tensor<S> basis = params.basis == KanBasis::rbf ? kan_basis_rbf(xn, params.grid)
                                                  : kan_basis_bspline(xn, params.grid, params.order);
  Tensor<S> flat = reshape(basis, {batch, params.in() * params.n_basis()});
  Tensor<S> coef = reshape(params.coefficients, {params.out(), params.in() * params.n_basis()});
  Tensor<S> out = linear(flat, coef, Tensor<S>());
  if (params.base_weight.defined()) out = add(out, linear(silu(xn), params.base_weight, Tensor<S>()));
  return out;
}

template <typename S>
KanModel<S>::KanModel(const ModelSpec& spec, std::mt19937_64& rng) : Model<S>(spec) {
  Parameters<S> params;
  Index in = spec.image_size * spec.image_size;
  std::vector<Index> widths = spec.hidden_dims;
  widths.push_back(kNumClasses);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    auto layer = KanLayerParams<S>::create(in, widths[i], spec.kan);
    init_xavier_uniform(layer.coefficients, in * layer.n_basis(), widths[i], rng);
    if (layer.base_weight.defined()) init_xavier_uniform(layer.base_weight, in, widths[i], rng);
    layer.collect("kan" + std::to_string(i + 1), params);
    layers_.push_back(std::move(layer));
    in = widths[i];
  }
  this->register_parameters(std::move(params));
}

template <typename S>
Tensor<S> KanModel<S>::forward(const Tensor<S>& images, ForwardContext<S>& ctx) const {
  const Index batch = this->check_images(images);
  Tensor<S> h = reshape(images, {batch, images.size() / batch});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = kan_layer_forward(layers_[i], h);
    if (i + 1 < layers_.size()) h = ctx.dropout(h, this->spec().dropout);
  }
  return h;
}

#define PETBENCH_INSTANTIATE(S)                                                      \
  template Tensor<S> kan_basis_rbf(const Tensor<S>&, std::span<const double>);      \
  template Tensor<S> kan_basis_bspline(const Tensor<S>&, std::span<const double>, int); \
  template struct KanLayerParams<S>;                                                \
  template Tensor<S> kan_layer_forward(const KanLayerParams<S>&, const Tensor<S>&); \
  template class KanModel<S>;

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench

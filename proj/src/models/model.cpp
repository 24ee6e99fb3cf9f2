#include "petbench/models/model.hpp"

#include "petbench/models/cnn.hpp"
#include "petbench/models/jem.hpp"
#include "petbench/models/kan.hpp"
#include "petbench/models/mlp.hpp"
#include "petbench/models/petnn.hpp"
#include "petbench/models/recurrent.hpp"
#include "petbench/models/transformer.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace petbench {

std::string_view name(ModelKind kind) {
  switch (kind) {
    case ModelKind::mlp: return "MLP";
    case ModelKind::cnn: return "CNN";
    case ModelKind::lstm: return "LSTM";
    case ModelKind::gru: return "GRU";
    case ModelKind::transformer: return "Transformer";
    case ModelKind::jem: return "JEM";
    case ModelKind::fast_kan: return "FastKAN";
    case ModelKind::efficient_kan: return "EfficientKAN";
    case ModelKind::petnn_sigmoid: return "PETNN_Sigmoid";
    case ModelKind::petnn_gelu: return "PETNN_GELU";
    case ModelKind::petnn_silu: return "PETNN_SiLU";
  }
  return "?";
}

namespace {

std::string fold(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '-' || c == '_' || c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

ModelKind parse_model_kind(std::string_view text) {
  std::string key = fold(text);
  for (ModelKind k : kAllModelKinds) {
    if (fold(name(k)) == key) return k;
  }
  throw std::invalid_argument("unknown model kind '" + std::string(text) + "'");
}

bool is_petnn(ModelKind kind) {
  return kind == ModelKind::petnn_sigmoid || kind == ModelKind::petnn_gelu || kind == ModelKind::petnn_silu;
}

ModelSpec default_spec(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  switch (kind) {
    case ModelKind::mlp:
      s.layers = 3;
      s.hidden_dims = {256, 128};
      break;
    case ModelKind::cnn:
      s.layers = 4;
      s.hidden_dims = {32, 64};
      break;
    case ModelKind::lstm:
    case ModelKind::gru:
      s.layers = 2;
      s.hidden_dims = {192};
      break;
    case ModelKind::transformer:
      s.layers = 2;
      s.hidden_dims = {64};
      break;
    case ModelKind::jem:
      s.layers = 5;
      s.hidden_dims = {16, 32, 64};
      break;
    case ModelKind::fast_kan:
    case ModelKind::efficient_kan:
      s.layers = 2;
      s.hidden_dims = {64};
      s.dropout = 0.0;
      s.kan.basis = kind == ModelKind::fast_kan ? KanBasis::rbf : KanBasis::bspline;
      break;
    case ModelKind::petnn_sigmoid:
    case ModelKind::petnn_gelu:
    case ModelKind::petnn_silu:
      s.layers = 3;
      s.hidden_dims = {192};
      s.dropout = 0.1;
      break;
  }
  return s;
}

ModelSpec tiny_spec(ModelKind kind) {
  ModelSpec s = default_spec(kind);
  s.image_size = 8;
  switch (kind) {
    case ModelKind::mlp:
      s.hidden_dims = {5, 4};
      break;
    case ModelKind::cnn:
      s.hidden_dims = {2, 3};
      s.dense_dim = 5;
      break;
    case ModelKind::lstm:
    case ModelKind::gru:
      s.hidden_dims = {3};
      s.image_size = 4;
      break;
    case ModelKind::transformer:
      s.hidden_dims = {8};
      s.heads = 2;
      s.ffn_dim = 8;
      s.image_size = 4;
      break;
    case ModelKind::jem:
      s.hidden_dims = {2, 2, 3};
      s.dense_dim = 4;
      break;
    case ModelKind::fast_kan:
    case ModelKind::efficient_kan:
      s.hidden_dims = {3};
      s.image_size = 3;
      break;
    case ModelKind::petnn_sigmoid:
    case ModelKind::petnn_gelu:
    case ModelKind::petnn_silu:
      s.layers = 2;
      s.hidden_dims = {4};
      s.cell_dim = 3;
      s.image_size = 4;
      break;
  }
  return s;
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid model spec: " + what);
}

}  // namespace

void validate(const ModelSpec& s) {
  const std::string k(name(s.kind));
  require(s.dropout >= 0.0 && s.dropout < 1.0, k + " dropout must lie in [0, 1)");
  require(s.image_size >= 1, k + " image_size must be positive");
  require(!s.hidden_dims.empty(), k + " hidden_dims is empty");
  for (Index d : s.hidden_dims) require(d > 0, k + " hidden_dims entries must be positive");
  switch (s.kind) {
    case ModelKind::mlp:
      require(s.layers == static_cast<int>(s.hidden_dims.size()) + 1, "MLP layers must equal hidden_dims + 1");
      break;
    case ModelKind::cnn:
    case ModelKind::jem: {
      Index extent = s.image_size;
      for (std::size_t i = 0; i < s.hidden_dims.size(); ++i) extent /= 2;
      require(extent >= 1, k + " image too small for " + std::to_string(s.hidden_dims.size()) + " pooling stages");
      require(s.layers == static_cast<int>(s.hidden_dims.size()) + 2, k + " layers must equal conv stages + 2");
      require(s.dense_dim > 0, k + " dense_dim must be positive");
      break;
    }
    case ModelKind::lstm:
    case ModelKind::gru:
      require(s.layers >= 1, k + " needs at least one layer");
      require(s.hidden_dims.size() == 1, k + " takes a single hidden width");
      break;
    case ModelKind::transformer:
      require(s.layers >= 1, "Transformer needs at least one encoder block");
      require(s.hidden_dims.size() == 1, "Transformer takes a single d_model");
      require(s.heads >= 1 && s.hidden_dims[0] % s.heads == 0, "Transformer heads must divide d_model");
      require(s.ffn_dim > 0, "Transformer ffn_dim must be positive");
      require(s.positional == PositionalEncoding::learned || s.hidden_dims[0] % 2 == 0,
              "sinusoidal positional encoding needs an even d_model");
      break;
    case ModelKind::fast_kan:
    case ModelKind::efficient_kan:
      require(s.layers == static_cast<int>(s.hidden_dims.size()) + 1, k + " layers must equal hidden_dims + 1");
      require(s.kan.lo < s.kan.hi, k + " grid range must be increasing");
      require(s.kan.rbf_points >= 2, k + " needs at least two RBF centres");
      require(s.kan.grid_size >= 1 && s.kan.spline_order >= 0, k + " grid_size/spline_order out of range");
      break;
    case ModelKind::petnn_sigmoid:
    case ModelKind::petnn_gelu:
    case ModelKind::petnn_silu:
      require(s.layers >= 1, k + " needs at least one layer");
      require(s.hidden_dims.size() == 1, k + " takes a single hidden width");
      require(s.cell_dim > 0, k + " cell_dim must be positive");
      break;
  }
  require(s.jem.langevin_steps >= 1, "JEM langevin_steps must be >= 1");
  require(s.jem.noise_scale >= 0.0, "JEM noise_scale must be >= 0");
  require(s.jem.pixel_lo < s.jem.pixel_hi, "JEM pixel range must be increasing");
}

Activation petnn_activation(const ModelSpec& spec) {
  if (spec.activation_override) return *spec.activation_override;
  switch (spec.kind) {
    case ModelKind::petnn_gelu: return Activation::gelu;
    case ModelKind::petnn_silu: return Activation::silu;
    default: return Activation::sigmoid;
  }
}

template <typename S>
std::mt19937_64& ForwardContext<S>::dropout_rng() const {
  if (!rng) throw std::logic_error("training forward pass needs an rng for dropout");
  return *rng;
}

template <typename S>
Tensor<S> ForwardContext<S>::dropout(const Tensor<S>& x, double p) const {
  if (!training || p == 0.0) return x;
  return petbench::dropout(x, p, true, dropout_rng());
}

template <typename S>
Tensor<S> Model<S>::loss(const Tensor<S>& images, std::span<const int> labels, ForwardContext<S>& ctx) const {
  return softmax_cross_entropy(forward(images, ctx), labels);
}

template <typename S>
void Model<S>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename S>
Index Model<S>::check_images(const Tensor<S>& images) const {
  const Index n = spec_.image_size;
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != n || s[3] != n) {
    throw ShapeError(std::string(name(spec_.kind)) + " expects images [B,1," + std::to_string(n) + "," +
                     std::to_string(n) + "], got " + to_string(s));
  }
  return s[0];
}

template <typename S>
Tensor<S> rows_as_sequence(const Tensor<S>& images) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("expected images [B,1,H,W], got " + to_string(s));
  return reshape(images, {s[0], s[2], s[3]});
}

template <typename S>
std::unique_ptr<Model<S>> build_model(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  switch (spec.kind) {
    case ModelKind::mlp: return std::make_unique<MlpModel<S>>(spec, rng);
    case ModelKind::cnn: return std::make_unique<CnnModel<S>>(spec, rng);
    case ModelKind::lstm:
    case ModelKind::gru: return std::make_unique<RecurrentModel<S>>(spec, rng);
    case ModelKind::transformer: return std::make_unique<TransformerModel<S>>(spec, rng);
    case ModelKind::jem: return std::make_unique<JemModel<S>>(spec, rng);
    case ModelKind::fast_kan:
    case ModelKind::efficient_kan: return std::make_unique<KanModel<S>>(spec, rng);
    case ModelKind::petnn_sigmoid:
    case ModelKind::petnn_gelu:
    case ModelKind::petnn_silu: return std::make_unique<PetnnModel<S>>(spec, rng);
  }
  throw std::invalid_argument("unhandled model kind");
}

#define PETBENCH_INSTANTIATE(S)                                                   \
  template struct ForwardContext<S>;                                             \
  template class Model<S>;                                                       \
  template Tensor<S> rows_as_sequence(const Tensor<S>&);                         \
  template std::unique_ptr<Model<S>> build_model<S>(const ModelSpec&, std::uint64_t);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench

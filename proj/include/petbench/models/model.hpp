#pragma once

#include "petbench/layers.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace petbench {

enum class ModelKind {
  mlp,
  cnn,
  lstm,
  gru,
  transformer,
  jem,
  fast_kan,
  efficient_kan,
  petnn_sigmoid,
  petnn_gelu,
  petnn_silu,
};

/// Benchmark order (the row order of the published comparison table).
inline constexpr std::array<ModelKind, 11> kAllModelKinds = {
    ModelKind::mlp,      ModelKind::cnn,           ModelKind::lstm,          ModelKind::gru,
    ModelKind::transformer, ModelKind::jem,        ModelKind::fast_kan,      ModelKind::efficient_kan,
    ModelKind::petnn_sigmoid, ModelKind::petnn_gelu, ModelKind::petnn_silu,
};

std::string_view name(ModelKind kind);
/// Accepts the display names ("PETNN_GELU", "FastKAN", ...) case-insensitively,
/// with '-' and '_' interchangeable.
ModelKind parse_model_kind(std::string_view text);
bool is_petnn(ModelKind kind);

enum class PositionalEncoding { sinusoidal, learned };
enum class KanBasis { rbf, bspline };

struct KanGridConfig {
  KanBasis basis = KanBasis::rbf;
  int rbf_points = 8;    // Gaussian centres, FastKAN
  int grid_size = 5;     // B-spline intervals, EfficientKAN
  int spline_order = 3;
  double lo = -2.0;
  double hi = 2.0;
};

struct JemConfig {
  int langevin_steps = 5;
  double step_size = 10.0;     // eta: drift is (eta / 2) * grad E
  double noise_scale = 0.005;  // std of the additive Gaussian noise
  double energy_weight = 1.0;  // lambda on E(x) - E(x~)
  double pixel_lo = 0.0;
  double pixel_hi = 1.0;
  bool replay_buffer = false;
  Index replay_capacity = 10000;
  double replay_reinit = 0.05;  // fraction of fresh uniform starts when replaying
};

struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  int layers = 0;
  std::vector<Index> hidden_dims;
  double dropout = 0.25;
  std::optional<Activation> activation_override;

  Index image_size = 28;
  Index dense_dim = 128;  // CNN / JEM classifier head
  Index heads = 4;        // Transformer
  Index ffn_dim = 128;    // Transformer
  PositionalEncoding positional = PositionalEncoding::sinusoidal;
  Index cell_dim = 48;    // PETNN memory cell
  bool reexcite = true;   // PETNN: refill T after a transition fires
  KanGridConfig kan;
  JemConfig jem;
};

/// Architecture defaults of the benchmark (layer counts and widths).
ModelSpec default_spec(ModelKind kind);
/// Same topology at toy widths on small images, for gradient checks.
ModelSpec tiny_spec(ModelKind kind);
/// Throws std::invalid_argument naming the offending field.
void validate(const ModelSpec& spec);
/// Gate activation of a PETNN variant (override wins).
Activation petnn_activation(const ModelSpec& spec);

enum class MaskMode { compute, record, replay };

template <typename S>
struct PetnnTrace;

/// Per-call switches and probes. A context is used by one forward pass at a
/// time.
template <typename S>
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required for dropout when training

  // PETNN transition masks: `record` stores every mask in order, `replay`
  // reuses them so the indicator is frozen across repeated evaluations.
  MaskMode mask_mode = MaskMode::compute;
  std::vector<Array<S>> masks;
  std::size_t mask_cursor = 0;

  PetnnTrace<S>* petnn_trace = nullptr;
  AttentionProbe<S>* attention = nullptr;

  std::mt19937_64& dropout_rng() const;
  Tensor<S> dropout(const Tensor<S>& x, double p) const;
};

template <typename S>
class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }
  ModelKind kind() const { return spec_.kind; }
  const Parameters<S>& parameters() const { return params_; }
  Index parameter_count() const { return petbench::parameter_count(params_); }

  /// images[B,1,H,W] -> logits[B,10]
  virtual Tensor<S> forward(const Tensor<S>& images, ForwardContext<S>& ctx) const = 0;
  /// Training objective; cross-entropy unless a model adds its own terms.
  virtual Tensor<S> loss(const Tensor<S>& images, std::span<const int> labels, ForwardContext<S>& ctx) const;

  void zero_grad();

 protected:
  void register_parameters(Parameters<S> params) { params_ = std::move(params); }
  /// Checks [B,1,H,W] against the model's image size; returns B.
  Index check_images(const Tensor<S>& images) const;

  ModelSpec spec_;
  Parameters<S> params_;
};

inline constexpr Index kNumClasses = 10;

/// Builds and initializes a model; identical (spec, seed) pairs give
/// bit-identical parameters.
template <typename S>
std::unique_ptr<Model<S>> build_model(const ModelSpec& spec, std::uint64_t seed);

/// images[B,1,H,W] -> [B,H,W] so each image row is one time step / token.
template <typename S>
Tensor<S> rows_as_sequence(const Tensor<S>& images);

}  // namespace petbench

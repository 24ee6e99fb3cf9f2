#pragma once

#include "petbench/gradcheck.hpp"
#include "petbench/models/model.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace petbench {

struct GradcheckCase {
  std::string name;
  std::string family;  // "layer" or "model"
  GradcheckResult result;
  double seconds = 0.0;
};

/// Double-precision check of one model family at its tiny spec, on a
/// two-image batch with dropout off. PETNN masks are recorded on a first
/// pass and replayed while probing; JEM is checked on its cross-entropy
/// objective.
GradcheckCase gradcheck_model(ModelKind kind, std::uint64_t seed = 42, const GradcheckOptions& options = {});

/// Every layer-level check (dense, conv, pooling, norms, attention, losses,
/// recurrent steps, KAN layers, PETNN step).
std::vector<GradcheckCase> gradcheck_layers(std::uint64_t seed = 42, const GradcheckOptions& options = {});

/// Layers followed by all eleven model families.
std::vector<GradcheckCase> gradcheck_all(std::uint64_t seed = 42, const GradcheckOptions& options = {});

inline constexpr double kGradcheckTolerance = 1e-4;

/// "frozen-mask" for PETNN entries (transition masks held fixed while
/// differencing), "exact" otherwise.
std::string_view convention(const GradcheckCase& c);
bool passes(const GradcheckCase& c, double tolerance = kGradcheckTolerance);
bool all_pass(std::span<const GradcheckCase> cases, double tolerance = kGradcheckTolerance);
/// One row per case: item, family, max discrepancy, probes, status, convention.
std::string format_gradcheck_table(std::span<const GradcheckCase> cases, double tolerance = kGradcheckTolerance);

}  // namespace petbench

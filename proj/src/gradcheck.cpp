#include "petbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace petbench {

namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  Tensor<double> out = f();
  if (out.size() != 1) throw ShapeError("gradcheck function must return a scalar");
  double v = out.item();
  if (!std::isfinite(v)) throw NumericError("gradcheck function is non-finite at a probe point");
  return v;
}

}  // namespace

GradcheckResult finite_diff_gradcheck(const std::function<Tensor<double>()>& f, std::span<Tensor<double>> params,
                                      const GradcheckOptions& options, std::span<const std::string> names) {
  if (!(options.eps > 0)) throw std::invalid_argument("gradcheck eps must be positive");

  for (auto& p : params) p.zero_grad();
  Tensor<double> loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("gradcheck function is non-finite at the base point");
  backward(loss);

  GradcheckResult result;
  std::mt19937_64 rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = params[pi];
    const Array<double> analytic = p.has_grad() ? p.grad() : Array<double>::Zero(p.size());

    std::vector<Index> coords(static_cast<std::size_t>(p.size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.max_probes_per_param > 0 && p.size() > options.max_probes_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_probes_per_param));
      std::sort(coords.begin(), coords.end());
    }

    for (Index i : coords) {
      double& slot = p.mutable_value()[i];
      const double saved = slot;
      slot = saved + options.eps;
      const double up = evaluate(f);
      slot = saved - options.eps;
      const double down = evaluate(f);
      slot = saved;
      const double numeric = (up - down) / (2 * options.eps);
      const double a = analytic[i];
      const double disc = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.probes;
      if (disc > result.max_discrepancy || result.worst_index < 0) {
        result.max_discrepancy = std::max(result.max_discrepancy, disc);
        if (disc >= result.max_discrepancy) {
          result.worst_param = pi < names.size() ? names[pi] : "param" + std::to_string(pi);
          result.worst_index = i;
        }
      }
    }
  }
  return result;
}

}  // namespace petbench

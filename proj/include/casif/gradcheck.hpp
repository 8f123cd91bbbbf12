#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casif/model.hpp"

namespace casif {

struct GradcheckOptions {
  std::size_t seeds = 20;
  std::size_t dim = 8;
  std::size_t num_items = 20;
  std::size_t max_prefix_len = 5;
  std::vector<Variant> variants = {Variant::kCasif, Variant::kCasifS};
  std::vector<LossVariant> losses = {LossVariant::kEq13, LossVariant::kSoftmaxCe};
  std::vector<std::size_t> gnn_steps = {1, 2};
  /// Standard deviation of the random parameters, same as the training init.
  /// Much larger values push the loss above 10, where the central difference
  /// quantization (ulp(L) / 2h) is comparable to the small coordinates.
  double param_scale = 0.1;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Below this magnitude the finite-difference value is replaced by the floor
  /// in the relative-error denominator.
  double floor = 1e-6;
  std::uint64_t base_seed = 0;
  /// Negative control: perturbs one analytic gradient tensor by 1 %.
  bool sabotage = false;
};

struct GradcheckCase {
  std::uint64_t seed = 0;
  HyperParams hp;
  std::size_t prefix_len = 0;
  double worst_error = 0.0;
  std::string worst_param;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double worst_error = 0.0;
  bool passed = false;
};

/// max_k |a_k - f_k| / max(|f_k|, floor) over all coordinates.
double max_relative_error(const ParamSet& analytic, const ParamSet& numeric, double floor,
                          std::string* worst_param = nullptr);

/// One case per (seed, variant, loss, gnn_steps): random prefix of length
/// 1..max_prefix_len, random label, random parameters.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace casif

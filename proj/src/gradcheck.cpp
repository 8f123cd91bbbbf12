#include "casif/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "casif/rng.hpp"

namespace casif {

double max_relative_error(const ParamSet& analytic, const ParamSet& numeric, double floor,
                          std::string* worst_param) {
  double worst = 0.0;
  for (std::size_t p = 0; p < kNumParams; ++p) {
    const auto a = analytic.at(p).flat();
    const auto f = numeric.at(p).flat();
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double err = std::abs(a[k] - f[k]) / std::max(std::abs(f[k]), floor);
      if (err > worst || std::isnan(err)) {
        worst = std::isnan(err) ? INFINITY : err;
        if (worst_param) {
          *worst_param = param_name(static_cast<Param>(p));
        }
      }
    }
  }
  return worst;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  GradcheckReport report;
  for (std::size_t s = 0; s < options.seeds; ++s) {
    const std::uint64_t seed = options.base_seed + s;
    for (const auto variant : options.variants) {
      for (const auto loss_variant : options.losses) {
        for (const auto steps : options.gnn_steps) {
          HyperParams hp;
          hp.dim = options.dim;
          hp.gnn_steps = steps;
          hp.loss = loss_variant;
          hp.variant = variant;

          Rng rng(seed, Stream::kGradcheck, (static_cast<std::uint64_t>(variant) << 8) |
                                                (static_cast<std::uint64_t>(loss_variant) << 4) |
                                                steps);
          ParamSet params(options.num_items, hp);
          for (std::size_t p = 0; p < kNumParams; ++p) {
            for (double& v : params.at(p).flat()) {
              v = rng.gaussian(0.0, options.param_scale);
            }
          }
          PrefixExample ex;
          const auto len = static_cast<std::size_t>(
              rng.range(1, static_cast<std::int64_t>(options.max_prefix_len)));
          for (std::size_t t = 0; t < len; ++t) {
            ex.prefix.push_back(static_cast<ItemIndex>(rng.below(options.num_items)));
          }
          ex.label = static_cast<ItemIndex>(rng.below(options.num_items));

          ParamSet analytic = backward(forward(ex, params, hp), params, hp);
          if (options.sabotage) {
            for (double& v : analytic[Param::kCandidateW].flat()) {
              v *= 1.01;
            }
          }
          const ParamSet numeric = finite_difference_grad(ex, params, hp, options.step);

          GradcheckCase c{seed, hp, len, 0.0, {}};
          c.worst_error = max_relative_error(analytic, numeric, options.floor, &c.worst_param);
          report.worst_error = std::max(report.worst_error, c.worst_error);
          report.cases.push_back(std::move(c));
        }
      }
    }
  }
  report.passed = !report.cases.empty() && report.worst_error < options.tolerance;
  return report;
}

}  // namespace casif

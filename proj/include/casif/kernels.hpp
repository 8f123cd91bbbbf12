#pragma once

#include <span>
#include <vector>

#include "casif/corpus.hpp"
#include "casif/model.hpp"

namespace casif {

// Data-parallel kernels over the examples of a batch. Each has a serial
// reference implementation; the OpenMP versions produce bit-identical
// results for any thread count because every floating-point reduction is
// carried out in example order.

struct BatchGradient {
  ParamSet grad;  // summed over examples, no L2 term
  double loss_sum = 0.0;
};

BatchGradient batch_gradient_serial(std::span<const PrefixExample> batch, const ParamSet& params,
                                    const HyperParams& hp);

/// Examples are processed in waves of `wave` concurrent forward/backward
/// passes; each wave is reduced into the accumulator in example order.
BatchGradient batch_gradient_parallel(std::span<const PrefixExample> batch, const ParamSet& params,
                                      const HyperParams& hp, std::size_t wave = 32);

/// 1-based rank of each example's label among all items.
std::vector<std::size_t> label_ranks_serial(std::span<const PrefixExample> examples,
                                            const ParamSet& params, const HyperParams& hp);
std::vector<std::size_t> label_ranks_parallel(std::span<const PrefixExample> examples,
                                              const ParamSet& params, const HyperParams& hp);

/// Caps OpenMP worker threads; 0 leaves the runtime default.
void set_worker_threads(std::size_t threads);

}  // namespace casif

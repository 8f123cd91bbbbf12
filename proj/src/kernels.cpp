#include "casif/kernels.hpp"

#include <algorithm>
#include <exception>
#include <mutex>

#include <omp.h>

#include "casif/eval.hpp"

namespace casif {

BatchGradient batch_gradient_serial(std::span<const PrefixExample> batch, const ParamSet& params,
                                    const HyperParams& hp) {
  BatchGradient out{params.zeros_like(), 0.0};
  ExampleGradient g;
  for (const auto& ex : batch) {
    example_backward(forward(ex, params, hp), params, hp, g);
    out.loss_sum += g.loss;
    accumulate(g, out.grad);
  }
  return out;
}

namespace {

// Collects the first exception thrown inside a parallel region so it can be
// rethrown on the calling thread.
class ErrorSlot {
 public:
  template <typename F>
  void run(F&& f) {
    try {
      f();
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!error_) {
        error_ = std::current_exception();
      }
    }
  }
  void rethrow() const {
    if (error_) {
      std::rethrow_exception(error_);
    }
  }

 private:
  std::mutex mutex_;
  std::exception_ptr error_;
};

// acc += grads[0] + grads[1] + ... with each element summed left to right,
// mirroring accumulate() applied once per example.
void reduce_ordered(const std::vector<ExampleGradient>& grads, ParamSet& acc) {
  for (std::size_t p = 0; p < kNumParams; ++p) {
    if (static_cast<Param>(p) == Param::kEmbedding) {
      continue;
    }
    auto dst = acc.at(p).flat();
    const auto size = static_cast<std::ptrdiff_t>(dst.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < size; ++k) {
      double v = dst[k];
      for (const auto& g : grads) {
        v += g.dense.at(p)[k];
      }
      dst[k] = v;
    }
  }

  Matrix& emb = acc[Param::kEmbedding];
  const auto rows = static_cast<std::ptrdiff_t>(emb.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    auto row = emb.row(static_cast<std::size_t>(i));
    for (const auto& g : grads) {
      axpy(g.candidate_coef[i], g.candidate_query, row);
      for (std::size_t k = 0; k < g.lookup_items.size(); ++k) {
        if (g.lookup_items[k] == static_cast<ItemIndex>(i)) {
          axpy(1.0, g.lookup_grad.row(k), row);
        }
      }
    }
  }
}

}  // namespace

BatchGradient batch_gradient_parallel(std::span<const PrefixExample> batch, const ParamSet& params,
                                      const HyperParams& hp, std::size_t wave) {
  BatchGradient out{params.zeros_like(), 0.0};
  wave = std::max<std::size_t>(wave, 1);
  // Gradient buffers are reused from wave to wave.
  std::vector<ExampleGradient> grads(std::min(wave, batch.size()));
  for (std::size_t begin = 0; begin < batch.size(); begin += wave) {
    const std::size_t count = std::min(wave, batch.size() - begin);
    grads.resize(count);
    const auto n = static_cast<std::ptrdiff_t>(count);
    ErrorSlot errors;
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t e = 0; e < n; ++e) {
      errors.run([&] {
        const auto& ex = batch[begin + static_cast<std::size_t>(e)];
        example_backward(forward(ex, params, hp), params, hp, grads[static_cast<std::size_t>(e)]);
      });
    }
    errors.rethrow();
    for (const auto& g : grads) {
      out.loss_sum += g.loss;
    }
    reduce_ordered(grads, out.grad);
  }
  return out;
}

std::vector<std::size_t> label_ranks_serial(std::span<const PrefixExample> examples,
                                            const ParamSet& params, const HyperParams& hp) {
  std::vector<std::size_t> ranks(examples.size());
  for (std::size_t e = 0; e < examples.size(); ++e) {
    ranks[e] = rank_of(score_prefix(examples[e].prefix, params, hp), examples[e].label);
  }
  return ranks;
}

std::vector<std::size_t> label_ranks_parallel(std::span<const PrefixExample> examples,
                                              const ParamSet& params, const HyperParams& hp) {
  std::vector<std::size_t> ranks(examples.size());
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
  ErrorSlot errors;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t e = 0; e < n; ++e) {
    errors.run([&] {
      const auto& ex = examples[static_cast<std::size_t>(e)];
      ranks[static_cast<std::size_t>(e)] = rank_of(score_prefix(ex.prefix, params, hp), ex.label);
    });
  }
  errors.rethrow();
  return ranks;
}

void set_worker_threads(std::size_t threads) {
  if (threads > 0) {
    omp_set_num_threads(static_cast<int>(threads));
  }
}

}  // namespace casif

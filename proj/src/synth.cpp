#include "casif/synth.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "casif/error.hpp"
#include "casif/rng.hpp"

namespace casif {

TransitionModel parse_transition_model(std::string_view text) {
  if (text == "markov") return TransitionModel::kMarkov;
  if (text == "functional") return TransitionModel::kFunctional;
  throw ConfigError(fmt::format("unknown transition model '{}' (expected markov | functional)", text));
}

std::string_view to_string(TransitionModel m) {
  return m == TransitionModel::kMarkov ? "markov" : "functional";
}

void SynthSpec::validate() const {
  if (num_items < 1 || num_sessions < 1) {
    throw ConfigError("synth: num_items and num_sessions must be positive");
  }
  if (min_len < 2 || min_len > max_len) {
    throw ConfigError("synth: session lengths must satisfy 2 <= min_len <= max_len");
  }
  if (model == TransitionModel::kFunctional && num_items < 2) {
    throw ConfigError("synth: functional mode needs at least 2 items to give distinct labels");
  }
  if (model == TransitionModel::kMarkov && (successors < 1 || successors > num_items)) {
    throw ConfigError("synth: successors must lie in [1, num_items]");
  }
  if (session_gap_ms < 0 || click_gap_ms < 0 || start_time_ms < 0) {
    throw ConfigError("synth: times must be non-negative");
  }
}

nlohmann::json SynthSpec::to_json() const {
  return {{"num_items", num_items},   {"num_sessions", num_sessions}, {"min_len", min_len},
          {"max_len", max_len},       {"mode", to_string(model)},     {"successors", successors},
          {"seed", seed},             {"start_time_ms", start_time_ms},
          {"session_gap_ms", session_gap_ms}, {"click_gap_ms", click_gap_ms}};
}

std::vector<std::vector<std::size_t>> synth_sessions(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, Stream::kSynth);
  const std::size_t m = spec.num_items;

  // Transition table: successor lists per item.
  std::vector<std::vector<std::size_t>> next(m);
  if (spec.model == TransitionModel::kFunctional) {
    // Sattolo's algorithm yields a single m-cycle.
    std::vector<std::size_t> cycle(m);
    std::iota(cycle.begin(), cycle.end(), std::size_t{0});
    for (std::size_t i = m - 1; i > 0; --i) {
      std::swap(cycle[i], cycle[static_cast<std::size_t>(rng.below(i))]);
    }
    for (std::size_t i = 0; i < m; ++i) {
      next[i] = {cycle[i]};
    }
  } else {
    std::vector<std::size_t> items(m);
    std::iota(items.begin(), items.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
      rng.shuffle(std::span<std::size_t>(items));
      next[i].assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(spec.successors));
    }
  }
  // Markov weights 2^-rank: draw rank r with probability 2^-(r+1) / (1 - 2^-s).
  const double total = 1.0 - std::ldexp(1.0, -static_cast<int>(spec.successors));

  std::vector<std::vector<std::size_t>> sessions(spec.num_sessions);
  for (auto& s : sessions) {
    const auto len = static_cast<std::size_t>(
        rng.range(static_cast<std::int64_t>(spec.min_len), static_cast<std::int64_t>(spec.max_len)));
    s.push_back(static_cast<std::size_t>(rng.below(m)));
    while (s.size() < len) {
      const auto& succ = next[s.back()];
      std::size_t pick = 0;
      if (succ.size() > 1) {
        double u = rng.uniform01() * total;
        double w = 0.5;
        while (pick + 1 < succ.size() && u >= w) {
          u -= w;
          w *= 0.5;
          ++pick;
        }
      }
      s.push_back(succ[pick]);
    }
  }
  return sessions;
}

void write_synth_log(std::ostream& out, const SynthSpec& spec) {
  const auto sessions = synth_sessions(spec);
  for (std::size_t k = 0; k < sessions.size(); ++k) {
    const std::int64_t start = spec.start_time_ms + static_cast<std::int64_t>(k) * spec.session_gap_ms;
    for (std::size_t t = 0; t < sessions[k].size(); ++t) {
      out << 's' << k << ',' << start + static_cast<std::int64_t>(t) * spec.click_gap_ms << ','
          << sessions[k][t] << '\n';
    }
  }
}

}  // namespace casif

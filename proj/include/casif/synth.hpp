#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace casif {

enum class TransitionModel {
  /// Order-1 Markov chain; each item has a few preferred successors.
  kMarkov,
  /// next = cycle(current) for a random cyclic permutation, so every prefix
  /// has exactly one possible label.
  kFunctional,
};

TransitionModel parse_transition_model(std::string_view text);
std::string_view to_string(TransitionModel m);

struct SynthSpec {
  std::size_t num_items = 50;
  std::size_t num_sessions = 1000;
  std::size_t min_len = 2;
  std::size_t max_len = 8;
  TransitionModel model = TransitionModel::kMarkov;
  /// Successors per item in markov mode, with weights proportional to 2^-rank.
  std::size_t successors = 3;
  std::uint64_t seed = 0;
  std::int64_t start_time_ms = 1'396'310'400'000;  // 2014-04-01T00:00:00Z
  std::int64_t session_gap_ms = 60'000;
  std::int64_t click_gap_ms = 1'000;

  /// Throws ConfigError for contradictory settings.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Item sequences with ids in [0, num_items).
std::vector<std::vector<std::size_t>> synth_sessions(const SynthSpec& spec);

/// Writes "session,timestamp_ms,item" lines (no header), parseable with the default LogFormat.
void write_synth_log(std::ostream& out, const SynthSpec& spec);

}  // namespace casif

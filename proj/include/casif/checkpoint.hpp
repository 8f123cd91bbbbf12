#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "casif/model.hpp"
#include "casif/trainer.hpp"

namespace casif {

// Binary checkpoint layout, all integers and floats little-endian:
//
//   "CASF"                      magic
//   u16  version                (kCheckpointVersion)
//   u32  dim, u32 num_items, u32 gnn_steps
//   u8   variant, u8 loss, u8 current-interest input, u8 flags (1 = Adam, 2 = RNG)
//   u64  epoch                  epochs completed
//   f64[] every tensor of ParamSet in Param order, row-major (absent tensors are empty)
//   [Adam]  u64 step, first-moment tensors, second-moment tensors, same order
//   [RNG]   u64 seed, u64 next shuffle epoch
//   u64  FNV-1a 64 hash of every preceding byte

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct ShuffleRngState {
  std::uint64_t seed = 0;
  std::uint64_t next_epoch = 0;
  friend bool operator==(const ShuffleRngState&, const ShuffleRngState&) = default;
};

struct Checkpoint {
  HyperParams hp;
  ParamSet params;
  std::optional<AdamState> adam;
  std::optional<ShuffleRngState> rng;
  std::uint64_t epoch = 0;

  static Checkpoint from_state(const TrainState& state, const HyperParams& hp);
  /// Throws DataError when optimizer or RNG state is missing.
  TrainState to_state() const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws DataError on bad magic, version mismatch, truncation or a hash mismatch.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace casif

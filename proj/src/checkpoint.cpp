#include "casif/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "casif/error.hpp"

namespace casif {
namespace {

constexpr char kMagic[4] = {'C', 'A', 'S', 'F'};
constexpr std::uint8_t kHasAdam = 1;
constexpr std::uint8_t kHasRng = 2;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename Int>
  void put(Int value) {
    auto v = static_cast<std::uint64_t>(value);
    for (std::size_t i = 0; i < sizeof(Int); ++i) {
      out_.push_back(static_cast<char>(v & 0xff));
      v >>= 8;
    }
  }
  void put_double(double value) { put(std::bit_cast<std::uint64_t>(value)); }
  void put_params(const ParamSet& ps) {
    for (std::size_t p = 0; p < kNumParams; ++p) {
      for (const double v : ps.at(p).flat()) {
        put_double(v);
      }
    }
  }
  void raw(std::string_view bytes) { out_.append(bytes); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename Int>
  Int get() {
    need(sizeof(Int));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(Int); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(Int);
    return static_cast<Int>(v);
  }
  double get_double() { return std::bit_cast<double>(get<std::uint64_t>()); }
  void get_params(ParamSet& ps) {
    for (std::size_t p = 0; p < kNumParams; ++p) {
      for (double& v : ps.at(p).flat()) {
        v = get_double();
      }
    }
  }
  std::string_view take(std::size_t n) {
    need(n);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError(fmt::format("checkpoint truncated at byte {} of {}", pos_, bytes_.size()));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint Checkpoint::from_state(const TrainState& state, const HyperParams& hp) {
  return {hp, state.params, state.adam, ShuffleRngState{state.seed, state.next_epoch},
          state.next_epoch};
}

TrainState Checkpoint::to_state() const {
  if (!adam || !rng) {
    throw DataError("checkpoint lacks optimizer or RNG state and cannot resume training");
  }
  return {params, *adam, static_cast<std::size_t>(rng->next_epoch), rng->seed};
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw({kMagic, 4});
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(ckpt.hp.dim));
  w.put(static_cast<std::uint32_t>(ckpt.params.num_items()));
  w.put(static_cast<std::uint32_t>(ckpt.hp.gnn_steps));
  w.put(static_cast<std::uint8_t>(ckpt.hp.variant));
  w.put(static_cast<std::uint8_t>(ckpt.hp.loss));
  w.put(static_cast<std::uint8_t>(ckpt.hp.current_input));
  w.put(static_cast<std::uint8_t>((ckpt.adam ? kHasAdam : 0) | (ckpt.rng ? kHasRng : 0)));
  w.put(ckpt.epoch);
  w.put_params(ckpt.params);
  if (ckpt.adam) {
    w.put(ckpt.adam->step);
    w.put_params(ckpt.adam->first);
    w.put_params(ckpt.adam->second);
  }
  if (ckpt.rng) {
    w.put(ckpt.rng->seed);
    w.put(ckpt.rng->next_epoch);
  }
  const auto hash = fnv1a(w.bytes());
  w.put(hash);
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || r.take(4) != std::string_view(kMagic, 4)) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw DataError(fmt::format("checkpoint version mismatch: file has {}, expected {}", version,
                                kCheckpointVersion));
  }
  Checkpoint ckpt;
  ckpt.hp.dim = r.get<std::uint32_t>();
  const auto num_items = r.get<std::uint32_t>();
  ckpt.hp.gnn_steps = r.get<std::uint32_t>();
  const auto variant = r.get<std::uint8_t>();
  const auto loss = r.get<std::uint8_t>();
  const auto current = r.get<std::uint8_t>();
  const auto flags = r.get<std::uint8_t>();
  if (variant > 1 || loss > 1 || current > 1 || (flags & ~(kHasAdam | kHasRng)) != 0 ||
      ckpt.hp.dim == 0 || ckpt.hp.gnn_steps == 0 || num_items == 0) {
    throw DataError("checkpoint header is corrupt");
  }
  ckpt.hp.variant = static_cast<Variant>(variant);
  ckpt.hp.loss = static_cast<LossVariant>(loss);
  ckpt.hp.current_input = static_cast<CurrentInterestInput>(current);
  ckpt.epoch = r.get<std::uint64_t>();

  ckpt.params = ParamSet(num_items, ckpt.hp);
  // Size check up front so a truncated file fails before large allocations.
  const std::size_t tensors = ckpt.params.total_size();
  std::size_t expected = 8 * tensors;
  if (flags & kHasAdam) expected += 8 + 16 * tensors;
  if (flags & kHasRng) expected += 16;
  expected += 8;
  if (r.remaining() < expected) {
    throw DataError(fmt::format("checkpoint truncated: {} bytes remain, {} expected", r.remaining(),
                                expected));
  }
  if (r.remaining() > expected) {
    throw DataError("checkpoint has trailing bytes");
  }
  r.get_params(ckpt.params);
  if (flags & kHasAdam) {
    AdamState adam = AdamState::zeros_like(ckpt.params);
    adam.step = r.get<std::uint64_t>();
    r.get_params(adam.first);
    r.get_params(adam.second);
    ckpt.adam = std::move(adam);
  }
  if (flags & kHasRng) {
    ShuffleRngState rng;
    rng.seed = r.get<std::uint64_t>();
    rng.next_epoch = r.get<std::uint64_t>();
    ckpt.rng = rng;
  }
  const auto body = std::string_view(bytes).substr(0, r.pos());
  if (r.get<std::uint64_t>() != fnv1a(body)) {
    throw DataError("checkpoint hash mismatch (file truncated or corrupt)");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError(fmt::format("cannot write checkpoint {}", path.string()));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw DataError(fmt::format("write failure for checkpoint {}", path.string()));
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(fmt::format("cannot open checkpoint {}", path.string()));
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace casif

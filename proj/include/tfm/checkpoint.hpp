#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "tfm/params.hpp"

namespace tfm::num {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
  int format_version = kCheckpointFormatVersion;
  nlohmann::ordered_json model_config; // opaque, round-tripped as-is
  std::uint64_t seed = 0;
  std::int64_t training_step = 0;
};

// File layout: one JSON header line, then the raw parameter buffers
// concatenated in header order (little-endian IEEE 754, f64 or f32 per the
// tensor's precision tag). Save/load round-trips are bit-exact.
void save_checkpoint(const std::string& path, const ParamStore& ps,
                     const CheckpointMeta& meta);

// Loads into `ps`. An empty store is populated from the header; a non-empty
// store must match the header's names and shapes exactly.
CheckpointMeta load_checkpoint(const std::string& path, ParamStore& ps);

} // namespace tfm::num

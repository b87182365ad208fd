#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "empl/encoders.hpp"

namespace empl::io {

// Parameter checkpoint, format version 1. Little-endian.
//
//   0   4  magic "EMPC"
//   4   4  format_version (u32) = 1
//   8   4  d_in     12  4  d       16  4  d_tok    20  4  m
//   24  4  n_classes               28  4  pool_mode (0 mean, 1 concat)
//   32  4  flags (bit 0: prompt gain present)
//   36  8  seed (u64)
//   44  .. f64 values in ModelParams::flatten() order
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace empl::io

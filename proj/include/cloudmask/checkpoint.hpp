#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cloudmask/resnet.hpp"

namespace cloudmask {

// PMCK container: magic "PMCK", u16 version, u64 total file length, the
// NetworkConfig, then every layer keyed by its path with a shape header and
// little-endian float32 arrays, and a trailing FNV-1a 64-bit checksum of all
// preceding bytes. Arrays are rounded to float32 on encode.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet read_checkpoint(const std::filesystem::path& path);

// Rounds every stored array to float32 precision, which is what a
// write/read cycle produces.
ParameterSet round_to_storage(const ParameterSet& params);

}  // namespace cloudmask

#pragma once

// FVTM: a TokenMap dump. Header is the magic "FVTM" followed by h, w, d as
// little-endian uint32; the payload is h*w*d little-endian float32 values in
// token-major order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fastvar/numkern.hpp"

namespace fastvar {

inline constexpr std::size_t kFvtmHeaderBytes = 16;

std::vector<std::uint8_t> encode_fvtm(const TokenMap& map);

/// Throws ParseError carrying the byte offset of the first problem.
TokenMap decode_fvtm(std::span<const std::uint8_t> bytes);

void write_fvtm(const TokenMap& map, const std::filesystem::path& path);
TokenMap read_fvtm(const std::filesystem::path& path);

}  // namespace fastvar

#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "noisylab/data/patch.hpp"

namespace noisylab::data {

/// Base of all patch-container read failures.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class DimensionError : public FormatError {
 public:
  using FormatError::FormatError;
};

inline constexpr std::uint8_t kPatchFormatVersion = 1;
inline constexpr std::size_t kPatchHeaderBytes = 4 + 1 + 2 + 2 + 2 + 1 + 1 + 2 + 8;

/// Little-endian ".nlp" layout: "NLPT", u8 version, u16 C, u16 H, u16 W,
/// u8 K_exact, u8 K_noisy, u16 variant_id, u64 seed, then C*H*W float32
/// image, H*W u8 exact mask, H*W u8 noisy mask.
std::vector<std::uint8_t> encode_patch(const PatchTriple& triple);
PatchTriple decode_patch(std::span<const std::uint8_t> bytes);

void write_patch(const PatchTriple& triple, const std::filesystem::path& path);
PatchTriple read_patch(const std::filesystem::path& path);

}  // namespace noisylab::data

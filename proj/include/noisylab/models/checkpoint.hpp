#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "noisylab/common.hpp"
#include "noisylab/models/model.hpp"

namespace noisylab::models {

class CheckpointFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Encoder specs differ between a bundle and the receiving model.
class SpecMismatchError : public MismatchError {
 public:
  using MismatchError::MismatchError;
};

/// A tensor path is missing, extra, or has a different shape.
class ShapeMismatchError : public MismatchError {
 public:
  ShapeMismatchError(std::string path, const std::string& message)
      : MismatchError(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  int epoch = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct CheckpointMetadata {
  EncoderSpec encoder;
  FrameworkKind framework = FrameworkKind::unet;
  int num_classes = 0;
  Provenance provenance;
  std::vector<ModuleInfo> modules;

  friend bool operator==(const CheckpointMetadata&, const CheckpointMetadata&) = default;
};

struct CheckpointEntry {
  std::string path;
  Shape shape;
  Role role = Role::encoder;
  std::vector<float> data;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

/// Ordered named-tensor container; the unit of transfer between models.
struct CheckpointBundle {
  std::vector<CheckpointEntry> entries;
  CheckpointMetadata metadata;

  const CheckpointEntry* find(std::string_view path) const;
  std::vector<const CheckpointEntry*> entries_with_role(Role role) const;

  /// "NLCKPT01", u64 little-endian header length, UTF-8 JSON header
  /// (entries with path/shape/role/absolute offset/nbytes, metadata), then
  /// little-endian float32 payload.
  std::vector<std::uint8_t> serialize() const;
  static CheckpointBundle deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static CheckpointBundle load(const std::filesystem::path& path);

  friend bool operator==(const CheckpointBundle&, const CheckpointBundle&) = default;
};

CheckpointBundle export_checkpoint(const SegmentationModel& model, const Provenance& provenance = {});

enum class ImportScope { encoder_only, full };

struct ImportReport {
  std::vector<std::string> copied;
  std::vector<std::string> skipped;  ///< missing or extra paths (non-strict only)
};

/// Copies bundle tensors into `model`. encoder_only touches exactly the
/// encoder-tagged entries. Strict mode rejects missing or extra paths in
/// scope; shape mismatches are always errors and name the first offending
/// path. Nothing is written unless validation passes.
ImportReport import_checkpoint(const CheckpointBundle& bundle, SegmentationModel& model, ImportScope scope,
                               bool strict = true);

/// Encoder tensors only, serialized; the byte-level identity of an encoder.
std::vector<std::uint8_t> encoder_bytes(const CheckpointBundle& bundle);

}  // namespace noisylab::models

// Volume files: native RVOL and the uncompressed NIfTI-1 subset (uint8, int16, float32),
// plus the JSON dataset manifest.
//
// RVOL layout: "RVOL" | u64 LE header length | JSON header | little-endian payload.
// The header carries extents, dtype ("f64" scalar or "i32" label), spacing and the
// pre-normalization intensity range.
#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ernet/geometry.hpp"
#include "ernet/volume.hpp"

namespace ernet {

class VolumeIOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public VolumeIOError {
 public:
  using VolumeIOError::VolumeIOError;
};
class TruncatedFileError : public VolumeIOError {
 public:
  using VolumeIOError::VolumeIOError;
};
class UnsupportedDatatypeError : public VolumeIOError {
 public:
  using VolumeIOError::VolumeIOError;
};

/// Format is chosen from the file's leading bytes, not its extension.
Volume read_volume(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path);

void write_rvol(const std::filesystem::path& path, const Volume& v);
void write_rvol(const std::filesystem::path& path, const LabelVolume& v);

enum class NiftiType { UInt8 = 2, Int16 = 4, Float32 = 16 };
void write_nifti(const std::filesystem::path& path, const Volume& v, NiftiType type = NiftiType::Float32);

/// Writes RVOL for ".rvol" and NIfTI-1 float32 for ".nii".
void write_volume(const std::filesystem::path& path, const Volume& v);

/// (v - min) / (max - min); a constant volume becomes all zeros. Records the original range.
Volume normalize_minmax(const Volume& v);

void write_transform_file(const std::filesystem::path& path, const AffineTransform& t, const CoordinateFrame& frame,
                          TransformConvention convention);
AffineTransform read_transform_file(const std::filesystem::path& path, const CoordinateFrame& frame);

struct PairPaths {
  std::string name;
  std::filesystem::path source, target;
  std::optional<std::filesystem::path> mask, labels, target_labels, transform;
};

/// Accepts either a JSON list of {source, target, mask?, labels?, target_labels?, transform?}
/// or an atlas object {"target": path, "pairs": [{source, ...}, ...]}. Relative paths are
/// resolved against the manifest's directory.
std::vector<PairPaths> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<PairPaths>& pairs);

struct PairData {
  std::string name;
  Volume source, target;
  std::optional<Volume> mask;
  std::optional<LabelVolume> labels, target_labels;
  std::optional<AffineTransform> transform;
};

PairData load_pair(const PairPaths& paths);
std::vector<PairData> load_dataset(const std::filesystem::path& manifest);

}  // namespace ernet

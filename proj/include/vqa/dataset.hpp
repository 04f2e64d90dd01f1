#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vqa/errors.hpp"
#include "vqa/types.hpp"

// Dataset metadata and split generation. A dataset is a CSV manifest
// (`source_id,video_path,mos`) plus an optional JSON sidecar next to it
// declaring the database name and its native MOS range. Splits are 60/20/20
// by count, reshuffled per run from consecutive seeds.

namespace vqa {

struct DatasetEntry {
  std::string source_id;
  std::filesystem::path video_path;  ///< may be empty for feature-only datasets
  double mos = 0;
};

struct DatasetManifest {
  std::string name;
  std::vector<DatasetEntry> entries;
  /// Native score range {lo, hi}; training rescales through it.
  std::array<double, 2> mos_range{0.0, 100.0};

  Index size() const { return static_cast<Index>(entries.size()); }
  /// Source ids in manifest order.
  std::vector<std::string> ids() const;
};

struct ManifestLoadOptions {
  /// Require every referenced video file to exist.
  bool require_files = false;
};

/// Reads and validates a manifest. Problems do not stop at the first row: the
/// ValidationError lists every offending row. Relative video paths resolve
/// against the CSV's directory. The sidecar (same path, .json extension) may
/// set "name" and "mos_range"; otherwise the name is the file stem and the
/// range is the observed min/max.
DatasetManifest load_manifest(const std::filesystem::path& csv_path,
                              const ManifestLoadOptions& options = {});

/// Writes manifest + sidecar in the load_manifest format.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& csv_path);

/// Native score -> the common [0, 100] training scale, and back.
inline double to_training_scale(double mos, const std::array<double, 2>& range) {
  if (!(range[1] > range[0])) throw DomainError("mos_range must satisfy lo < hi");
  return (mos - range[0]) / (range[1] - range[0]) * 100.0;
}
inline double to_native_scale(double q, const std::array<double, 2>& range) {
  if (!(range[1] > range[0])) throw DomainError("mos_range must satisfy lo < hi");
  return range[0] + q / 100.0 * (range[1] - range[0]);
}

struct SplitPlan {
  int run_index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train, val, test;
};

/// One fresh 60/20/20 shuffle per run, seeded base_seed + run_index over the
/// sorted id set (manifest row order does not matter). Validation and test get
/// round(0.2 n) entries each, training the remainder.
std::vector<SplitPlan> make_splits(const DatasetManifest& manifest,
                                   std::uint64_t base_seed, int runs = 10);

/// Audit serialization of split plans.
void write_splits(const std::filesystem::path& path, const std::vector<SplitPlan>& plans);
std::vector<SplitPlan> read_splits(const std::filesystem::path& path);

}  // namespace vqa

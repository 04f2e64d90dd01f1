#pragma once

#include <filesystem>
#include <string>

#include "vqa/errors.hpp"
#include "vqa/types.hpp"

namespace vqa {

/// One video's pooled frame features: frame_count x dim, 32-bit floats.
/// `dim` is twice the backbone channel count (mean and std halves).
struct FeatureCacheRecord {
  std::string source_id;
  std::string backbone_tag;
  std::string extraction_version;
  RowMajorMatrixX<float> payload;

  Index frame_count() const { return payload.rows(); }
  Index dim() const { return payload.cols(); }
};

/// On-disk feature store, one directory per backbone tag:
///
///   <root>/<backbone_tag>/<source_id>.bin    raw row-major f32, little endian
///   <root>/<backbone_tag>/<source_id>.json   header: source_id, T, dim,
///                                            backbone_tag, extraction_version,
///                                            dtype ("f32le")
///
/// Writes go through a temporary file plus rename, so concurrent extractors
/// never expose a half-written record. Records are treated as immutable once
/// stored. Source ids double as file names and are restricted to
/// [A-Za-z0-9._-].
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  /// Validates and writes a record; returns the payload path.
  std::filesystem::path store(const FeatureCacheRecord& record) const;

  /// Loads a record, checking the header against the payload and the requested
  /// tag. Missing record -> NotFoundError; inconsistent record -> CorruptionError.
  FeatureCacheRecord load(const std::string& backbone_tag,
                          const std::string& source_id) const;

  bool contains(const std::string& backbone_tag, const std::string& source_id) const;

  std::filesystem::path payload_path(const std::string& backbone_tag,
                                     const std::string& source_id) const;
  std::filesystem::path header_path(const std::string& backbone_tag,
                                    const std::string& source_id) const;

 private:
  std::filesystem::path root_;
};

/// True iff the id is safe to use as a cache file name.
bool valid_source_id(const std::string& id);

}  // namespace vqa

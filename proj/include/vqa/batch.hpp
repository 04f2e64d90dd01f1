#pragma once

#include <vector>

#include "vqa/feature_cache.hpp"

// Mini-batch assembly for variable-length feature sequences. Sequences are
// stacked into one zero-padded block; the true lengths ride along and every
// consumer slices by them, so padded rows never reach pooling or the loss.

namespace vqa {

struct FeatureBatch {
  RowMajorMatrixX<float> padded;  ///< (size * max_frames) x dim, zero padded
  std::vector<Index> lengths;     ///< true frame counts, batch order
  Index max_frames = 0;
  Index dim = 0;

  Index size() const { return static_cast<Index>(lengths.size()); }

  /// Sequence b without its padding.
  auto sequence(Index b) const {
    return padded.middleRows(b * max_frames, lengths[static_cast<std::size_t>(b)]);
  }
};

inline FeatureBatch batch_assemble(const std::vector<const FeatureCacheRecord*>& records) {
  if (records.empty()) throw ValidationError("batch_assemble: empty batch");
  FeatureBatch batch;
  batch.dim = records.front()->dim();
  for (const auto* r : records) {
    if (r->dim() != batch.dim)
      throw ShapeError("batch_assemble: feature dim " + std::to_string(r->dim()) +
                       " of '" + r->source_id + "' does not match batch dim " +
                       std::to_string(batch.dim));
    batch.lengths.push_back(r->frame_count());
    batch.max_frames = std::max(batch.max_frames, r->frame_count());
  }
  batch.padded.setZero(batch.size() * batch.max_frames, batch.dim);
  for (Index b = 0; b < batch.size(); ++b)
    batch.padded.middleRows(b * batch.max_frames, batch.lengths[static_cast<std::size_t>(b)]) =
        records[static_cast<std::size_t>(b)]->payload;
  return batch;
}

inline FeatureBatch batch_assemble(const std::vector<FeatureCacheRecord>& records) {
  std::vector<const FeatureCacheRecord*> refs;
  refs.reserve(records.size());
  for (const auto& r : records) refs.push_back(&r);
  return batch_assemble(refs);
}

}  // namespace vqa

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "vqa/dataset.hpp"
#include "vqa/feature_cache.hpp"
#include "vqa/model.hpp"
#include "vqa/pooling.hpp"

// Desk-scale fixture datasets with known ground truth. Both generators plant
// a linear frame-score readout and compute the stored MOS by pushing the
// *actually stored* inputs (32-bit features, or decoded frames) through that
// readout and the hysteresis pooling — the generator is its own oracle, so a
// correct scoring path reproduces the stored MOS at noise zero.

namespace vqa {

/// Feature-level fixture: cached feature records, no video files.
struct SyntheticSpec {
  Index videos = 60;
  Index frames = 30;
  Index dim = 16;
  double noise = 0.0;  ///< std of additive MOS noise, native units
  std::uint64_t seed = 1;
  PoolingConfig<double> pooling{};
  std::array<double, 2> mos_range{0.0, 100.0};

  void validate() const;
};

/// Video-backed fixture: tiny two-level synthetic clips whose stub-backbone
/// features encode the latent quality in the first channel's spatial mean.
struct SyntheticVideoSpec {
  Index videos = 3;
  Index frames = 30;
  int height = 24;
  int width = 32;  ///< even, so the two pixel levels appear in equal counts
  double frame_rate = 30.0;
  double noise = 0.0;
  std::uint64_t seed = 1;
  PoolingConfig<double> pooling{};
  std::array<double, 2> mos_range{0.0, 100.0};

  void validate() const;
};

struct SyntheticDataset {
  DatasetManifest manifest;                 ///< mos includes noise, clamped to range
  std::vector<FeatureCacheRecord> records;  ///< one per video, manifest order
  VectorX<double> clean_mos;                ///< native scale, before noise
  VectorX<double> head_w;                   ///< planted linear readout over features
  double head_b = 0;
  QualityModelParams<double> planted;       ///< full model realizing the readout
  PoolingConfig<double> pooling;            ///< pooling the stored MOS went through
};

/// Builds a full recurrent parameter set whose frame scores equal
/// head_w . features + head_b to ~1e-8: identity reduction, a one-unit GRU
/// driven into pass-through (update gate bias -40), and a tanh kept in its
/// linear range by scaling the readout down and the head back up.
QualityModelParams<double> planted_model(const VectorX<double>& head_w, double head_b);

SyntheticDataset synthesize_dataset(const SyntheticSpec& spec);

/// Writes one .rawvid per video under `video_dir` (created if needed); the
/// manifest's video paths point at them. Records hold the stub-backbone
/// features each clip extracts to.
SyntheticDataset synthesize_video_dataset(const SyntheticVideoSpec& spec,
                                          const std::filesystem::path& video_dir);

/// Writes the manifest CSV + sidecar, and the feature records into `cache`
/// when one is given.
void write_synthetic_dataset(const SyntheticDataset& dataset,
                             const std::filesystem::path& csv_path,
                             const FeatureCache* cache = nullptr);

}  // namespace vqa

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "vqa/model.hpp"
#include "vqa/pooling.hpp"

// Trained-model snapshots: a JSON manifest (shape, provenance, selection
// stats) next to the raw weight vector. `save_checkpoint("x", ck)` writes
// x.json + x.bin.

namespace vqa {

struct Checkpoint {
  std::string model_kind = "recurrent";  ///< "recurrent" or "affine"
  std::string backbone_tag;
  std::string dataset_name;
  std::array<double, 2> mos_range{0.0, 100.0};
  PoolingConfig<double> pooling{};
  bool drop_std_half = false;  ///< trained on the mean half of the features only
  std::uint64_t seed = 0;
  int epoch = -1;
  double val_srocc = 0.0;
  Index input_dim = 0;
  Index reduced_dim = 0;
  Index hidden_dim = 0;  ///< 0 for the affine model
  VectorX<double> weights;

  void validate() const;
};

void save_checkpoint(const std::filesystem::path& prefix, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& prefix);

/// Reassembled parameters. Throws ConfigError when the checkpoint holds the
/// other model kind.
QualityModelParams<double> checkpoint_model(const Checkpoint& checkpoint);
AffineModelParams<double> checkpoint_affine(const Checkpoint& checkpoint);

}  // namespace vqa

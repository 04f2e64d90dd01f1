#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vqa/checkpoint.hpp"
#include "vqa/dataset.hpp"
#include "vqa/feature_cache.hpp"
#include "vqa/report.hpp"

// End-to-end training: L1 loss between the pooled sequence score and the
// rescaled MOS, adaptive-moment updates over shuffled mini-batches, model
// selection by validation SROCC, and the repeated-split protocol on top.

namespace vqa {

struct TrainConfig {
  double learning_rate = 1e-5;
  Index batch_size = 16;
  int max_epochs = 200;
  int patience = 50;        ///< epochs without a validation improvement
  double clip_norm = 10.0;  ///< global gradient-norm ceiling
  std::uint64_t seed = 0;   ///< drives splits, init and batch order
  PoolingConfig<double> pooling{};
  Index reduced_dim = 128;
  Index hidden_dim = 32;
  std::string model_kind = "recurrent";  ///< "recurrent" or "affine" (no GRU)
  bool drop_std_half = false;  ///< ablation: mean half of the features only

  void validate() const;
  /// Short label for reports, e.g. "recurrent-min" or "affine-average-meanonly".
  std::string label() const;
};

/// Feature lookup by source id. References stay valid for the source's
/// lifetime.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual const FeatureCacheRecord& get(const std::string& id) = 0;
  virtual const std::string& backbone_tag() const = 0;
};

/// Lazy-loading, memoizing view of an on-disk cache. A missing record names
/// the extract step that would create it.
class CacheFeatureSource : public FeatureSource {
 public:
  CacheFeatureSource(FeatureCache cache, std::string backbone_tag);
  const FeatureCacheRecord& get(const std::string& id) override;
  const std::string& backbone_tag() const override { return tag_; }

 private:
  FeatureCache cache_;
  std::string tag_;
  std::map<std::string, FeatureCacheRecord> loaded_;
};

class MemoryFeatureSource : public FeatureSource {
 public:
  explicit MemoryFeatureSource(const std::vector<FeatureCacheRecord>& records);
  const FeatureCacheRecord& get(const std::string& id) override;
  const std::string& backbone_tag() const override { return tag_; }

 private:
  std::map<std::string, FeatureCacheRecord> records_;
  std::string tag_;
};

struct EpochLog {
  int epoch = 0;          ///< 1-based
  double train_loss = 0;  ///< mean over batches of the batch L1 loss
  double val_srocc = 0;   ///< NaN when undefined (constant predictions)
  Index clip_events = 0;  ///< batches whose gradient hit the norm ceiling
};

struct RunResult {
  int run_index = 0;
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  Checkpoint best;
  RunMetrics test;  ///< metrics of the best checkpoint on the test split
  Index clip_events = 0;
};

RunResult train_one_run(const DatasetManifest& manifest, const SplitPlan& split,
                        FeatureSource& features, const TrainConfig& cfg);

/// Splits from make_splits(manifest, cfg.seed), one train_one_run per plan.
/// A failed run lands in the report as an incomplete row carrying the error;
/// `results` (optional) collects the successful runs' full results.
EvalReport run_protocol(const DatasetManifest& manifest, FeatureSource& features,
                        const TrainConfig& cfg, int runs = 10,
                        std::vector<RunResult>* results = nullptr);

/// Line-delimited JSON, one record per epoch.
void write_train_log(const std::filesystem::path& path, const RunResult& result);

}  // namespace vqa

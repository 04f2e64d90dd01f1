#include "vqa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <utility>

#include <json.hpp>

#include "vqa/batch.hpp"
#include "vqa/metrics.hpp"
#include "vqa/model.hpp"
#include "vqa/optim.hpp"

namespace vqa {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    throw ConfigError("train: learning rate must be finite and >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be positive");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be positive");
  if (patience < 1) throw ConfigError("train: patience must be positive");
  if (!(clip_norm > 0)) throw ConfigError("train: clip_norm must be positive");
  if (reduced_dim < 1) throw ConfigError("train: reduced_dim must be positive");
  if (hidden_dim < 1) throw ConfigError("train: hidden_dim must be positive");
  if (model_kind != "recurrent" && model_kind != "affine")
    throw ConfigError("train: model kind must be 'recurrent' or 'affine', got '" +
                      model_kind + "'");
  pooling.validate();
}

std::string TrainConfig::label() const {
  std::string out = model_kind;
  out += '-';
  out += to_string(pooling.memory);
  if (drop_std_half) out += "-meanonly";
  return out;
}

CacheFeatureSource::CacheFeatureSource(FeatureCache cache, std::string backbone_tag)
    : cache_(std::move(cache)), tag_(std::move(backbone_tag)) {}

const FeatureCacheRecord& CacheFeatureSource::get(const std::string& id) {
  auto it = loaded_.find(id);
  if (it != loaded_.end()) return it->second;
  try {
    return loaded_.emplace(id, cache_.load(tag_, id)).first->second;
  } catch (const NotFoundError&) {
    throw NotFoundError("no cached features for '" + id + "' under backbone '" +
                        tag_ + "' in " + cache_.root().string() +
                        "; extract features for the manifest first");
  }
}

MemoryFeatureSource::MemoryFeatureSource(const std::vector<FeatureCacheRecord>& records) {
  if (records.empty()) throw ValidationError("feature source: no records");
  tag_ = records.front().backbone_tag;
  for (const auto& r : records) {
    if (r.backbone_tag != tag_)
      throw ValidationError("feature source: mixed backbone tags '" + tag_ +
                            "' and '" + r.backbone_tag + "'");
    if (!records_.emplace(r.source_id, r).second)
      throw ValidationError("feature source: duplicate source id '" + r.source_id + "'");
  }
}

const FeatureCacheRecord& MemoryFeatureSource::get(const std::string& id) {
  auto it = records_.find(id);
  if (it == records_.end())
    throw NotFoundError("feature source: no record for '" + id + "'");
  return it->second;
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x6a09e667f3bcc909ULL;

double sign(double x) { return (x > 0) - (x < 0); }

// Double-precision model input for one cached sequence, optionally keeping
// only the mean half of each feature row.
MatrixX<double> to_input(const FeatureCacheRecord& record, bool drop_std_half) {
  if (!drop_std_half) return record.payload.cast<double>();
  return record.payload.leftCols(record.dim() / 2).cast<double>();
}

MatrixX<double> to_input(const FeatureBatch& batch, Index b, bool drop_std_half) {
  auto seq = batch.sequence(b);
  if (!drop_std_half) return seq.cast<double>();
  return seq.leftCols(batch.dim / 2).cast<double>();
}

std::string norm_summary(const VectorX<double>& theta, const VectorX<double>& grad) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "|theta| = %.6g, |grad| = %.6g", theta.norm(),
                grad.norm());
  return buf;
}

}  // namespace

RunResult train_one_run(const DatasetManifest& manifest, const SplitPlan& split,
                        FeatureSource& features, const TrainConfig& cfg) {
  cfg.validate();
  if (split.train.empty() || split.val.empty() || split.test.empty())
    throw ValidationError("train: split run " + std::to_string(split.run_index) +
                          " has an empty part");

  std::map<std::string, double> native_mos;
  for (const auto& e : manifest.entries) native_mos[e.source_id] = e.mos;
  auto target_of = [&](const std::string& id) {
    auto it = native_mos.find(id);
    if (it == native_mos.end())
      throw ValidationError("train: split names '" + id +
                            "' which the manifest lacks");
    return to_training_scale(it->second, manifest.mos_range);
  };

  // Pull every referenced sequence once and pin the feature dimension.
  Index raw_dim = -1;
  auto fetch = [&](const std::string& id) -> const FeatureCacheRecord& {
    const FeatureCacheRecord& r = features.get(id);
    if (raw_dim < 0)
      raw_dim = r.dim();
    else if (r.dim() != raw_dim)
      throw ShapeError("train: feature dim of '" + id + "' (" +
                       std::to_string(r.dim()) + ") differs from " +
                       std::to_string(raw_dim));
    return r;
  };

  std::vector<const FeatureCacheRecord*> train_records;
  std::vector<double> train_y;
  train_records.reserve(split.train.size());
  for (const auto& id : split.train) {
    train_records.push_back(&fetch(id));
    train_y.push_back(target_of(id));
  }
  for (const auto& id : split.val) fetch(id);
  for (const auto& id : split.test) fetch(id);
  if (cfg.drop_std_half && raw_dim % 2 != 0)
    throw ValidationError("train: cannot drop the std half of odd-dim features");
  const Index input_dim = cfg.drop_std_half ? raw_dim / 2 : raw_dim;

  const std::uint64_t run_seed =
      cfg.seed + static_cast<std::uint64_t>(split.run_index);
  const bool recurrent = cfg.model_kind == "recurrent";

  QualityModelParams<double> qmodel;
  AffineModelParams<double> amodel;
  VectorX<double> theta;
  if (recurrent) {
    qmodel = init_params<double>(input_dim, cfg.reduced_dim, cfg.hidden_dim, run_seed);
    theta = flatten(qmodel);
  } else {
    amodel = init_affine_params<double>(input_dim, cfg.reduced_dim, run_seed);
    theta = affine_flatten(amodel);
  }
  auto load_theta = [&] {
    if (recurrent)
      unflatten_into(theta, qmodel);
    else
      affine_unflatten_into(theta, amodel);
  };
  auto quality_of = [&](const MatrixX<double>& input) {
    return recurrent ? forward(input, qmodel, cfg.pooling).quality
                     : affine_forward(input, amodel).quality;
  };

  AdamConfig<double> adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  AdamOptimizer<double> adam(theta.size(), adam_cfg);

  std::mt19937_64 shuffle_rng(run_seed ^ kShuffleSalt);
  std::vector<std::size_t> order(train_records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  RunResult result;
  result.run_index = split.run_index;

  double best_val = -std::numeric_limits<double>::infinity();
  VectorX<double> best_theta = theta;
  int best_epoch = -1;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng() % (i + 1)]);

    double loss_sum = 0.0;
    Index batches = 0;
    Index clip_events = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(cfg.batch_size), order.size());
      std::vector<const FeatureCacheRecord*> chunk;
      std::vector<double> targets;
      chunk.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        chunk.push_back(train_records[order[k]]);
        targets.push_back(train_y[order[k]]);
      }
      const FeatureBatch batch = batch_assemble(chunk);

      load_theta();
      VectorX<double> grad = VectorX<double>::Zero(theta.size());
      double batch_loss = 0.0;
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      try {
        for (Index b = 0; b < batch.size(); ++b) {
          const MatrixX<double> input = to_input(batch, b, cfg.drop_std_half);
          double quality;
          // The score gradient is linear in the upstream factor, so run the
          // backward pass with 1 and scale by the loss derivative afterwards.
          if (recurrent) {
            auto bp = forward_backward(input, qmodel, cfg.pooling, 1.0);
            quality = bp.forward.quality;
            const double coeff = inv_b * sign(quality - targets[b]);
            if (coeff != 0) grad += coeff * flatten(bp.grads);
          } else {
            auto bp = affine_forward_backward(input, amodel, 1.0);
            quality = bp.forward.quality;
            const double coeff = inv_b * sign(quality - targets[b]);
            if (coeff != 0) grad += coeff * affine_flatten(bp.grads);
          }
          batch_loss += inv_b * std::abs(quality - targets[b]);
        }
      } catch (const NumericError& e) {
        throw TrainError("run " + std::to_string(split.run_index) + ", epoch " +
                         std::to_string(epoch) + ", batch " +
                         std::to_string(batches) + ": " + e.what() + " (" +
                         norm_summary(theta, grad) + ")");
      }
      if (!std::isfinite(batch_loss) || !grad.allFinite())
        throw TrainError("run " + std::to_string(split.run_index) + ", epoch " +
                         std::to_string(epoch) + ", batch " +
                         std::to_string(batches) + ": non-finite loss or gradient (" +
                         norm_summary(theta, grad) + ")");
      if (clip_global_norm(grad, cfg.clip_norm)) ++clip_events;
      adam.step(theta, grad);
      loss_sum += batch_loss;
      ++batches;
    }

    load_theta();
    VectorX<double> val_pred(static_cast<Index>(split.val.size()));
    VectorX<double> val_mos(static_cast<Index>(split.val.size()));
    for (std::size_t i = 0; i < split.val.size(); ++i) {
      const auto& id = split.val[i];
      val_pred[static_cast<Index>(i)] =
          quality_of(to_input(features.get(id), cfg.drop_std_half));
      val_mos[static_cast<Index>(i)] = target_of(id);
    }
    double val_srocc;
    try {
      val_srocc = srocc(val_pred, val_mos);
    } catch (const UndefinedCorrelationError&) {
      val_srocc = std::numeric_limits<double>::quiet_NaN();
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches);
    log.val_srocc = val_srocc;
    log.clip_events = clip_events;
    result.epochs.push_back(log);
    result.clip_events += clip_events;

    if (std::isfinite(val_srocc) && val_srocc > best_val) {
      best_val = val_srocc;
      best_epoch = epoch;
      best_theta = theta;
    }
    if (epoch - std::max(best_epoch, 0) >= cfg.patience) break;
  }

  if (best_epoch < 0)
    throw TrainError("run " + std::to_string(split.run_index) +
                     ": validation SROCC was undefined in every epoch");

  theta = best_theta;
  load_theta();
  result.best_epoch = best_epoch;

  Checkpoint ck;
  ck.model_kind = cfg.model_kind;
  ck.backbone_tag = features.backbone_tag();
  ck.dataset_name = manifest.name;
  ck.mos_range = manifest.mos_range;
  ck.pooling = cfg.pooling;
  ck.drop_std_half = cfg.drop_std_half;
  ck.seed = run_seed;
  ck.epoch = best_epoch;
  ck.val_srocc = best_val;
  ck.input_dim = input_dim;
  ck.reduced_dim = cfg.reduced_dim;
  ck.hidden_dim = recurrent ? cfg.hidden_dim : 0;
  ck.weights = theta;
  ck.validate();
  result.best = std::move(ck);

  VectorX<double> test_pred(static_cast<Index>(split.test.size()));
  VectorX<double> test_mos(static_cast<Index>(split.test.size()));
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    const auto& id = split.test[i];
    test_pred[static_cast<Index>(i)] = to_native_scale(
        quality_of(to_input(features.get(id), cfg.drop_std_half)), manifest.mos_range);
    test_mos[static_cast<Index>(i)] = native_mos.at(id);
  }

  RunMetrics m;
  m.run_index = split.run_index;
  m.srocc = srocc(test_pred, test_mos);
  m.krocc = krocc(test_pred, test_mos);
  const auto fit = plcc_rmse(test_pred, test_mos, true);
  m.plcc = fit.first;
  m.rmse = fit.second;
  m.best_epoch = best_epoch;
  m.val_srocc = best_val;
  m.complete = true;
  result.test = m;
  return result;
}

EvalReport run_protocol(const DatasetManifest& manifest, FeatureSource& features,
                        const TrainConfig& cfg, int runs,
                        std::vector<RunResult>* results) {
  cfg.validate();
  const std::vector<SplitPlan> plans = make_splits(manifest, cfg.seed, runs);
  std::vector<RunMetrics> rows;
  rows.reserve(plans.size());
  for (const SplitPlan& plan : plans) {
    try {
      RunResult run = train_one_run(manifest, plan, features, cfg);
      rows.push_back(run.test);
      if (results) results->push_back(std::move(run));
    } catch (const Error& e) {
      RunMetrics failed;
      failed.run_index = plan.run_index;
      failed.srocc = failed.krocc = failed.plcc = failed.rmse =
          std::numeric_limits<double>::quiet_NaN();
      failed.val_srocc = std::numeric_limits<double>::quiet_NaN();
      failed.complete = false;
      failed.error = e.what();
      rows.push_back(std::move(failed));
    }
  }
  return aggregate_runs(manifest.name, cfg.label(), rows);
}

void write_train_log(const std::filesystem::path& path, const RunResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write train log " + path.string());
  for (const EpochLog& log : result.epochs) {
    nlohmann::json row{{"epoch", log.epoch},
                       {"loss", log.train_loss},
                       {"clip_events", log.clip_events}};
    if (std::isfinite(log.val_srocc))
      row["val_srocc"] = log.val_srocc;
    else
      row["val_srocc"] = nullptr;
    out << row.dump() << '\n';
  }
  if (!out.good()) throw IoError("short write to train log " + path.string());
}

}  // namespace vqa

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqa/checkpoint.hpp"
#include "vqa/dataset.hpp"
#include "vqa/feature_cache.hpp"
#include "vqa/features.hpp"
#include "vqa/metrics.hpp"
#include "vqa/model.hpp"
#include "vqa/plot.hpp"
#include "vqa/report.hpp"
#include "vqa/synthetic.hpp"
#include "vqa/train.hpp"
#include "vqa/version.hpp"
#include "vqa/video.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// 0 success; distinct codes per failure class so scripts can branch.
constexpr int kOk = 0;
constexpr int kValidationExit = 2;
constexpr int kExtractionExit = 3;
constexpr int kTrainingExit = 4;
constexpr int kIoExit = 5;

// ---------------------------------------------------------------------------
// config file + flag merging (flags win)

struct ConfigFile {
  json doc = json::object();
  std::string raw;
  fs::path path;

  void load(const fs::path& p) {
    path = p;
    std::ifstream in(p, std::ios::binary);
    if (!in) throw vqa::NotFoundError("config file " + p.string() + " is unreadable");
    raw.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    try {
      doc = json::parse(raw);
    } catch (const json::exception& e) {
      throw vqa::ConfigError("config " + p.string() + ": " + e.what());
    }
    if (!doc.is_object())
      throw vqa::ConfigError("config " + p.string() + ": top level must be an object");
  }

  const json* find(std::initializer_list<const char*> keys) const {
    const json* cur = &doc;
    for (const char* key : keys) {
      if (!cur->is_object() || !cur->contains(key)) return nullptr;
      cur = &(*cur)[key];
    }
    return cur;
  }

  template <class T>
  void take(std::initializer_list<const char*> keys, T& out,
            const CLI::Option* opt) const {
    if (opt != nullptr && opt->count() > 0) return;
    const json* v = find(keys);
    if (v == nullptr) return;
    std::string label;
    for (const char* key : keys) label += label.empty() ? key : std::string(".") + key;
    try {
      out = v->get<T>();
    } catch (const json::exception& e) {
      throw vqa::ConfigError("config key '" + label + "': " + e.what());
    }
  }

  void take_path(std::initializer_list<const char*> keys, fs::path& out,
                 const CLI::Option* opt) const {
    std::string s;
    take(keys, s, opt);
    if (!s.empty()) out = s;
  }
};

void require_value(bool present, const std::string& what) {
  if (!present)
    throw vqa::ConfigError(what + " is required (flag or config key)");
}

// ---------------------------------------------------------------------------
// provenance: every command echoes its effective settings; a config file is
// copied byte for byte next to them

void write_invocation(const fs::path& out_dir, const std::string& command,
                      const json& effective, const ConfigFile& config) {
  fs::create_directories(out_dir);
  json doc{{"command", command},
           {"toolkit_version", vqa::version()},
           {"effective", effective}};
  if (!config.raw.empty()) {
    std::ofstream echo(out_dir / "config.echo.json", std::ios::binary | std::ios::trunc);
    echo.write(config.raw.data(), static_cast<std::streamsize>(config.raw.size()));
    if (!echo.good())
      throw vqa::IoError("cannot write " + (out_dir / "config.echo.json").string());
    doc["config_file"] = config.path.string();
    doc["config_echo"] = "config.echo.json";
  }
  std::ofstream meta(out_dir / "manifest.json", std::ios::trunc);
  meta << doc.dump(2) << '\n';
  if (!meta.good())
    throw vqa::IoError("cannot write " + (out_dir / "manifest.json").string());
}

json pooling_json(const vqa::PoolingConfig<double>& p) {
  return {{"tau", p.tau}, {"gamma", p.gamma}, {"memory", to_string(p.memory)}};
}

json train_json(const vqa::TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"patience", cfg.patience},
          {"clip_norm", cfg.clip_norm},
          {"seed", cfg.seed},
          {"pooling", pooling_json(cfg.pooling)},
          {"reduced_dim", cfg.reduced_dim},
          {"hidden_dim", cfg.hidden_dim},
          {"model_kind", cfg.model_kind},
          {"drop_std_half", cfg.drop_std_half}};
}

// ---------------------------------------------------------------------------
// shared helpers

// `--backbone` names a backbone declaration file for commands that embed
// frames; commands that only read the cache also accept a bare tag.
std::string backbone_tag_of(const fs::path& backbone) {
  if (fs::exists(backbone)) return vqa::BackboneManifest::load(backbone).tag;
  return backbone.string();
}

// A checkpoint plus its reassembled parameters, ready to score sequences.
struct LoadedModel {
  vqa::Checkpoint ck;
  vqa::QualityModelParams<double> recurrent_params;
  vqa::AffineModelParams<double> affine_params;
  bool recurrent = true;

  explicit LoadedModel(vqa::Checkpoint c) : ck(std::move(c)) {
    recurrent = ck.model_kind == "recurrent";
    if (recurrent)
      recurrent_params = vqa::checkpoint_model(ck);
    else
      affine_params = vqa::checkpoint_affine(ck);
  }

  vqa::MatrixX<double> input(const vqa::FeatureCacheRecord& record) const {
    const vqa::Index expect = ck.drop_std_half ? 2 * ck.input_dim : ck.input_dim;
    if (record.dim() != expect)
      throw vqa::ConfigError("checkpoint expects " + std::to_string(expect) +
                             "-dim features but '" + record.source_id + "' has " +
                             std::to_string(record.dim()));
    if (ck.drop_std_half)
      return record.payload.leftCols(ck.input_dim).cast<double>();
    return record.payload.cast<double>();
  }

  double predict_native(const vqa::FeatureCacheRecord& record) const {
    const vqa::MatrixX<double> f = input(record);
    const double q = recurrent
                         ? vqa::forward(f, recurrent_params, ck.pooling).quality
                         : vqa::affine_forward(f, affine_params).quality;
    return vqa::to_native_scale(q, ck.mos_range);
  }
};

std::string model_label(const vqa::Checkpoint& ck) {
  std::string out = ck.model_kind;
  out += '-';
  out += to_string(ck.pooling.memory);
  if (ck.drop_std_half) out += "-meanonly";
  return out;
}

vqa::RunMetrics test_metrics(const LoadedModel& model, vqa::FeatureSource& features,
                             const vqa::DatasetManifest& manifest,
                             const std::vector<std::string>& ids, int run_index) {
  std::map<std::string, double> native;
  for (const auto& e : manifest.entries) native[e.source_id] = e.mos;
  vqa::VectorX<double> pred(static_cast<vqa::Index>(ids.size()));
  vqa::VectorX<double> mos(static_cast<vqa::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = native.find(ids[i]);
    if (it == native.end())
      throw vqa::ValidationError("split names '" + ids[i] + "' which the manifest lacks");
    pred[static_cast<vqa::Index>(i)] = model.predict_native(features.get(ids[i]));
    mos[static_cast<vqa::Index>(i)] = it->second;
  }
  vqa::RunMetrics m;
  m.run_index = run_index;
  m.srocc = vqa::srocc(pred, mos);
  m.krocc = vqa::krocc(pred, mos);
  const auto fit = vqa::plcc_rmse(pred, mos, true);
  m.plcc = fit.first;
  m.rmse = fit.second;
  m.best_epoch = model.ck.epoch;
  m.val_srocc = model.ck.val_srocc;
  m.complete = true;
  return m;
}

void print_report_line(const vqa::EvalReport& report) {
  std::printf("dataset=%s model=%s runs=%zu complete=%lld", report.dataset.c_str(),
              report.model.c_str(), report.runs.size(),
              static_cast<long long>(report.complete_runs()));
  if (report.complete_runs() > 0)
    std::printf(" srocc=%.4f+-%.4f krocc=%.4f plcc=%.4f rmse=%.4f",
                report.srocc.mean, report.srocc.stddev, report.krocc.mean,
                report.plcc.mean, report.rmse.mean);
  std::printf("\n");
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  fs::path out;
  bool video_backed = false;
  vqa::SyntheticSpec feature_spec;
  vqa::SyntheticVideoSpec video_spec;
};

int cmd_synth(const SynthArgs& args, const ConfigFile& config) {
  vqa::SyntheticDataset data;
  fs::create_directories(args.out);
  const fs::path cache_dir = args.out / "cache";
  json effective{{"out", args.out.string()}, {"video_backed", args.video_backed}};
  if (args.video_backed) {
    data = vqa::synthesize_video_dataset(args.video_spec, args.out / "videos");
    // the manifest loader resolves relative paths against the CSV directory
    for (auto& entry : data.manifest.entries)
      entry.video_path = fs::path("videos") / entry.video_path.filename();
    effective["synth"] = {{"videos", args.video_spec.videos},
                          {"frames", args.video_spec.frames},
                          {"height", args.video_spec.height},
                          {"width", args.video_spec.width},
                          {"noise", args.video_spec.noise},
                          {"seed", args.video_spec.seed}};
  } else {
    data = vqa::synthesize_dataset(args.feature_spec);
    effective["synth"] = {{"videos", args.feature_spec.videos},
                          {"frames", args.feature_spec.frames},
                          {"dim", args.feature_spec.dim},
                          {"noise", args.feature_spec.noise},
                          {"seed", args.feature_spec.seed}};
  }
  vqa::FeatureCache cache(cache_dir);
  vqa::write_synthetic_dataset(data, args.out / "dataset.csv", &cache);

  // the generator's own parameters, stored like any trained model
  vqa::Checkpoint planted;
  planted.model_kind = "recurrent";
  planted.backbone_tag = data.records.front().backbone_tag;
  planted.dataset_name = data.manifest.name;
  planted.mos_range = data.manifest.mos_range;
  planted.pooling = data.pooling;
  planted.seed = args.video_backed ? args.video_spec.seed : args.feature_spec.seed;
  planted.epoch = 0;
  planted.val_srocc = 0.0;
  planted.input_dim = data.planted.input_dim();
  planted.reduced_dim = data.planted.reduced_dim();
  planted.hidden_dim = data.planted.hidden_dim();
  planted.weights = vqa::flatten(data.planted);
  vqa::save_checkpoint(args.out / "planted", planted);

  write_invocation(args.out, "synth", effective, config);
  std::printf("synthesized %zu videos into %s (features cached under %s)\n",
              data.manifest.entries.size(), args.out.string().c_str(),
              cache_dir.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractArgs {
  fs::path manifest;
  fs::path backbone;
  fs::path cache_dir;
  fs::path out;  ///< optional provenance directory
  int jobs = 0;  ///< 0: hardware concurrency
};

int cmd_extract(const ExtractArgs& args, const ConfigFile& config) {
  const vqa::DatasetManifest manifest = vqa::load_manifest(args.manifest);
  const vqa::BackboneManifest decl = vqa::BackboneManifest::load(args.backbone);
  const std::unique_ptr<vqa::Backbone> backbone = vqa::make_backbone(decl);
  vqa::FeatureCache cache(args.cache_dir);

  unsigned jobs = args.jobs > 0 ? static_cast<unsigned>(args.jobs)
                                : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(manifest.entries.size()));

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> fresh{0}, reused{0};
  std::mutex failures_mutex;
  std::vector<std::pair<std::string, std::string>> failures;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= manifest.entries.size()) return;
      const vqa::DatasetEntry& entry = manifest.entries[i];
      try {
        if (entry.video_path.empty())
          throw vqa::ValidationError("manifest row has no video path");
        if (cache.contains(backbone->tag(), entry.source_id)) {
          reused.fetch_add(1);
          continue;
        }
        const std::unique_ptr<vqa::VideoSource> video =
            vqa::open_video(entry.video_path);
        vqa::FeatureCacheRecord record =
            vqa::extract_video_features(*video, *backbone);
        record.source_id = entry.source_id;  // cache key is the manifest id
        cache.store(record);
        fresh.fetch_add(1);
      } catch (const vqa::Error& e) {
        std::lock_guard<std::mutex> lock(failures_mutex);
        failures.emplace_back(entry.source_id, e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::sort(failures.begin(), failures.end());
  for (const auto& [id, reason] : failures)
    std::fprintf(stderr, "FAIL %s: %s\n", id.c_str(), reason.c_str());
  std::printf("extracted %zu new, reused %zu cached, failed %zu of %zu videos\n",
              fresh.load(), reused.load(), failures.size(), manifest.entries.size());

  if (!args.out.empty()) {
    write_invocation(args.out, "extract",
                     json{{"manifest", args.manifest.string()},
                          {"backbone", decl.tag},
                          {"cache_dir", args.cache_dir.string()},
                          {"jobs", jobs},
                          {"extracted", fresh.load()},
                          {"reused", reused.load()},
                          {"failed", failures.size()}},
                     config);
  }
  return failures.empty() ? kOk : kExtractionExit;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  fs::path manifest;
  fs::path backbone;  ///< declaration file or bare cache tag
  fs::path cache_dir;
  fs::path out;
  int runs = 10;
  vqa::TrainConfig cfg;
};

int cmd_train(const TrainArgs& args, const ConfigFile& config) {
  const vqa::DatasetManifest manifest = vqa::load_manifest(args.manifest);
  const std::string tag = backbone_tag_of(args.backbone);
  vqa::CacheFeatureSource features(vqa::FeatureCache(args.cache_dir), tag);

  write_invocation(args.out, "train",
                   json{{"manifest", args.manifest.string()},
                        {"backbone", tag},
                        {"cache_dir", args.cache_dir.string()},
                        {"out", args.out.string()},
                        {"runs", args.runs},
                        {"train", train_json(args.cfg)}},
                   config);
  vqa::write_splits(args.out / "splits.json",
                    vqa::make_splits(manifest, args.cfg.seed, args.runs));

  std::vector<vqa::RunResult> results;
  const vqa::EvalReport report =
      vqa::run_protocol(manifest, features, args.cfg, args.runs, &results);

  for (const vqa::RunResult& run : results) {
    const fs::path run_dir = args.out / ("run_" + std::to_string(run.run_index));
    fs::create_directories(run_dir);
    vqa::save_checkpoint(run_dir / "checkpoint", run.best);
    vqa::write_train_log(run_dir / "log.jsonl", run);
  }
  vqa::write_report_json(args.out / "report.json", report);
  vqa::write_report_csv(args.out / "report.csv", {report});
  print_report_line(report);
  for (const vqa::RunMetrics& row : report.runs)
    if (!row.complete)
      std::fprintf(stderr, "run %d failed: %s\n", row.run_index, row.error.c_str());
  return report.complete ? kOk : kTrainingExit;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  fs::path manifest;
  fs::path cache_dir;
  fs::path out;
  fs::path train_dir;    ///< re-scores the checkpoints of a training run
  fs::path checkpoint;   ///< or: one checkpoint against the whole manifest
};

int cmd_eval(const EvalArgs& args, const ConfigFile& config) {
  const vqa::DatasetManifest manifest = vqa::load_manifest(args.manifest);
  std::map<std::string, std::unique_ptr<vqa::CacheFeatureSource>> sources;
  auto source_for = [&](const std::string& tag) -> vqa::FeatureSource& {
    auto it = sources.find(tag);
    if (it == sources.end())
      it = sources
               .emplace(tag, std::make_unique<vqa::CacheFeatureSource>(
                                 vqa::FeatureCache(args.cache_dir), tag))
               .first;
    return *it->second;
  };

  vqa::EvalReport report;
  json effective{{"manifest", args.manifest.string()},
                 {"cache_dir", args.cache_dir.string()},
                 {"out", args.out.string()}};

  if (!args.checkpoint.empty()) {
    const LoadedModel model(vqa::load_checkpoint(args.checkpoint));
    std::vector<std::string> ids;
    for (const auto& e : manifest.entries) ids.push_back(e.source_id);
    const vqa::RunMetrics row =
        test_metrics(model, source_for(model.ck.backbone_tag), manifest, ids, 0);
    report = vqa::aggregate_runs(manifest.name, model_label(model.ck), {row});
    effective["checkpoint"] = args.checkpoint.string();
  } else {
    const std::vector<vqa::SplitPlan> plans =
        vqa::read_splits(args.train_dir / "splits.json");
    std::vector<vqa::RunMetrics> rows;
    std::string label = "recurrent-min";
    for (const vqa::SplitPlan& plan : plans) {
      const fs::path prefix =
          args.train_dir / ("run_" + std::to_string(plan.run_index)) / "checkpoint";
      try {
        const LoadedModel model(vqa::load_checkpoint(prefix));
        label = model_label(model.ck);
        rows.push_back(test_metrics(model, source_for(model.ck.backbone_tag),
                                    manifest, plan.test, plan.run_index));
      } catch (const vqa::Error& e) {
        vqa::RunMetrics failed;
        failed.run_index = plan.run_index;
        failed.complete = false;
        failed.error = e.what();
        failed.srocc = failed.krocc = failed.plcc = failed.rmse =
            std::numeric_limits<double>::quiet_NaN();
        failed.val_srocc = std::numeric_limits<double>::quiet_NaN();
        rows.push_back(std::move(failed));
      }
    }
    report = vqa::aggregate_runs(manifest.name, label, rows);
    effective["train_dir"] = args.train_dir.string();
  }

  write_invocation(args.out, "eval", effective, config);
  vqa::write_report_json(args.out / "report.json", report);
  vqa::write_report_csv(args.out / "report.csv", {report});
  print_report_line(report);
  return report.complete ? kOk : kTrainingExit;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  fs::path video;
  fs::path checkpoint;
  fs::path backbone;
  fs::path curve;  ///< optional per-frame CSV
};

int cmd_score(const ScoreArgs& args) {
  const LoadedModel model(vqa::load_checkpoint(args.checkpoint));
  const vqa::BackboneManifest decl = vqa::BackboneManifest::load(args.backbone);
  if (decl.tag != model.ck.backbone_tag)
    throw vqa::ConfigError("checkpoint was trained on '" + model.ck.backbone_tag +
                           "' features but the backbone declares '" + decl.tag + "'");
  const std::unique_ptr<vqa::Backbone> backbone = vqa::make_backbone(decl);

  const std::unique_ptr<vqa::VideoSource> video = vqa::open_video(args.video);
  const vqa::FeatureCacheRecord record =
      vqa::extract_video_features(*video, *backbone);
  const vqa::MatrixX<double> input = model.input(record);

  vqa::VectorX<double> frame_scores, approx;
  double quality;
  if (model.recurrent) {
    const auto result = vqa::forward(input, model.recurrent_params, model.ck.pooling);
    quality = result.quality;
    frame_scores = result.frame_scores;
    approx = result.pooled.approx;
  } else {
    const auto result = vqa::affine_forward(input, model.affine_params);
    quality = result.quality;
    frame_scores = result.frame_scores;
    approx = result.frame_scores;  // plain mean pooling has no blended curve
  }
  std::printf("%.6f\n", vqa::to_native_scale(quality, model.ck.mos_range));

  if (!args.curve.empty()) {
    std::ofstream csv(args.curve, std::ios::trunc);
    if (!csv) throw vqa::IoError("cannot write curve file " + args.curve.string());
    csv << "frame,score,approx\n";
    char line[96];
    for (vqa::Index t = 0; t < frame_scores.size(); ++t) {
      std::snprintf(line, sizeof line, "%lld,%.6f,%.6f\n", static_cast<long long>(t),
                    vqa::to_native_scale(frame_scores[t], model.ck.mos_range),
                    vqa::to_native_scale(approx[t], model.ck.mos_range));
      csv << line;
    }
    if (!csv.good()) throw vqa::IoError("short write to " + args.curve.string());
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  fs::path manifest;
  fs::path backbone;
  fs::path cache_dir;
  fs::path out;
  int runs = 10;
  std::vector<std::string> axes;  ///< subset of gamma | tau | toggles
  vqa::TrainConfig base;
};

struct SweepCell {
  std::string axis;
  std::string cell;
  vqa::TrainConfig cfg;
};

std::vector<SweepCell> sweep_cells(const SweepArgs& args) {
  std::vector<SweepCell> cells;
  auto base_at = [&](double tau, double gamma) {
    vqa::TrainConfig cfg = args.base;
    cfg.model_kind = "recurrent";
    cfg.drop_std_half = false;
    cfg.pooling.memory = vqa::MemoryMode::kMin;
    cfg.pooling.tau = tau;
    cfg.pooling.gamma = gamma;
    return cfg;
  };
  char buf[32];
  for (const std::string& axis : args.axes) {
    if (axis == "gamma") {
      for (int i = 1; i <= 9; ++i) {
        const double gamma = i / 10.0;
        std::snprintf(buf, sizeof buf, "%.1f", gamma);
        cells.push_back({"gamma", buf, base_at(12, gamma)});
      }
    } else if (axis == "tau") {
      for (int tau = 6; tau <= 30; tau += 6) {
        std::snprintf(buf, sizeof buf, "%d", tau);
        cells.push_back({"tau", buf, base_at(tau, 0.5)});
      }
    } else if (axis == "toggles") {
      cells.push_back({"toggles", "baseline", base_at(12, 0.5)});
      SweepCell no_std{"toggles", "no-std-pooling", base_at(12, 0.5)};
      no_std.cfg.drop_std_half = true;
      cells.push_back(std::move(no_std));
      SweepCell no_temporal{"toggles", "no-temporal-module", base_at(12, 0.5)};
      no_temporal.cfg.model_kind = "affine";
      cells.push_back(std::move(no_temporal));
      SweepCell average{"toggles", "average-memory", base_at(12, 0.5)};
      average.cfg.pooling.memory = vqa::MemoryMode::kAverage;
      cells.push_back(std::move(average));
    } else {
      throw vqa::ConfigError("unknown sweep axis '" + axis +
                             "' (expected gamma, tau or toggles)");
    }
  }
  return cells;
}

std::string cell_stem(const SweepCell& cell) {
  std::string stem = cell.axis + "-" + cell.cell;
  for (char& c : stem)
    if (c == '.') c = '_';
  return stem;
}

int cmd_sweep(const SweepArgs& args, const ConfigFile& config) {
  const vqa::DatasetManifest manifest = vqa::load_manifest(args.manifest);
  const std::string tag = backbone_tag_of(args.backbone);
  vqa::CacheFeatureSource features(vqa::FeatureCache(args.cache_dir), tag);
  const std::vector<SweepCell> cells = sweep_cells(args);

  json axes_json = json::array();
  for (const auto& a : args.axes) axes_json.push_back(a);
  write_invocation(args.out, "sweep",
                   json{{"manifest", args.manifest.string()},
                        {"backbone", tag},
                        {"cache_dir", args.cache_dir.string()},
                        {"out", args.out.string()},
                        {"runs", args.runs},
                        {"axes", axes_json},
                        {"train", train_json(args.base)}},
                   config);
  fs::create_directories(args.out / "cells");

  std::ofstream table(args.out / "sweep.csv", std::ios::trunc);
  if (!table) throw vqa::IoError("cannot write " + (args.out / "sweep.csv").string());
  table << "axis,cell,dataset,model,runs,complete_runs,srocc_mean,srocc_std,"
           "krocc_mean,krocc_std,plcc_mean,plcc_std,rmse_mean,rmse_std\n";

  std::map<std::string, std::vector<std::pair<double, double>>> lines;
  std::map<std::string, std::vector<vqa::BoxData>> boxes;
  bool all_complete = true;

  for (const SweepCell& cell : cells) {
    const vqa::EvalReport report =
        vqa::run_protocol(manifest, features, cell.cfg, args.runs);
    all_complete = all_complete && report.complete;
    vqa::write_report_json(args.out / "cells" / (cell_stem(cell) + ".json"), report);

    char row[512];
    auto cellnum = [](double v, char* buf, std::size_t n) {
      if (std::isfinite(v))
        std::snprintf(buf, n, "%.6f", v);
      else
        buf[0] = '\0';
    };
    char s1[32], s2[32], k1[32], k2[32], p1[32], p2[32], r1[32], r2[32];
    cellnum(report.srocc.mean, s1, sizeof s1);
    cellnum(report.srocc.stddev, s2, sizeof s2);
    cellnum(report.krocc.mean, k1, sizeof k1);
    cellnum(report.krocc.stddev, k2, sizeof k2);
    cellnum(report.plcc.mean, p1, sizeof p1);
    cellnum(report.plcc.stddev, p2, sizeof p2);
    cellnum(report.rmse.mean, r1, sizeof r1);
    cellnum(report.rmse.stddev, r2, sizeof r2);
    std::snprintf(row, sizeof row, "%s,%s,%s,%s,%zu,%lld,%s,%s,%s,%s,%s,%s,%s,%s\n",
                  cell.axis.c_str(), cell.cell.c_str(), report.dataset.c_str(),
                  report.model.c_str(), report.runs.size(),
                  static_cast<long long>(report.complete_runs()), s1, s2, k1, k2, p1,
                  p2, r1, r2);
    table << row;
    std::printf("[%s %s] ", cell.axis.c_str(), cell.cell.c_str());
    print_report_line(report);

    if (cell.axis == "gamma" || cell.axis == "tau") {
      if (std::isfinite(report.srocc.mean))
        lines[cell.axis].emplace_back(std::stod(cell.cell), report.srocc.mean);
    } else {
      vqa::BoxData box;
      box.label = cell.cell;
      for (const vqa::RunMetrics& r : report.runs)
        if (r.complete) box.values.push_back(r.srocc);
      if (!box.values.empty()) boxes[cell.axis].push_back(std::move(box));
    }
  }
  if (!table.good()) throw vqa::IoError("short write to sweep.csv");

  for (const auto& [axis, points] : lines) {
    if (points.empty()) continue;
    vqa::LinePlot plot;
    plot.title = "test SROCC vs " + axis;
    plot.x_label = axis;
    plot.y_label = "SROCC";
    vqa::PlotSeries series;
    series.name = "SROCC";
    for (const auto& [x, y] : points) {
      series.x.push_back(x);
      series.y.push_back(y);
    }
    plot.series.push_back(std::move(series));
    vqa::write_line_plot(args.out / ("sweep_" + axis + ".svg"), plot);
  }
  for (const auto& [axis, data] : boxes) {
    vqa::BoxPlot plot;
    plot.title = "per-run test SROCC by variant";
    plot.y_label = "SROCC";
    plot.boxes = data;
    vqa::write_box_plot(args.out / ("sweep_" + axis + ".svg"), plot);
  }
  return all_complete ? kOk : kTrainingExit;
}

// ---------------------------------------------------------------------------

int dispatch(int argc, char** argv) {
  CLI::App app{"no-reference video quality toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // shared flags may follow the subcommand name

  ConfigFile config;
  fs::path config_path, out_dir, cache_dir, backbone, manifest;
  std::uint64_t seed = 0;
  int runs = 10, jobs = 0;
  vqa::TrainConfig tcfg;
  std::string memory = "min";

  auto* config_opt = app.add_option("--config", config_path,
                                    "JSON config file; flags override its values");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "base random seed");
  auto* cache_opt = app.add_option("--cache-dir", cache_dir, "feature cache root");
  auto* backbone_opt =
      app.add_option("--backbone", backbone,
                     "backbone declaration file (train/eval/sweep also take a bare tag)");
  auto* manifest_opt = app.add_option("--manifest", manifest, "dataset manifest CSV");
  auto* runs_opt = app.add_option("--runs", runs, "protocol repetitions");
  auto* jobs_opt = app.add_option("--jobs", jobs, "extraction worker threads");

  auto* lr_opt = app.add_option("--lr", tcfg.learning_rate, "learning rate");
  auto* batch_opt = app.add_option("--batch-size", tcfg.batch_size, "batch size");
  auto* epochs_opt = app.add_option("--max-epochs", tcfg.max_epochs, "epoch budget");
  auto* patience_opt = app.add_option("--patience", tcfg.patience, "early-stop patience");
  auto* clip_opt = app.add_option("--clip-norm", tcfg.clip_norm, "gradient norm ceiling");
  auto* reduced_opt = app.add_option("--reduced-dim", tcfg.reduced_dim, "reduction width");
  auto* hidden_opt = app.add_option("--hidden-dim", tcfg.hidden_dim, "recurrent width");
  auto* kind_opt = app.add_option("--model-kind", tcfg.model_kind,
                                  "recurrent or affine");
  auto* drop_opt = app.add_flag("--drop-std-half", tcfg.drop_std_half,
                                "train on the mean half of the features");
  auto* tau_opt = app.add_option("--tau", tcfg.pooling.tau, "pooling window tau");
  auto* gamma_opt = app.add_option("--gamma", tcfg.pooling.gamma, "pooling blend gamma");
  auto* memory_opt = app.add_option("--memory", memory, "memory statistic: min or average");

  auto* cmd_synth_app = app.add_subcommand("synth", "generate a synthetic fixture dataset");
  bool video_backed = false;
  long long synth_videos = -1, synth_frames = -1, synth_dim = -1;
  long long synth_height = -1, synth_width = -1;
  double synth_noise = -1.0;
  cmd_synth_app->add_flag("--video-backed", video_backed,
                          "write decodable raw videos instead of bare features");
  auto* sv_opt = cmd_synth_app->add_option("--videos", synth_videos, "dataset size");
  auto* sf_opt = cmd_synth_app->add_option("--frames", synth_frames, "frames per video");
  auto* sd_opt = cmd_synth_app->add_option("--feature-dim", synth_dim,
                                           "feature width (feature-level only)");
  auto* sh_opt = cmd_synth_app->add_option("--height", synth_height, "frame height");
  auto* sw_opt = cmd_synth_app->add_option("--width", synth_width, "frame width");
  auto* sn_opt = cmd_synth_app->add_option("--noise", synth_noise, "MOS noise sigma");

  auto* cmd_extract_app =
      app.add_subcommand("extract", "embed and cache features for a manifest");
  auto* cmd_train_app =
      app.add_subcommand("train", "run the repeated-split training protocol");
  auto* cmd_eval_app =
      app.add_subcommand("eval", "score checkpoints and write metric reports");
  auto* cmd_score_app = app.add_subcommand("score", "score a single video");
  fs::path score_video, score_checkpoint, score_curve, eval_train_dir, eval_checkpoint;
  cmd_score_app->add_option("--video", score_video, "video file");
  cmd_score_app->add_option("--checkpoint", score_checkpoint, "checkpoint prefix");
  cmd_score_app->add_option("--curve", score_curve, "per-frame score CSV to write");
  cmd_eval_app->add_option("--train-dir", eval_train_dir,
                           "training output directory to re-score");
  cmd_eval_app->add_option("--checkpoint", eval_checkpoint,
                           "single checkpoint evaluated on the whole manifest");
  auto* cmd_sweep_app = app.add_subcommand("sweep", "pooling-parameter and ablation grids");
  std::vector<std::string> axes;
  auto* axes_opt = cmd_sweep_app->add_option("--axis", axes,
                                             "gamma, tau or toggles (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidationExit;
  }

  if (config_opt->count() > 0) config.load(config_path);
  config.take_path({"out"}, out_dir, out_opt);
  config.take_path({"cache_dir"}, cache_dir, cache_opt);
  config.take_path({"backbone"}, backbone, backbone_opt);
  config.take_path({"manifest"}, manifest, manifest_opt);
  config.take({"seed"}, seed, seed_opt);
  config.take({"runs"}, runs, runs_opt);
  config.take({"jobs"}, jobs, jobs_opt);
  config.take({"train", "learning_rate"}, tcfg.learning_rate, lr_opt);
  config.take({"train", "batch_size"}, tcfg.batch_size, batch_opt);
  config.take({"train", "max_epochs"}, tcfg.max_epochs, epochs_opt);
  config.take({"train", "patience"}, tcfg.patience, patience_opt);
  config.take({"train", "clip_norm"}, tcfg.clip_norm, clip_opt);
  config.take({"train", "reduced_dim"}, tcfg.reduced_dim, reduced_opt);
  config.take({"train", "hidden_dim"}, tcfg.hidden_dim, hidden_opt);
  config.take({"train", "model_kind"}, tcfg.model_kind, kind_opt);
  config.take({"train", "drop_std_half"}, tcfg.drop_std_half, drop_opt);
  config.take({"train", "pooling", "tau"}, tcfg.pooling.tau, tau_opt);
  config.take({"train", "pooling", "gamma"}, tcfg.pooling.gamma, gamma_opt);
  config.take({"train", "pooling", "memory"}, memory, memory_opt);
  tcfg.pooling.memory = vqa::memory_mode_from_string(memory);
  tcfg.seed = seed;

  if (cmd_synth_app->parsed()) {
    SynthArgs args;
    require_value(!out_dir.empty(), "--out");
    args.out = out_dir;
    config.take({"synth", "video_backed"}, video_backed, nullptr);
    args.video_backed = video_backed;
    config.take({"synth", "videos"}, synth_videos, sv_opt);
    config.take({"synth", "frames"}, synth_frames, sf_opt);
    config.take({"synth", "dim"}, synth_dim, sd_opt);
    config.take({"synth", "height"}, synth_height, sh_opt);
    config.take({"synth", "width"}, synth_width, sw_opt);
    config.take({"synth", "noise"}, synth_noise, sn_opt);
    if (args.video_backed) {
      auto& spec = args.video_spec;
      if (synth_videos >= 0) spec.videos = synth_videos;
      if (synth_frames >= 0) spec.frames = synth_frames;
      if (synth_height >= 0) spec.height = synth_height;
      if (synth_width >= 0) spec.width = synth_width;
      if (synth_noise >= 0) spec.noise = synth_noise;
      spec.seed = seed;
    } else {
      auto& spec = args.feature_spec;
      if (synth_videos >= 0) spec.videos = synth_videos;
      if (synth_frames >= 0) spec.frames = synth_frames;
      if (synth_dim >= 0) spec.dim = synth_dim;
      if (synth_noise >= 0) spec.noise = synth_noise;
      spec.seed = seed;
    }
    return cmd_synth(args, config);
  }
  if (cmd_extract_app->parsed()) {
    ExtractArgs args;
    require_value(!manifest.empty(), "--manifest");
    require_value(!backbone.empty(), "--backbone");
    require_value(!cache_dir.empty(), "--cache-dir");
    args.manifest = manifest;
    args.backbone = backbone;
    args.cache_dir = cache_dir;
    args.out = out_dir;
    args.jobs = jobs;
    return cmd_extract(args, config);
  }
  if (cmd_train_app->parsed()) {
    TrainArgs args;
    require_value(!manifest.empty(), "--manifest");
    require_value(!backbone.empty(), "--backbone");
    require_value(!cache_dir.empty(), "--cache-dir");
    require_value(!out_dir.empty(), "--out");
    args.manifest = manifest;
    args.backbone = backbone;
    args.cache_dir = cache_dir;
    args.out = out_dir;
    args.runs = runs;
    args.cfg = tcfg;
    return cmd_train(args, config);
  }
  if (cmd_eval_app->parsed()) {
    EvalArgs args;
    require_value(!manifest.empty(), "--manifest");
    require_value(!cache_dir.empty(), "--cache-dir");
    require_value(!out_dir.empty(), "--out");
    args.manifest = manifest;
    args.cache_dir = cache_dir;
    args.out = out_dir;
    config.take_path({"eval", "train_dir"}, eval_train_dir, nullptr);
    config.take_path({"eval", "checkpoint"}, eval_checkpoint, nullptr);
    args.train_dir = eval_train_dir;
    args.checkpoint = eval_checkpoint;
    require_value(!args.train_dir.empty() || !args.checkpoint.empty(),
                  "--train-dir or --checkpoint");
    return cmd_eval(args, config);
  }
  if (cmd_score_app->parsed()) {
    ScoreArgs args;
    require_value(!score_video.empty(), "--video");
    require_value(!score_checkpoint.empty(), "--checkpoint");
    require_value(!backbone.empty(), "--backbone");
    args.video = score_video;
    args.checkpoint = score_checkpoint;
    args.backbone = backbone;
    args.curve = score_curve;
    return cmd_score(args);
  }
  if (cmd_sweep_app->parsed()) {
    SweepArgs args;
    require_value(!manifest.empty(), "--manifest");
    require_value(!backbone.empty(), "--backbone");
    require_value(!cache_dir.empty(), "--cache-dir");
    require_value(!out_dir.empty(), "--out");
    args.manifest = manifest;
    args.backbone = backbone;
    args.cache_dir = cache_dir;
    args.out = out_dir;
    args.runs = runs;
    args.base = tcfg;
    args.axes = axes;
    if (axes_opt->count() == 0) {
      if (const json* v = config.find({"sweep", "axes"})) {
        args.axes.clear();
        for (const auto& a : *v) args.axes.push_back(a.get<std::string>());
      }
    }
    if (args.axes.empty()) args.axes = {"gamma", "tau", "toggles"};
    return cmd_sweep(args, config);
  }
  return kValidationExit;  // unreachable: a subcommand is required
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const vqa::TrainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kTrainingExit;
  } catch (const vqa::FitError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kTrainingExit;
  } catch (const vqa::DecodeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExtractionExit;
  } catch (const vqa::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kTrainingExit;
  } catch (const vqa::IoError& e) {  // NotFound and Corruption included
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIoExit;
  } catch (const vqa::Error& e) {  // config, validation, shape, domain
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIoExit;
  }
}

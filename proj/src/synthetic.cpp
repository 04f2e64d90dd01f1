#include "vqa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "vqa/features.hpp"
#include "vqa/version.hpp"
#include "vqa/video.hpp"

namespace vqa {

namespace fs = std::filesystem;

void SyntheticSpec::validate() const {
  if (videos < 1 || frames < 1 || dim < 2)
    throw ValidationError("synthetic spec: videos, frames and dim must be positive (dim >= 2)");
  if (noise < 0) throw ValidationError("synthetic spec: noise must be non-negative");
  if (!(mos_range[0] < mos_range[1]))
    throw ValidationError("synthetic spec: mos_range must satisfy lo < hi");
  pooling.validate();
}

void SyntheticVideoSpec::validate() const {
  if (videos < 1 || frames < 1 || height < 1 || width < 2)
    throw ValidationError("synthetic video spec: videos, frames and frame size must be positive");
  if (width % 2 != 0)
    throw ValidationError("synthetic video spec: width must be even");
  if (!(frame_rate > 0))
    throw ValidationError("synthetic video spec: frame_rate must be positive");
  if (noise < 0) throw ValidationError("synthetic video spec: noise must be non-negative");
  if (!(mos_range[0] < mos_range[1]))
    throw ValidationError("synthetic video spec: mos_range must satisfy lo < hi");
  pooling.validate();
}

QualityModelParams<double> planted_model(const VectorX<double>& head_w, double head_b) {
  const Index d = head_w.size();
  if (d < 1) throw ValidationError("planted model needs a non-empty readout");
  auto p = QualityModelParams<double>::zeros(d, d, 1);
  p.reduce_w = MatrixX<double>::Identity(d, d);

  // One-unit GRU as a wire: the update gate is pinned shut (sigmoid(-40)), so
  // each state is the candidate; with the candidate's input weights shrunk by
  // eps the tanh stays in its linear range, and the head scales back up.
  constexpr double eps = 1e-7;
  p.gru.b_update[0] = -40.0;
  p.gru.w_cand.row(0) = eps * head_w.transpose();
  p.gru.b_cand[0] = eps * head_b;
  p.head_w[0] = 1.0 / eps;
  return p;
}

namespace {

std::string synthetic_id(Index i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "syn-%04lld", static_cast<long long>(i));
  return buf;
}

// Per-frame latent quality in [2, 98]: a per-video base level, usually one
// short dip (the structure hysteresis pooling is sensitive to), light jitter.
VectorX<double> latent_curve(std::mt19937_64& rng, Index frames) {
  std::uniform_real_distribution<double> base_level(20.0, 90.0);
  std::uniform_real_distribution<double> chance(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);

  VectorX<double> q = VectorX<double>::Constant(frames, base_level(rng));
  if (frames >= 8 && chance(rng) < 0.7) {
    std::uniform_int_distribution<Index> start_at(1, frames - 5);
    std::uniform_int_distribution<Index> length(3, 6);
    std::uniform_real_distribution<double> depth(15.0, 40.0);
    const Index start = start_at(rng);
    const Index stop = std::min(frames, start + length(rng));
    const double drop = depth(rng);
    for (Index t = start; t < stop; ++t) q[t] -= drop;
  }
  for (Index t = 0; t < frames; ++t)
    q[t] = std::clamp(q[t] + jitter(rng), 2.0, 98.0);
  return q;
}

// MOS for one video, native scale: planted readout over the stored features,
// hysteresis pooling, rescale. This *is* the ground-truth pipeline.
double pooled_native_mos(const RowMajorMatrixX<float>& payload,
                         const VectorX<double>& head_w, double head_b,
                         const PoolingConfig<double>& pooling,
                         const std::array<double, 2>& range) {
  const VectorX<double> scores =
      payload.cast<double>() * head_w + VectorX<double>::Constant(payload.rows(), head_b);
  return to_native_scale(pool(scores, pooling).quality, range);
}

double noisy_mos(double clean, double noise, std::mt19937_64& rng,
                 const std::array<double, 2>& range) {
  if (noise <= 0) return clean;
  std::normal_distribution<double> bump(0.0, noise);
  return std::clamp(clean + bump(rng), range[0], range[1]);
}

}  // namespace

SyntheticDataset synthesize_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  // separate stream so the noise level never changes features or latents
  std::mt19937_64 noise_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // quality direction u (unit) and a base point; clutter lives orthogonal to u
  VectorX<double> u(spec.dim), base(spec.dim);
  for (Index i = 0; i < spec.dim; ++i) u[i] = gauss(rng);
  u.normalize();
  for (Index i = 0; i < spec.dim; ++i) base[i] = 0.5 * gauss(rng);

  SyntheticDataset out;
  out.pooling = spec.pooling;
  out.head_w = 100.0 * u;
  out.head_b = -out.head_w.dot(base);
  out.planted = planted_model(out.head_w, out.head_b);
  out.manifest.name = "synthetic";
  out.manifest.mos_range = spec.mos_range;
  out.clean_mos.resize(spec.videos);

  for (Index v = 0; v < spec.videos; ++v) {
    const VectorX<double> q = latent_curve(rng, spec.frames);

    FeatureCacheRecord record;
    record.source_id = synthetic_id(v);
    record.backbone_tag = "synthetic";
    record.extraction_version = extraction_version();
    record.payload.resize(spec.frames, spec.dim);
    for (Index t = 0; t < spec.frames; ++t) {
      // amplitude keeps the quality direction recoverable from a few dozen
      // videos while leaving the distractor dims clearly nonzero
      VectorX<double> clutter(spec.dim);
      for (Index i = 0; i < spec.dim; ++i) clutter[i] = 0.05 * gauss(rng);
      clutter -= u.dot(clutter) * u;
      const VectorX<double> f = (q[t] / 100.0) * u + base + clutter;
      record.payload.row(t) = f.cast<float>().transpose();
    }

    const double clean = pooled_native_mos(record.payload, out.head_w, out.head_b,
                                           spec.pooling, spec.mos_range);
    out.clean_mos[v] = clean;
    out.manifest.entries.push_back(
        {record.source_id, {}, noisy_mos(clean, spec.noise, noise_rng, spec.mos_range)});
    out.records.push_back(std::move(record));
  }
  return out;
}

SyntheticDataset synthesize_video_dataset(const SyntheticVideoSpec& spec,
                                          const fs::path& video_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(video_dir, ec);
  if (ec) throw IoError("cannot create video directory " + video_dir.string());

  std::mt19937_64 rng(spec.seed);
  std::mt19937_64 noise_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  const StubBackbone stub;

  SyntheticDataset out;
  out.pooling = spec.pooling;
  // stub features are [mean r, g, b, std r, g, b]; quality is written into the
  // first channel's mean as 60 + q
  out.head_w = VectorX<double>::Zero(6);
  out.head_w[0] = 1.0;
  out.head_b = -60.0;
  out.planted = planted_model(out.head_w, out.head_b);
  out.manifest.name = "synthetic-video";
  out.manifest.mos_range = spec.mos_range;
  out.clean_mos.resize(spec.videos);

  for (Index v = 0; v < spec.videos; ++v) {
    const VectorX<double> q = latent_curve(rng, spec.frames);
    const int tone = 80 + 10 * static_cast<int>(v % 7);  // per-video G content

    FrameStack stack;
    stack.source_id = synthetic_id(v);
    stack.frame_rate = spec.frame_rate;
    for (Index t = 0; t < spec.frames; ++t) {
      // two pixel levels per channel in equal counts: the stub features come
      // out as exactly (level mean, level half-distance)
      const int r_mid = static_cast<int>(std::lround(60.0 + q[t]));
      const std::uint8_t r[2] = {static_cast<std::uint8_t>(r_mid - 20),
                                 static_cast<std::uint8_t>(r_mid + 20)};
      const std::uint8_t g[2] = {static_cast<std::uint8_t>(tone - 10),
                                 static_cast<std::uint8_t>(tone + 10)};

      Frame frame;
      frame.height = spec.height;
      frame.width = spec.width;
      frame.rgb.resize(static_cast<std::size_t>(frame.pixel_count()) * 3);
      std::size_t at = 0;
      for (int i = 0; i < spec.height; ++i)
        for (int j = 0; j < spec.width; ++j) {
          const int cell = (i + j) & 1;
          frame.rgb[at++] = r[cell];
          frame.rgb[at++] = g[cell];
          frame.rgb[at++] = 128;
        }
      stack.frames.push_back(std::move(frame));
    }

    const fs::path path = video_dir / (stack.source_id + ".rawvid");
    write_raw_video(path, stack);
    FeatureCacheRecord record = extract_video_features(stack, stub);

    const double clean = pooled_native_mos(record.payload, out.head_w, out.head_b,
                                           spec.pooling, spec.mos_range);
    out.clean_mos[v] = clean;
    out.manifest.entries.push_back(
        {record.source_id, path, noisy_mos(clean, spec.noise, noise_rng, spec.mos_range)});
    out.records.push_back(std::move(record));
  }
  return out;
}

void write_synthetic_dataset(const SyntheticDataset& dataset, const fs::path& csv_path,
                             const FeatureCache* cache) {
  save_manifest(dataset.manifest, csv_path);
  if (cache)
    for (const auto& record : dataset.records) cache->store(record);
}

}  // namespace vqa

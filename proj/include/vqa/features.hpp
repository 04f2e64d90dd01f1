#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>

#include "vqa/feature_cache.hpp"
#include "vqa/types.hpp"
#include "vqa/video.hpp"

// Content-aware frame features: each frame runs through a frozen pretrained
// backbone at native resolution; the resulting C spatial activation maps are
// pooled into a 2C vector (per-channel spatial mean and standard deviation).
// The mean half captures what is in the frame, the std half how variably it is
// expressed — both halves are kept, concatenated [means; stds].

namespace vqa {

/// Output of one backbone pass: C activation maps over an h x w spatial grid.
/// Row c holds map c flattened row-major.
struct FeatureMaps {
  MatrixX<float> maps;
  int height = 0;
  int width = 0;

  Index channels() const { return maps.rows(); }
};

/// A frozen feature extractor. Implementations must be deterministic: the
/// same frame embeds to bit-identical maps.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual const std::string& tag() const = 0;
  virtual Index channels() const = 0;
  virtual FeatureMaps embed_frame(const Frame& frame) const = 0;
};

/// Per-channel normalisation applied before an ONNX backbone. Values are in
/// the stored RGB channel order; pixels are divided by `pixel_scale` first.
struct BackbonePreprocess {
  double pixel_scale = 255.0;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
  /// If > 0, frames whose longer side exceeds this are scaled down (aspect
  /// preserved) before embedding. Off by default: native resolution.
  int max_side = 0;
};

/// Declaration of a backbone in a JSON file: tag, kind ("stub" or "onnx"),
/// channel count, preprocessing constants and the interchange-file path.
struct BackboneManifest {
  std::string tag;
  std::string kind;
  Index channels = 0;
  BackbonePreprocess preprocess;
  std::filesystem::path model_path;  ///< resolved relative to the manifest file
  std::string output_layer;          ///< optional; empty = network default
  MatrixX<float> mix;                ///< stub only: channels x 3 map; empty = identity

  static BackboneManifest load(const std::filesystem::path& path);
};

/// Test/synthetic backbone: a fixed linear map of the input channels, by
/// default the identity on RGB (three maps, values unchanged).
class StubBackbone : public Backbone {
 public:
  StubBackbone();  ///< identity, tag "stub-rgb"
  StubBackbone(std::string tag, MatrixX<float> mix);
  const std::string& tag() const override { return tag_; }
  Index channels() const override { return mix_.rows(); }
  FeatureMaps embed_frame(const Frame& frame) const override;

 private:
  std::string tag_;
  MatrixX<float> mix_;
};

/// Instantiates the backbone a manifest declares. Unknown kinds are a
/// ConfigError, as is an ONNX manifest when the adapter is not built in.
std::unique_ptr<Backbone> make_backbone(const BackboneManifest& manifest);

#ifdef WILDVQA_HAVE_OPENCV
std::unique_ptr<Backbone> make_onnx_backbone(const BackboneManifest& manifest);
#endif

/// Spatial mean+std pooling of activation maps into a 2C vector. Means are
/// accumulated in double; the standard deviation is the population form, so a
/// 1x1 map pools to std 0.
VectorX<float> global_pool(const FeatureMaps& maps);

/// Runs a whole video through the backbone: one pooled feature row per frame.
FeatureCacheRecord extract_video_features(VideoSource& source, const Backbone& backbone);
FeatureCacheRecord extract_video_features(const FrameStack& stack, const Backbone& backbone);

}  // namespace vqa

#include "vqa/features.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "vqa/version.hpp"

namespace vqa {

namespace fs = std::filesystem;
using nlohmann::json;

StubBackbone::StubBackbone() : tag_("stub-rgb"), mix_(MatrixX<float>::Identity(3, 3)) {}

StubBackbone::StubBackbone(std::string tag, MatrixX<float> mix)
    : tag_(std::move(tag)), mix_(std::move(mix)) {
  if (mix_.rows() < 1 || mix_.cols() != 3)
    throw ConfigError("stub backbone mix must be channels x 3");
}

FeatureMaps StubBackbone::embed_frame(const Frame& frame) const {
  if (!frame.well_formed()) throw DecodeError("stub backbone: corrupt frame buffer");
  const Index pixels = static_cast<Index>(frame.pixel_count());
  // pixel bytes as a 3 x P matrix (one row per input channel)
  MatrixX<float> rgb(3, pixels);
  for (Index p = 0; p < pixels; ++p) {
    rgb(0, p) = static_cast<float>(frame.rgb[3 * p + 0]);
    rgb(1, p) = static_cast<float>(frame.rgb[3 * p + 1]);
    rgb(2, p) = static_cast<float>(frame.rgb[3 * p + 2]);
  }
  FeatureMaps out;
  out.maps = mix_ * rgb;
  out.height = frame.height;
  out.width = frame.width;
  return out;
}

VectorX<float> global_pool(const FeatureMaps& maps) {
  const Index channels = maps.channels();
  const Index pixels = maps.maps.cols();
  if (channels == 0 || pixels == 0) throw DomainError("global_pool: empty feature maps");
  VectorX<float> out(2 * channels);
  for (Index c = 0; c < channels; ++c) {
    // double accumulation; population std, so a 1x1 map has std 0
    const Eigen::ArrayXd row = maps.maps.row(c).cast<double>().array();
    const double mean = row.mean();
    const double var = (row - mean).square().mean();
    out[c] = static_cast<float>(mean);
    out[channels + c] = static_cast<float>(std::sqrt(var));
  }
  return out;
}

FeatureCacheRecord extract_video_features(VideoSource& source, const Backbone& backbone) {
  FeatureCacheRecord record;
  record.source_id = source.id();
  record.backbone_tag = backbone.tag();
  record.extraction_version = extraction_version();

  const Index dim = 2 * backbone.channels();
  std::vector<VectorX<float>> rows;
  while (auto frame = source.next()) {
    const FeatureMaps maps = backbone.embed_frame(*frame);
    if (maps.channels() != backbone.channels())
      throw ConfigError("backbone '" + backbone.tag() + "' produced " +
                        std::to_string(maps.channels()) + " channels, declared " +
                        std::to_string(backbone.channels()));
    rows.push_back(global_pool(maps));
  }
  if (rows.empty())
    throw DecodeError("video '" + source.id() + "' decoded to zero frames");

  record.payload.resize(static_cast<Index>(rows.size()), dim);
  for (Index t = 0; t < record.payload.rows(); ++t)
    record.payload.row(t) = rows[static_cast<std::size_t>(t)].transpose();
  return record;
}

FeatureCacheRecord extract_video_features(const FrameStack& stack, const Backbone& backbone) {
  MemoryVideoSource source(stack);
  return extract_video_features(source, backbone);
}

BackboneManifest BackboneManifest::load(const fs::path& path) {
  json doc;
  try {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open backbone manifest " + path.string());
    in >> doc;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("malformed backbone manifest " + path.string() + ": " + e.what());
  }

  BackboneManifest m;
  try {
    m.tag = doc.at("tag").get<std::string>();
    m.kind = doc.at("kind").get<std::string>();
    m.channels = doc.at("channels").get<Index>();
    if (doc.contains("preprocess")) {
      const auto& p = doc["preprocess"];
      if (p.contains("pixel_scale")) m.preprocess.pixel_scale = p["pixel_scale"].get<double>();
      if (p.contains("mean")) m.preprocess.mean = p["mean"].get<std::array<double, 3>>();
      if (p.contains("std")) m.preprocess.std = p["std"].get<std::array<double, 3>>();
      if (p.contains("max_side")) m.preprocess.max_side = p["max_side"].get<int>();
    }
    if (doc.contains("model_path")) {
      const fs::path rel = doc["model_path"].get<std::string>();
      m.model_path = rel.is_absolute() ? rel : path.parent_path() / rel;
    }
    if (doc.contains("output_layer")) m.output_layer = doc["output_layer"].get<std::string>();
    if (doc.contains("mix")) {
      const auto rows = doc["mix"].get<std::vector<std::vector<float>>>();
      m.mix.resize(static_cast<Index>(rows.size()), 3);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != 3)
          throw ConfigError("backbone manifest " + path.string() + ": mix rows need 3 entries");
        for (int j = 0; j < 3; ++j) m.mix(static_cast<Index>(i), j) = rows[i][j];
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("backbone manifest " + path.string() + " is missing fields: " + e.what());
  }

  if (m.tag.empty()) throw ConfigError("backbone manifest " + path.string() + ": empty tag");
  if (m.channels <= 0)
    throw ConfigError("backbone manifest " + path.string() + ": channels must be positive");
  return m;
}

std::unique_ptr<Backbone> make_backbone(const BackboneManifest& manifest) {
  if (manifest.kind == "stub") {
    MatrixX<float> mix = manifest.mix;
    if (mix.size() == 0) mix = MatrixX<float>::Identity(3, 3);
    if (mix.rows() != manifest.channels)
      throw ConfigError("backbone '" + manifest.tag + "': mix has " +
                        std::to_string(mix.rows()) + " rows, manifest declares " +
                        std::to_string(manifest.channels) + " channels");
    return std::make_unique<StubBackbone>(manifest.tag, std::move(mix));
  }
  if (manifest.kind == "onnx") {
#ifdef WILDVQA_HAVE_OPENCV
    return make_onnx_backbone(manifest);
#else
    throw ConfigError("backbone '" + manifest.tag +
                      "' needs the ONNX adapter, which this build does not include");
#endif
  }
  throw ConfigError("unknown backbone kind '" + manifest.kind + "'");
}

}  // namespace vqa

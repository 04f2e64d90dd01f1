#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include <mutex>

#include "vqa/features.hpp"

// ONNX backbone executor on top of the OpenCV DNN runtime. The network is
// loaded once and treated as frozen; frames run through it at native
// resolution unless the manifest caps the longer side.

namespace vqa {

namespace {

class OnnxBackbone : public Backbone {
 public:
  explicit OnnxBackbone(const BackboneManifest& manifest)
      : tag_(manifest.tag),
        channels_(manifest.channels),
        pre_(manifest.preprocess),
        output_layer_(manifest.output_layer) {
    if (manifest.model_path.empty())
      throw ConfigError("backbone '" + tag_ + "': manifest declares no model_path");
    if (!std::filesystem::exists(manifest.model_path))
      throw ConfigError("backbone '" + tag_ + "': model file not found: " +
                        manifest.model_path.string());
    try {
      net_ = cv::dnn::readNetFromONNX(manifest.model_path.string());
    } catch (const cv::Exception& e) {
      throw ConfigError("backbone '" + tag_ + "': cannot load " +
                        manifest.model_path.string() + ": " + e.what());
    }
  }

  const std::string& tag() const override { return tag_; }
  Index channels() const override { return channels_; }

  FeatureMaps embed_frame(const Frame& frame) const override {
    if (!frame.well_formed()) throw DecodeError("onnx backbone: corrupt frame buffer");

    cv::Mat rgb(frame.height, frame.width, CV_8UC3,
                const_cast<std::uint8_t*>(frame.rgb.data()));
    cv::Mat scaled;
    const int side = std::max(frame.height, frame.width);
    if (pre_.max_side > 0 && side > pre_.max_side) {
      const double f = static_cast<double>(pre_.max_side) / side;
      cv::resize(rgb, scaled, cv::Size(), f, f, cv::INTER_AREA);
    } else {
      scaled = rgb;
    }

    cv::Mat input;
    scaled.convertTo(input, CV_32FC3, 1.0 / pre_.pixel_scale);
    cv::subtract(input,
                 cv::Scalar(pre_.mean[0], pre_.mean[1], pre_.mean[2]), input);
    cv::divide(input, cv::Scalar(pre_.std[0], pre_.std[1], pre_.std[2]), input);

    cv::Mat out;
    try {
      // blob is 1 x 3 x H x W in the stored (RGB) channel order
      const cv::Mat blob = cv::dnn::blobFromImage(input, 1.0, cv::Size(),
                                                  cv::Scalar(), /*swapRB=*/false,
                                                  /*crop=*/false);
      std::lock_guard<std::mutex> lock(mutex_);  // Net::forward is not reentrant
      net_.setInput(blob);
      out = output_layer_.empty() ? net_.forward() : net_.forward(output_layer_);
    } catch (const cv::Exception& e) {
      throw NumericError("backbone '" + tag_ + "': inference failed: " + e.what());
    }

    if (out.dims != 4 || out.size[0] != 1)
      throw ConfigError("backbone '" + tag_ + "': expected a 1xCxHxW output, got " +
                        std::to_string(out.dims) + " dims");
    const Index c = out.size[1];
    const int h = out.size[2], w = out.size[3];
    if (c != channels_)
      throw ConfigError("backbone '" + tag_ + "' produced " + std::to_string(c) +
                        " channels, manifest declares " + std::to_string(channels_));

    FeatureMaps maps;
    maps.height = h;
    maps.width = w;
    maps.maps.resize(c, static_cast<Index>(h) * w);
    const float* data = out.ptr<float>();
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < static_cast<Index>(h) * w; ++p)
        maps.maps(ch, p) = data[ch * h * w + p];
    if (!maps.maps.allFinite())
      throw NumericError("backbone '" + tag_ + "': non-finite activation");
    return maps;
  }

 private:
  std::string tag_;
  Index channels_;
  BackbonePreprocess pre_;
  std::string output_layer_;
  mutable cv::dnn::Net net_;
  mutable std::mutex mutex_;
};

}  // namespace

std::unique_ptr<Backbone> make_onnx_backbone(const BackboneManifest& manifest) {
  return std::make_unique<OnnxBackbone>(manifest);
}

}  // namespace vqa

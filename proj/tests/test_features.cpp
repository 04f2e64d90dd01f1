#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "vqa/feature_cache.hpp"
#include "vqa/features.hpp"
#include "vqa/version.hpp"
#include "vqa/video.hpp"

using vqa::Frame;
using vqa::FrameStack;
using vqa::Index;
namespace fs = std::filesystem;

namespace {

// Scratch directory, removed on scope exit.
struct TempDir {
  fs::path path;
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = fs::temp_directory_path() / ("wildvqa-test-" + std::to_string(rng()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

Frame make_frame(int height, int width, std::initializer_list<std::uint8_t> bytes) {
  Frame f;
  f.height = height;
  f.width = width;
  f.rgb.assign(bytes);
  return f;
}

FrameStack random_stack(std::uint64_t seed, int frames, int height, int width) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  FrameStack stack;
  stack.source_id = "clip-" + std::to_string(seed);
  stack.frame_rate = 24.0;
  for (int t = 0; t < frames; ++t) {
    Frame f;
    f.height = height;
    f.width = width;
    f.rgb.resize(static_cast<std::size_t>(height) * width * 3);
    for (auto& b : f.rgb) b = static_cast<std::uint8_t>(byte(rng));
    stack.frames.push_back(std::move(f));
  }
  return stack;
}

bool same_bits(const vqa::RowMajorMatrixX<float>& a, const vqa::RowMajorMatrixX<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(),
                     static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("global_pool: constant map pools to its value with zero spread") {
  vqa::FeatureMaps maps;
  maps.height = 2;
  maps.width = 2;
  maps.maps.setOnes(1, 4);
  const auto pooled = vqa::global_pool(maps);
  REQUIRE_EQ(pooled.size(), 2);
  CHECK_EQ(pooled[0], 1.0f);
  CHECK_EQ(pooled[1], 0.0f);
}

TEST_CASE("global_pool: two-level map") {
  // rows [0,0] and [2,2]: mean 1, population deviation 1 for every pixel
  vqa::FeatureMaps maps;
  maps.height = 2;
  maps.width = 2;
  maps.maps.resize(1, 4);
  maps.maps << 0, 0, 2, 2;
  const auto pooled = vqa::global_pool(maps);
  CHECK_EQ(pooled[0], 1.0f);
  CHECK_EQ(pooled[1], 1.0f);
}

TEST_CASE("global_pool: a single pixel has population std zero") {
  vqa::FeatureMaps maps;
  maps.height = 1;
  maps.width = 1;
  maps.maps.resize(1, 1);
  maps.maps << 5;
  const auto pooled = vqa::global_pool(maps);
  CHECK_EQ(pooled[0], 5.0f);
  CHECK_EQ(pooled[1], 0.0f);
}

TEST_CASE("global_pool: channels pool independently, means first then stds") {
  vqa::FeatureMaps maps;
  maps.height = 2;
  maps.width = 2;
  maps.maps.resize(2, 4);
  maps.maps << 1, 2, 3, 4,  // mean 2.5, var 1.25
      7, 7, 7, 7;           // mean 7, var 0
  const auto pooled = vqa::global_pool(maps);
  REQUIRE_EQ(pooled.size(), 4);
  CHECK_EQ(pooled[0], 2.5f);
  CHECK_EQ(pooled[1], 7.0f);
  CHECK_EQ(pooled[2], doctest::Approx(1.118033988749895).epsilon(1e-6));
  CHECK_EQ(pooled[3], 0.0f);
}

TEST_CASE("global_pool: doubling the maps doubles both halves exactly") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<float> value(-8.0f, 8.0f);
  vqa::FeatureMaps maps;
  maps.height = 3;
  maps.width = 5;
  maps.maps.resize(4, 15);
  for (Index i = 0; i < maps.maps.size(); ++i) maps.maps.data()[i] = value(rng);

  vqa::FeatureMaps twice = maps;
  twice.maps *= 2.0f;  // scaling by a power of two is exact in every term
  const auto a = vqa::global_pool(maps);
  const auto b = vqa::global_pool(twice);
  for (Index i = 0; i < a.size(); ++i) CHECK_EQ(2.0f * a[i], b[i]);
}

TEST_CASE("global_pool: empty maps are rejected") {
  vqa::FeatureMaps maps;
  CHECK_THROWS_AS(vqa::global_pool(maps), vqa::DomainError);
}

TEST_CASE("stub backbone: identity keeps each pixel channel as its own map") {
  const vqa::StubBackbone stub;
  CHECK_EQ(stub.tag(), "stub-rgb");
  CHECK_EQ(stub.channels(), 3);

  const Frame f = make_frame(1, 2, {10, 20, 30, 50, 60, 70});
  const auto maps = stub.embed_frame(f);
  REQUIRE_EQ(maps.channels(), 3);
  REQUIRE_EQ(maps.maps.cols(), 2);
  CHECK_EQ(maps.maps(0, 0), 10.0f);
  CHECK_EQ(maps.maps(0, 1), 50.0f);
  CHECK_EQ(maps.maps(1, 0), 20.0f);
  CHECK_EQ(maps.maps(1, 1), 60.0f);
  CHECK_EQ(maps.maps(2, 0), 30.0f);
  CHECK_EQ(maps.maps(2, 1), 70.0f);
  CHECK_EQ(maps.height, 1);
  CHECK_EQ(maps.width, 2);
}

TEST_CASE("stub backbone: custom mix combines channels") {
  vqa::MatrixX<float> mix(1, 3);
  mix << 1, 1, 1;
  const vqa::StubBackbone stub("stub-sum", std::move(mix));
  const Frame f = make_frame(1, 2, {10, 20, 30, 50, 60, 70});
  const auto maps = stub.embed_frame(f);
  REQUIRE_EQ(maps.channels(), 1);
  CHECK_EQ(maps.maps(0, 0), 60.0f);
  CHECK_EQ(maps.maps(0, 1), 180.0f);

  CHECK_THROWS_AS(vqa::StubBackbone("bad", vqa::MatrixX<float>(2, 4)), vqa::ConfigError);
}

TEST_CASE("stub backbone: malformed frames are a decode error") {
  Frame f = make_frame(1, 2, {1, 2, 3});  // buffer too short for 1x2
  const vqa::StubBackbone stub;
  CHECK_THROWS_AS(stub.embed_frame(f), vqa::DecodeError);
}

TEST_CASE("extract: three hand-checked frames through the identity stub") {
  FrameStack stack;
  stack.source_id = "hand";
  stack.frame_rate = 30.0;
  stack.frames.push_back(make_frame(1, 2, {10, 20, 30, 50, 60, 70}));
  stack.frames.push_back(make_frame(1, 2, {5, 5, 5, 5, 5, 5}));
  stack.frames.push_back(make_frame(1, 2, {0, 1, 100, 255, 3, 100}));

  const vqa::StubBackbone stub;
  const auto record = vqa::extract_video_features(stack, stub);
  CHECK_EQ(record.source_id, "hand");
  CHECK_EQ(record.backbone_tag, "stub-rgb");
  CHECK_EQ(record.extraction_version, vqa::extraction_version());
  REQUIRE_EQ(record.frame_count(), 3);
  REQUIRE_EQ(record.dim(), 6);

  // every entry below is exactly representable, so compare bit-for-bit
  const float expected[3][6] = {
      {30, 40, 50, 20, 20, 20},        // per-channel means then stds
      {5, 5, 5, 0, 0, 0},              // constant frame: spread collapses
      {127.5f, 2, 100, 127.5f, 1, 0},  // mean of {0,255} and its deviation
  };
  for (Index t = 0; t < 3; ++t)
    for (Index j = 0; j < 6; ++j) CHECK_EQ(record.payload(t, j), expected[t][j]);
}

TEST_CASE("extract: repeated runs produce bit-identical payloads") {
  const FrameStack stack = random_stack(2024, 240, 4, 6);
  const vqa::StubBackbone stub;
  const auto a = vqa::extract_video_features(stack, stub);
  const auto b = vqa::extract_video_features(stack, stub);
  CHECK_EQ(a.frame_count(), 240);
  CHECK(same_bits(a.payload, b.payload));
}

TEST_CASE("extract: a source with no frames is a decode error") {
  struct EmptySource : vqa::VideoSource {
    std::string name = "void";
    const std::string& id() const override { return name; }
    double frame_rate() const override { return 30.0; }
    std::optional<Frame> next() override { return std::nullopt; }
  } source;
  const vqa::StubBackbone stub;
  try {
    vqa::extract_video_features(source, stub);
    FAIL("expected DecodeError");
  } catch (const vqa::DecodeError& e) {
    CHECK(std::string(e.what()).find("zero frames") != std::string::npos);
  }
}

TEST_CASE("raw video: write / read round trip preserves every byte") {
  TempDir dir;
  const FrameStack stack = random_stack(7, 9, 3, 5);
  const fs::path path = dir.path / "roundtrip.rawvid";
  vqa::write_raw_video(path, stack);

  vqa::RawVideoReader reader(path);
  CHECK_EQ(reader.id(), "roundtrip");
  CHECK_EQ(reader.frame_rate(), 24.0);
  const FrameStack back = vqa::read_all(reader);
  REQUIRE_EQ(back.frames.size(), stack.frames.size());
  for (std::size_t t = 0; t < stack.frames.size(); ++t) {
    CHECK_EQ(back.frames[t].height, stack.frames[t].height);
    CHECK_EQ(back.frames[t].width, stack.frames[t].width);
    CHECK(back.frames[t].rgb == stack.frames[t].rgb);
  }
}

TEST_CASE("raw video: open_video dispatches on the extension") {
  TempDir dir;
  const FrameStack stack = random_stack(8, 4, 2, 2);
  const fs::path path = dir.path / "clip.rawvid";
  vqa::write_raw_video(path, stack);

  auto source = vqa::open_video(path);
  const vqa::StubBackbone stub;
  const auto via_file = vqa::extract_video_features(*source, stub);
  const auto direct = vqa::extract_video_features(stack, stub);
  CHECK(same_bits(via_file.payload, direct.payload));
}

TEST_CASE("raw video: a mangled header is rejected up front") {
  TempDir dir;
  const fs::path path = dir.path / "bad.rawvid";
  std::ofstream(path, std::ios::binary) << "not a video at all";
  CHECK_THROWS_AS(vqa::RawVideoReader{path}, vqa::DecodeError);
  CHECK_THROWS_AS(vqa::RawVideoReader{dir.path / "absent.rawvid"}, vqa::NotFoundError);
}

TEST_CASE("raw video: truncation names the frame that broke") {
  TempDir dir;
  const FrameStack stack = random_stack(9, 3, 2, 2);
  const fs::path path = dir.path / "cut.rawvid";
  vqa::write_raw_video(path, stack);
  // header (28 bytes) + two full 12-byte frames + 5 stray bytes
  fs::resize_file(path, 28 + 2 * 12 + 5);

  vqa::RawVideoReader reader(path);
  CHECK(reader.next().has_value());
  CHECK(reader.next().has_value());
  try {
    reader.next();
    FAIL("expected DecodeError");
  } catch (const vqa::DecodeError& e) {
    CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
  }
}

TEST_CASE("parse_frame_rate: plain and rational forms") {
  CHECK_EQ(vqa::parse_frame_rate("25"), 25.0);
  CHECK_EQ(vqa::parse_frame_rate("30000/1001"), doctest::Approx(29.97002997).epsilon(1e-9));
  CHECK_THROWS_AS(vqa::parse_frame_rate("0/0"), vqa::DecodeError);
  CHECK_THROWS_AS(vqa::parse_frame_rate("fast"), vqa::DecodeError);
}

TEST_CASE("valid_source_id accepts file-name-safe ids only") {
  CHECK(vqa::valid_source_id("a"));
  CHECK(vqa::valid_source_id("A-1_b.c"));
  CHECK_FALSE(vqa::valid_source_id(""));
  CHECK_FALSE(vqa::valid_source_id("."));
  CHECK_FALSE(vqa::valid_source_id(".."));
  CHECK_FALSE(vqa::valid_source_id("a/b"));
  CHECK_FALSE(vqa::valid_source_id("a b"));
  CHECK_FALSE(vqa::valid_source_id(std::string(201, 'x')));
}

TEST_CASE("feature cache: store / load round trip is bit exact") {
  TempDir dir;
  vqa::FeatureCache cache(dir.path);

  vqa::FeatureCacheRecord record;
  record.source_id = "vid_001";
  record.backbone_tag = "stub-rgb";
  record.extraction_version = vqa::extraction_version();
  record.payload.resize(5, 4);
  std::mt19937_64 rng(11);
  for (Index i = 0; i < record.payload.size(); ++i) {
    // arbitrary bit patterns, not just friendly values
    const auto bits = static_cast<std::uint32_t>(rng());
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    if (!std::isfinite(v)) v = 1.0f;
    record.payload.data()[i] = v;
  }
  record.payload(0, 0) = 0.0f;
  record.payload(0, 1) = -0.0f;
  record.payload(0, 2) = 1e-45f;  // denormal survives the trip too

  CHECK_FALSE(cache.contains("stub-rgb", "vid_001"));
  cache.store(record);
  CHECK(cache.contains("stub-rgb", "vid_001"));

  const auto back = cache.load("stub-rgb", "vid_001");
  CHECK_EQ(back.source_id, record.source_id);
  CHECK_EQ(back.backbone_tag, record.backbone_tag);
  CHECK_EQ(back.extraction_version, record.extraction_version);
  CHECK(same_bits(back.payload, record.payload));
}

TEST_CASE("feature cache: missing records are NotFound, not corruption") {
  TempDir dir;
  vqa::FeatureCache cache(dir.path);
  CHECK_THROWS_AS(cache.load("stub-rgb", "nope"), vqa::NotFoundError);
}

TEST_CASE("feature cache: header / payload disagreements are corruption") {
  TempDir dir;
  vqa::FeatureCache cache(dir.path);
  vqa::FeatureCacheRecord record;
  record.source_id = "vid";
  record.backbone_tag = "tag-a";
  record.extraction_version = vqa::extraction_version();
  record.payload.setZero(2, 3);
  cache.store(record);

  SUBCASE("payload shorter than the header promises") {
    fs::resize_file(cache.payload_path("tag-a", "vid"), 4);
    CHECK_THROWS_AS(cache.load("tag-a", "vid"), vqa::CorruptionError);
  }
  SUBCASE("record filed under the wrong backbone directory") {
    fs::create_directories(dir.path / "tag-b");
    fs::copy(cache.header_path("tag-a", "vid"), cache.header_path("tag-b", "vid"));
    fs::copy(cache.payload_path("tag-a", "vid"), cache.payload_path("tag-b", "vid"));
    CHECK_THROWS_AS(cache.load("tag-b", "vid"), vqa::CorruptionError);
  }
  SUBCASE("unreadable header") {
    std::ofstream(cache.header_path("tag-a", "vid"), std::ios::trunc) << "{ nope";
    CHECK_THROWS_AS(cache.load("tag-a", "vid"), vqa::CorruptionError);
  }
}

TEST_CASE("feature cache: hostile ids never touch the filesystem") {
  TempDir dir;
  vqa::FeatureCache cache(dir.path);
  vqa::FeatureCacheRecord record;
  record.source_id = "../escape";
  record.backbone_tag = "stub-rgb";
  record.extraction_version = vqa::extraction_version();
  record.payload.setZero(1, 1);
  CHECK_THROWS_AS(cache.store(record), vqa::ValidationError);
  CHECK_THROWS_AS(cache.load("stub-rgb", "../escape"), vqa::ValidationError);
  CHECK_THROWS_AS(cache.load("..", "x"), vqa::ValidationError);
  CHECK_FALSE(fs::exists(dir.path.parent_path() / "escape.bin"));
}

TEST_CASE("feature cache: empty payloads are refused at store time") {
  TempDir dir;
  vqa::FeatureCache cache(dir.path);
  vqa::FeatureCacheRecord record;
  record.source_id = "vid";
  record.backbone_tag = "stub-rgb";
  record.extraction_version = vqa::extraction_version();
  CHECK_THROWS_AS(cache.store(record), vqa::ValidationError);
}

TEST_CASE("backbone manifest: fields load and relative paths anchor to the file") {
  TempDir dir;
  const fs::path path = dir.path / "net.json";
  std::ofstream(path) << R"({
    "tag": "resnet50-layer4",
    "kind": "onnx",
    "channels": 2048,
    "preprocess": {
      "pixel_scale": 255.0,
      "mean": [0.485, 0.456, 0.406],
      "std": [0.229, 0.224, 0.225],
      "max_side": 720
    },
    "model_path": "models/resnet50.onnx",
    "output_layer": "layer4"
  })";

  const auto m = vqa::BackboneManifest::load(path);
  CHECK_EQ(m.tag, "resnet50-layer4");
  CHECK_EQ(m.kind, "onnx");
  CHECK_EQ(m.channels, 2048);
  CHECK_EQ(m.preprocess.pixel_scale, 255.0);
  CHECK_EQ(m.preprocess.mean[0], 0.485);
  CHECK_EQ(m.preprocess.std[2], 0.225);
  CHECK_EQ(m.preprocess.max_side, 720);
  CHECK_EQ(m.model_path, dir.path / "models/resnet50.onnx");
  CHECK_EQ(m.output_layer, "layer4");
}

TEST_CASE("backbone manifest: stub manifests build working backbones") {
  TempDir dir;
  const fs::path path = dir.path / "stub.json";
  std::ofstream(path) << R"({
    "tag": "stub-luma",
    "kind": "stub",
    "channels": 1,
    "mix": [[0.25, 0.5, 0.25]]
  })";
  const auto m = vqa::BackboneManifest::load(path);
  const auto backbone = vqa::make_backbone(m);
  CHECK_EQ(backbone->tag(), "stub-luma");
  CHECK_EQ(backbone->channels(), 1);
  const Frame f = make_frame(1, 1, {8, 16, 24});
  CHECK_EQ(backbone->embed_frame(f).maps(0, 0), 16.0f);
}

TEST_CASE("backbone manifest: broken declarations fail loudly") {
  TempDir dir;

  const fs::path missing_tag = dir.path / "no-tag.json";
  std::ofstream(missing_tag) << R"({"kind": "stub", "channels": 3})";
  CHECK_THROWS_AS(vqa::BackboneManifest::load(missing_tag), vqa::ConfigError);

  const fs::path bad_mix = dir.path / "bad-mix.json";
  std::ofstream(bad_mix) << R"({"tag": "t", "kind": "stub", "channels": 2,
                               "mix": [[1, 0, 0]]})";
  CHECK_THROWS_AS(vqa::make_backbone(vqa::BackboneManifest::load(bad_mix)),
                  vqa::ConfigError);

  vqa::BackboneManifest unknown;
  unknown.tag = "t";
  unknown.kind = "tflite";
  unknown.channels = 3;
  CHECK_THROWS_AS(vqa::make_backbone(unknown), vqa::ConfigError);

  CHECK_THROWS_AS(vqa::BackboneManifest::load(dir.path / "absent.json"),
                  vqa::ConfigError);
}

#ifndef WILDVQA_HAVE_OPENCV
TEST_CASE("backbone manifest: onnx kind without the adapter says what is missing") {
  vqa::BackboneManifest m;
  m.tag = "resnet";
  m.kind = "onnx";
  m.channels = 2048;
  try {
    vqa::make_backbone(m);
    FAIL("expected ConfigError");
  } catch (const vqa::ConfigError& e) {
    CHECK(std::string(e.what()).find("does not include") != std::string::npos);
  }
}
#endif

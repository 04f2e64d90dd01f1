#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "vqa/types.hpp"

namespace vqa {

/// Pull-based frame producer. Implementations throw DecodeError on corrupt
/// input, naming the frame index where decoding failed.
class VideoSource {
 public:
  virtual ~VideoSource() = default;
  virtual const std::string& id() const = 0;
  virtual double frame_rate() const = 0;
  /// Next frame in display order, or nullopt at end of stream.
  virtual std::optional<Frame> next() = 0;
};

/// Drains a source into memory.
FrameStack read_all(VideoSource& source);

/// In-memory source over an existing frame stack (tests, synthetic clips).
class MemoryVideoSource : public VideoSource {
 public:
  explicit MemoryVideoSource(FrameStack stack);
  const std::string& id() const override { return stack_.source_id; }
  double frame_rate() const override { return stack_.frame_rate; }
  std::optional<Frame> next() override;

 private:
  FrameStack stack_;
  std::size_t pos_ = 0;
};

// Trivial uncompressed clip container (".rawvid"): a fixed little-endian
// header (magic "RVID", version, frame count, height, width, fps) followed by
// the frames as raw interleaved RGB bytes. Exists so synthetic clips can run
// through the same decode -> extract path as real videos without a codec
// dependency.

void write_raw_video(const std::filesystem::path& path, const FrameStack& stack);

class RawVideoReader : public VideoSource {
 public:
  explicit RawVideoReader(const std::filesystem::path& path);
  ~RawVideoReader() override;
  RawVideoReader(const RawVideoReader&) = delete;
  RawVideoReader& operator=(const RawVideoReader&) = delete;

  const std::string& id() const override { return id_; }
  double frame_rate() const override { return frame_rate_; }
  std::optional<Frame> next() override;

 private:
  std::string id_;
  double frame_rate_ = 0;
  std::uint32_t frame_count_ = 0, height_ = 0, width_ = 0;
  std::uint32_t next_frame_ = 0;
  void* file_ = nullptr;  // std::FILE
};

/// Compressed videos are decoded by shelling out to ffprobe/ffmpeg and reading
/// raw RGB frames over a pipe. Requires both tools on PATH (or the
/// WILDVQA_FFMPEG / WILDVQA_FFPROBE environment variables).
class PipeVideoReader : public VideoSource {
 public:
  explicit PipeVideoReader(const std::filesystem::path& path);
  ~PipeVideoReader() override;
  PipeVideoReader(const PipeVideoReader&) = delete;
  PipeVideoReader& operator=(const PipeVideoReader&) = delete;

  const std::string& id() const override { return id_; }
  double frame_rate() const override { return frame_rate_; }
  std::optional<Frame> next() override;

 private:
  std::string id_;
  double frame_rate_ = 0;
  int height_ = 0, width_ = 0;
  std::uint32_t next_frame_ = 0;
  void* pipe_ = nullptr;  // popen stream
};

/// Parses an ffprobe-style frame rate ("30000/1001" or "25").
double parse_frame_rate(const std::string& text);

/// Opens a video by extension: ".rawvid" natively, everything else through the
/// external decoder.
std::unique_ptr<VideoSource> open_video(const std::filesystem::path& path);

}  // namespace vqa

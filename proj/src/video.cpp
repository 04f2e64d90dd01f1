#include "vqa/video.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "vqa/errors.hpp"

namespace vqa {

namespace fs = std::filesystem;

FrameStack read_all(VideoSource& source) {
  FrameStack stack;
  stack.source_id = source.id();
  stack.frame_rate = source.frame_rate();
  while (auto frame = source.next()) stack.frames.push_back(std::move(*frame));
  stack.validate();
  return stack;
}

MemoryVideoSource::MemoryVideoSource(FrameStack stack) : stack_(std::move(stack)) {
  stack_.validate();
}

std::optional<Frame> MemoryVideoSource::next() {
  if (pos_ >= stack_.frames.size()) return std::nullopt;
  return stack_.frames[pos_++];
}

// --------------------------------------------------------------------------
// .rawvid container

namespace {

constexpr char kMagic[4] = {'R', 'V', 'I', 'D'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

}  // namespace

void write_raw_video(const fs::path& path, const FrameStack& stack) {
  stack.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 4);
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(stack.frames.size()));
  put(out, static_cast<std::uint32_t>(stack.frames.front().height));
  put(out, static_cast<std::uint32_t>(stack.frames.front().width));
  put(out, stack.frame_rate);
  for (const Frame& f : stack.frames)
    out.write(reinterpret_cast<const char*>(f.rgb.data()),
              static_cast<std::streamsize>(f.rgb.size()));
  if (!out) throw IoError("short write to " + path.string());
}

RawVideoReader::RawVideoReader(const fs::path& path) : id_(path.stem().string()) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  if (!f) throw NotFoundError("cannot open video " + path.string());
  file_ = f;

  char magic[4];
  std::uint32_t version = 0;
  double fps = 0;
  bool ok = std::fread(magic, 1, 4, f) == 4 && std::memcmp(magic, kMagic, 4) == 0;
  ok = ok && std::fread(&version, sizeof(version), 1, f) == 1 && version == kVersion;
  ok = ok && std::fread(&frame_count_, sizeof(frame_count_), 1, f) == 1;
  ok = ok && std::fread(&height_, sizeof(height_), 1, f) == 1;
  ok = ok && std::fread(&width_, sizeof(width_), 1, f) == 1;
  ok = ok && std::fread(&fps, sizeof(fps), 1, f) == 1;
  if (!ok || frame_count_ == 0 || height_ == 0 || width_ == 0 || !(fps > 0)) {
    std::fclose(f);
    file_ = nullptr;
    throw DecodeError("corrupt raw video header in " + path.string());
  }
  frame_rate_ = fps;
}

RawVideoReader::~RawVideoReader() {
  if (file_) std::fclose(static_cast<std::FILE*>(file_));
}

std::optional<Frame> RawVideoReader::next() {
  if (next_frame_ >= frame_count_) return std::nullopt;
  Frame frame;
  frame.height = static_cast<int>(height_);
  frame.width = static_cast<int>(width_);
  frame.rgb.resize(frame.pixel_count() * 3);
  const std::size_t got = std::fread(frame.rgb.data(), 1, frame.rgb.size(),
                                     static_cast<std::FILE*>(file_));
  if (got != frame.rgb.size())
    throw DecodeError("raw video '" + id_ + "': truncated at frame " +
                      std::to_string(next_frame_));
  ++next_frame_;
  return frame;
}

// --------------------------------------------------------------------------
// External decoder over a pipe

double parse_frame_rate(const std::string& text) {
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) return std::stod(text);
    const double num = std::stod(text.substr(0, slash));
    const double den = std::stod(text.substr(slash + 1));
    if (den == 0) throw DecodeError("frame rate '" + text + "' divides by zero");
    return num / den;
  } catch (const DecodeError&) {
    throw;
  } catch (const std::exception&) {
    throw DecodeError("cannot parse frame rate '" + text + "'");
  }
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  out += "'";
  return out;
}

std::string tool(const char* env, const char* fallback) {
  const char* v = std::getenv(env);
  return v && *v ? v : fallback;
}

std::string run_capture(const std::string& cmd, const std::string& what) {
  std::FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw DecodeError("cannot launch " + what);
  std::string out;
  char buf[512];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  if (status != 0)
    throw DecodeError(what + " failed (is it installed and the file a video?)");
  return out;
}

}  // namespace

PipeVideoReader::PipeVideoReader(const fs::path& path) : id_(path.stem().string()) {
  if (!fs::exists(path)) throw NotFoundError("cannot open video " + path.string());

  const std::string probe =
      tool("WILDVQA_FFPROBE", "ffprobe") +
      " -v error -select_streams v:0 -show_entries stream=width,height,avg_frame_rate"
      " -of csv=p=0 " +
      shell_quote(path.string()) + " 2>/dev/null";
  const std::string meta = run_capture(probe, "ffprobe on " + path.string());

  // expected: "<width>,<height>,<num/den>\n"
  int w = 0, h = 0;
  char rate[64] = {0};
  if (std::sscanf(meta.c_str(), "%d,%d,%63s", &w, &h, rate) != 3 || w <= 0 || h <= 0)
    throw DecodeError("unexpected ffprobe output for " + path.string() + ": " + meta);
  width_ = w;
  height_ = h;
  frame_rate_ = parse_frame_rate(rate);

  const std::string decode = tool("WILDVQA_FFMPEG", "ffmpeg") + " -v error -i " +
                             shell_quote(path.string()) +
                             " -f rawvideo -pix_fmt rgb24 pipe:1 2>/dev/null";
  std::FILE* pipe = popen(decode.c_str(), "r");
  if (!pipe) throw DecodeError("cannot launch ffmpeg for " + path.string());
  pipe_ = pipe;
}

PipeVideoReader::~PipeVideoReader() {
  if (pipe_) pclose(static_cast<std::FILE*>(pipe_));
}

std::optional<Frame> PipeVideoReader::next() {
  Frame frame;
  frame.height = height_;
  frame.width = width_;
  frame.rgb.resize(frame.pixel_count() * 3);
  const std::size_t got = std::fread(frame.rgb.data(), 1, frame.rgb.size(),
                                     static_cast<std::FILE*>(pipe_));
  if (got == 0) return std::nullopt;  // clean end of stream
  if (got != frame.rgb.size())
    throw DecodeError("video '" + id_ + "': decoder stopped mid-frame at frame " +
                      std::to_string(next_frame_));
  ++next_frame_;
  return frame;
}

std::unique_ptr<VideoSource> open_video(const fs::path& path) {
  if (path.extension() == ".rawvid") return std::make_unique<RawVideoReader>(path);
  return std::make_unique<PipeVideoReader>(path);
}

}  // namespace vqa

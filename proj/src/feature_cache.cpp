#include "vqa/feature_cache.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace vqa {

namespace fs = std::filesystem;
using nlohmann::json;

bool valid_source_id(const std::string& id) {
  if (id.empty() || id.size() > 200) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    if (!ok) return false;
  }
  // purely dot-composed names would collide with directory entries
  return id.find_first_not_of('.') != std::string::npos;
}

namespace {

void check_id(const std::string& id) {
  if (!valid_source_id(id))
    throw ValidationError("source id '" + id + "' is not a valid cache file name");
}

void check_tag(const std::string& tag) {
  if (!valid_source_id(tag))
    throw ValidationError("backbone tag '" + tag + "' is not a valid cache directory name");
}

// Write-then-rename so readers only ever see complete files.
void atomic_write(const fs::path& target, const char* data, std::size_t size) {
  static std::mt19937_64 rng(std::random_device{}());
  fs::path tmp = target;
  tmp += ".tmp" + std::to_string(rng());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot move " + tmp.string() + " to " + target.string() + ": " +
                  ec.message());
  }
}

}  // namespace

FeatureCache::FeatureCache(fs::path root) : root_(std::move(root)) {}

fs::path FeatureCache::payload_path(const std::string& tag, const std::string& id) const {
  return root_ / tag / (id + ".bin");
}

fs::path FeatureCache::header_path(const std::string& tag, const std::string& id) const {
  return root_ / tag / (id + ".json");
}

fs::path FeatureCache::store(const FeatureCacheRecord& record) const {
  check_id(record.source_id);
  check_tag(record.backbone_tag);
  if (record.payload.rows() == 0 || record.payload.cols() == 0)
    throw ValidationError("refusing to cache an empty feature payload for '" +
                          record.source_id + "'");

  const fs::path dir = root_ / record.backbone_tag;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create cache directory " + dir.string());

  const fs::path bin = payload_path(record.backbone_tag, record.source_id);
  atomic_write(bin, reinterpret_cast<const char*>(record.payload.data()),
               static_cast<std::size_t>(record.payload.size()) * sizeof(float));

  json header;
  header["source_id"] = record.source_id;
  header["T"] = record.frame_count();
  header["dim"] = record.dim();
  header["backbone_tag"] = record.backbone_tag;
  header["extraction_version"] = record.extraction_version;
  header["dtype"] = "f32le";
  const std::string text = header.dump(2) + "\n";
  // header lands after the payload: its presence implies a complete record
  atomic_write(header_path(record.backbone_tag, record.source_id), text.data(),
               text.size());
  return bin;
}

bool FeatureCache::contains(const std::string& tag, const std::string& id) const {
  check_id(id);
  check_tag(tag);
  return fs::exists(header_path(tag, id)) && fs::exists(payload_path(tag, id));
}

FeatureCacheRecord FeatureCache::load(const std::string& tag, const std::string& id) const {
  check_id(id);
  check_tag(tag);
  const fs::path hp = header_path(tag, id);
  const fs::path bp = payload_path(tag, id);
  if (!fs::exists(hp))
    throw NotFoundError("no cached features for '" + id + "' under backbone '" + tag +
                        "' in " + root_.string());

  json header;
  try {
    std::ifstream in(hp);
    in >> header;
  } catch (const std::exception& e) {
    throw CorruptionError("unreadable cache header " + hp.string() + ": " + e.what());
  }

  FeatureCacheRecord record;
  Index frames = 0, dim = 0;
  try {
    record.source_id = header.at("source_id").get<std::string>();
    record.backbone_tag = header.at("backbone_tag").get<std::string>();
    record.extraction_version = header.at("extraction_version").get<std::string>();
    frames = header.at("T").get<Index>();
    dim = header.at("dim").get<Index>();
    if (header.at("dtype").get<std::string>() != "f32le")
      throw CorruptionError("cache header " + hp.string() + ": unsupported dtype");
  } catch (const CorruptionError&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptionError("malformed cache header " + hp.string() + ": " + e.what());
  }

  if (record.source_id != id)
    throw CorruptionError("cache header " + hp.string() + " names source '" +
                          record.source_id + "', expected '" + id + "'");
  if (record.backbone_tag != tag)
    throw CorruptionError("cache header " + hp.string() + " names backbone '" +
                          record.backbone_tag + "', expected '" + tag + "'");
  if (frames <= 0 || dim <= 0)
    throw CorruptionError("cache header " + hp.string() + " declares empty payload");

  std::error_code ec;
  const auto actual = fs::file_size(bp, ec);
  if (ec)
    throw NotFoundError("cache payload missing for '" + id + "': " + bp.string());
  const auto expected = static_cast<std::uintmax_t>(frames) *
                        static_cast<std::uintmax_t>(dim) * sizeof(float);
  if (actual != expected)
    throw CorruptionError("cache payload " + bp.string() + " holds " +
                          std::to_string(actual) + " bytes, header promises " +
                          std::to_string(expected));

  record.payload.resize(frames, dim);
  std::ifstream in(bp, std::ios::binary);
  if (!in.read(reinterpret_cast<char*>(record.payload.data()),
               static_cast<std::streamsize>(expected)))
    throw CorruptionError("short read from cache payload " + bp.string());
  return record;
}

}  // namespace vqa

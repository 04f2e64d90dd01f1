#include "vqa/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "vqa/feature_cache.hpp"

namespace vqa {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> DatasetManifest::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.source_id);
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.back())) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && is_space(s[i])) ++i;
  return s.substr(i);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& csv_path, const ManifestLoadOptions& options) {
  std::ifstream in(csv_path);
  if (!in) throw NotFoundError("cannot open manifest " + csv_path.string());

  DatasetManifest manifest;
  manifest.name = csv_path.stem().string();

  bool declared_range = false;
  const fs::path sidecar = fs::path(csv_path).replace_extension(".json");
  if (fs::exists(sidecar)) {
    json doc;
    try {
      std::ifstream side(sidecar);
      side >> doc;
      if (doc.contains("name")) manifest.name = doc["name"].get<std::string>();
      if (doc.contains("mos_range")) {
        manifest.mos_range = doc["mos_range"].get<std::array<double, 2>>();
        declared_range = true;
      }
    } catch (const std::exception& e) {
      throw ConfigError("malformed manifest sidecar " + sidecar.string() + ": " + e.what());
    }
    if (declared_range && !(manifest.mos_range[0] < manifest.mos_range[1]))
      throw ConfigError("manifest sidecar " + sidecar.string() +
                        ": mos_range must satisfy lo < hi");
  }

  std::vector<std::string> problems;
  std::string line;
  if (!std::getline(in, line) || trim(line) != "source_id,video_path,mos")
    throw ValidationError("manifest " + csv_path.string() +
                          " must start with the header 'source_id,video_path,mos'");

  std::set<std::string> seen;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const auto at = [&](const std::string& what) {
      problems.push_back("row " + std::to_string(row) + ": " + what);
    };

    const auto fields = split_fields(line);
    if (fields.size() != 3) {
      at("expected 3 comma-separated fields, got " + std::to_string(fields.size()));
      continue;
    }
    DatasetEntry entry;
    entry.source_id = trim(fields[0]);
    if (!valid_source_id(entry.source_id)) {
      at("source_id '" + entry.source_id + "' is not usable as a file name");
      continue;
    }
    if (!seen.insert(entry.source_id).second) {
      at("duplicate source_id '" + entry.source_id + "'");
      continue;
    }

    const std::string raw_path = trim(fields[1]);
    if (!raw_path.empty()) {
      fs::path p = raw_path;
      entry.video_path = p.is_absolute() ? p : csv_path.parent_path() / p;
      if (options.require_files && !fs::exists(entry.video_path))
        at("video file missing: " + entry.video_path.string());
    } else if (options.require_files) {
      at("source_id '" + entry.source_id + "' has no video path");
    }

    try {
      std::size_t used = 0;
      entry.mos = std::stod(trim(fields[2]), &used);
      if (used != trim(fields[2]).size()) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      at("cannot parse mos '" + trim(fields[2]) + "'");
      continue;
    }
    if (!std::isfinite(entry.mos)) {
      at("mos is not finite");
      continue;
    }
    if (declared_range &&
        (entry.mos < manifest.mos_range[0] || entry.mos > manifest.mos_range[1]))
      at("mos " + std::to_string(entry.mos) + " of '" + entry.source_id +
         "' falls outside the declared range");

    manifest.entries.push_back(std::move(entry));
  }

  if (!problems.empty()) {
    std::string msg = "manifest " + csv_path.string() + " is invalid:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  if (manifest.entries.empty())
    throw ValidationError("manifest " + csv_path.string() + " has no entries");

  if (!declared_range) {
    double lo = manifest.entries.front().mos, hi = lo;
    for (const auto& e : manifest.entries) {
      lo = std::min(lo, e.mos);
      hi = std::max(hi, e.mos);
    }
    // degenerate observed range (all scores equal) keeps a usable width
    manifest.mos_range = {lo, hi > lo ? hi : lo + 1.0};
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + csv_path.string());
  out << "source_id,video_path,mos\n";
  char mos[40];
  for (const auto& e : manifest.entries) {
    std::snprintf(mos, sizeof(mos), "%.17g", e.mos);
    out << e.source_id << "," << e.video_path.string() << "," << mos << "\n";
  }
  if (!out) throw IoError("short write to " + csv_path.string());

  json side;
  side["name"] = manifest.name;
  side["mos_range"] = manifest.mos_range;
  std::ofstream sout(fs::path(csv_path).replace_extension(".json"), std::ios::trunc);
  sout << side.dump(2) << "\n";
  if (!sout) throw IoError("cannot write manifest sidecar for " + csv_path.string());
}

std::vector<SplitPlan> make_splits(const DatasetManifest& manifest,
                                   std::uint64_t base_seed, int runs) {
  const Index n = manifest.size();
  if (n < 5)
    throw DomainError("need at least 5 entries to form 60/20/20 splits, have " +
                      std::to_string(n));
  if (runs < 1) throw DomainError("split runs must be positive");

  std::vector<std::string> sorted = manifest.ids();
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValidationError("manifest has duplicate source ids");

  const auto n_val = static_cast<Index>(std::lround(0.2 * static_cast<double>(n)));
  const auto n_test = n_val;  // same rounding for both holdout parts
  const Index n_train = n - n_val - n_test;

  std::vector<SplitPlan> plans;
  plans.reserve(static_cast<std::size_t>(runs));
  for (int run = 0; run < runs; ++run) {
    SplitPlan plan;
    plan.run_index = run;
    plan.seed = base_seed + static_cast<std::uint64_t>(run);

    std::vector<std::string> ids = sorted;
    std::mt19937_64 rng(plan.seed);
    for (Index i = n - 1; i > 0; --i) {  // Fisher-Yates, explicit for stability
      const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }

    plan.train.assign(ids.begin(), ids.begin() + n_train);
    plan.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    plan.test.assign(ids.begin() + n_train + n_val, ids.end());
    plans.push_back(std::move(plan));
  }
  return plans;
}

void write_splits(const fs::path& path, const std::vector<SplitPlan>& plans) {
  json doc;
  doc["plans"] = json::array();
  for (const auto& plan : plans) {
    json p;
    p["run_index"] = plan.run_index;
    p["seed"] = plan.seed;
    p["train"] = plan.train;
    p["val"] = plan.val;
    p["test"] = plan.test;
    doc["plans"].push_back(std::move(p));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write split plans to " + path.string());
  out << doc.dump(2) << "\n";
}

std::vector<SplitPlan> read_splits(const fs::path& path) {
  json doc;
  try {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open split plans " + path.string());
    in >> doc;
  } catch (const NotFoundError&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptionError("malformed split plans " + path.string() + ": " + e.what());
  }

  std::vector<SplitPlan> plans;
  try {
    for (const auto& p : doc.at("plans")) {
      SplitPlan plan;
      plan.run_index = p.at("run_index").get<int>();
      plan.seed = p.at("seed").get<std::uint64_t>();
      plan.train = p.at("train").get<std::vector<std::string>>();
      plan.val = p.at("val").get<std::vector<std::string>>();
      plan.test = p.at("test").get<std::vector<std::string>>();
      if (plan.train.empty() || plan.val.empty() || plan.test.empty())
        throw CorruptionError("split plans " + path.string() + ": run " +
                              std::to_string(plan.run_index) + " has an empty part");
      plans.push_back(std::move(plan));
    }
  } catch (const CorruptionError&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptionError("malformed split plans " + path.string() + ": " + e.what());
  }
  return plans;
}

}  // namespace vqa

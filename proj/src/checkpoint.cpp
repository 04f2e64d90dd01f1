#include "vqa/checkpoint.hpp"

#include <json.hpp>

#include <fstream>

namespace vqa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Index expected_weights(const Checkpoint& ck) {
  if (ck.model_kind == "recurrent") {
    const auto p = QualityModelParams<double>::zeros(ck.input_dim, ck.reduced_dim,
                                                     ck.hidden_dim);
    return flat_size(p);
  }
  const auto p = AffineModelParams<double>::zeros(ck.input_dim, ck.reduced_dim);
  return affine_flat_size(p);
}

fs::path strip_known_extension(fs::path p) {
  const auto ext = p.extension();
  if (ext == ".json" || ext == ".bin") p.replace_extension();
  return p;
}

}  // namespace

void Checkpoint::validate() const {
  if (model_kind != "recurrent" && model_kind != "affine")
    throw ConfigError("checkpoint: unknown model kind '" + model_kind + "'");
  if (input_dim < 1 || reduced_dim < 1)
    throw ConfigError("checkpoint: dimensions must be positive");
  if (model_kind == "recurrent" && hidden_dim < 1)
    throw ConfigError("checkpoint: recurrent model needs a positive hidden dim");
  pooling.validate();
  if (!(mos_range[0] < mos_range[1]))
    throw ConfigError("checkpoint: mos_range must satisfy lo < hi");
  if (weights.size() != expected_weights(*this))
    throw ShapeError("checkpoint: weight vector has " + std::to_string(weights.size()) +
                     " entries, shape implies " + std::to_string(expected_weights(*this)));
}

void save_checkpoint(const fs::path& prefix, const Checkpoint& ck) {
  ck.validate();
  const fs::path base = strip_known_extension(prefix);

  json meta;
  meta["model_kind"] = ck.model_kind;
  meta["backbone_tag"] = ck.backbone_tag;
  meta["dataset"] = ck.dataset_name;
  meta["mos_range"] = ck.mos_range;
  meta["pooling"] = {{"tau", ck.pooling.tau},
                     {"gamma", ck.pooling.gamma},
                     {"memory", to_string(ck.pooling.memory)}};
  meta["drop_std_half"] = ck.drop_std_half;
  meta["seed"] = ck.seed;
  meta["epoch"] = ck.epoch;
  meta["val_srocc"] = ck.val_srocc;
  meta["dims"] = {{"input", ck.input_dim},
                  {"reduced", ck.reduced_dim},
                  {"hidden", ck.hidden_dim}};
  meta["weights"] = {{"dtype", "f64le"}, {"count", ck.weights.size()}};

  fs::path bin = base;
  bin += ".bin";
  {
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint weights " + bin.string());
    out.write(reinterpret_cast<const char*>(ck.weights.data()),
              static_cast<std::streamsize>(ck.weights.size()) * sizeof(double));
    if (!out) throw IoError("short write to " + bin.string());
  }
  fs::path meta_path = base;
  meta_path += ".json";
  std::ofstream out(meta_path, std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint manifest " + meta_path.string());
  out << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const fs::path& prefix) {
  const fs::path base = strip_known_extension(prefix);
  fs::path meta_path = base, bin = base;
  meta_path += ".json";
  bin += ".bin";
  if (!fs::exists(meta_path))
    throw NotFoundError("no checkpoint manifest at " + meta_path.string());

  json meta;
  try {
    std::ifstream in(meta_path);
    in >> meta;
  } catch (const std::exception& e) {
    throw CorruptionError("unreadable checkpoint manifest " + meta_path.string() + ": " +
                          e.what());
  }

  Checkpoint ck;
  Index count = 0;
  try {
    ck.model_kind = meta.at("model_kind").get<std::string>();
    ck.backbone_tag = meta.at("backbone_tag").get<std::string>();
    ck.dataset_name = meta.at("dataset").get<std::string>();
    ck.mos_range = meta.at("mos_range").get<std::array<double, 2>>();
    ck.pooling.tau = meta.at("pooling").at("tau").get<int>();
    ck.pooling.gamma = meta.at("pooling").at("gamma").get<double>();
    ck.pooling.memory =
        memory_mode_from_string(meta.at("pooling").at("memory").get<std::string>());
    ck.drop_std_half = meta.at("drop_std_half").get<bool>();
    ck.seed = meta.at("seed").get<std::uint64_t>();
    ck.epoch = meta.at("epoch").get<int>();
    ck.val_srocc = meta.at("val_srocc").get<double>();
    ck.input_dim = meta.at("dims").at("input").get<Index>();
    ck.reduced_dim = meta.at("dims").at("reduced").get<Index>();
    ck.hidden_dim = meta.at("dims").at("hidden").get<Index>();
    if (meta.at("weights").at("dtype").get<std::string>() != "f64le")
      throw CorruptionError("checkpoint " + meta_path.string() + ": unsupported dtype");
    count = meta.at("weights").at("count").get<Index>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptionError("malformed checkpoint manifest " + meta_path.string() + ": " +
                          e.what());
  }

  std::error_code ec;
  const auto actual = fs::file_size(bin, ec);
  if (ec) throw NotFoundError("checkpoint weights missing: " + bin.string());
  if (actual != static_cast<std::uintmax_t>(count) * sizeof(double))
    throw CorruptionError("checkpoint weights " + bin.string() + " hold " +
                          std::to_string(actual) + " bytes, manifest promises " +
                          std::to_string(count * sizeof(double)));

  ck.weights.resize(count);
  std::ifstream in(bin, std::ios::binary);
  if (!in.read(reinterpret_cast<char*>(ck.weights.data()),
               static_cast<std::streamsize>(count) * sizeof(double)))
    throw CorruptionError("short read from checkpoint weights " + bin.string());

  ck.validate();
  return ck;
}

QualityModelParams<double> checkpoint_model(const Checkpoint& ck) {
  if (ck.model_kind != "recurrent")
    throw ConfigError("checkpoint holds a '" + ck.model_kind +
                      "' model, expected 'recurrent'");
  ck.validate();
  auto p = QualityModelParams<double>::zeros(ck.input_dim, ck.reduced_dim, ck.hidden_dim);
  unflatten_into(ck.weights, p);
  return p;
}

AffineModelParams<double> checkpoint_affine(const Checkpoint& ck) {
  if (ck.model_kind != "affine")
    throw ConfigError("checkpoint holds a '" + ck.model_kind + "' model, expected 'affine'");
  ck.validate();
  auto p = AffineModelParams<double>::zeros(ck.input_dim, ck.reduced_dim);
  affine_unflatten_into(ck.weights, p);
  return p;
}

}  // namespace vqa

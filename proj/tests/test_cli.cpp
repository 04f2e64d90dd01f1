#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqa/checkpoint.hpp"
#include "vqa/dataset.hpp"
#include "vqa/model.hpp"
#include "vqa/plot.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = fs::temp_directory_path() / ("wildvqa-cli-" + std::to_string(rng()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct CmdResult {
  int code = -1;
  std::string out;  ///< stdout + stderr, interleaved
};

CmdResult run_cli(const std::string& args) {
  CmdResult r;
  const std::string cmd = std::string(WILDVQA_CLI) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.out += buf;
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_stub_decl(const fs::path& p) {
  std::ofstream out(p);
  out << "{\"tag\": \"stub-rgb\", \"kind\": \"stub\", \"channels\": 3}\n";
}

// small feature-level fixture most training tests share
std::string synth_features(const fs::path& dir, int videos = 25, int frames = 6,
                           int dim = 6, int seed = 7) {
  char args[256];
  std::snprintf(args, sizeof args,
                "synth --out '%s' --videos %d --frames %d --feature-dim %d --seed %d",
                dir.string().c_str(), videos, frames, dim, seed);
  const CmdResult r = run_cli(args);
  REQUIRE(r.code == 0);
  return r.out;
}

const std::string kSmallTrain =
    " --lr 1e-3 --batch-size 5 --patience 50 --reduced-dim 4 --hidden-dim 3";

}  // namespace

TEST_CASE("synth writes a dataset, a cache and the generator checkpoint") {
  TempDir tmp;
  const fs::path out = tmp.path / "synth";
  const std::string msg = synth_features(out);
  CHECK(msg.find("synthesized 25 videos") != std::string::npos);
  for (const char* name :
       {"dataset.csv", "dataset.json", "planted.json", "planted.bin", "manifest.json"})
    CHECK(fs::exists(out / name));

  const vqa::DatasetManifest manifest = vqa::load_manifest(out / "dataset.csv");
  CHECK(manifest.entries.size() == 25);
  const vqa::Checkpoint planted = vqa::load_checkpoint(out / "planted");
  CHECK(planted.model_kind == "recurrent");
  CHECK(planted.backbone_tag == "synthetic");
  CHECK(fs::exists(out / "cache" / "synthetic" / "syn-0000.bin"));
}

TEST_CASE("extract fills the cache once and reruns reuse it") {
  TempDir tmp;
  const fs::path vs = tmp.path / "vs";
  CmdResult r = run_cli("synth --out " + q(vs) +
                        " --video-backed --videos 3 --frames 10 --seed 3");
  REQUIRE(r.code == 0);
  const fs::path decl = tmp.path / "stub.json";
  write_stub_decl(decl);
  const fs::path cache = tmp.path / "cache";

  const std::string common = "extract --manifest " + q(vs / "dataset.csv") +
                             " --backbone " + q(decl) + " --cache-dir " + q(cache);
  r = run_cli(common + " --jobs 2");
  CHECK(r.code == 0);
  CHECK(r.out.find("extracted 3 new, reused 0 cached, failed 0 of 3") != std::string::npos);

  r = run_cli(common);
  CHECK(r.code == 0);
  CHECK(r.out.find("extracted 0 new, reused 3 cached") != std::string::npos);
}

TEST_CASE("a video that cannot be opened fails its row but not the batch") {
  TempDir tmp;
  const fs::path vs = tmp.path / "vs";
  REQUIRE(run_cli("synth --out " + q(vs) +
                  " --video-backed --videos 3 --frames 10 --seed 3")
              .code == 0);
  const fs::path decl = tmp.path / "stub.json";
  write_stub_decl(decl);

  std::ofstream(vs / "dataset.csv", std::ios::app)
      << "syn-gone," << (tmp.path / "missing.rawvid").string() << ",50.0\n";
  const fs::path cache = tmp.path / "cache";
  const CmdResult r = run_cli("extract --manifest " + q(vs / "dataset.csv") +
                              " --backbone " + q(decl) + " --cache-dir " + q(cache));
  CHECK(r.code == 3);
  CHECK(r.out.find("FAIL syn-gone") != std::string::npos);
  CHECK(r.out.find("extracted 3 new") != std::string::npos);
  CHECK(fs::exists(cache / "stub-rgb" / "syn-0002.bin"));
}

TEST_CASE("score matches the stored MOS and repeats byte for byte") {
  TempDir tmp;
  const fs::path vs = tmp.path / "vs";
  REQUIRE(run_cli("synth --out " + q(vs) +
                  " --video-backed --videos 3 --frames 12 --seed 3")
              .code == 0);
  const fs::path decl = tmp.path / "stub.json";
  write_stub_decl(decl);

  const vqa::DatasetManifest manifest = vqa::load_manifest(vs / "dataset.csv");
  const std::string base = "score --video " + q(manifest.entries[0].video_path) +
                           " --checkpoint " + q(vs / "planted") + " --backbone " +
                           q(decl);
  const CmdResult first = run_cli(base);
  REQUIRE(first.code == 0);
  CHECK(std::fabs(std::stod(first.out) - manifest.entries[0].mos) < 1e-4);

  const CmdResult second = run_cli(base);
  CHECK(second.out == first.out);

  const fs::path curve = tmp.path / "curve.csv";
  REQUIRE(run_cli(base + " --curve " + q(curve)).code == 0);
  const std::string csv = slurp(curve);
  CHECK(csv.rfind("frame,score,approx\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);  // header + 12 frames
}

TEST_CASE("score without a checkpoint exits with an IO error") {
  TempDir tmp;
  const fs::path decl = tmp.path / "stub.json";
  write_stub_decl(decl);
  const CmdResult r = run_cli("score --video " + q(tmp.path / "a.rawvid") +
                              " --checkpoint " + q(tmp.path / "nope") +
                              " --backbone " + q(decl));
  CHECK(r.code == 5);
  CHECK(r.out.find("no checkpoint") != std::string::npos);
}

TEST_CASE("a backbone tag mismatch stops score before decoding") {
  TempDir tmp;
  const fs::path fsyn = tmp.path / "fsyn";
  synth_features(fsyn);  // planted checkpoint carries tag "synthetic"
  const fs::path decl = tmp.path / "stub.json";
  write_stub_decl(decl);
  const CmdResult r = run_cli("score --video " + q(tmp.path / "a.rawvid") +
                              " --checkpoint " + q(fsyn / "planted") + " --backbone " +
                              q(decl));
  CHECK(r.code == 2);
  CHECK(r.out.find("stub-rgb") != std::string::npos);
  CHECK(r.out.find("synthetic") != std::string::npos);
}

TEST_CASE("train lays out runs, reports and splits, and eval reproduces it") {
  TempDir tmp;
  const fs::path fsyn = tmp.path / "fsyn";
  synth_features(fsyn);
  const fs::path out = tmp.path / "train";

  const CmdResult r = run_cli(
      "train --manifest " + q(fsyn / "dataset.csv") + " --backbone synthetic" +
      " --cache-dir " + q(fsyn / "cache") + " --out " + q(out) +
      " --runs 2 --seed 7 --max-epochs 4" + kSmallTrain);
  REQUIRE(r.code == 0);
  for (const char* name : {"report.json", "report.csv", "splits.json", "manifest.json"})
    CHECK(fs::exists(out / name));
  for (const char* run_dir : {"run_0", "run_1"})
    for (const char* name : {"checkpoint.json", "checkpoint.bin", "log.jsonl"})
      CHECK(fs::exists(out / run_dir / name));

  const json report = json::parse(slurp(out / "report.json"));
  CHECK(report.at("complete").get<bool>());
  CHECK(report.at("runs").size() == 2);

  const fs::path eout = tmp.path / "eval";
  const CmdResult e = run_cli("eval --manifest " + q(fsyn / "dataset.csv") +
                              " --cache-dir " + q(fsyn / "cache") + " --out " +
                              q(eout) + " --train-dir " + q(out));
  REQUIRE(e.code == 0);
  const json again = json::parse(slurp(eout / "report.json"));
  CHECK(again.at("aggregates").at("srocc").at("mean").get<double>() ==
        report.at("aggregates").at("srocc").at("mean").get<double>());
  CHECK(again.at("aggregates").at("rmse").at("mean").get<double>() ==
        report.at("aggregates").at("rmse").at("mean").get<double>());
}

TEST_CASE("training twice with one seed writes identical reports") {
  TempDir tmp;
  const fs::path fsyn = tmp.path / "fsyn";
  synth_features(fsyn);
  const std::string common = "train --manifest " + q(fsyn / "dataset.csv") +
                             " --backbone synthetic --cache-dir " + q(fsyn / "cache") +
                             " --runs 1 --seed 11 --max-epochs 3" + kSmallTrain;
  REQUIRE(run_cli(common + " --out " + q(tmp.path / "a")).code == 0);
  REQUIRE(run_cli(common + " --out " + q(tmp.path / "b")).code == 0);
  CHECK(slurp(tmp.path / "a" / "report.json") == slurp(tmp.path / "b" / "report.json"));
}

TEST_CASE("the planted checkpoint evaluates perfectly, a reshuffled one does not") {
  TempDir tmp;
  const fs::path fsyn = tmp.path / "fsyn";
  synth_features(fsyn);

  const std::string common = "eval --manifest " + q(fsyn / "dataset.csv") +
                             " --cache-dir " + q(fsyn / "cache");
  REQUIRE(run_cli(common + " --out " + q(tmp.path / "planted") + " --checkpoint " +
                  q(fsyn / "planted"))
              .code == 0);
  const json planted = json::parse(slurp(tmp.path / "planted" / "report.json"));
  const json& agg = planted.at("aggregates");
  CHECK(agg.at("srocc").at("mean").get<double>() == doctest::Approx(1.0));
  CHECK(agg.at("rmse").at("mean").get<double>() < 1e-3);  // native scale 0..100

  // same shape, freshly initialized weights: the scores carry no signal
  vqa::Checkpoint ck = vqa::load_checkpoint(fsyn / "planted");
  ck.weights = vqa::flatten(vqa::init_params<double>(ck.input_dim, ck.reduced_dim,
                                                     ck.hidden_dim, 99));
  vqa::save_checkpoint(tmp.path / "random", ck);
  REQUIRE(run_cli(common + " --out " + q(tmp.path / "rand-eval") + " --checkpoint " +
                  q(tmp.path / "random"))
              .code == 0);
  const json random = json::parse(slurp(tmp.path / "rand-eval" / "report.json"));
  CHECK(std::fabs(random.at("aggregates").at("srocc").at("mean").get<double>()) < 0.9);
}

TEST_CASE("config file values apply and flags override them") {
  TempDir tmp;
  const fs::path cfg_path = tmp.path / "cfg.json";
  {
    std::ofstream cfg(cfg_path);
    cfg << "{\n  \"seed\": 9,\n  \"synth\": {\"videos\": 8, \"frames\": 5, \"dim\": 4}\n}\n";
  }
  const fs::path out = tmp.path / "synth";
  const CmdResult r = run_cli("synth --config " + q(cfg_path) + " --out " + q(out) +
                              " --seed 11");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("synthesized 8 videos") != std::string::npos);

  const json meta = json::parse(slurp(out / "manifest.json"));
  CHECK(meta.at("effective").at("synth").at("videos").get<int>() == 8);   // config
  CHECK(meta.at("effective").at("synth").at("seed").get<int>() == 11);    // flag wins
  CHECK(slurp(out / "config.echo.json") == slurp(cfg_path));              // byte copy
}

TEST_CASE("a malformed config is rejected up front") {
  TempDir tmp;
  const fs::path cfg_path = tmp.path / "cfg.json";
  std::ofstream(cfg_path) << "[1, 2, 3]\n";
  const CmdResult r = run_cli("synth --config " + q(cfg_path) + " --out " +
                              q(tmp.path / "x"));
  CHECK(r.code == 2);
  CHECK(r.out.find("top level") != std::string::npos);
}

TEST_CASE("sweep writes a row and a cell report per variant plus plots") {
  TempDir tmp;
  const fs::path fsyn = tmp.path / "fsyn";
  synth_features(fsyn, 25, 5, 4);
  const fs::path out = tmp.path / "sweep";
  const CmdResult r = run_cli(
      "sweep --manifest " + q(fsyn / "dataset.csv") + " --backbone synthetic" +
      " --cache-dir " + q(fsyn / "cache") + " --out " + q(out) +
      " --runs 1 --seed 7 --max-epochs 2 --axis toggles" + kSmallTrain);
  REQUIRE(r.code == 0);

  const std::string table = slurp(out / "sweep.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);  // header + 4 cells
  CHECK(table.find("toggles,baseline") != std::string::npos);
  CHECK(table.find("toggles,no-std-pooling") != std::string::npos);
  CHECK(table.find("toggles,no-temporal-module") != std::string::npos);
  CHECK(table.find("toggles,average-memory") != std::string::npos);

  int cell_reports = 0;
  for (const auto& e : fs::directory_iterator(out / "cells")) {
    CHECK(e.path().extension() == ".json");
    ++cell_reports;
  }
  CHECK(cell_reports == 4);
  CHECK(fs::file_size(out / "sweep_toggles.svg") > 500);
  CHECK(slurp(out / "sweep_toggles.svg").rfind("<svg", 0) == 0);
}

TEST_CASE("an unknown sweep axis is a validation error") {
  TempDir tmp;
  const fs::path fsyn = tmp.path / "fsyn";
  synth_features(fsyn, 25, 5, 4);
  const CmdResult r = run_cli("sweep --manifest " + q(fsyn / "dataset.csv") +
                              " --backbone synthetic --cache-dir " + q(fsyn / "cache") +
                              " --out " + q(tmp.path / "sw") + " --axis sideways");
  CHECK(r.code == 2);
  CHECK(r.out.find("sideways") != std::string::npos);
}

TEST_CASE("unknown flags and missing values exit with usage errors") {
  CHECK(run_cli("train --no-such-flag").code == 2);
  CHECK(run_cli("").code == 2);            // a subcommand is required
  CHECK(run_cli("score").code == 2);       // --video et al. missing
  CHECK(run_cli("--help").code == 0);
}

TEST_CASE("line plots draw one polyline per series") {
  TempDir tmp;
  vqa::LinePlot plot;
  plot.title = "loss";
  plot.x_label = "epoch";
  plot.y_label = "L1";
  plot.series.push_back({"train", {1, 2, 3, 4}, {0.9, 0.6, 0.45, 0.41}});
  plot.series.push_back({"val", {1, 2, 3, 4}, {1.0, 0.8, 0.7, 0.72}});
  const fs::path svg_path = tmp.path / "loss.svg";
  vqa::write_line_plot(svg_path, plot);

  const std::string svg = slurp(svg_path);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  size_t polylines = 0, from = 0;
  while ((from = svg.find("<polyline", from)) != std::string::npos) {
    ++polylines;
    ++from;
  }
  CHECK(polylines == 2);
  CHECK(svg.find("loss") != std::string::npos);
  CHECK(svg.find("epoch") != std::string::npos);
  CHECK(svg.find("val") != std::string::npos);  // legend
}

TEST_CASE("box plots draw a box per label") {
  TempDir tmp;
  vqa::BoxPlot plot;
  plot.title = "srocc";
  plot.y_label = "SROCC";
  plot.boxes.push_back({"min", {0.70, 0.74, 0.78, 0.81, 0.77}});
  plot.boxes.push_back({"average", {0.60, 0.69, 0.64, 0.66, 0.71}});
  const fs::path svg_path = tmp.path / "box.svg";
  vqa::write_box_plot(svg_path, plot);

  const std::string svg = slurp(svg_path);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("average") != std::string::npos);
  CHECK(fs::file_size(svg_path) > 500);
}

TEST_CASE("plot writers validate their input") {
  TempDir tmp;
  const fs::path p = tmp.path / "bad.svg";
  vqa::LinePlot empty;
  CHECK_THROWS_AS(vqa::write_line_plot(p, empty), vqa::ValidationError);

  vqa::LinePlot ragged;
  ragged.series.push_back({"s", {1, 2, 3}, {1, 2}});
  CHECK_THROWS_AS(vqa::write_line_plot(p, ragged), vqa::ValidationError);

  vqa::LinePlot infinite;
  infinite.series.push_back({"s", {1, 2}, {1, std::numeric_limits<double>::infinity()}});
  CHECK_THROWS_AS(vqa::write_line_plot(p, infinite), vqa::ValidationError);

  vqa::BoxPlot hollow;
  hollow.boxes.push_back({"empty", {}});
  CHECK_THROWS_AS(vqa::write_box_plot(p, hollow), vqa::ValidationError);
  CHECK_THROWS_AS(vqa::write_box_plot(p, vqa::BoxPlot{}), vqa::ValidationError);
}

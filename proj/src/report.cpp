#include "vqa/report.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "vqa/errors.hpp"

namespace vqa {

namespace fs = std::filesystem;
using nlohmann::json;

Index EvalReport::complete_runs() const {
  Index n = 0;
  for (const auto& r : runs) n += r.complete ? 1 : 0;
  return n;
}

namespace {

MetricAggregate aggregate(const std::vector<RunMetrics>& runs, double RunMetrics::*field) {
  double sum = 0;
  Index n = 0;
  for (const auto& r : runs)
    if (r.complete) {
      sum += r.*field;
      ++n;
    }
  if (n == 0) return {};
  MetricAggregate out;
  out.mean = sum / static_cast<double>(n);
  double ss = 0;
  for (const auto& r : runs)
    if (r.complete) ss += (r.*field - out.mean) * (r.*field - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(n));  // population convention
  return out;
}

json to_json_number(double v) {
  return std::isfinite(v) ? json(v) : json();  // NaN serializes as null
}

double from_json_number(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

EvalReport aggregate_runs(std::string dataset, std::string model,
                          std::vector<RunMetrics> runs, bool mapped_plcc) {
  EvalReport report;
  report.dataset = std::move(dataset);
  report.model = std::move(model);
  report.mapped_plcc = mapped_plcc;
  report.runs = std::move(runs);
  report.srocc = aggregate(report.runs, &RunMetrics::srocc);
  report.krocc = aggregate(report.runs, &RunMetrics::krocc);
  report.plcc = aggregate(report.runs, &RunMetrics::plcc);
  report.rmse = aggregate(report.runs, &RunMetrics::rmse);
  report.complete = !report.runs.empty() &&
                    report.complete_runs() == static_cast<Index>(report.runs.size());
  return report;
}

void write_report_json(const fs::path& path, const EvalReport& report) {
  json doc;
  doc["dataset"] = report.dataset;
  doc["model"] = report.model;
  doc["mapped_plcc"] = report.mapped_plcc;
  doc["complete"] = report.complete;
  doc["runs"] = json::array();
  for (const auto& r : report.runs) {
    json row;
    row["run_index"] = r.run_index;
    row["complete"] = r.complete;
    row["srocc"] = to_json_number(r.srocc);
    row["krocc"] = to_json_number(r.krocc);
    row["plcc"] = to_json_number(r.plcc);
    row["rmse"] = to_json_number(r.rmse);
    row["best_epoch"] = r.best_epoch;
    row["val_srocc"] = to_json_number(r.val_srocc);
    if (!r.error.empty()) row["error"] = r.error;
    doc["runs"].push_back(std::move(row));
  }
  const auto agg = [](const MetricAggregate& a) {
    return json{{"mean", to_json_number(a.mean)}, {"std", to_json_number(a.stddev)}};
  };
  doc["aggregates"] = {{"srocc", agg(report.srocc)},
                       {"krocc", agg(report.krocc)},
                       {"plcc", agg(report.plcc)},
                       {"rmse", agg(report.rmse)}};

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << doc.dump(2) << "\n";
}

EvalReport read_report_json(const fs::path& path) {
  json doc;
  try {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open report " + path.string());
    in >> doc;
  } catch (const NotFoundError&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptionError("malformed report " + path.string() + ": " + e.what());
  }

  EvalReport report;
  try {
    report.dataset = doc.at("dataset").get<std::string>();
    report.model = doc.at("model").get<std::string>();
    report.mapped_plcc = doc.at("mapped_plcc").get<bool>();
    report.complete = doc.at("complete").get<bool>();
    for (const auto& row : doc.at("runs")) {
      RunMetrics r;
      r.run_index = row.at("run_index").get<int>();
      r.complete = row.at("complete").get<bool>();
      r.srocc = from_json_number(row.at("srocc"));
      r.krocc = from_json_number(row.at("krocc"));
      r.plcc = from_json_number(row.at("plcc"));
      r.rmse = from_json_number(row.at("rmse"));
      r.best_epoch = row.at("best_epoch").get<int>();
      r.val_srocc = from_json_number(row.at("val_srocc"));
      if (row.contains("error")) r.error = row["error"].get<std::string>();
      report.runs.push_back(std::move(r));
    }
    const auto agg = [](const json& a) {
      return MetricAggregate{from_json_number(a.at("mean")), from_json_number(a.at("std"))};
    };
    report.srocc = agg(doc.at("aggregates").at("srocc"));
    report.krocc = agg(doc.at("aggregates").at("krocc"));
    report.plcc = agg(doc.at("aggregates").at("plcc"));
    report.rmse = agg(doc.at("aggregates").at("rmse"));
  } catch (const std::exception& e) {
    throw CorruptionError("malformed report " + path.string() + ": " + e.what());
  }
  return report;
}

void write_report_csv(const fs::path& path, const std::vector<EvalReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report table " + path.string());
  out << "dataset,model,runs,complete_runs,srocc_mean,srocc_std,krocc_mean,krocc_std,"
         "plcc_mean,plcc_std,rmse_mean,rmse_std\n";
  char buf[40];
  const auto cell = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(std::isfinite(v) ? buf : "");
  };
  for (const auto& r : reports) {
    out << r.dataset << "," << r.model << "," << r.runs.size() << ","
        << r.complete_runs() << "," << cell(r.srocc.mean) << "," << cell(r.srocc.stddev)
        << "," << cell(r.krocc.mean) << "," << cell(r.krocc.stddev) << ","
        << cell(r.plcc.mean) << "," << cell(r.plcc.stddev) << "," << cell(r.rmse.mean)
        << "," << cell(r.rmse.stddev) << "\n";
  }
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace vqa

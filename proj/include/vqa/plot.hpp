#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vqa/errors.hpp"

// Static SVG result plots: line charts for parameter sweeps, box charts for
// per-run score distributions. Self-contained files, no rendering deps.

namespace vqa {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

struct BoxData {
  std::string label;
  std::vector<double> values;
};

struct BoxPlot {
  std::string title;
  std::string y_label;
  std::vector<BoxData> boxes;
};

void write_line_plot(const std::filesystem::path& path, const LinePlot& plot);
void write_box_plot(const std::filesystem::path& path, const BoxPlot& plot);

}  // namespace vqa

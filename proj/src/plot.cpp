#include "vqa/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace vqa {
namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 30, kTop = 50, kBottom = 60;
constexpr double kPlotW = kWidth - kLeft - kRight;
constexpr double kPlotH = kHeight - kTop - kBottom;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                         "#ff7f0e", "#8c564b"};

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void take(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (lo == hi) {
      lo -= 1.0;
      hi += 1.0;
    } else {
      const double pad = 0.05 * (hi - lo);
      lo -= pad;
      hi += pad;
    }
  }
};

// Round tick spacing to 1/2/5 times a power of ten.
std::vector<double> ticks(const Range& r, int target = 5) {
  const double raw = (r.hi - r.lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double mult : {1.0, 2.0, 5.0, 10.0}) {
    if (mult * mag >= raw) {
      step = mult * mag;
      break;
    }
  }
  std::vector<double> out;
  for (double t = std::ceil(r.lo / step) * step; t <= r.hi + 1e-9 * step; t += step)
    out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return out;
}

struct Svg {
  std::string body;

  void text(double x, double y, const std::string& s, const char* anchor,
            int size = 12, const char* extra = "") {
    body += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" +
            std::to_string(size) + "\" font-family=\"sans-serif\" text-anchor=\"" +
            anchor + "\" " + extra + ">" + escape(s) + "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0) {
    body += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
            "\" y2=\"" + num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
            num(width) + "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke) {
    body += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
            "\" height=\"" + num(h) + "\" fill=\"" + fill + "\" stroke=\"" + stroke +
            "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    body += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) +
            "\" fill=\"" + fill + "\"/>\n";
  }
};

void frame_axes(Svg& svg, const std::string& title, const std::string& x_label,
                const std::string& y_label) {
  svg.rect(kLeft, kTop, kPlotW, kPlotH, "none", "#333333");
  svg.text(kWidth / 2, kTop - 20, title, "middle", 15, "font-weight=\"bold\"");
  svg.text(kLeft + kPlotW / 2, kHeight - 12, x_label, "middle");
  svg.text(0, 0, y_label, "middle", 12,
           ("transform=\"translate(16," + num(kTop + kPlotH / 2) + ") rotate(-90)\"")
               .c_str());
}

void y_axis(Svg& svg, const Range& range) {
  for (double t : ticks(range)) {
    const double y = kTop + kPlotH * (range.hi - t) / (range.hi - range.lo);
    svg.line(kLeft - 4, y, kLeft, y, "#333333");
    svg.line(kLeft, y, kLeft + kPlotW, y, "#dddddd", 0.5);
    svg.text(kLeft - 8, y + 4, num(t), "end", 11);
  }
}

void save(const std::filesystem::path& path, const Svg& svg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write plot " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
      << kHeight << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << svg.body << "</svg>\n";
  if (!out.good()) throw IoError("short write to plot " + path.string());
}

// Linear-interpolation quantile of a sorted sample.
double quantile(const std::vector<double>& sorted, double p) {
  const double h = p * (static_cast<double>(sorted.size()) - 1);
  const std::size_t base = static_cast<std::size_t>(h);
  if (base + 1 >= sorted.size()) return sorted.back();
  return sorted[base] + (h - base) * (sorted[base + 1] - sorted[base]);
}

}  // namespace

void write_line_plot(const std::filesystem::path& path, const LinePlot& plot) {
  if (plot.series.empty()) throw ValidationError("line plot: no series");
  Range xr, yr;
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size())
      throw ValidationError("line plot: series '" + s.name + "' x/y sizes differ");
    if (s.x.empty())
      throw ValidationError("line plot: series '" + s.name + "' is empty");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        throw ValidationError("line plot: series '" + s.name + "' has a non-finite point");
      xr.take(s.x[i]);
      yr.take(s.y[i]);
    }
  }
  xr.finish();
  yr.finish();

  Svg svg;
  frame_axes(svg, plot.title, plot.x_label, plot.y_label);
  y_axis(svg, yr);
  for (double t : ticks(xr)) {
    const double x = kLeft + kPlotW * (t - xr.lo) / (xr.hi - xr.lo);
    svg.line(x, kTop + kPlotH, x, kTop + kPlotH + 4, "#333333");
    svg.text(x, kTop + kPlotH + 18, num(t), "middle", 11);
  }

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const std::string color = kPalette[k % 6];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double x = kLeft + kPlotW * (s.x[i] - xr.lo) / (xr.hi - xr.lo);
      const double y = kTop + kPlotH * (yr.hi - s.y[i]) / (yr.hi - yr.lo);
      points += num(x) + "," + num(y) + " ";
      svg.circle(x, y, 3, color);
    }
    svg.body += "<polyline points=\"" + points +
                "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    if (plot.series.size() > 1) {
      const double ly = kTop + 14 + 16 * static_cast<double>(k);
      svg.line(kLeft + kPlotW - 110, ly - 4, kLeft + kPlotW - 90, ly - 4, color, 2);
      svg.text(kLeft + kPlotW - 84, ly, s.name, "start", 11);
    }
  }
  save(path, svg);
}

void write_box_plot(const std::filesystem::path& path, const BoxPlot& plot) {
  if (plot.boxes.empty()) throw ValidationError("box plot: no boxes");
  Range yr;
  for (const auto& b : plot.boxes) {
    if (b.values.empty())
      throw ValidationError("box plot: box '" + b.label + "' is empty");
    for (double v : b.values) {
      if (!std::isfinite(v))
        throw ValidationError("box plot: box '" + b.label + "' has a non-finite value");
      yr.take(v);
    }
  }
  yr.finish();

  Svg svg;
  frame_axes(svg, plot.title, "", plot.y_label);
  y_axis(svg, yr);

  const double slot = kPlotW / static_cast<double>(plot.boxes.size());
  const double half = std::min(slot * 0.3, 40.0);
  auto ypix = [&](double v) { return kTop + kPlotH * (yr.hi - v) / (yr.hi - yr.lo); };
  for (std::size_t k = 0; k < plot.boxes.size(); ++k) {
    std::vector<double> sorted = plot.boxes[k].values;
    std::sort(sorted.begin(), sorted.end());
    const double q1 = quantile(sorted, 0.25), q2 = quantile(sorted, 0.5),
                 q3 = quantile(sorted, 0.75);
    const double cx = kLeft + slot * (static_cast<double>(k) + 0.5);
    const std::string color = kPalette[k % 6];

    svg.line(cx, ypix(sorted.front()), cx, ypix(q1), "#333333");
    svg.line(cx, ypix(q3), cx, ypix(sorted.back()), "#333333");
    svg.line(cx - half / 2, ypix(sorted.front()), cx + half / 2, ypix(sorted.front()),
             "#333333");
    svg.line(cx - half / 2, ypix(sorted.back()), cx + half / 2, ypix(sorted.back()),
             "#333333");
    svg.body += "<rect x=\"" + num(cx - half) + "\" y=\"" + num(ypix(q3)) +
                "\" width=\"" + num(2 * half) + "\" height=\"" +
                num(ypix(q1) - ypix(q3)) + "\" fill=\"" + color +
                "\" fill-opacity=\"0.25\" stroke=\"" + color + "\"/>\n";
    svg.line(cx - half, ypix(q2), cx + half, ypix(q2), color, 2);
    svg.text(cx, kTop + kPlotH + 18, plot.boxes[k].label, "middle", 11);
  }
  save(path, svg);
}

}  // namespace vqa

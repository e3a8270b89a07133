#include "isplit/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "isplit/errors.hpp"

namespace isplit {

namespace {

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

void write_plot_svg(const std::string& path, const std::string& title,
                    const std::vector<std::string>& x_labels,
                    const std::vector<PlotSeries>& series) {
  if (x_labels.empty()) throw DataError("plot needs at least one x position");
  const int width = 640, height = 400;
  const double left = 60, right = 20, top = 40, bottom = 70;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const std::size_t n = x_labels.size();

  auto x_at = [&](std::size_t i) {
    return n == 1 ? left + plot_w / 2
                  : left + plot_w * static_cast<double>(i) / static_cast<double>(n - 1);
  };

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for write");

  char stamp[64];
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<!-- generated: " << stamp << " -->\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"14\">" << title << "</text>\n";

  // axes
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"#444\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"#444\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    out << "<text x=\"" << fmt1(x_at(i)) << "\" y=\"" << top + plot_h + 14
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"9\" transform=\"rotate(-45 "
        << fmt1(x_at(i)) << " " << top + plot_h + 14 << ")\">" << x_labels[i] << "</text>\n";
  }

  double legend_y = top + 4;
  for (const auto& s : series) {
    if (s.values.size() != n) throw DataError("series '" + s.name + "' length mismatch");
    double lo = *std::min_element(s.values.begin(), s.values.end());
    double hi = *std::max_element(s.values.begin(), s.values.end());
    if (hi == lo) {
      hi += 1;
      lo -= 1;
    }
    auto y_at = [&](double v) { return top + plot_h * (1.0 - (v - lo) / (hi - lo)); };

    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\"";
    if (s.dashed) out << " stroke-dasharray=\"6,4\"";
    out << " points=\"";
    for (std::size_t i = 0; i < n; ++i)
      out << (i ? " " : "") << fmt1(x_at(i)) << "," << fmt1(y_at(s.values[i]));
    out << "\"/>\n";
    for (int mp : s.marker_positions) {
      if (mp < 0 || mp >= static_cast<int>(n)) continue;
      out << "<circle cx=\"" << fmt1(x_at(mp)) << "\" cy=\"" << fmt1(y_at(s.values[mp]))
          << "\" r=\"4\" fill=\"" << s.color << "\" stroke=\"#b00\" stroke-width=\"1.5\"/>\n";
    }
    out << "<text x=\"" << left + plot_w - 4 << "\" y=\"" << fmt1(legend_y + 10)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << s.color
        << "\">" << s.name << " [" << fmt4(lo) << ", " << fmt4(hi) << "]</text>\n";
    legend_y += 14;
  }
  out << "</svg>\n";
  if (!out) throw DataError("short write to '" + path + "'");
}

}  // namespace isplit

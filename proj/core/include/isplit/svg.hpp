#pragma once

#include <string>
#include <vector>

namespace isplit {

/// One curve on a plot. Series are normalized to their own [min,max] span so
/// curves with different units (CUI vs accuracy) share the canvas, in the
/// style of the usual split-point figures.
struct PlotSeries {
  std::string name;
  std::vector<double> values;
  std::string color = "#e0a800";
  bool dashed = false;
  std::vector<int> marker_positions;  // x indices to highlight
};

/// Hand-emitted SVG line plot: deterministic output except for one
/// timestamp comment line.
void write_plot_svg(const std::string& path, const std::string& title,
                    const std::vector<std::string>& x_labels,
                    const std::vector<PlotSeries>& series);

}  // namespace isplit

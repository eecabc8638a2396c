#pragma once

#include <optional>
#include <string>
#include <vector>

namespace guiderl {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title;
  std::string x_label = "step";
  std::string y_label;
  std::optional<double> vline_x;  // e.g. the guidance-decay horizon
  int width = 720;
  int height = 420;
};

// Plain SVG line chart; series get distinct stroke colors and a legend.
void write_svg_chart(const std::string& path, const std::vector<PlotSeries>& series,
                     const PlotOptions& opts);

// Centered moving average; window 1 returns the input unchanged.
std::vector<double> moving_average(const std::vector<double>& xs, int window);

// Renders the standard figures from a run directory's train.csv. Missing
// columns skip their plot with a warning on stderr. Returns the number of
// images written.
int emit_run_plots(const std::string& run_dir, int smooth_window = 51);

}  // namespace guiderl

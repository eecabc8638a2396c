#include "guiderl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "guiderl/metrics.hpp"

namespace guiderl {

namespace {
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace

std::vector<double> moving_average(const std::vector<double>& xs, int window) {
  if (window <= 1 || xs.empty()) return xs;
  std::vector<double> out(xs.size());
  int half = window / 2;
  double sum = 0;
  int lo = 0, hi = -1;  // inclusive running window bounds
  for (int i = 0; i < static_cast<int>(xs.size()); ++i) {
    int want_lo = std::max(0, i - half);
    int want_hi = std::min(static_cast<int>(xs.size()) - 1, i + half);
    while (hi < want_hi) sum += xs[++hi];
    while (lo < want_lo) sum -= xs[lo++];
    out[i] = sum / (hi - lo + 1);
  }
  return out;
}

void write_svg_chart(const std::string& path, const std::vector<PlotSeries>& series,
                     const PlotOptions& opts) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("plot: cannot write " + path);

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (ymax - ymin < 1e-12) {
    ymax += 1;
    ymin -= 1;
  }
  const int W = opts.width, H = opts.height;
  const int ml = 64, mr = 16, mt = 36, mb = 44;  // margins
  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto sy = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" "
      << "font-family=\"sans-serif\">" << opts.title << "</text>\n";

  // Axes and ticks.
  out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double xv = xmin + (xmax - xmin) * i / 4.0;
    double yv = ymin + (ymax - ymin) * i / 4.0;
    out << "<text x=\"" << fmt(sx(xv)) << "\" y=\"" << H - mb + 16
        << "\" text-anchor=\"middle\" font-size=\"10\" font-family=\"sans-serif\">" << fmt(xv)
        << "</text>\n";
    out << "<text x=\"" << ml - 6 << "\" y=\"" << fmt(sy(yv) + 3)
        << "\" text-anchor=\"end\" font-size=\"10\" font-family=\"sans-serif\">" << fmt(yv)
        << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << fmt(sy(yv)) << "\" x2=\"" << W - mr << "\" y2=\""
        << fmt(sy(yv)) << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
  }
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 8
      << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << opts.x_label
      << "</text>\n";

  if (opts.vline_x && *opts.vline_x >= xmin && *opts.vline_x <= xmax) {
    out << "<line x1=\"" << fmt(sx(*opts.vline_x)) << "\" y1=\"" << mt << "\" x2=\""
        << fmt(sx(*opts.vline_x)) << "\" y2=\"" << H - mb
        << "\" stroke=\"#555555\" stroke-dasharray=\"6,4\"/>\n";
  }

  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      out << fmt(sx(s.x[i])) << "," << fmt(sy(s.y[i])) << " ";
    }
    out << "\"/>\n";
    out << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 14 * (k + 1)
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\" fill=\"" << color
        << "\">" << s.name << "</text>\n";
  }
  out << "</svg>\n";
}

namespace {
bool emit_one(const CsvTable& t, const std::string& run_dir, const std::string& name,
              const std::vector<std::string>& cols, const std::string& title, int window,
              std::optional<double> vline) {
  int xi = t.column_index("step");
  if (xi < 0) {
    std::cerr << "plot: skipping " << name << " (no 'step' column)\n";
    return false;
  }
  std::vector<PlotSeries> series;
  for (const auto& c : cols) {
    if (t.column_index(c) < 0) {
      std::cerr << "plot: skipping " << name << " (missing column '" << c << "')\n";
      return false;
    }
    PlotSeries s;
    s.name = c;
    s.x = t.column("step");
    s.y = moving_average(t.column(c), window);
    series.push_back(std::move(s));
  }
  if (series.empty() || series[0].x.empty()) {
    std::cerr << "plot: skipping " << name << " (no rows)\n";
    return false;
  }
  PlotOptions opts;
  opts.title = title;
  opts.vline_x = vline;
  write_svg_chart(run_dir + "/" + name + ".svg", series, opts);

  // Smoothed series for downstream analysis.
  CsvWriter csv;
  std::vector<std::string> header = {"step"};
  for (const auto& c : cols) header.push_back(c);
  csv.open(run_dir + "/" + name + "_smoothed.csv", header);
  for (size_t i = 0; i < series[0].x.size(); ++i) {
    std::vector<double> row = {series[0].x[i]};
    for (const auto& s : series) row.push_back(s.y[i]);
    csv.row(row);
  }
  csv.close();
  return true;
}
}  // namespace

int emit_run_plots(const std::string& run_dir, int smooth_window) {
  CsvTable t = CsvTable::read(run_dir + "/train.csv");
  if (t.rows.empty()) {
    std::cerr << "plot: " << run_dir << "/train.csv has no rows, nothing to plot\n";
    return 0;
  }
  std::optional<double> horizon;
  {
    int hi = t.column_index("guidance_horizon");
    if (hi >= 0 && !t.rows.empty() && t.rows[0][static_cast<size_t>(hi)] > 0) {
      horizon = t.rows[0][static_cast<size_t>(hi)];
    }
  }
  int n = 0;
  n += emit_one(t, run_dir, "fig_reward", {"reward_step", "route_m_step"},
                "Per-step reward and route progress", smooth_window, std::nullopt);
  n += emit_one(t, run_dir, "fig_losses", {"critic_loss", "actor_loss"},
                "Actor and critic losses", smooth_window, std::nullopt);
  n += emit_one(t, run_dir, "fig_aux", {"vmr_loss", "awag_loss"},
                "Auxiliary guidance losses", smooth_window, horizon);
  n += emit_one(t, run_dir, "fig_infer", {"availability", "buffer_margin"},
                "Feedback availability and buffer margin", smooth_window, std::nullopt);
  return n;
}

}  // namespace guiderl

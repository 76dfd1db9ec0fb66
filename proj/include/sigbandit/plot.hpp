#ifndef SIGBANDIT_PLOT_HPP
#define SIGBANDIT_PLOT_HPP

#include <string>
#include <vector>

#include "sigbandit/experiments.hpp"

namespace sigbandit::plot {

struct Series {
  std::string label;
  std::string color;   // svg color
  bool dashed = false; // train curves are dashed
  std::vector<double> x, y, err;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

// self-contained SVG line chart with SEM error bars
std::string render_chart(const ChartSpec& spec);

// lays out one of the three figure kinds from an aggregate table
ChartSpec chart_from_table(const exp::AggregateTable& table);

}  // namespace sigbandit::plot

#endif

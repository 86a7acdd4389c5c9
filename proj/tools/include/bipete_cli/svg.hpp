// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace bipete::cli {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title;
  std::string x_label, y_label;
  // Axis ranges; equal bounds mean "fit the data".
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool diagonal = false;  // dashed y = x reference
};

/// Static line plot; non-finite points are skipped.
std::string line_plot_svg(const PlotSpec& spec, const std::vector<Series>& series);

}  // namespace bipete::cli

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "chauffeur/geometry.hpp"
#include "chauffeur/scenario.hpp"

namespace chauffeur {

// All writers emit self-contained static SVG with every number through
// format9, so identical inputs give identical bytes. Validation happens
// before the file is opened: a failed call leaves nothing behind.

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct ScatterGroup {
  std::string label;
  std::vector<Vec2> points;
};

// Multi-series line chart with axes, ticks, and a legend. Throws
// ValidationError when series is empty, any series is empty or ragged, or a
// value is non-finite. A single point renders as a dot.
void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series);

// Scatter of colored groups; highlights are drawn on top as rings.
void write_scatter_chart(const std::filesystem::path& path, const std::string& title,
                         const std::vector<ScatterGroup>& groups,
                         const std::vector<Vec2>& highlights = {});

// Top-down view: road edges, the (dashed) routing, the driven path, and
// start/end markers, all in a shared world scale with square aspect.
void write_trajectory_svg(const std::filesystem::path& path, const Scenario& s,
                          const std::vector<Vec2>& driven);

}  // namespace chauffeur

#include "chauffeur/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "chauffeur/errors.hpp"

namespace chauffeur {

namespace {

constexpr double kWidth = 640.0, kHeight = 480.0;
constexpr double kLeft = 70.0, kRight = 20.0, kTop = 40.0, kBottom = 50.0;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr int kPaletteSize = 10;

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

struct Extent {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Degenerate ranges get symmetric padding so the scale stays finite.
  void unflatten() {
    if (hi > lo) return;
    double pad = std::max(1.0, std::abs(lo) * 0.1);
    lo -= pad;
    hi += pad;
  }
  double span() const { return hi - lo; }
};

void open_svg(std::ostream& f, const std::string& title) {
  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
       "viewBox=\"0 0 640 480\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"#ffffff\"/>\n"
    << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" "
       "font-size=\"15\">"
    << xml_escape(title) << "</text>\n";
}

void axes_and_ticks(std::ostream& f, const Extent& ex, const Extent& ey,
                    const std::string& x_label, const std::string& y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom, y1 = kTop;
  f << "<line x1=\"" << format9(x0) << "\" y1=\"" << format9(y0) << "\" x2=\"" << format9(x1)
    << "\" y2=\"" << format9(y0) << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
  f << "<line x1=\"" << format9(x0) << "\" y1=\"" << format9(y0) << "\" x2=\"" << format9(x0)
    << "\" y2=\"" << format9(y1) << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = ex.lo + ex.span() * i / 4.0;
    double px = x0 + (x1 - x0) * i / 4.0;
    f << "<line x1=\"" << format9(px) << "\" y1=\"" << format9(y0) << "\" x2=\"" << format9(px)
      << "\" y2=\"" << format9(y0 + 5.0) << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
    f << "<text x=\"" << format9(px) << "\" y=\"" << format9(y0 + 18.0)
      << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">" << format9(fx)
      << "</text>\n";
    double fy = ey.lo + ey.span() * i / 4.0;
    double py = y0 - (y0 - y1) * i / 4.0;
    f << "<line x1=\"" << format9(x0 - 5.0) << "\" y1=\"" << format9(py) << "\" x2=\""
      << format9(x0) << "\" y2=\"" << format9(py)
      << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
    f << "<text x=\"" << format9(x0 - 8.0) << "\" y=\"" << format9(py + 4.0)
      << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">" << format9(fy)
      << "</text>\n";
  }
  f << "<text x=\"" << format9(0.5 * (x0 + x1)) << "\" y=\"" << format9(kHeight - 12.0)
    << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">"
    << xml_escape(x_label) << "</text>\n";
  f << "<text x=\"18\" y=\"" << format9(0.5 * (y0 + y1))
    << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\" "
       "transform=\"rotate(-90 18 "
    << format9(0.5 * (y0 + y1)) << ")\">" << xml_escape(y_label) << "</text>\n";
}

void legend(std::ostream& f, const std::vector<std::string>& labels) {
  double lx = kWidth - kRight - 150.0, ly = kTop + 8.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) continue;
    double y = ly + 16.0 * static_cast<double>(i);
    f << "<line x1=\"" << format9(lx) << "\" y1=\"" << format9(y) << "\" x2=\""
      << format9(lx + 22.0) << "\" y2=\"" << format9(y) << "\" stroke=\""
      << kPalette[i % kPaletteSize] << "\" stroke-width=\"2\"/>\n";
    f << "<text x=\"" << format9(lx + 28.0) << "\" y=\"" << format9(y + 4.0)
      << "\" font-family=\"monospace\" font-size=\"11\">" << xml_escape(labels[i])
      << "</text>\n";
  }
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write: " + path.string());
  f << body;
}

}  // namespace

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
  if (series.empty()) throw ValidationError("line chart: no series");
  Extent ex, ey;
  for (const Series& s : series) {
    if (s.x.empty()) throw ValidationError("line chart: empty series '" + s.label + "'");
    if (s.x.size() != s.y.size())
      throw ValidationError("line chart: ragged series '" + s.label + "'");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        throw ValidationError("line chart: non-finite value in '" + s.label + "'");
      ex.add(s.x[i]);
      ey.add(s.y[i]);
    }
  }
  ex.unflatten();
  ey.unflatten();

  std::ostringstream f;
  open_svg(f, title);
  axes_and_ticks(f, ex, ey, x_label, y_label);
  auto px = [&](double x) { return kLeft + (x - ex.lo) / ex.span() * (kWidth - kLeft - kRight); };
  auto py = [&](double y) {
    return (kHeight - kBottom) - (y - ey.lo) / ey.span() * (kHeight - kTop - kBottom);
  };
  std::vector<std::string> labels;
  for (size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    const char* color = kPalette[si % kPaletteSize];
    labels.push_back(s.label);
    if (s.x.size() > 1) {
      f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) {
        if (i) f << ' ';
        f << format9(px(s.x[i])) << ',' << format9(py(s.y[i]));
      }
      f << "\"/>\n";
    }
    for (size_t i = 0; i < s.x.size(); ++i)
      f << "<circle cx=\"" << format9(px(s.x[i])) << "\" cy=\"" << format9(py(s.y[i]))
        << "\" r=\"3\" fill=\"" << color << "\"/>\n";
  }
  legend(f, labels);
  f << "</svg>\n";
  write_file(path, f.str());
}

void write_scatter_chart(const std::filesystem::path& path, const std::string& title,
                         const std::vector<ScatterGroup>& groups,
                         const std::vector<Vec2>& highlights) {
  size_t total = 0;
  for (const auto& g : groups) total += g.points.size();
  if (groups.empty() || total == 0) throw ValidationError("scatter chart: no points");
  Extent ex, ey;
  for (const auto& g : groups)
    for (const Vec2& p : g.points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw ValidationError("scatter chart: non-finite point in '" + g.label + "'");
      ex.add(p.x);
      ey.add(p.y);
    }
  ex.unflatten();
  ey.unflatten();

  std::ostringstream f;
  open_svg(f, title);
  axes_and_ticks(f, ex, ey, "", "");
  auto px = [&](double x) { return kLeft + (x - ex.lo) / ex.span() * (kWidth - kLeft - kRight); };
  auto py = [&](double y) {
    return (kHeight - kBottom) - (y - ey.lo) / ey.span() * (kHeight - kTop - kBottom);
  };
  std::vector<std::string> labels;
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const char* color = kPalette[gi % kPaletteSize];
    labels.push_back(groups[gi].label);
    for (const Vec2& p : groups[gi].points)
      f << "<circle cx=\"" << format9(px(p.x)) << "\" cy=\"" << format9(py(p.y))
        << "\" r=\"3\" fill=\"" << color << "\" fill-opacity=\"0.8\"/>\n";
  }
  for (const Vec2& p : highlights)
    f << "<circle cx=\"" << format9(px(p.x)) << "\" cy=\"" << format9(py(p.y))
      << "\" r=\"7\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\"/>\n";
  legend(f, labels);
  f << "</svg>\n";
  write_file(path, f.str());
}

void write_trajectory_svg(const std::filesystem::path& path, const Scenario& s,
                          const std::vector<Vec2>& driven) {
  if (driven.empty()) throw ValidationError("trajectory plot: empty driven path");
  Extent ex, ey;
  for (const auto& pl : s.map_polylines)
    for (const Vec2& p : pl.points) {
      ex.add(p.x);
      ey.add(p.y);
    }
  for (const Vec2& p : s.routing.points) {
    ex.add(p.x);
    ey.add(p.y);
  }
  for (const Vec2& p : driven) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw ValidationError("trajectory plot: non-finite driven point");
    ex.add(p.x);
    ey.add(p.y);
  }
  ex.unflatten();
  ey.unflatten();

  // Shared world scale, square aspect, centered.
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  double scale = std::min(plot_w / ex.span(), plot_h / ey.span());
  double cx = 0.5 * (ex.lo + ex.hi), cy = 0.5 * (ey.lo + ey.hi);
  double mx = kLeft + 0.5 * plot_w, my = kTop + 0.5 * plot_h;
  auto px = [&](double x) { return mx + (x - cx) * scale; };
  auto py = [&](double y) { return my - (y - cy) * scale; };

  std::ostringstream f;
  open_svg(f, "scenario " + s.id);
  auto polyline = [&](const Polyline& pl, const char* style) {
    f << "<polyline fill=\"none\" " << style << " points=\"";
    for (size_t i = 0; i < pl.points.size(); ++i) {
      if (i) f << ' ';
      f << format9(px(pl.points[i].x)) << ',' << format9(py(pl.points[i].y));
    }
    f << "\"/>\n";
  };
  for (const auto& pl : s.map_polylines)
    polyline(pl, "stroke=\"#888888\" stroke-width=\"1.5\"");
  polyline(s.routing, "stroke=\"#1f77b4\" stroke-width=\"2\" stroke-dasharray=\"6 4\"");
  Polyline drv;
  drv.points = driven;
  if (driven.size() > 1)
    polyline(drv, "stroke=\"#d62728\" stroke-width=\"2\" stroke-opacity=\"0.85\"");
  f << "<circle cx=\"" << format9(px(driven.front().x)) << "\" cy=\""
    << format9(py(driven.front().y)) << "\" r=\"4\" fill=\"#2ca02c\"/>\n";
  f << "<circle cx=\"" << format9(px(driven.back().x)) << "\" cy=\""
    << format9(py(driven.back().y)) << "\" r=\"4\" fill=\"#d62728\"/>\n";
  f << "</svg>\n";
  write_file(path, f.str());
}

}  // namespace chauffeur

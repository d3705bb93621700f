#include "declab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "declab/errors.hpp"

namespace declab {

namespace {

const char* kPalette[] = {"#4269d0", "#efb118", "#ff725c", "#6cc5b0",
                          "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5"};

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

}  // namespace

SvgPlot::SvgPlot(int width, int height, std::string title)
    : width_(width), height_(height), title_(std::move(title)) {}

void SvgPlot::set_axis_labels(std::string x, std::string y) {
  x_label_ = std::move(x);
  y_label_ = std::move(y);
}

void SvgPlot::add_line(const std::string& name,
                       const std::vector<std::pair<double, double>>& points) {
  series_.push_back({Series::Kind::kLine, name, points, {}});
}

void SvgPlot::add_scatter(const std::string& name,
                          const std::vector<std::pair<double, double>>& points) {
  series_.push_back({Series::Kind::kScatter, name, points, {}});
}

void SvgPlot::add_bars(const std::string& name, const std::vector<double>& values) {
  series_.push_back({Series::Kind::kBars, name, {}, values});
}

void SvgPlot::set_bar_labels(const std::vector<std::string>& labels) { bar_labels_ = labels; }

std::string SvgPlot::render() const {
  const double ml = 64, mr = 16, mt = 32, mb = 48;
  double pw = width_ - ml - mr, ph = height_ - mt - mb;

  bool bars = !series_.empty() && series_[0].kind == Series::Kind::kBars;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  size_t bar_groups = 0;
  for (const Series& s : series_) {
    if (s.kind == Series::Kind::kBars) {
      bar_groups = std::max(bar_groups, s.bars.size());
      for (double v : s.bars) {
        if (!any) {
          ymin = std::min(0.0, v);
          ymax = std::max(0.0, v);
          any = true;
        } else {
          ymin = std::min(ymin, std::min(0.0, v));
          ymax = std::max(ymax, v);
        }
      }
    } else {
      for (auto [x, y] : s.points) {
        if (!any) {
          xmin = xmax = x;
          ymin = ymax = y;
          any = true;
        } else {
          xmin = std::min(xmin, x);
          xmax = std::max(xmax, x);
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
        }
      }
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  double ypad = (ymax - ymin) * 0.05;
  ymin -= ypad;
  ymax += ypad;

  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
      << height_ << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width_ / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
      << title_ << "</text>\n";
  out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#999\"/>\n";

  // y ticks
  for (int i = 0; i <= 4; ++i) {
    double v = ymin + (ymax - ymin) * i / 4.0;
    double y = sy(v);
    out << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << ml + pw << "\" y2=\"" << y
        << "\" stroke=\"#eee\"/>\n";
    out << "<text x=\"" << ml - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v)
        << "</text>\n";
  }
  if (!bars) {
    for (int i = 0; i <= 4; ++i) {
      double v = xmin + (xmax - xmin) * i / 4.0;
      out << "<text x=\"" << sx(v) << "\" y=\"" << mt + ph + 16
          << "\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
    }
  }
  out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height_ - 10
      << "\" text-anchor=\"middle\">" << x_label_ << "</text>\n";
  out << "<text x=\"14\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << mt + ph / 2 << ")\">" << y_label_ << "</text>\n";

  size_t n_bar_series = 0;
  for (const Series& s : series_)
    if (s.kind == Series::Kind::kBars) n_bar_series++;

  size_t color_i = 0, bar_series_i = 0;
  for (const Series& s : series_) {
    const char* color = kPalette[color_i % 8];
    if (s.kind == Series::Kind::kLine) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (auto [x, y] : s.points) out << fmt(sx(x)) << "," << fmt(sy(y)) << " ";
      out << "\"/>\n";
      for (auto [x, y] : s.points)
        out << "<circle cx=\"" << fmt(sx(x)) << "\" cy=\"" << fmt(sy(y)) << "\" r=\"2.5\" fill=\""
            << color << "\"/>\n";
    } else if (s.kind == Series::Kind::kScatter) {
      for (auto [x, y] : s.points)
        out << "<circle cx=\"" << fmt(sx(x)) << "\" cy=\"" << fmt(sy(y)) << "\" r=\"3.5\" fill=\""
            << color << "\" fill-opacity=\"0.8\"/>\n";
    } else {
      double group_w = pw / static_cast<double>(std::max<size_t>(1, bar_groups));
      double bw = group_w * 0.8 / static_cast<double>(std::max<size_t>(1, n_bar_series));
      for (size_t i = 0; i < s.bars.size(); ++i) {
        double x0 = ml + group_w * static_cast<double>(i) + group_w * 0.1 +
                    bw * static_cast<double>(bar_series_i);
        double y0 = sy(std::max(0.0, s.bars[i]));
        double y1 = sy(std::min(0.0, s.bars[i]));
        out << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(bw)
            << "\" height=\"" << fmt(std::max(0.5, y1 - y0)) << "\" fill=\"" << color << "\"/>\n";
      }
      bar_series_i++;
    }
    // legend entry
    double lx = ml + 8, ly = mt + 14 + 14 * static_cast<double>(color_i);
    out << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
        << color << "\"/>\n";
    out << "<text x=\"" << lx + 14 << "\" y=\"" << ly << "\">" << s.name << "</text>\n";
    color_i++;
  }
  if (bars) {
    double group_w = pw / static_cast<double>(std::max<size_t>(1, bar_groups));
    for (size_t i = 0; i < bar_labels_.size() && i < bar_groups; ++i) {
      out << "<text x=\"" << ml + group_w * (static_cast<double>(i) + 0.5) << "\" y=\""
          << mt + ph + 16 << "\" text-anchor=\"middle\">" << bar_labels_[i] << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

void SvgPlot::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << render();
}

}  // namespace declab

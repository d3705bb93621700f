#pragma once

#include <string>
#include <vector>

namespace declab {

// Minimal static SVG chart writer for report plots. Line series, scatter
// markers and grouped bars share one axis box.
class SvgPlot {
 public:
  SvgPlot(int width, int height, std::string title);

  void set_axis_labels(std::string x, std::string y);
  void add_line(const std::string& name, const std::vector<std::pair<double, double>>& points);
  void add_scatter(const std::string& name, const std::vector<std::pair<double, double>>& points);
  // One bar per label; series are interleaved within a label group.
  void add_bars(const std::string& name, const std::vector<double>& values);
  void set_bar_labels(const std::vector<std::string>& labels);

  std::string render() const;
  void save(const std::string& path) const;

 private:
  struct Series {
    enum class Kind { kLine, kScatter, kBars } kind;
    std::string name;
    std::vector<std::pair<double, double>> points;
    std::vector<double> bars;
  };
  int width_, height_;
  std::string title_, x_label_, y_label_;
  std::vector<Series> series_;
  std::vector<std::string> bar_labels_;
};

}  // namespace declab

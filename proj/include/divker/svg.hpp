#pragma once

#include <string>
#include <vector>

namespace divker {

/// Minimal static SVG line/scatter plot with optional error bars.
class SvgPlot {
 public:
  enum class Style { Points, Line, LinePoints };

  struct Series {
    std::string label;
    std::vector<double> x, y;
    std::vector<double> err;  ///< half-length of error bars; empty for none
    Style style = Style::LinePoints;
  };

  SvgPlot(std::string title, std::string xlabel, std::string ylabel);

  void add(Series s);
  std::size_t size() const { return series_.size(); }

  /// Non-finite points are skipped.
  std::string render(int width = 640, int height = 420) const;
  void write(const std::string& path, int width = 640, int height = 420) const;

 private:
  std::string title_, xlabel_, ylabel_;
  std::vector<Series> series_;
};

}  // namespace divker

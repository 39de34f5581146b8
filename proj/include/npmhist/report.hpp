#pragma once

// CSV tables, ECDFs and minimal SVG charts for the analysis outputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace npmhist::report {

/// Fixed six-decimal formatting so that outputs are byte-stable.
inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline void write_csv_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << ',';
    os << csv_escape(cells[i]);
  }
  os << '\n';
}

/// Splits one CSV line (quotes supported, no embedded newlines).
inline std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else if (c != '\r') {
      cells.back() += c;
    }
  }
  return cells;
}

/// Points (x, F(x)) of the empirical CDF, one per distinct value.
inline std::vector<std::pair<double, double>> ecdf(std::vector<double> values) {
  std::vector<std::pair<double, double>> out;
  if (values.empty()) return out;
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    if (i + 1 == values.size() || values[i + 1] != values[i]) out.emplace_back(values[i], (i + 1) / n);
  return out;
}

/// Linear-interpolated quantile, q in [0, 1].
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  double pos = q * (values.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (values[hi] - values[lo]) * (pos - lo);
}

namespace detail {

inline std::string svg_header(int w, int h, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
     << w << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
  return os.str();
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  return colors[i % 6];
}

}  // namespace detail

/// Step plot of an ECDF.
inline std::string ecdf_svg(const std::vector<double>& values, const std::string& title, const std::string& x_label) {
  const int w = 640, h = 400, left = 60, right = 20, top = 30, bottom = 50;
  const int pw = w - left - right, ph = h - top - bottom;
  auto points = ecdf(values);
  double xmin = points.empty() ? 0.0 : std::min(0.0, points.front().first);
  double xmax = points.empty() ? 1.0 : points.back().first;
  if (xmax <= xmin) xmax = xmin + 1.0;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (1.0 - y) * ph; };

  std::ostringstream os;
  os << detail::svg_header(w, h, title);
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double y = i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << fixed(sy(y) + 4, 1) << "\" text-anchor=\"end\">" << fixed(y, 2)
       << "</text>\n";
    double x = xmin + (xmax - xmin) * i / 4.0;
    os << "<text x=\"" << fixed(sx(x), 1) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
       << fixed(x, 1) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">" << x_label
     << "</text>\n";
  if (!points.empty()) {
    os << "<polyline fill=\"none\" stroke=\"" << detail::palette(0) << "\" stroke-width=\"1.5\" points=\"";
    double prev_y = 0.0;
    os << fixed(sx(xmin), 2) << ',' << fixed(sy(0.0), 2);
    for (const auto& [x, y] : points) {
      os << ' ' << fixed(sx(x), 2) << ',' << fixed(sy(prev_y), 2) << ' ' << fixed(sx(x), 2) << ','
         << fixed(sy(y), 2);
      prev_y = y;
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Grouped bar chart: groups along x, one bar per series within a group.
inline std::string bar_svg(const std::vector<std::string>& groups, const std::vector<std::string>& series,
                           const std::map<std::pair<std::string, std::string>, double>& values,
                           const std::string& title, const std::string& y_label) {
  const int w = 720, h = 420, left = 60, right = 150, top = 30, bottom = 50;
  const int pw = w - left - right, ph = h - top - bottom;
  double ymax = 0.0;
  for (const auto& [_, v] : values) ymax = std::max(ymax, v);
  if (ymax <= 0.0) ymax = 1.0;
  std::ostringstream os;
  os << detail::svg_header(w, h, title);
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  os << "<text x=\"14\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 14 " << top + ph / 2
     << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    double y = ymax * i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << fixed(top + ph - ph * i / 4.0 + 4, 1)
       << "\" text-anchor=\"end\">" << fixed(y, 1) << "</text>\n";
  }
  const double group_w = groups.empty() ? pw : static_cast<double>(pw) / groups.size();
  const double bar_w = series.empty() ? group_w : group_w * 0.8 / series.size();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double gx = left + g * group_w + group_w * 0.1;
    for (std::size_t s = 0; s < series.size(); ++s) {
      auto it = values.find({groups[g], series[s]});
      double v = it == values.end() ? 0.0 : it->second;
      double bh = v / ymax * ph;
      os << "<rect x=\"" << fixed(gx + s * bar_w, 2) << "\" y=\"" << fixed(top + ph - bh, 2) << "\" width=\""
         << fixed(bar_w * 0.95, 2) << "\" height=\"" << fixed(bh, 2) << "\" fill=\"" << detail::palette(s)
         << "\"/>\n";
    }
    os << "<text x=\"" << fixed(gx + group_w * 0.4, 1) << "\" y=\"" << top + ph + 16
       << "\" text-anchor=\"middle\">" << groups[g] << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    int ly = top + 10 + static_cast<int>(s) * 16;
    os << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
       << detail::palette(s) << "\"/>\n";
    os << "<text x=\"" << left + pw + 26 << "\" y=\"" << ly << "\">" << series[s] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace npmhist::report

#include "sigbandit/plot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sigbandit/io_util.hpp"

namespace sigbandit::plot {

namespace {

constexpr double kWidth = 640, kHeight = 440;
constexpr double kLeft = 70, kRight = 480, kTop = 50, kBottom = 390;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct NiceTicks {
  double lo = 0, hi = 1, step = 0.25;
};

NiceTicks nice_ticks(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  double span = hi - lo;
  double raw = span / 5.0;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double norm = raw / mag;
  double step = (norm < 1.5 ? 1.0 : norm < 3.0 ? 2.0 : norm < 7.0 ? 5.0 : 10.0) * mag;
  NiceTicks t;
  t.step = step;
  t.lo = std::floor(lo / step) * step;
  t.hi = std::ceil(hi / step) * step;
  return t;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_chart(const ChartSpec& spec) {
  if (spec.series.empty()) throw std::invalid_argument("render_chart: no series");
  double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
  size_t points = 0;
  for (const auto& s : spec.series) {
    if (s.x.size() != s.y.size() || (!s.err.empty() && s.err.size() != s.y.size())) {
      throw std::invalid_argument("render_chart: series '" + s.label + "' length mismatch");
    }
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      double e = s.err.empty() ? 0.0 : s.err[i];
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, s.y[i] - e);
      y_max = std::max(y_max, s.y[i] + e);
      ++points;
    }
  }
  if (points == 0) throw std::invalid_argument("render_chart: no plottable points");
  if (x_max == x_min) {
    x_min -= 1;
    x_max += 1;
  }
  NiceTicks yt = nice_ticks(y_min, y_max);

  auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * (kRight - kLeft); };
  auto py = [&](double y) { return kBottom - (y - yt.lo) / (yt.hi - yt.lo) * (kBottom - kTop); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  os << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"24\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"15\">" << escape_xml(spec.title) << "</text>\n";

  // axes
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kRight << "\" y2=\""
     << kBottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kBottom
     << "\" stroke=\"black\"/>\n";

  // y ticks and gridlines
  for (double y = yt.lo; y <= yt.hi + 1e-9; y += yt.step) {
    double Y = py(y);
    os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << num(Y) << "\" x2=\"" << kRight << "\" y2=\""
       << num(Y) << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(Y + 4) << "\" text-anchor=\"end\" "
       << "font-family=\"sans-serif\" font-size=\"11\">" << num(y) << "</text>\n";
  }
  // x ticks at the union of data points
  std::set<double> xs;
  for (const auto& s : spec.series) xs.insert(s.x.begin(), s.x.end());
  for (double x : xs) {
    double X = px(x);
    os << "<line x1=\"" << num(X) << "\" y1=\"" << kBottom << "\" x2=\"" << num(X) << "\" y2=\""
       << kBottom + 4 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(X) << "\" y=\"" << kBottom + 18 << "\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"11\">" << num(x) << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"" << kBottom + 36
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
     << escape_xml(spec.x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << (kTop + kBottom) / 2 << "\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 "
     << (kTop + kBottom) / 2 << ")\">" << escape_xml(spec.y_label) << "</text>\n";

  // series
  double legend_y = kTop + 6;
  for (const auto& s : spec.series) {
    std::string dash = s.dashed ? " stroke-dasharray=\"6 4\"" : "";
    std::ostringstream path;
    bool first = true;
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      path << (first ? "M" : " L") << num(px(s.x[i])) << ' ' << num(py(s.y[i]));
      first = false;
    }
    os << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << s.color
       << "\" stroke-width=\"1.8\"" << dash << "/>\n";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      double X = px(s.x[i]), Y = py(s.y[i]);
      if (!s.err.empty() && s.err[i] > 0) {
        double y0 = py(s.y[i] - s.err[i]), y1 = py(s.y[i] + s.err[i]);
        os << "<line x1=\"" << num(X) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(X)
           << "\" y2=\"" << num(y1) << "\" stroke=\"" << s.color << "\"/>\n";
        os << "<line x1=\"" << num(X - 3) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(X + 3)
           << "\" y2=\"" << num(y0) << "\" stroke=\"" << s.color << "\"/>\n";
        os << "<line x1=\"" << num(X - 3) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(X + 3)
           << "\" y2=\"" << num(y1) << "\" stroke=\"" << s.color << "\"/>\n";
      }
      os << "<circle cx=\"" << num(X) << "\" cy=\"" << num(Y) << "\" r=\"3\" fill=\"" << s.color
         << "\"/>\n";
    }
    // legend
    os << "<line x1=\"" << kRight + 12 << "\" y1=\"" << num(legend_y) << "\" x2=\"" << kRight + 36
       << "\" y2=\"" << num(legend_y) << "\" stroke=\"" << s.color << "\" stroke-width=\"1.8\""
       << dash << "/>\n";
    os << "<text x=\"" << kRight + 42 << "\" y=\"" << num(legend_y + 4)
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(s.label) << "</text>\n";
    legend_y += 18;
  }
  os << "</svg>\n";
  return os.str();
}

ChartSpec chart_from_table(const exp::AggregateTable& table) {
  if (table.rows.empty()) throw std::invalid_argument("chart_from_table: empty aggregate table");
  ChartSpec spec;
  spec.y_label = "normalized reward";
  switch (table.experiment) {
    case 1:
      spec.title = "Student reward vs channel capacity";
      spec.x_label = "channel capacity";
      break;
    case 2:
      spec.title = "Student reward vs task difficulty";
      spec.x_label = "values per feature (n)";
      break;
    case 3:
      spec.title = "Student reward vs teacher training data";
      spec.x_label = "fraction of world states seen in training";
      break;
    default:
      throw std::invalid_argument("chart_from_table: unknown experiment id " +
                                  std::to_string(table.experiment));
  }
  std::map<std::string, std::string> colors = {
      {"language", "#d62728"}, {"demo_pedagogical", "#1f77b4"}, {"demo_random", "#7f7f7f"}};
  // (condition, split) -> series, deterministic order from the table rows
  std::vector<std::pair<std::string, std::string>> seen;
  for (const auto& r : table.rows) {
    std::pair<std::string, std::string> key{r.condition, r.split};
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) seen.push_back(key);
  }
  for (const auto& [condition, split] : seen) {
    Series s;
    s.label = condition + (table.experiment == 2 ? " (" + split + ")" : "");
    s.color = colors.count(condition) ? colors[condition] : "#2ca02c";
    s.dashed = split == "train";
    for (const auto& r : table.rows) {
      if (r.condition != condition || r.split != split) continue;
      s.x.push_back(r.axis);
      s.y.push_back(r.mean);
      s.err.push_back(r.sem);
    }
    spec.series.push_back(std::move(s));
  }
  return spec;
}

}  // namespace sigbandit::plot

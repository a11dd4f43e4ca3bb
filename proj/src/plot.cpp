#include "fsim/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fsim {

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void save(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << body;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

}  // namespace

void write_line_plot_svg(const std::filesystem::path& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<Series>& series, std::vector<double> vlines) {
  const double W = 640, H = 400, left = 60, right = 20, top = 40, bottom = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "plot series '" + s.label + "' has mismatched lengths");
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!(x0 < x1)) x0 -= 0.5, x1 += 0.5;
  if (!(y0 < y1)) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * (W - left - right); };
  auto py = [&](double v) { return H - bottom - (v - y0) / (y1 - y0) * (H - top - bottom); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n"
      << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W - left - right
      << "\" height=\"" << H - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">"
        << fmt(xv) << "</text>\n"
        << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
        << fmt(yv) << "</text>\n";
  }
  svg << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << H / 2 << ")\">" << escape(y_label) << "</text>\n";
  for (double v : vlines)
    svg << "<line x1=\"" << px(v) << "\" x2=\"" << px(v) << "\" y1=\"" << top << "\" y2=\""
        << H - bottom << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kPalette[k % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) svg << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    svg << "\"/>\n<text x=\"" << left + 10 << "\" y=\"" << top + 16 + 15 * k << "\" fill=\""
        << colour << "\">" << escape(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  save(path, svg.str());
}

void write_heatmap_svg(const std::filesystem::path& path, const std::string& title,
                       const DetectionMatrix& matrix) {
  const std::size_t g = matrix.size();
  const double cell = 48, left = 80, top = 50;
  const double W = left + cell * g + 20, H = top + cell * g + 20;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(title) << "</text>\n";
  for (std::size_t r = 0; r < g; ++r) {
    svg << "<text x=\"" << left - 6 << "\" y=\"" << top + cell * (r + 0.5) + 4
        << "\" text-anchor=\"end\">" << escape(matrix.names[r]) << "</text>\n"
        << "<text x=\"" << left + cell * (r + 0.5) << "\" y=\"" << top - 6
        << "\" text-anchor=\"middle\">" << escape(matrix.names[r]) << "</text>\n";
    for (std::size_t c = 0; c < g; ++c) {
      const double v = std::clamp(matrix.at(r, c), 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255 * (1.0 - v)));
      svg << "<rect x=\"" << left + cell * c << "\" y=\"" << top + cell * r << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << ',' << shade
          << ",255)\" stroke=\"white\"/>\n"
          << "<text x=\"" << left + cell * (c + 0.5) << "\" y=\"" << top + cell * (r + 0.5) + 4
          << "\" text-anchor=\"middle\" fill=\"" << (v > 0.6 ? "white" : "black") << "\">"
          << fmt(matrix.at(r, c)) << "</text>\n";
    }
  }
  svg << "</svg>\n";
  save(path, svg.str());
}

void write_roc_svg(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::pair<std::string, std::vector<RocPoint>>>& curves) {
  std::vector<Series> series;
  for (const auto& [label, points] : curves) {
    Series s{label, {}, {}};
    for (const auto& p : points) {
      s.x.push_back(p.fpr);
      s.y.push_back(p.tpr);
    }
    series.push_back(std::move(s));
  }
  series.push_back({"chance", {0.0, 1.0}, {0.0, 1.0}});
  write_line_plot_svg(path, title, "false positive rate", "true positive rate", series);
}

}  // namespace fsim

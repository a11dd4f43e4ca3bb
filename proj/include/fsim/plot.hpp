#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fsim/evaluation.hpp"

namespace fsim {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG renderers for reports.
void write_line_plot_svg(const std::filesystem::path& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<Series>& series, std::vector<double> vlines = {});
void write_heatmap_svg(const std::filesystem::path& path, const std::string& title,
                       const DetectionMatrix& matrix);
void write_roc_svg(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::pair<std::string, std::vector<RocPoint>>>& curves);

}  // namespace fsim

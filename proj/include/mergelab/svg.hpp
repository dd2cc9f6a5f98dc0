#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mergelab::harness {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// self-contained SVG 1.1 line chart
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

// heatmap over a row-major grid with values expected in [0, 1]
std::string heatmap_svg(const std::string& title, const std::vector<double>& values,
                        int rows, int cols);

void write_svg(const std::filesystem::path& path, const std::string& svg);

}  // namespace mergelab::harness

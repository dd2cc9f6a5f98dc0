#include "mergelab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mergelab/checkpoint.hpp"

namespace mergelab::harness {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMargin = 60;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series) {
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmax == xmin) {
        xmax = xmin + 1;
    }
    if (ymax == ymin) {
        ymax = ymin + 1;
    }
    auto px = [&](double x) {
        return kMargin + (x - xmin) / (xmax - xmin) * (kWidth - 2 * kMargin);
    };
    auto py = [&](double y) {
        return kHeight - kMargin - (y - ymin) / (ymax - ymin) * (kHeight - 2 * kMargin);
    };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
       << "\" height=\"" << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
       << title << "</text>\n";
    // axes
    os << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\""
       << kWidth - kMargin << "\" y2=\"" << kHeight - kMargin
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin
       << "\" y2=\"" << kHeight - kMargin << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 14
       << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    os << "<text x=\"18\" y=\"" << kHeight / 2
       << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
       << kHeight / 2 << ")\">" << y_label << "</text>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double xv = xmin + tick * (xmax - xmin) / 4;
        const double yv = ymin + tick * (ymax - ymin) / 4;
        os << "<text x=\"" << px(xv) << "\" y=\"" << kHeight - kMargin + 16
           << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(xv) << "</text>\n";
        os << "<text x=\"" << kMargin - 6 << "\" y=\"" << py(yv) + 4
           << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(yv) << "</text>\n";
    }
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % std::size(kPalette)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i) {
            os << px(s.x[i]) << "," << py(s.y[i]) << " ";
        }
        os << "\"/>\n";
        for (size_t i = 0; i < s.x.size(); ++i) {
            os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i])
               << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        }
        os << "<text x=\"" << kWidth - kMargin + 4 << "\" y=\"" << kMargin + 16 * si
           << "\" font-size=\"11\" fill=\"" << color << "\">" << s.name << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string heatmap_svg(const std::string& title, const std::vector<double>& values,
                        int rows, int cols) {
    const int cell = 48;
    const int w = kMargin + cols * cell + 40;
    const int h = kMargin + rows * cell + 40;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << w
       << "\" height=\"" << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
       << title << "</text>\n";
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const double v = std::clamp(values[static_cast<size_t>(i) * cols + j], 0.0, 1.0);
            // white (0) -> teal (1)
            const int r = static_cast<int>(255 - 224 * v);
            const int g = static_cast<int>(255 - 96 * v);
            const int b = static_cast<int>(255 - 80 * v);
            const int x = kMargin + j * cell;
            const int y = 40 + i * cell;
            os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell
               << "\" height=\"" << cell << "\" fill=\"rgb(" << r << "," << g << "," << b
               << ")\" stroke=\"#ccc\"/>\n";
            os << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
               << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(v) << "</text>\n";
        }
    }
    for (int i = 0; i < rows; ++i) {
        os << "<text x=\"" << kMargin - 8 << "\" y=\"" << 40 + i * cell + cell / 2 + 4
           << "\" text-anchor=\"end\" font-size=\"11\">" << i << "</text>\n";
    }
    for (int j = 0; j < cols; ++j) {
        os << "<text x=\"" << kMargin + j * cell + cell / 2 << "\" y=\""
           << 40 + rows * cell + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << j
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_svg(const std::filesystem::path& path, const std::string& svg) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    atomic_write(path, svg);
}

}  // namespace mergelab::harness

#include "univ2d/plot.hpp"

#include "univ2d/errors.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace univ2d {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cells.push_back(cell);
    }
    return cells;
}

bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

std::string format_tick(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

constexpr int kPanelW = 360;
constexpr int kPanelH = 240;
constexpr int kMargin = 44;

void draw_panel(cv::Mat& canvas, cv::Rect area, const std::string& title,
                const std::vector<double>& xs, const std::vector<double>& ys) {
    cv::Mat panel = canvas(area);
    panel.setTo(cv::Scalar(255, 255, 255));
    const cv::Rect plot(kMargin, 24, area.width - kMargin - 12, area.height - 24 - 28);
    cv::rectangle(panel, plot, cv::Scalar(180, 180, 180));
    cv::putText(panel, title, {kMargin, 16}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1,
                cv::LINE_AA);
    if (xs.empty()) {
        return;
    }
    const auto [xmin_it, xmax_it] = std::minmax_element(xs.begin(), xs.end());
    const auto [ymin_it, ymax_it] = std::minmax_element(ys.begin(), ys.end());
    double xmin = *xmin_it;
    double xmax = *xmax_it;
    double ymin = *ymin_it;
    double ymax = *ymax_it;
    if (xmax == xmin) {
        xmax = xmin + 1.0;
    }
    if (ymax == ymin) {
        ymax = ymin + 1.0;
        ymin -= 1.0;
    }
    auto to_px = [&](double x, double y) {
        const double u = (x - xmin) / (xmax - xmin);
        const double v = (y - ymin) / (ymax - ymin);
        return cv::Point(plot.x + static_cast<int>(std::lround(u * plot.width)),
                         plot.y + plot.height - static_cast<int>(std::lround(v * plot.height)));
    };
    const cv::Scalar color(180, 90, 20);
    for (std::size_t i = 1; i < xs.size(); ++i) {
        cv::line(panel, to_px(xs[i - 1], ys[i - 1]), to_px(xs[i], ys[i]), color, 1, cv::LINE_AA);
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        cv::circle(panel, to_px(xs[i], ys[i]), xs.size() > 50 ? 1 : 3, color, cv::FILLED,
                   cv::LINE_AA);
    }
    const cv::Scalar ink(60, 60, 60);
    cv::putText(panel, format_tick(ymax), {2, plot.y + 10}, cv::FONT_HERSHEY_SIMPLEX, 0.32, ink);
    cv::putText(panel, format_tick(ymin), {2, plot.y + plot.height}, cv::FONT_HERSHEY_SIMPLEX,
                0.32, ink);
    cv::putText(panel, format_tick(xmin), {plot.x, plot.y + plot.height + 16},
                cv::FONT_HERSHEY_SIMPLEX, 0.32, ink);
    cv::putText(panel, format_tick(xmax), {plot.x + plot.width - 30, plot.y + plot.height + 16},
                cv::FONT_HERSHEY_SIMPLEX, 0.32, ink);
}

} // namespace

CsvTable CsvTable::read(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot read " + path);
    }
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(path + " is empty");
    }
    t.header = split_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto cells = split_line(line);
        if (cells.size() != t.header.size()) {
            throw Error(path + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    return t;
}

void plot_csv(const std::string& csv_path, const std::string& png_path) {
    const CsvTable table = CsvTable::read(csv_path);
    std::vector<const std::vector<std::string>*> rows;
    for (const auto& r : table.rows) {
        if (!r.empty() && r.front() != "MEAN") {
            rows.push_back(&r);
        }
    }
    const bool step_axis = !table.header.empty() && table.header.front() == "step";
    std::vector<double> xs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double x = static_cast<double>(i);
        if (step_axis) {
            parse_double(rows[i]->front(), x);
        }
        xs.push_back(x);
    }

    std::vector<std::pair<std::string, std::vector<double>>> series;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (step_axis && (c == 0 || table.header[c] == "epoch")) {
            continue;
        }
        std::vector<double> ys;
        bool numeric = !rows.empty();
        for (const auto* r : rows) {
            double v = 0.0;
            if (!parse_double((*r)[c], v) || !std::isfinite(v)) {
                numeric = false;
                break;
            }
            ys.push_back(v);
        }
        if (numeric) {
            series.emplace_back(table.header[c], std::move(ys));
        }
    }
    if (series.empty()) {
        throw Error(csv_path + " has no numeric columns to plot");
    }

    const int cols = std::min<int>(3, static_cast<int>(series.size()));
    const int grid_rows = (static_cast<int>(series.size()) + cols - 1) / cols;
    cv::Mat canvas(grid_rows * kPanelH, cols * kPanelW, CV_8UC3, cv::Scalar(235, 235, 235));
    for (std::size_t i = 0; i < series.size(); ++i) {
        const int r = static_cast<int>(i) / cols;
        const int c = static_cast<int>(i) % cols;
        const cv::Rect area(c * kPanelW + 2, r * kPanelH + 2, kPanelW - 4, kPanelH - 4);
        draw_panel(canvas, area, series[i].first, xs, series[i].second);
    }
    if (!cv::imwrite(png_path, canvas)) {
        throw Error("cannot write " + png_path);
    }
}

} // namespace univ2d

#pragma once

#include <string>
#include <vector>

namespace univ2d {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    static CsvTable read(const std::string& path);
};

/// Renders one line chart per numeric column of a CSV (loss curves or metric
/// reports) into a grid and writes it as PNG. Rows whose first cell is MEAN
/// are skipped; a leading "step" column becomes the x axis.
void plot_csv(const std::string& csv_path, const std::string& png_path);

} // namespace univ2d

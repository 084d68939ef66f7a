#pragma once

#include <filesystem>
#include <vector>

#include "dattn/csv.hpp"

namespace dattn {

/// Markdown for the lambda_init sweep: one column per lambda_init, rows for
/// accuracy and ASR. Needs columns lambda_init, accuracy, asr.
std::string lambda_table_markdown(const CsvTable& sweep);

/// Plot data (x, series, y) for one metric column of depth_sweep.csv, with
/// series "<attention> eps=<epsilon>".
CsvTable depth_panel(const CsvTable& sweep, const std::string& metric);

/// Turns the result CSVs found in `dir` into report.md plus plot-data CSVs.
/// Throws DataError when no known results file is present and SchemaError
/// naming the first missing column. Returns the files written.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir);

}  // namespace dattn

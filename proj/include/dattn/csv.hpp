#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace dattn {

/// 17 significant digits, enough to round-trip any double.
std::string format_number(double v);

/// A CSV document with a header row. Lines starting with '#' before the
/// header are comments (used for the run config and seed).
struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  /// Throws SchemaError if the cell count differs from the column count.
  void add_row(std::vector<std::string> cells);
  /// Throws SchemaError naming the column when it is absent.
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
  const std::string& text(std::size_t row, const std::string& name) const;
};

std::string cell(double v);
std::string cell(std::size_t v);
std::string cell(bool v);

std::string to_csv_string(const CsvTable& table);
CsvTable parse_csv(const std::string& text);

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace dattn

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace rwm {

using Cell = std::variant<std::int64_t, double, std::string>;

/// Homogeneous rows under a fixed header.
struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  /// Throws InvalidArgument when the row width differs from the header.
  void add_row(std::vector<Cell> row);
};

/// Doubles use 9 significant digits; infinities are written `inf` / `-inf`.
std::string format_cell(const Cell& cell);

/// Quotes fields containing a comma, quote or line break.
std::string csv_escape(const std::string& field);

/// Header row plus one line per row, CRLF-free. An empty table yields the
/// header only.
std::string to_csv(const ReportTable& table);
void write_report_csv(const ReportTable& table, const std::filesystem::path& path);

/// Parses CSV text back into string fields, header first.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace rwm

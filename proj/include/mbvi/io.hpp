#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mbvi {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kCsvSchema = "mbvi-csv v1";

/// Numeric table with a named header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const;
};

/// Writes "# mbvi-csv v1 <kind>", the header row and the rows (round-trip precision).
void write_csv_table(std::ostream& out, const std::string& kind, const CsvTable& table);

/// Skips '#' comment lines; the first remaining line is the header.
CsvTable read_csv_table(std::istream& in);

std::string format_number(double value);

}  // namespace mbvi

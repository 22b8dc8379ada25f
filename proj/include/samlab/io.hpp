#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace samlab::io {

/// Shortest round-trip text for a double ("%.17g"); locale independent.
std::string fmt(double x);
std::string fmt(long long x);
inline std::string fmt(int x) { return fmt(static_cast<long long>(x)); }
inline std::string fmt(std::size_t x) { return fmt(static_cast<long long>(x)); }

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) { rows.push_back(std::move(row)); }
  /// Column index by name, throws UsageError when absent.
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, std::size_t col) const;
};

/// Plain comma-separated text, "\n" line endings, no quoting (fields never
/// contain commas here).
std::string to_csv_text(const CsvTable& table);
CsvTable parse_csv_text(const std::string& text);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

inline void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  write_text_file(path, to_csv_text(table));
}
inline CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv_text(read_text_file(path));
}

}  // namespace samlab::io

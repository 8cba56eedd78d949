#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cltmle::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Position of `name` in the header, or -1.
  int column(std::string_view name) const;
};

// RFC-4180-style reader: comma separated, double-quoted fields, header row
// required. Rows with a field count different from the header are rejected.
Table read(const std::filesystem::path& path);
Table parse(std::string_view text);

// Quotes a field when it contains a comma, quote or newline.
std::string escape(std::string_view field);

// Shortest round-trip representation of a double ("NA" for NaN).
std::string format_double(double v);

// Writes `contents` to a sibling temp file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace cltmle::csv

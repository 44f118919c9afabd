#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spagrav::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> cells;
};

// Comma-separated table with a mandatory header row. Lines starting with
// '#' are collected as metadata and otherwise ignored.
struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;
  std::vector<std::string> comments;
  std::string source;

  std::optional<std::size_t> column(std::string_view name) const;
  std::size_t require_column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
Table parse(std::istream& in, std::string source = "<stream>");

std::vector<std::string> split_line(std::string_view line);

double parse_double(std::string_view cell, const std::string& where);
long long parse_integer(std::string_view cell, const std::string& where);

// Shortest decimal text that parses back to the identical double.
std::string format_exact(double value);

}  // namespace spagrav::csv

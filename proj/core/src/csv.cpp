#include "spagrav/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

#include "spagrav/error.hpp"

namespace spagrav::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::optional<std::size_t> Table::column(std::string_view name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return j;
  return std::nullopt;
}

std::size_t Table::require_column(std::string_view name) const {
  if (auto j = column(name)) return *j;
  throw InputError(source + ": missing column '" + std::string(name) + "'");
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  out.emplace_back(trim(cell));
  return out;
}

Table parse(std::istream& in, std::string source) {
  Table t;
  t.source = std::move(source);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = trim(line);
    if (lineno == 1 && v.size() >= 3 && v.substr(0, 3) == "\xEF\xBB\xBF") v.remove_prefix(3);
    if (v.empty()) continue;
    if (v.front() == '#') {
      t.comments.emplace_back(trim(v.substr(1)));
      continue;
    }
    auto cells = split_line(v);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw InputError(t.source + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " cells, found " +
                       std::to_string(cells.size()));
    t.rows.push_back(Row{lineno, std::move(cells)});
  }
  if (!have_header) throw InputError(t.source + ": missing header row");
  return t;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return parse(in, path.string());
}

double parse_double(std::string_view cell, const std::string& where) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(value))
    throw InputError(where + ": cannot parse '" + std::string(cell) + "' as a real number");
  return value;
}

long long parse_integer(std::string_view cell, const std::string& where) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
    throw InputError(where + ": '" + std::string(cell) + "' is not an integer");
  return value;
}

std::string format_exact(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace spagrav::csv

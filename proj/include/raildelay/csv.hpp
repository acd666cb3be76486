#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "raildelay/errors.hpp"

namespace raildelay::csv {

// Comma-delimited UTF-8 text with a header row. Fields carry no quoting or
// escaping; an empty field means missing. Lines end with '\n'.

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t comma = line.find(',', begin);
    if (comma == std::string::npos) {
      out.emplace_back(line.substr(begin));
      break;
    }
    out.emplace_back(line.substr(begin, comma - begin));
    begin = comma + 1;
  }
  return out;
}

struct Row {
  std::vector<std::string> fields;
  std::size_t line_number = 0;  // 1-based, header = line 1

  const std::string& at(std::size_t col, const std::string& file) const {
    if (col >= fields.size())
      throw DataError(file + ":" + std::to_string(line_number) + ": expected at least " +
                      std::to_string(col + 1) + " fields, got " +
                      std::to_string(fields.size()));
    return fields[col];
  }
};

struct Table {
  std::string path;
  std::vector<std::string> header;
  std::vector<Row> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError(path + ": missing required column '" + name + "'");
  }
};

inline Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  Table table;
  table.path = path;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_number == 1) {
      table.header = split_line(line);
      continue;
    }
    if (line.empty()) continue;
    Row row;
    row.fields = split_line(line);
    row.line_number = line_number;
    if (row.fields.size() != table.header.size())
      throw DataError(path + ":" + std::to_string(line_number) + ": expected " +
                      std::to_string(table.header.size()) + " fields, got " +
                      std::to_string(row.fields.size()));
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Shortest representation that round-trips exactly; platform-stable for IEEE
// doubles, which keeps emitted files byte-identical.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DataError(context + ": invalid number '" + std::string(s) + "'");
  return v;
}

inline std::int64_t parse_int(std::string_view s, const std::string& context) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DataError(context + ": invalid integer '" + std::string(s) + "'");
  return v;
}

class Writer {
public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open '" + path + "' for writing");
  }

  void write_row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw DataError("failed writing '" + path_ + "'");
  }

private:
  std::string path_;
  std::ofstream out_;
};

}  // namespace raildelay::csv

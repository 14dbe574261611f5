#pragma once
// Minimal CSV helpers shared by the GP-dataset and trajectory-log formats.
// Values are written with "%.17g" so a parse -> rewrite cycle is byte
// identical; the deterministic-run tests compare files at that level.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lbmpc::csv {

inline std::string format_value(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

inline void write_header(std::ostream& os, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) os << ',';
    os << names[i];
  }
  os << '\n';
}

inline void write_row(std::ostream& os, const std::vector<double>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) os << ',';
    os << format_value(row[i]);
  }
  os << '\n';
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  // Column lookup by header name; throws so schema drift fails loudly.
  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    throw std::runtime_error("csv: missing column '" + name + "'");
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline Table read(std::istream& is) {
  Table t;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: empty input, header required");
  t.header = split_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != t.header.size())
      throw std::runtime_error("csv: row width does not match header");
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      char* end = nullptr;
      row[i] = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str()) throw std::runtime_error("csv: non-numeric cell '" + cells[i] + "'");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("csv: cannot open " + path);
  return read(f);
}

inline void write_file(const std::string& path, const std::vector<std::string>& header,
                       const std::vector<std::vector<double>>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("csv: cannot write " + path);
  write_header(f, header);
  for (const auto& r : rows) write_row(f, r);
}

inline std::string to_string(const std::vector<std::string>& header,
                             const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  write_header(os, header);
  for (const auto& r : rows) write_row(os, r);
  return os.str();
}

}  // namespace lbmpc::csv

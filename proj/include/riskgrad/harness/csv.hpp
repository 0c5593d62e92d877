#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace riskgrad::harness {

/// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// A CSV file whose first line is "# schema=<name>/<version>".
struct CsvTable {
  std::string schema;
  int version = 1;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) {
    if (row.size() != columns.size()) throw std::logic_error("csv: row width does not match the header");
    rows.push_back(std::move(row));
  }

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw std::out_of_range("csv: no column " + name);
  }

  double number(std::size_t row, const std::string& name) const { return std::stod(rows.at(row).at(column(name))); }
};

inline std::string csv_to_string(const CsvTable& t) {
  std::ostringstream os;
  os << "# schema=" << t.schema << '/' << t.version << '\n';
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of(",\"\n") != std::string::npos)
        throw std::invalid_argument("csv: cell needs quoting: " + cells[i]);
      os << (i ? "," : "") << cells[i];
    }
    os << '\n';
  };
  line(t.columns);
  for (const auto& r : t.rows) line(r);
  return os.str();
}

inline void write_csv(const std::string& path, const CsvTable& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << csv_to_string(t);
}

/// Parses and validates schema name, version and the expected columns.
inline CsvTable parse_csv(const std::string& text, const std::string& schema, int version,
                          const std::vector<std::string>& expected_columns) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("# schema=", 0) != 0) throw std::runtime_error("csv: missing schema line");
  const std::string tag = line.substr(9);
  if (tag != schema + "/" + std::to_string(version)) throw std::runtime_error("csv: schema mismatch: " + tag);
  const auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  CsvTable t;
  t.schema = schema;
  t.version = version;
  if (!std::getline(is, line)) throw std::runtime_error("csv: missing header");
  t.columns = split(line);
  if (t.columns != expected_columns) throw std::runtime_error("csv: unexpected columns");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.columns.size()) throw std::runtime_error("csv: ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline CsvTable read_csv(const std::string& path, const std::string& schema, int version,
                         const std::vector<std::string>& expected_columns) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str(), schema, version, expected_columns);
}

}  // namespace riskgrad::harness

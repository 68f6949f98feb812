#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "kerrcomb/error.hpp"

namespace kerrcomb::io {

using Cell = std::variant<double, long long, std::string>;

/// Round-trip text form of a double: shortest of %.17g, with nan/inf spelled out.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_cell(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  const auto& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != header.size()) throw Error(ErrorCode::InvalidArgument, "CSV row width does not match header");
    rows.push_back(std::move(row));
  }

  std::string str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << format_cell(r[i]);
      os << '\n';
    }
    return os.str();
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
    out << str();
  }
};

/// Minimal reader for the files produced by CsvTable (quoted fields allowed, no embedded newlines).
struct CsvData {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
  std::vector<double> numbers(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw Error(ErrorCode::MissingArtifact, "column '" + name + "' not found");
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      const std::string& f = r[static_cast<std::size_t>(c)];
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (f.empty() || end != f.c_str() + f.size())
        throw Error(ErrorCode::InvalidArgument, "column '" + name + "' holds non-numeric field '" + f + "'");
      out.push_back(v);
    }
    return out;
  }
  std::vector<std::string> strings(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw Error(ErrorCode::MissingArtifact, "column '" + name + "' not found");
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r[static_cast<std::size_t>(c)]);
    return out;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvData read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifact, "missing artifact " + path);
  CsvData d;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingArtifact, "empty artifact " + path);
  d.header = split_csv_line(line);
  while (std::getline(in, line))
    if (!line.empty()) d.rows.push_back(split_csv_line(line));
  return d;
}

}  // namespace kerrcomb::io

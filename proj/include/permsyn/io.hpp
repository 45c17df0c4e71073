#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "permsyn/errors.hpp"

namespace permsyn {

// Plain CSV with a header row. Key columns are opaque strings, attribute
// columns are base-10 integer codes; raw numeric columns only appear before
// discretization.
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

namespace csv_detail {

inline void append_field(std::string& out, const std::string& field) {
  bool needs_quote = field.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs_quote) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

}  // namespace csv_detail

inline Csv read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  Csv t;
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false, any = false;
  auto end_record = [&]() {
    fields.push_back(cur);
    cur.clear();
    if (t.header.empty() && !any) {
      t.header = std::move(fields);
      any = true;
    } else {
      if (fields.size() != t.header.size())
        throw DataError(path + ": row with " + std::to_string(fields.size()) +
                        " fields, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(fields));
    }
    fields.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c == '\n') {
      end_record();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (!cur.empty() || !fields.empty()) end_record();  // final record without newline
  if (!any) throw DataError(path + ": missing header row");
  return t;
}

inline void write_csv(const std::string& path, const Csv& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  std::string line;
  auto emit = [&](const std::vector<std::string>& row) {
    line.clear();
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += ',';
      csv_detail::append_field(line, row[i]);
    }
    line += '\n';
    out << line;
  };
  emit(t.header);
  for (const auto& r : t.rows) emit(r);
}

inline double parse_numeric(const std::string& s, const std::string& what) {
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  if (s.empty() || end == begin || (end && *end != '\0'))
    throw DataTypeError(what + ": non-numeric value '" + s + "'");
  return v;
}

inline long long parse_code(const std::string& s, const std::string& what) {
  const char* begin = s.c_str();
  char* end = nullptr;
  long long v = std::strtoll(begin, &end, 10);
  if (s.empty() || end == begin || (end && *end != '\0'))
    throw DataTypeError(what + ": non-integer code '" + s + "'");
  return v;
}

// Equal-width binning of a raw numeric column into codes 0..num_bins-1 over
// [min,max], the max clamped into the last bin. Returns the bin midpoints,
// which evaluation uses as numeric representatives of the codes.
inline std::vector<double> discretize(Csv& table, const std::string& column, int num_bins) {
  if (num_bins < 1) throw ConfigError("discretize: num_bins must be >= 1");
  int c = table.column(column);
  if (c < 0) throw DataError("discretize: no column '" + column + "'");
  std::vector<double> raw;
  raw.reserve(table.rows.size());
  for (const auto& r : table.rows) raw.push_back(parse_numeric(r[c], column));
  double lo = 0, hi = 0;
  if (!raw.empty()) {
    lo = hi = raw[0];
    for (double v : raw) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const double width = (hi - lo) / num_bins;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    int code = 0;
    if (width > 0) code = std::min(num_bins - 1, static_cast<int>((raw[i] - lo) / width));
    table.rows[i][c] = std::to_string(code);
  }
  std::vector<double> reps(num_bins);
  for (int j = 0; j < num_bins; ++j) reps[j] = lo + (j + 0.5) * width;
  return reps;
}

}  // namespace permsyn

#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "frailnet/errors.hpp"

namespace frailnet {
namespace csv {

/** Shortest decimal form that parses back to the identical double. */
inline std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, long row, const std::string& column) {
  double x = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
  auto res = std::from_chars(begin, end, x);
  if (res.ec != std::errc() || res.ptr != end) throw ParseError(row, column, s);
  return x;
}

/** Quote a field only when it needs quoting. */
inline std::string encode_field(const std::string& s) {
  bool quote = s.find_first_of(",\"\n\r") != std::string::npos;
  if (!quote) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

/** Split one CSV line; supports quoted fields with doubled-quote escapes. */
inline std::vector<std::string> split_line(const std::string& line, long row) {
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_quotes) throw ParseError(row, "<line>", line);
  fields.push_back(cur);
  return fields;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  long column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<long>(j);
    return -1;
  }
};

inline Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  Table t;
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 0) {
      t.header = split_line(line, row);
    } else if (!line.empty()) {
      auto fields = split_line(line, row);
      if (fields.size() != t.header.size())
        throw RaggedRowError(row, fields.size(), t.header.size());
      t.rows.push_back(std::move(fields));
    }
    ++row;
  }
  if (t.header.empty()) throw DataError(path + " is empty");
  return t;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open " + path + " for writing");
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (j) out_ << ',';
      out_ << encode_field(fields[j]);
    }
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw DataError("write failed");
  }

 private:
  std::ofstream out_;
};

}  // namespace csv
}  // namespace frailnet

// Copyright 2026 The norm-forge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Minimal RFC 4180 style reader/writer: comma separated, double-quoted
// fields may contain commas, quotes ("") and newlines.

#include <cstddef>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "normforge/error.hpp"

namespace normforge::csv {

struct Row {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

inline bool read_record(std::istream& in, Row& row, std::size_t& line) {
  row.fields.clear();
  row.line = line + 1;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      row.fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() != '\n') field.push_back(c);
    } else if (c == '\n') {
      ++line;
      row.fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) fail(ErrorKind::Ingest, "line " + std::to_string(row.line) + ": unterminated quoted field");
  if (!any) return false;
  ++line;
  row.fields.push_back(std::move(field));
  return true;
}

/// Header-indexed table. Blank lines are skipped.
struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorKind::Ingest, "missing column '" + name + "'");
  }
  bool has_column(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
};

inline Table parse(std::istream& in, const std::string& source = "<stream>") {
  Table table;
  Row row;
  std::size_t line = 0;
  bool have_header = false;
  while (read_record(in, row, line)) {
    if (row.fields.size() == 1 && row.fields[0].empty()) continue;
    if (!have_header) {
      table.header = row.fields;
      if (!table.header.empty() && table.header[0].rfind("\xEF\xBB\xBF", 0) == 0) table.header[0].erase(0, 3);
      have_header = true;
      continue;
    }
    if (row.fields.size() != table.header.size())
      fail(ErrorKind::Ingest, source + ": line " + std::to_string(row.line) + ": expected " +
                                  std::to_string(table.header.size()) + " columns, found " +
                                  std::to_string(row.fields.size()));
    table.rows.push_back(row);
  }
  if (!have_header) fail(ErrorKind::Ingest, source + ": empty file (no header row)");
  return table;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Ingest, "cannot open '" + path + "'");
  return parse(in, path);
}

inline std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << quote(fields[i]);
  }
  out << '\n';
}

}  // namespace normforge::csv

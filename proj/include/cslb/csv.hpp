#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "cslb/error.hpp"

namespace cslb::csv {

// Shortest round-trip formatting, so written values re-parse exactly.
inline std::string fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos)
    return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string row(const std::vector<std::string>& fields) {
  std::string out;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += escape(fields[i]);
  }
  out += '\n';
  return out;
}

// Minimal RFC-4180 style parser covering what this project writes.
inline std::vector<std::vector<std::string>> parse(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> cur;
  std::string field;
  bool quoted = false;
  size_t i = 0;
  auto end_field = [&] {
    cur.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(cur));
    cur.clear();
  };
  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c != '\r') {
      field += c;
    }
    ++i;
  }
  if (quoted) throw IoError("csv: unterminated quoted field");
  if (!field.empty() || !cur.empty()) end_row();
  return rows;
}

}  // namespace cslb::csv

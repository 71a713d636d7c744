#include "mol/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace mol {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_matrix_csv(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  std::string line;
  for (Index i = 0; i < m.rows(); ++i) {
    line.clear();
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) line += ',';
      line += format_double(m(i, j));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write failed: " + path);
}

Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.c_str();
    while (*p) {
      char* end = nullptr;
      row.push_back(std::strtod(p, &end));
      if (end == p) throw IoError("malformed number in " + path);
      p = end;
      if (*p == ',') ++p;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError("ragged rows in " + path);
    rows.push_back(std::move(row));
  }
  const Index r = static_cast<Index>(rows.size());
  const Index c = r ? static_cast<Index>(rows.front().size()) : 0;
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("invalid JSON in " + path + ": " + e.what());
  }
}

void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace mol

#include "phylova/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "phylova/error.hpp"

namespace phylova {

namespace {

std::vector<std::string> split_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote on line " + std::to_string(line_no));
  out.push_back(cell);
  return out;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line, line_no);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw FormatError("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, expected " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw FormatError("empty CSV input");
  return t;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_csv(in);
}

void write_csv(std::ostream& out, const CsvTable& table) {
  auto row_out = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << quote(row[i]);
    out << '\n';
  };
  row_out(table.header);
  for (const auto& r : table.rows) row_out(r);
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_csv(out, table);
  if (!out) throw IoError("failed writing " + path);
}

std::string format_number(double value) {
  if (std::isnan(value)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

LabeledMatrix parse_labeled_matrix(std::istream& in) {
  const CsvTable t = parse_csv(in);
  if (t.header.size() < 2) throw FormatError("expected an id column and at least one value column");
  LabeledMatrix mtx;
  mtx.id_column = t.header[0];
  mtx.col_labels.assign(t.header.begin() + 1, t.header.end());
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  const auto m = static_cast<Eigen::Index>(mtx.col_labels.size());
  mtx.values.resize(n, m);
  mtx.present.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    mtx.row_labels.push_back(row[0]);
    for (Eigen::Index j = 0; j < m; ++j) {
      const std::string cell = trim(row[static_cast<std::size_t>(j + 1)]);
      if (cell.empty() || cell == "NA" || cell == "NaN") {
        mtx.values(i, j) = std::nan("");
        mtx.present(i, j) = false;
        continue;
      }
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cell.size())
        throw FormatError("non-numeric value '" + cell + "' in row " + std::to_string(i + 1));
      mtx.values(i, j) = v;
      mtx.present(i, j) = true;
    }
  }
  return mtx;
}

LabeledMatrix read_labeled_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_labeled_matrix(in);
}

void write_labeled_matrix(std::ostream& out, const LabeledMatrix& mtx) {
  CsvTable t;
  t.header.push_back(mtx.id_column);
  t.header.insert(t.header.end(), mtx.col_labels.begin(), mtx.col_labels.end());
  for (Eigen::Index i = 0; i < mtx.values.rows(); ++i) {
    std::vector<std::string> row{mtx.row_labels[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < mtx.values.cols(); ++j) {
      const bool here = mtx.present.size() == 0 || mtx.present(i, j);
      row.push_back(here ? format_number(mtx.values(i, j)) : "NA");
    }
    t.rows.push_back(std::move(row));
  }
  write_csv(out, t);
}

void write_labeled_matrix(const std::string& path, const LabeledMatrix& mtx) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_labeled_matrix(out, mtx);
}

}  // namespace phylova

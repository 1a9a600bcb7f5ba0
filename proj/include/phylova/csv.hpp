#pragma once

// Header-row CSV tables. Numbers are written with 6 significant digits.

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

namespace phylova {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::string& path);
void write_csv(std::ostream& out, const CsvTable& table);
void write_csv(const std::string& path, const CsvTable& table);

/// %.6g; NaN is written as NA.
std::string format_number(double value);

/// Numeric matrix whose first CSV column holds row identifiers. Empty cells
/// and NA are missing (value NaN, mask false).
struct LabeledMatrix {
  std::string id_column = "id";
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Eigen::MatrixXd values;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> present;

  bool complete() const { return present.all(); }
};

LabeledMatrix read_labeled_matrix(const std::string& path);
LabeledMatrix parse_labeled_matrix(std::istream& in);
void write_labeled_matrix(std::ostream& out, const LabeledMatrix& matrix);
void write_labeled_matrix(const std::string& path, const LabeledMatrix& matrix);

}  // namespace phylova

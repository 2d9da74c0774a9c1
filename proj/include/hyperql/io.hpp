#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperql/params.hpp"

namespace hyperql {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// 17 significant digits: enough for a double to round-trip bit exactly.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Line-oriented CSV sink with a fixed header. Columns are written with
// fmt_g17 so identical runs produce identical bytes.
class CsvWriter {
 public:
  CsvWriter() = default;
  explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
    std::string head;
    for (size_t i = 0; i < columns_.size(); ++i) {
      if (i) head += ',';
      head += columns_[i];
    }
    lines_.push_back(head);
  }

  const std::vector<std::string>& columns() const { return columns_; }

  void row(std::span<const double> values) {
    if (values.size() != columns_.size()) {
      throw IoError("csv row has " + std::to_string(values.size()) + " values, header has " +
                    std::to_string(columns_.size()));
    }
    std::string line;
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) line += ',';
      line += fmt_g17(values[i]);
    }
    lines_.push_back(line);
  }

  void row(std::initializer_list<double> values) {
    row(std::span<const double>(values.begin(), values.size()));
  }

  // Pre-formatted cells, for the occasional non-numeric column.
  void row_cells(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size()) {
      throw IoError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(columns_.size()));
    }
    std::string line;
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += cells[i];
    }
    lines_.push_back(line);
  }

  std::string str() const {
    std::string out;
    for (const std::string& l : lines_) {
      out += l;
      out += '\n';
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << str();
  }

  int row_count() const { return static_cast<int>(lines_.size()) - 1; }

 private:
  std::vector<std::string> columns_;
  std::vector<std::string> lines_;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int column_index(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == name) return static_cast<int>(i);
    }
    throw IoError("csv column not found: " + name);
  }

  std::vector<double> column(const std::string& name) const {
    const int c = column_index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[static_cast<size_t>(c)]);
    return out;
  }
};

inline CsvTable load_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (header) {
      while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
      header = false;
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// Checkpoint manifest: one named parameter per block, shape then values in
// declaration order as 17-significant-digit decimals.
inline void checkpoint_save(const ParamStore& store, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f << "hyperql-checkpoint v1\n";
  for (int i = 0; i < store.count(); ++i) {
    const Param& p = store.at(i);
    f << "param " << p.name << ' ' << p.rows << ' ' << p.cols << '\n';
    for (int j = 0; j < p.size(); ++j) {
      if (j) f << ' ';
      f << fmt_g17(p.value[static_cast<size_t>(j)]);
    }
    f << '\n';
  }
}

inline void checkpoint_load(ParamStore& store, const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  std::string magic;
  std::getline(f, magic);
  if (magic != "hyperql-checkpoint v1") throw IoError("bad checkpoint header in " + path.string());

  std::map<std::string, std::pair<std::pair<int, int>, std::vector<double>>> seen;
  std::string tok;
  while (f >> tok) {
    if (tok != "param") throw IoError("bad checkpoint record '" + tok + "'");
    std::string name;
    int rows = 0, cols = 0;
    f >> name >> rows >> cols;
    std::vector<double> vals(static_cast<size_t>(rows) * cols);
    for (double& v : vals) f >> v;
    seen[name] = {{rows, cols}, std::move(vals)};
  }
  for (int i = 0; i < store.count(); ++i) {
    Param& p = store.at(i);
    auto it = seen.find(p.name);
    if (it == seen.end()) throw IoError("checkpoint missing tensor " + p.name);
    const auto& [shape, vals] = it->second;
    if (shape.first != p.rows || shape.second != p.cols) {
      throw IoError("checkpoint shape mismatch for tensor " + p.name + ": file " +
                    detail::shape_str(shape.first, shape.second) + " store " +
                    detail::shape_str(p.rows, p.cols));
    }
    p.value = vals;
  }
}

}  // namespace hyperql

#include "svf/dataset.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace svf {

Dataset::Dataset(std::vector<std::string> names,
                 std::vector<std::vector<double>> cols)
    : names_(std::move(names)), cols_(std::move(cols)) {
  for (std::size_t i = 0; i < names_.size(); ++i) index_[names_[i]] = i;
  rows_ = cols_.empty() ? 0 : cols_[0].size();
}

bool Dataset::has_column(const std::string& name) const {
  return index_.count(name) > 0;
}

const std::vector<double>& Dataset::column(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw MissingColumn(name);
  return cols_[it->second];
}

namespace {

std::vector<std::string> split_cells(const std::string& line, bool comma) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    const bool sep = comma ? (c == ',') : (c == ' ' || c == '\t');
    if (sep) {
      if (comma || !cell.empty()) out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  if (!cell.empty() || (comma && !out.empty())) out.push_back(cell);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_table(const std::string& path,
                   const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) throw FileNotFound(path);

  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  bool comma = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    comma = t.find(',') != std::string::npos;
    for (auto& h : split_cells(t, comma)) header.push_back(trim(h));
    break;
  }
  if (header.empty()) throw TooFewRows("empty table: " + path);

  std::vector<std::size_t> want;
  for (const auto& c : columns) {
    std::size_t j = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == c) j = i;
    if (j == header.size()) throw MissingColumn(c);
    want.push_back(j);
  }

  std::vector<std::vector<double>> cols(columns.size());
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = split_cells(t, comma);
    if (cells.size() != header.size())
      throw ParseError(lineno, 1,
                       "expected " + std::to_string(header.size()) +
                           " cells, got " + std::to_string(cells.size()));
    for (std::size_t q = 0; q < want.size(); ++q) {
      const std::string cell = trim(cells[want[q]]);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0' || !std::isfinite(v))
        throw ParseError(lineno, want[q] + 1, "non-numeric cell: " + cell);
      cols[q].push_back(v);
    }
  }
  if (cols.empty() || cols[0].empty())
    throw TooFewRows("no data rows in " + path);
  return Dataset(columns, std::move(cols));
}

Partition make_partition(std::size_t rows, std::size_t n_subsets,
                         PartitionScheme) {
  if (n_subsets < 2 || n_subsets > rows)
    throw TooFewRows("need 2 <= n_subsets <= row count, got n_subsets=" +
                     std::to_string(n_subsets) + ", rows=" +
                     std::to_string(rows));
  Partition p;
  p.subsets.resize(n_subsets);
  for (std::size_t k = 0; k < rows; ++k)
    p.subsets[k % n_subsets].push_back(k);
  return p;
}

MeasurementBinding bind_measurements(const Dataset& data, const TaskSpec& spec,
                                     const std::vector<Grid>& grids) {
  MeasurementBinding b;
  const std::size_t rows = data.rows();
  for (std::size_t k = 0; k < rows; ++k) {
    for (const auto& v : spec.vars) {
      if (v.kind != VarDecl::Kind::GridFunction || !data.has_column(v.name))
        continue;
      if (v.arg_grids.size() != 1)
        throw CompileError("measured variable " + v.name +
                           " must be a one-argument grid function");
      const Grid* g = nullptr;
      for (const auto& gr : grids)
        if (gr.name == v.arg_grids[0]) g = &gr;
      if (!g) throw UnknownSymbol(v.arg_grids[0]);
      if (!data.has_column(g->name))
        throw MissingColumn(g->name);

      Measurement m;
      m.var = v.name;
      m.row = k;
      m.coord = data.column(g->name)[k];
      m.z = data.column(v.name)[k];

      const double tol = 1e-9 * g->h;
      if (m.coord < g->min - tol || m.coord > g->max + tol)
        throw OutOfDomain(k, "coordinate " + std::to_string(m.coord) +
                                 " outside grid " + g->name);
      const double u = (m.coord - g->min) / g->h;
      const auto near = static_cast<std::ptrdiff_t>(std::llround(u));
      const std::size_t n = g->size() - 1;
      if (near >= 0 && near <= static_cast<std::ptrdiff_t>(n) &&
          std::abs(m.coord - g->node(static_cast<std::size_t>(near))) <= tol) {
        m.nodes[0] = static_cast<int>(near);
        m.weights[0] = 1.0;
        m.stencil_size = 1;
      } else {
        auto i0 = static_cast<std::ptrdiff_t>(std::floor(u));
        i0 = std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(i0, static_cast<std::ptrdiff_t>(n) - 1));
        const double frac = (m.coord - g->node(static_cast<std::size_t>(i0))) / g->h;
        m.nodes[0] = static_cast<int>(i0);
        m.nodes[1] = static_cast<int>(i0 + 1);
        m.weights[0] = 1.0 - frac;
        m.weights[1] = frac;
        m.stencil_size = 2;
      }
      b.items.push_back(m);
    }
  }
  return b;
}

}  // namespace svf

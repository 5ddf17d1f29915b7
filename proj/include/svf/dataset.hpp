#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "svf/errors.hpp"
#include "svf/grid.hpp"

namespace svf {

// Measurement table: the selected columns of a whitespace- or
// comma-separated text file, in file row order. Immutable after load.
class Dataset {
 public:
  Dataset(std::vector<std::string> names, std::vector<std::vector<double>> cols);

  std::size_t rows() const { return rows_; }
  bool has_column(const std::string& name) const;
  const std::vector<double>& column(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<double>> cols_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t rows_ = 0;
};

// Loads the named columns. The first non-comment line must be a header
// containing every requested name. Cells must be finite numbers.
Dataset load_table(const std::string& path,
                   const std::vector<std::string>& columns);

// Disjoint index subsets covering 0..|K|-1, assigned by k mod n_subsets, so
// n_subsets = |K| is exactly leave-one-out.
struct Partition {
  std::vector<std::vector<std::size_t>> subsets;
};

enum class PartitionScheme { Strided };

Partition make_partition(std::size_t rows, std::size_t n_subsets,
                         PartitionScheme scheme = PartitionScheme::Strided);

// One measured value z at a coordinate, expressed through grid-node values
// by an interpolation stencil (the P_k operator): z ~ sum_j w_j * var[node_j].
struct Measurement {
  std::string var;
  std::size_t row = 0;
  double coord = 0, z = 0;
  int nodes[2] = {0, 0};
  double weights[2] = {0, 0};
  int stencil_size = 0;
};

struct MeasurementBinding {
  std::vector<Measurement> items;  // ordered by (row, var declaration order)

  // P_k applied to a flat value array indexed like the grid nodes of `var`
  // starting at `offset`.
  static double apply(const Measurement& m, const double* values) {
    double s = 0;
    for (int j = 0; j < m.stencil_size; ++j)
      s += m.weights[j] * values[m.nodes[j]];
    return s;
  }
};

// Binds every measured grid function (a VAR whose name appears among the
// selected columns) to its measurements. Coordinates within 1e-9*h of a node
// collapse to a single-node stencil; otherwise two-node linear interpolation.
MeasurementBinding bind_measurements(const Dataset& data, const TaskSpec& spec,
                                     const std::vector<Grid>& grids);

}  // namespace svf

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "svf/errors.hpp"
#include "svf/taskfile.hpp"

namespace svf {

// Uniform grid with exact endpoints. The step is snapped when the declared
// one does not divide the span; build_grid reports that through `warning`.
struct Grid {
  std::string name;
  double min = 0, max = 0, h = 0;
  std::vector<double> nodes;  // nodes[0] = min, nodes[n] = max

  std::size_t size() const { return nodes.size(); }
  double node(std::size_t i) const { return nodes[i]; }
};

inline Grid build_grid(const GridDecl& d, std::string* warning = nullptr) {
  if (!(d.step > 0)) throw CompileError("grid " + d.name + ": non-positive step");
  const double span = d.max - d.min;
  const double ratio = span / d.step;
  const auto n = static_cast<std::size_t>(std::llround(ratio));
  if (warning && std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
    *warning = "grid " + d.name + ": step does not divide span; snapped to h=" +
               std::to_string(span / static_cast<double>(n));
  Grid g;
  g.name = d.name;
  g.min = d.min;
  g.max = d.max;
  g.h = span / static_cast<double>(n);
  g.nodes.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i)
    g.nodes[i] = d.min + static_cast<double>(i) * g.h;
  g.nodes[n] = d.max;
  return g;
}

}  // namespace svf

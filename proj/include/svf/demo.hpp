#pragma once

// Synthetic measurement series for the bundled model task-files: a damped
// oscillator sampled on a uniform time grid, optionally with Gaussian noise.

#include <cstdint>
#include <string>

namespace svf {

// How the `level` field is read: as a variance, as a standard deviation, or
// not at all (exact values).
enum class DemoNoise { Variance, StdDev, Off };

struct DemoOptions {
  std::uint64_t seed = 1;
  DemoNoise noise = DemoNoise::Variance;
  double level = 0.1;
  // Default frequency is sqrt(4k - mu)/2, reproducing the bundled reference
  // series. With exact_frequency the table samples sin/exp with frequency
  // sqrt(4k - mu^2)/2 instead, which is the exact solution of
  // x'' = -k (x - dx) - mu x'; use it when the fitted equation itself is the
  // ground truth being tested.
  bool exact_frequency = false;
};

// x(t) = sin(w t) * exp(-mu t / 2) + dx with k = 1.56, mu = 0.4, dx = 1.2 and
// w as selected by `exact_frequency` above.
double demo_truth(double t, bool exact_frequency = false);

// 22-row table with header "t x", t uniform on [-1, 2.5]. The same options
// always produce the same bytes.
std::string demo_table(const DemoOptions& opt = {});

// Writes demo_table(opt) to `path`.
void gen_demo(const std::string& path, const DemoOptions& opt = {});

}  // namespace svf

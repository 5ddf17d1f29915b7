#include "svf/demo.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "svf/errors.hpp"
#include "svf/util.hpp"

namespace svf {

namespace {

constexpr double kSpring = 1.56;
constexpr double kDamping = 0.4;
constexpr double kShift = 1.2;
constexpr double kTMin = -1.0;
constexpr double kTMax = 2.5;
constexpr int kLastIndex = 21;

// Box-Muller on explicit 53-bit uniforms. <random>'s normal_distribution is
// implementation-defined; this sequence is pinned by the engine alone.
double standard_normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

double demo_truth(double t, bool exact_frequency) {
  const double omega =
      exact_frequency ? std::sqrt(4.0 * kSpring - kDamping * kDamping) / 2.0
                      : std::sqrt(4.0 * kSpring - kDamping) / 2.0;
  return std::sin(omega * t) * std::exp(-kDamping * t / 2.0) + kShift;
}

std::string demo_table(const DemoOptions& opt) {
  if (opt.noise != DemoNoise::Off && !(opt.level >= 0))
    throw Error("demo: noise level must be nonnegative");
  const double sd = opt.noise == DemoNoise::Off      ? 0.0
                    : opt.noise == DemoNoise::StdDev ? opt.level
                                                     : std::sqrt(opt.level);
  std::mt19937_64 rng(opt.seed);
  std::string out = "t x\n";
  for (int k = 0; k <= kLastIndex; ++k) {
    const double t = kTMin + (kTMax - kTMin) * k / kLastIndex;
    const double x = demo_truth(t, opt.exact_frequency) + sd * standard_normal(rng);
    out += format_double(t);
    out += ' ';
    out += format_double(x);
    out += '\n';
  }
  return out;
}

void gen_demo(const std::string& path, const DemoOptions& opt) {
  const std::string body = demo_table(opt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("demo: cannot open " + path + " for writing");
  f << body;
  f.flush();
  if (!f) throw Error("demo: write failed: " + path);
}

}  // namespace svf

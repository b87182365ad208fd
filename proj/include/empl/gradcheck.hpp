#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "empl/numeric.hpp"

namespace empl {

struct BatteryOptions {
  std::size_t configs = 100;
  double eps = 1e-3;
  std::uint64_t seed = 0;
  std::size_t max_dim = 8;
  std::size_t max_classes = 5;
  // Test hook: negate every analytic gradient before comparing.
  bool flip_sign = false;
};

struct BatteryCase {
  std::string family;  // cosine, ce, energy, empl_loss
  std::size_t config = 0;
  std::size_t dimension = 0;  // number of checked coordinates
  GradReport report;
};

struct BatteryResult {
  std::vector<BatteryCase> cases;

  const BatteryCase& worst() const;
  double worst_error() const { return worst().report.max_rel_error; }
  bool passed(double tolerance) const { return worst_error() < tolerance; }
};

// Each configuration c draws its sizes and values from Rng(stream_seed(seed, c))
// and checks all four families against central differences.
BatteryResult run_grad_battery(const BatteryOptions& options);

}  // namespace empl

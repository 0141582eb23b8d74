#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lrfr/tensor.hpp"

namespace lrfr {

struct FdEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t worst_index = -1;
};

// Central differences of a scalar function against an analytic gradient.
// Error per coordinate is |analytic - numeric| / max(1, |analytic|,
// |numeric|).
FdEntry fd_check(const std::string& name,
                 const std::function<double(const Tensor&)>& f,
                 const Tensor& x, const Tensor& analytic_grad,
                 double eps = 1e-6);

struct Battery {
  std::vector<FdEntry> entries;
  double tolerance = 1e-4;

  double max_rel_err() const;
  const FdEntry* worst() const;
  bool pass() const;
};

// Finite-difference verification of every analytic gradient path: the
// four distance kinds (inputs redrawn away from their kinks), cosface,
// the combined objective, and end-to-end through a reduced network.
// Runs `seeds` independently seeded repetitions.
Battery gradient_battery(uint64_t base_seed, int seeds,
                         double tolerance = 1e-4);

}  // namespace lrfr

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace corrosion {

// Central finite differences on a double-precision re-implementation of each
// op, compared against the float analytic gradients from the tape.
//
// Error per coordinate is |a - n| / max(|a|, |n|). Coordinates with
// |a| + |n| < abs_tol are instead compared absolutely against abs_tol.
struct GradcheckOptions {
  double h = 1e-3;
  double rel_tol = 1e-4;
  double abs_tol = 1e-6;
  std::uint64_t seed = 20180207;
  std::size_t seeds_per_op = 4;
  // Coordinates checked per parameter tensor of the network case.
  std::size_t network_coords = 24;
  // The whole-network case chains float32 forwards through five blocks, so its
  // analytic gradient carries the rounding of every layer.
  double composite_rel_tol = 5e-3;
};

struct GradcheckCase {
  std::string op;
  std::string shape;
  std::uint64_t seed = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // straddled a ReLU kink or a max-pool switch
  double max_error = 0.0;           // relative
  double max_abs_error_tiny = 0.0;  // over near-zero coordinates
  bool composite = false;           // checked against composite_rel_tol
  bool passed = false;
};

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace corrosion

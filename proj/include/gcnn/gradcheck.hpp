#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gcnn/tape.hpp"

namespace gcnn {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Check at most this many evenly spaced coordinates per block (0 = all).
  std::size_t max_per_block = 0;
  // Lower bound on the denominator of the block error. Blocks whose true
  // gradient vanishes (e.g. a bias feeding batch norm) are then judged by
  // absolute error tolerance * floor instead of a ratio of roundoff terms.
  double magnitude_floor = 1e-6;
  // A perturbation that crosses a leaky-ReLU kink is retried with the step
  // divided by 10, this many times, before the coordinate is skipped.
  std::size_t step_reductions = 2;
};

struct GradBlockReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +/- perturbation moved some leaky-ReLU input across 0
  // at every step size tried.
  std::size_t skipped = 0;
};

struct GradCheckReport {
  std::vector<GradBlockReport> blocks;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = false;

  std::string to_string() const;
};

// Builds a scalar loss on a fresh tape; must bind every checked parameter
// through tape.parameter().
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

// Compares analytic gradients against central differences
// (f(p + h) - f(p - h)) / 2h. The error of a block is
// max|analytic - numeric| / max(max|analytic|, max|numeric|, magnitude_floor).
GradCheckReport finite_difference_check(const LossBuilder& loss,
                                        std::span<Parameter<double>* const> params,
                                        const GradCheckOptions& opts = {});

}  // namespace gcnn

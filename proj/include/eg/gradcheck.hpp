#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "eg/matrix.hpp"
#include "eg/tape.hpp"

namespace eg {

// Builds a scalar loss on `tape` from leaves holding the current parameter values.
using ScalarObjective = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-5;
  // Denominator floor for the relative error, so entries whose true gradient is ~0
  // are judged on absolute agreement.
  double abs_floor = 1e-6;
};

struct GradcheckReport {
  std::vector<double> block_max_rel_error;  // one per parameter matrix
  double max_rel_error = 0.0;
  std::size_t worst_block = 0;
  std::size_t worst_entry = 0;
  bool passed = false;
};

double relative_error(double analytic, double numeric, double abs_floor);

// Compares tape gradients with central differences (f(p+h) - f(p-h)) / 2h, entry by entry.
// Throws NumericError naming the block and entry when f is non-finite at a perturbed point.
GradcheckReport gradcheck(const ScalarObjective& objective, const std::vector<Matrix>& params,
                          const GradcheckOptions& options = {});

}  // namespace eg

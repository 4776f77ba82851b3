#include "eg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eg/error.hpp"

namespace eg {

namespace {

double evaluate(const ScalarObjective& objective, const std::vector<Matrix>& params) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  return tape.scalar(objective(tape, leaves));
}

}  // namespace

double relative_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(const ScalarObjective& objective, const std::vector<Matrix>& params,
                          const GradcheckOptions& options) {
  if (!(options.step > 0.0)) throw ParameterError("gradcheck step must be positive");

  std::vector<Matrix> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p));
    const ad::Var loss = objective(tape, leaves);
    const ad::Gradients grads = tape.backward(loss);
    for (const auto& leaf : leaves) analytic.push_back(grads[leaf]);
  }

  GradcheckReport report;
  report.block_max_rel_error.assign(params.size(), 0.0);
  std::vector<Matrix> probe = params;
  const double h = options.step;

  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t e = 0; e < params[b].size(); ++e) {
      const double original = params[b].values()[e];
      double plus = 0.0, minus = 0.0;
      try {
        probe[b].values()[e] = original + h;
        plus = evaluate(objective, probe);
        probe[b].values()[e] = original - h;
        minus = evaluate(objective, probe);
      } catch (const NumericError& err) {
        throw NumericError("gradcheck: objective failed at block " + std::to_string(b) +
                           " entry " + std::to_string(e) + ": " + err.what());
      }
      probe[b].values()[e] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("gradcheck: non-finite objective at block " + std::to_string(b) +
                           " entry " + std::to_string(e));
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double err =
          relative_error(analytic[b].values()[e], numeric, options.abs_floor);
      report.block_max_rel_error[b] = std::max(report.block_max_rel_error[b], err);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_block = b;
        report.worst_entry = e;
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace eg

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "boxrec/tensor.hpp"

namespace boxrec::ad {

struct FdFailure {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct FdReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;   // coordinates within a step of a branch boundary
  std::size_t failed = 0;
  double max_rel_error = 0.0;
  std::vector<FdFailure> failures;

  bool ok() const { return failed == 0 && checked > 0; }
};

struct FdEvaluation {
  double loss = 0.0;
  std::vector<Tensor<double>> grads;       // aligned with FdProblem::params
  std::vector<std::int32_t> signature;     // forward branch decisions
};

// A scalar function of named parameter tensors. `evaluate` must rebuild the
// computation from the current contents of `params` (including any internal
// randomness re-seeded identically), returning gradients only when asked.
struct FdProblem {
  std::vector<std::pair<std::string, Tensor<double>*>> params;
  std::function<FdEvaluation(bool with_grads)> evaluate;
};

// Central-difference check of every parameter coordinate. A coordinate whose
// two perturbed evaluations take different branches (clamp corners, min/max
// ties, argmin switches) is reported as skipped, not failed.
inline FdReport finite_difference_check(const FdProblem& problem, double step = 1e-4,
                                        double rel_tol = 1e-3, double abs_floor = 1e-6) {
  FdReport report;
  const FdEvaluation base = problem.evaluate(true);

  for (std::size_t p = 0; p < problem.params.size(); ++p) {
    Tensor<double>& theta = *problem.params[p].second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double orig = theta.v[i];

      theta.v[i] = orig + step;
      const FdEvaluation plus = problem.evaluate(false);
      theta.v[i] = orig - step;
      const FdEvaluation minus = problem.evaluate(false);
      theta.v[i] = orig;

      if (plus.signature != minus.signature) {
        ++report.skipped;
        continue;
      }

      const double numeric = (plus.loss - minus.loss) / (2.0 * step);
      const double analytic = base.grads[p].v[i];
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      const double err = std::abs(analytic - numeric);
      ++report.checked;
      if (scale > 0.0) report.max_rel_error = std::max(report.max_rel_error, err / std::max(scale, abs_floor));
      if (err > std::max(abs_floor, rel_tol * scale)) {
        ++report.failed;
        report.failures.push_back({problem.params[p].first, i, analytic, numeric, err});
      }
    }
  }
  return report;
}

}  // namespace boxrec::ad

#pragma once

#include <string>
#include <vector>

#include "boxrec/gradcheck.hpp"
#include "boxrec/graph.hpp"

namespace boxrec {

struct GradientSuiteEntry {
  std::string name;
  ad::FdReport report;
};

// One finite-difference problem per differentiation rule, on small random
// inputs. `bug_factor` != 1 deliberately corrupts the named op's backward
// rule so callers can confirm the checker notices.
std::vector<GradientSuiteEntry> op_gradient_suite(ad::Op bug_op = ad::Op::kLeaf,
                                                  double bug_factor = 1.0);

// End-to-end checks of the ranking loss at toy dimensions (d=4, L=3, N=2),
// sweeping box count, box mode, gamma, and the exterior penalty.
std::vector<GradientSuiteEntry> model_gradient_suite();

}  // namespace boxrec

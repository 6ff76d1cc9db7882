#pragma once

// Central finite-difference checks of every backward rule, evaluated in
// double precision.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "sketchcloud/tensor.hpp"

namespace sketchcloud {

using DTensor = BasicTensor<double>;

struct GradcheckOptions {
  double step = 1e-3;
  // Central differences at step and step/2 are Richardson-extrapolated. An
  // entry whose probes land on a different branch of a nondifferentiable op
  // is retried with plain central differences at each fallback step in turn
  // and skipped if every one of them changes branches.
  std::vector<double> fallback_steps{1e-5, 1e-7};
  double tolerance = 1e-4;
  // Relative error is |a − n| / max(|a|, |n|, scale_floor·g, floor·max(1, |f|)),
  // where g is the input's largest analytic gradient entry and f the checked
  // value: entries far below the gradient's own scale, or at the rounding
  // noise of f, are judged at that scale.
  double scale_floor = 1e-3;
  double floor = 1e-6;
  // Entries probed per input; larger inputs get a seeded random subset.
  std::size_t max_entries = 48;
};

struct GradcheckCase {
  std::string name;
  // Leaves whose gradients are checked; perturbed in place.
  std::vector<DTensor> inputs;
  // Rebuilds the graph from the current input values. Non-scalar outputs are
  // reduced with fixed random weights.
  std::function<DTensor()> forward;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0;
  double max_abs_gradient = 0;
  std::size_t checked = 0;
  std::size_t refined = 0;  // probed with the fallback step
  std::size_t skipped = 0;
  bool passed = false;
};

GradcheckResult run_gradcheck(const GradcheckCase& c, const GradcheckOptions& options, std::uint64_t seed);

// Every differentiable op, both losses, and the composite model paths.
std::vector<GradcheckCase> standard_gradcheck_cases(std::uint64_t seed);

struct GradcheckReport {
  std::vector<GradcheckResult> results;
  bool all_passed() const;
};

GradcheckReport run_gradcheck_suite(const std::vector<GradcheckCase>& cases, const GradcheckOptions& options,
                                    std::uint64_t seed);

// One line per case: name, max relative error, counts, PASS/FAIL.
void print_gradcheck_report(const GradcheckReport& report, const GradcheckOptions& options, std::ostream& os);

}  // namespace sketchcloud

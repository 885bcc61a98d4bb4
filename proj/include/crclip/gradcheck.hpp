#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crclip/tensor.hpp"

namespace crclip {

// Central finite differences against reverse-mode gradients. The numeric
// side only ever evaluates the forward pass, so it stays independent of
// the backward rules it is checking.

struct GradCheckReport {
  std::string name;
  int cases = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Relative error with a floor so exact-zero gradients compare cleanly.
double rel_err(double analytic, double numeric, double floor = 1e-6);

// Runs `forward` once under the tape, backpropagates, then probes every
// entry of every leaf with central differences of step `fd_step`.
// `forward` must be a pure function of the leaves' current values.
double check_gradients(const std::function<Tensor()>& forward,
                       const std::vector<Tensor>& leaves, double fd_step = 1e-5);

// The per-op and composed-graph suites behind `crclip gradcheck`.
std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed,
                                                 int cases_per_op);

bool all_pass(const std::vector<GradCheckReport>& reports);

}  // namespace crclip

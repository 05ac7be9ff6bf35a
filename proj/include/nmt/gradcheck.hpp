#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nmt/tensor.hpp"

namespace nmt {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t checked = 0;

  bool ok(double tol) const { return max_rel_err < tol; }
};

// Central-difference check of d(loss)/d(param) for every listed parameter.
//
// `make_loss` must rebuild the loss from the parameters' current values and
// be deterministic across calls (reseed any RNG it uses internally). The
// analytic gradient comes from one taped backward; numeric values come from
// value-only passes with single elements perturbed by +-h. Relative error is
// |a-n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
// amplifying finite-difference noise.
//
// `stride` checks every stride-th element of each parameter (1 = all).
GradCheckReport finite_diff_check(const std::vector<std::pair<std::string, Tensor>>& params,
                                  const std::function<Tensor()>& make_loss, double h = 1e-5,
                                  double floor = 1e-3, std::int64_t stride = 1);

}  // namespace nmt

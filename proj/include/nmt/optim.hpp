#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nmt/model.hpp"

namespace nmt {

// Inverse-sqrt rate with linear warmup:
//   d_model^-0.5 * min(step^-0.5, step * warmup^-1.5), step counted from 1.
double lr_schedule(std::int64_t step, std::int64_t d_model, std::int64_t warmup);

// First/second moment buffers for one parameter tensor, allocated lazily on
// the first update so untouched parameters carry no state.
struct AdamSlots {
  std::vector<double> m;
  std::vector<double> v;
};

// One bias-corrected Adam update over a flat parameter buffer. `step` is the
// global update count including this one, starting at 1.
void adam_update(std::vector<double>& param, const std::vector<double>& grad, AdamSlots& slots,
                 std::int64_t step, double rate, double beta1, double beta2, double eps);

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies the gradients currently held by `params`. Parameters whose
  // gradient buffer was never materialized by a backward pass are skipped,
  // so branches excluded from the loss graph stay bit-identical.
  void step(ModelParams& params, double rate);

  std::int64_t steps_taken() const { return step_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }
  const std::map<std::string, AdamSlots>& slots() const { return slots_; }

  // Checkpoint restore: replaces the step counter and all moment buffers.
  void restore(std::int64_t steps, std::map<std::string, AdamSlots> slots);

 private:
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t step_ = 0;
  std::map<std::string, AdamSlots> slots_;
};

}  // namespace nmt

#include "nmt/optim.hpp"

#include <cmath>

#include "nmt/error.hpp"

namespace nmt {

double lr_schedule(std::int64_t step, std::int64_t d_model, std::int64_t warmup) {
  if (step < 1) throw ContractError("lr_schedule: step must be >= 1");
  if (d_model < 1 || warmup < 1) throw ContractError("lr_schedule: d_model and warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void adam_update(std::vector<double>& param, const std::vector<double>& grad, AdamSlots& slots,
                 std::int64_t step, double rate, double beta1, double beta2, double eps) {
  if (grad.size() != param.size()) throw DimError("adam_update: gradient size mismatch");
  if (slots.m.empty()) {
    slots.m.assign(param.size(), 0.0);
    slots.v.assign(param.size(), 0.0);
  }
  if (slots.m.size() != param.size() || slots.v.size() != param.size()) {
    throw DimError("adam_update: moment size mismatch");
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    slots.m[i] = beta1 * slots.m[i] + (1.0 - beta1) * g;
    slots.v[i] = beta2 * slots.v[i] + (1.0 - beta2) * g * g;
    const double mhat = slots.m[i] / c1;
    const double vhat = slots.v[i] / c2;
    param[i] -= rate * mhat / (std::sqrt(vhat) + eps);
  }
}

void AdamOptimizer::step(ModelParams& params, double rate) {
  ++step_;
  params.visit([&](const std::string& name, Tensor& t) {
    const auto& node = t.node();
    if (node->grad.empty()) return;
    adam_update(node->data, node->grad, slots_[name], step_, rate, beta1_, beta2_, eps_);
  });
}

void AdamOptimizer::restore(std::int64_t steps, std::map<std::string, AdamSlots> slots) {
  if (steps < 0) throw ContractError("AdamOptimizer::restore: negative step count");
  step_ = steps;
  slots_ = std::move(slots);
}

}  // namespace nmt

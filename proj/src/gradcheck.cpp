#include "nmt/gradcheck.hpp"

#include <cmath>

namespace nmt {

GradCheckReport finite_diff_check(const std::vector<std::pair<std::string, Tensor>>& params,
                                  const std::function<Tensor()>& make_loss, double h,
                                  double floor, std::int64_t stride) {
  if (params.empty()) throw ContractError("finite_diff_check: no parameters given");
  if (h <= 0.0 || stride < 1) throw ContractError("finite_diff_check: bad h or stride");

  for (const auto& [name, p] : params) {
    (void)name;
    Tensor(p).zero_grad();
  }
  Tensor loss = make_loss();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    (void)name;
    analytic.push_back(p.grad());
  }

  auto value_of = [&]() {
    NoGradGuard guard;
    Tensor l = make_loss();
    return l.data()[0];
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi].second;
    std::vector<double>& vals = p.data();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(vals.size()); i += stride) {
      const double saved = vals[static_cast<std::size_t>(i)];
      vals[static_cast<std::size_t>(i)] = saved + h;
      const double up = value_of();
      vals[static_cast<std::size_t>(i)] = saved - h;
      const double down = value_of();
      vals[static_cast<std::size_t>(i)] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][static_cast<std::size_t>(i)];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].first;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace nmt

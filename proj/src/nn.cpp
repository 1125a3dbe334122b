#include "tfm/nn.hpp"

#include <cmath>

namespace tfm::num {

GradCheckResult grad_check(ParamStore& ps,
                           const std::function<double(bool)>& loss, double h) {
  ps.zero_grad();
  loss(true);
  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, e] : ps.entries()) analytic[name] = e.grad;

  GradCheckResult res;
  for (auto& [name, e] : ps.entries()) {
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      double saved = e.value.data[i];
      e.value.data[i] = saved + h;
      double lp = loss(false);
      e.value.data[i] = saved - h;
      double lm = loss(false);
      e.value.data[i] = saved;
      double gn = (lp - lm) / (2.0 * h);
      double ga = analytic[name][i];
      double denom = std::max({std::fabs(ga), std::fabs(gn), 1e-8});
      double rel = std::fabs(ga - gn) / denom;
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
        res.worst_index = i;
        res.analytic = ga;
        res.numeric = gn;
      }
    }
  }
  return res;
}

} // namespace tfm::num

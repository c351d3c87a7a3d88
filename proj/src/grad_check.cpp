#include "ctxfuse/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ctxfuse {

GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                const GradCheckOptions& opts) {
  if (params.empty()) throw std::invalid_argument("gradient check: no parameters given");
  for (const auto& [name, p] : params)
    if (!p.tracked())
      throw std::invalid_argument("gradient check: parameter '" + name + "' is not tracked");

  Tape::active().clear();

  {
    NoGradGuard ng;
    const double f1 = f().item();
    const double f2 = f().item();
    if (f1 != f2)
      throw std::runtime_error("gradient check: function is not deterministic (" +
                               std::to_string(f1) + " vs " + std::to_string(f2) + ")");
  }

  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
  Tensor loss = f();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) analytic.push_back(p.grad_values());

  GradCheckReport report;
  report.pass = true;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      double fp, fm;
      {
        NoGradGuard ng;
        p.data()[i] = orig + opts.eps;
        fp = f().item();
        p.data()[i] = orig - opts.eps;
        fm = f().item();
      }
      p.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), opts.denom_floor});
      const double rel = std::fabs(a - numeric) / denom;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.checked;
      if (rel > opts.rel_tol) {
        report.pass = false;
        if (report.failures.size() < opts.max_failures) {
          std::ostringstream os;
          os << params[pi].first << "[" << i << "]: analytic=" << a << " numeric=" << numeric
             << " rel_err=" << rel;
          report.failures.push_back(os.str());
        }
      }
    }
  }
  return report;
}

}  // namespace ctxfuse

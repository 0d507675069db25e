#include "gnmap/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace gnmap::nn {

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : params) {
    entries.push_back({{"name", e.name},
                       {"count", e.count},
                       {"max_abs_error", e.max_abs_error},
                       {"max_rel_error", e.max_rel_error}});
  }
  return {{"max_rel_error", max_rel_error}, {"params", std::move(entries)}};
}

GradCheckReport grad_check(const std::function<Var(Graph&)>& forward,
                           const std::vector<Param*>& params, GradCheckOptions options) {
  for (Param* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(forward(g));
  }
  auto eval = [&] {
    Graph g;
    return g.value(forward(g))[0];
  };

  GradCheckReport report;
  for (Param* p : params) {
    GradCheckEntry e{p->name, p->value.size(), 0.0, 0.0};
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + options.step;
      const double up = eval();
      p->value.data[i] = saved - options.step;
      const double down = eval();
      p->value.data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p->grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      e.max_abs_error = std::max(e.max_abs_error, abs_err);
      e.max_rel_error = std::max(e.max_rel_error, abs_err / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.params.push_back(std::move(e));
  }
  for (Param* p : params) p->zero_grad();
  return report;
}

}  // namespace gnmap::nn

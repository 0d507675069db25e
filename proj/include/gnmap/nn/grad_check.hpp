#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnmap/nn/graph.hpp"

namespace gnmap::nn {

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_error = 0.0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
  nlohmann::json to_json() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
};

/// Builds a scalar with `forward` once for analytic gradients, then re-runs it
/// with each parameter entry nudged by +/- step for central differences.
/// `forward` must be deterministic and must read the listed params through
/// Graph::param.
GradCheckReport grad_check(const std::function<Var(Graph&)>& forward,
                           const std::vector<Param*>& params, GradCheckOptions options = {});

}  // namespace gnmap::nn

#pragma once

#include <vector>

#include "gnmap/nn/tensor.hpp"

namespace gnmap::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive moment estimation over a fixed parameter list. step() reads
/// Param::grad and leaves it untouched; call zero_grad() between steps.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg);

  /// Throws DivergenceError naming the parameter if any gradient is not finite;
  /// in that case no parameter is modified.
  void step();
  void zero_grad();

  long steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

}  // namespace gnmap::nn

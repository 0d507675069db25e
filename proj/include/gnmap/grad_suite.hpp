#pragma once

// Named finite-difference gradient checks, one per differentiable op, layer
// and end-to-end loss. Each check draws its shapes, inputs and weights from
// the seed, so different seeds also exercise different shapes. Inputs are
// registered as Params so their gradients are checked too.

#include <cstdint>
#include <string>
#include <vector>

#include "gnmap/nn/grad_check.hpp"

namespace gnmap {

/// "matmul", "matmul_nt", ..., "block", "pretrain", "finetune".
const std::vector<std::string>& grad_suite_modules();

/// Throws std::invalid_argument for an unknown module name.
nn::GradCheckReport run_grad_check(const std::string& module, std::uint64_t seed,
                                   nn::GradCheckOptions options = {});

}  // namespace gnmap

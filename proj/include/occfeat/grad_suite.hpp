#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "occfeat/grad_check.hpp"

namespace occfeat {

struct GradSuiteEntry {
  std::string name;
  std::uint64_t seed = 0;
  nn::GradCheckReport report;
};

// Finite-difference checks of every differentiable op and of the full student
// under the pretraining objective, once per seed, on a small rig.
std::vector<GradSuiteEntry> run_gradient_suite(std::span<const std::uint64_t> seeds,
                                               const nn::GradCheckOptions& options = {});

}  // namespace occfeat

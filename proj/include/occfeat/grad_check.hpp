#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "occfeat/module_graph.hpp"

namespace occfeat::nn {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Elements sampled per parameter; 0 checks every element.
  std::size_t max_per_param = 64;
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<param>[index]" of the worst element
  bool passed = false;
};

// Compares the analytic gradients already stored in `params` against central
// differences of `loss`, which must evaluate the loss at the current values.
// Throws std::runtime_error if the loss is not finite.
GradCheckReport grad_check(std::span<Parameter* const> params, const std::function<double()>& loss,
                           const GradCheckOptions& options = {});

// loss_fn(output, grad_output) returns the scalar loss and writes dL/doutput.
using OutputLoss = std::function<double(const Tensor& output, Tensor& grad_output)>;

// Runs forward and backward through `graph` and checks every parameter plus
// the input gradient.
GradCheckReport grad_check(ModuleGraph& graph, const Tensor& input, const OutputLoss& loss_fn,
                           const GradCheckOptions& options = {});

// Loss sum(output * weights) with fixed random weights: a generic probe whose
// output gradient is dense and O(1).
OutputLoss random_projection_loss(const Shape& output_dims, std::uint64_t seed);

}  // namespace occfeat::nn

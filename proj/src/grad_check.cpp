#include "occfeat/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace occfeat::nn {
namespace {

double finite_loss(const std::function<double()>& loss) {
  const double v = loss();
  if (!std::isfinite(v)) throw std::runtime_error("grad_check: loss is not finite");
  return v;
}

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t max_count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_count == 0 || n <= max_count) return idx;
  for (std::size_t i = 0; i < max_count; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(max_count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(std::span<Parameter* const> params, const std::function<double()>& loss,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  finite_loss(loss);
  Rng rng(options.seed);
  for (auto* p : params) {
    for (auto i : pick_indices(p->value.size(), options.max_per_param, rng)) {
      const double saved = p->value[i];
      p->value[i] = saved + options.h;
      const double up = finite_loss(loss);
      p->value[i] = saved - options.h;
      const double down = finite_loss(loss);
      p->value[i] = saved;

      const double numeric = (up - down) / (2.0 * options.h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (report.worst.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.passed = report.max_rel_error <= options.tol;
  return report;
}

GradCheckReport grad_check(ModuleGraph& graph, const Tensor& input, const OutputLoss& loss_fn,
                           const GradCheckOptions& options) {
  Parameter input_param("input", input.dims());
  input_param.value = input;

  graph.zero_grad();
  ModuleGraph::Tape tape;
  const Tensor out = graph.forward(input, tape);
  Tensor grad_out(out.dims());
  loss_fn(out, grad_out);
  input_param.grad = graph.backward(grad_out, tape);

  std::vector<Parameter*> params = graph.parameters();
  params.push_back(&input_param);
  auto loss = [&]() {
    ModuleGraph::Tape scratch;
    const Tensor o = graph.forward(input_param.value, scratch);
    Tensor g(o.dims());
    return loss_fn(o, g);
  };
  return grad_check(params, loss, options);
}

OutputLoss random_projection_loss(const Shape& output_dims, std::uint64_t seed) {
  auto weights = std::make_shared<Tensor>(output_dims);
  Rng rng(seed);
  for (double& v : weights->values()) v = rng.uniform(-1.0, 1.0);
  return [weights](const Tensor& out, Tensor& grad) {
    require_same_dims(out, *weights, "random_projection_loss");
    grad = *weights;
    return dot(out, *weights);
  };
}

}  // namespace occfeat::nn

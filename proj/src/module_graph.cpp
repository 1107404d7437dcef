#include "occfeat/module_graph.hpp"

#include <stdexcept>

namespace occfeat::nn {

void ModuleGraph::add(std::unique_ptr<Layer> layer) {
  layer->set_name_prefix(name_ + "." + std::to_string(layers_.size()));
  layers_.push_back(std::move(layer));
}

Tensor ModuleGraph::forward(const Tensor& x, Tape& tape) const {
  tape.assign(layers_.size(), LayerCache{});
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, tape[i]);
  return h;
}

Tensor ModuleGraph::backward(const Tensor& grad_out, const Tape& tape) {
  if (tape.size() != layers_.size()) {
    throw std::logic_error("ModuleGraph::backward on " + name_ + " without a matching forward");
  }
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, tape[i]);
  return g;
}

Tensor ModuleGraph::forward(const Tensor& x) { return forward(x, tape_); }

Tensor ModuleGraph::backward(const Tensor& grad_out) { return backward(grad_out, tape_); }

void ModuleGraph::initialize(Rng& rng) {
  for (auto& l : layers_) l->initialize(rng);
}

void ModuleGraph::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::vector<Parameter*> ModuleGraph::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (auto* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::size_t ModuleGraph::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

}  // namespace occfeat::nn

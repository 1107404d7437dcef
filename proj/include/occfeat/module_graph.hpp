#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "occfeat/layers.hpp"

namespace occfeat::nn {

// An ordered stack of layers with a forward/backward contract.
//
// forward(x, tape) records per-layer activations in `tape`; backward(g, tape)
// replays them in reverse, accumulating parameter gradients and returning the
// input gradient. Passing explicit tapes lets one graph be applied several
// times before a single backward sweep (shared weights across cameras). The
// tape-less overloads use an internal tape.
class ModuleGraph {
 public:
  using Tape = std::vector<LayerCache>;

  explicit ModuleGraph(std::string name = "graph") : name_(std::move(name)) {}

  ModuleGraph(ModuleGraph&&) = default;
  ModuleGraph& operator=(ModuleGraph&&) = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(layer));
    return ref;
  }
  void add(std::unique_ptr<Layer> layer);

  Tensor forward(const Tensor& x, Tape& tape) const;
  Tensor backward(const Tensor& grad_out, const Tape& tape);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);

  void initialize(Rng& rng);
  void zero_grad();
  std::vector<Parameter*> parameters();
  std::size_t parameter_count();

  const std::string& name() const { return name_; }
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }

 private:
  std::string name_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Tape tape_;
};

}  // namespace occfeat::nn

#pragma once

#include <map>
#include <string>
#include <vector>

#include "ppl/tensor.hpp"

namespace ppl {

/// A named trainable tensor. `lr_multiplier` scales the step for layers that
/// are added on top of a trained network (patch convolutions, classifier).
struct Parameter {
  std::string name;
  Tensor value;
  Real lr_multiplier = Real(1);
  bool new_layer = false;
};

struct OptimizerConfig {
  double lr_init = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double gamma = 0.9;  // poly exponent
  std::size_t max_iter = 1;
  double new_layer_lr_multiplier = 10.0;

  void validate() const;
};

/// lr_init · (1 − iter/max_iter)^gamma. Throws when iter > max_iter.
double poly_lr(std::size_t iter, const OptimizerConfig& cfg);

/// SGD with momentum and L2 weight decay:
///   v ← momentum·v + g + weight_decay·p;  p ← p − lr·mult·v
/// Parameters whose requires_grad flag is cleared are skipped entirely.
class Sgd {
 public:
  explicit Sgd(OptimizerConfig cfg);

  const OptimizerConfig& config() const { return cfg_; }

  /// One update at the poly-scheduled rate for `iter`.
  void step(const std::vector<Parameter*>& params, std::size_t iter);
  /// One update at an explicit base rate.
  void apply(const std::vector<Parameter*>& params, double lr);

  std::map<std::string, std::vector<Real>>& velocity() { return velocity_; }
  const std::map<std::string, std::vector<Real>>& velocity() const { return velocity_; }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, std::vector<Real>> velocity_;
};

}  // namespace ppl

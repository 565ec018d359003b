#include "ppl/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ppl {

void OptimizerConfig::validate() const {
  if (!(lr_init > 0)) throw std::invalid_argument("optimizer: lr_init must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("optimizer: momentum must be in [0,1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  if (!(gamma > 0)) throw std::invalid_argument("optimizer: gamma must be > 0");
  if (max_iter == 0) throw std::invalid_argument("optimizer: max_iter must be positive");
  if (!(new_layer_lr_multiplier > 0)) {
    throw std::invalid_argument("optimizer: new_layer_lr_multiplier must be > 0");
  }
}

double poly_lr(std::size_t iter, const OptimizerConfig& cfg) {
  if (iter > cfg.max_iter) {
    throw std::out_of_range("poly_lr: iteration " + std::to_string(iter) + " exceeds max_iter " +
                            std::to_string(cfg.max_iter));
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
  return cfg.lr_init * std::pow(frac, cfg.gamma);
}

Sgd::Sgd(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Sgd::step(const std::vector<Parameter*>& params, std::size_t iter) {
  apply(params, poly_lr(iter, cfg_));
}

void Sgd::apply(const std::vector<Parameter*>& params, double lr) {
  const auto momentum = static_cast<Real>(cfg_.momentum);
  const auto decay = static_cast<Real>(cfg_.weight_decay);
  for (Parameter* p : params) {
    if (!p->value.requires_grad()) continue;
    auto data = p->value.mutable_data();
    auto& v = velocity_[p->name];
    if (v.size() != data.size()) v.assign(data.size(), Real(0));
    const auto rate = static_cast<Real>(lr * p->lr_multiplier);
    const auto& g = p->value.impl().grad;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Real gi = g.empty() ? Real(0) : g[i];
      v[i] = momentum * v[i] + gi + decay * data[i];
      data[i] -= rate * v[i];
    }
  }
}

}  // namespace ppl

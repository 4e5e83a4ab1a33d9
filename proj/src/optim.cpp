#include "protoalign/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace protoalign {

double annealed_learning_rate(double lr0, double progress, double gamma, double power) {
  return lr0 * std::pow(1.0 + gamma * progress, -power);
}

double OptimizerState::learning_rate() const {
  return anneal ? annealed_learning_rate(lr0, progress, anneal_gamma, anneal_power) : lr0;
}

void sgd_step(std::span<const NamedParam> params, OptimizerState& state) {
  if (!(state.lr0 > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (!(state.momentum >= 0.0 && state.momentum < 1.0)) {
    throw std::invalid_argument("sgd_step: momentum must lie in [0, 1)");
  }
  if (state.buffers.empty()) {
    state.buffers.reserve(params.size());
    for (const auto& p : params) state.buffers.emplace_back(p.tensor->numel(), 0.0);
  }
  if (state.buffers.size() != params.size()) {
    throw std::invalid_argument("sgd_step: expected " + std::to_string(state.buffers.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (const auto& p : params) {
    if (!p.tensor->grad()) throw std::runtime_error("sgd_step: parameter '" + p.name + "' has no gradient");
  }
  const double lr = state.learning_rate();
  const double mu = state.momentum;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = *params[k].tensor;
    auto& buf = state.buffers[k];
    if (buf.size() != t.numel()) {
      throw ShapeError("sgd_step: momentum buffer size mismatch for '" + params[k].name + "'");
    }
    const auto& g = *t.grad();
    auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      buf[i] = mu * buf[i] + g[i];
      v[i] -= lr * buf[i];
    }
  }
}

}  // namespace protoalign

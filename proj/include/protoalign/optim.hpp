#pragma once

#include <span>
#include <string>
#include <vector>

#include "protoalign/tensor.hpp"

namespace protoalign {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

/// Heavy-ball momentum SGD with the inverse-power annealed learning rate
/// lr(p) = lr0 * (1 + anneal_gamma * p)^(-anneal_power).
struct OptimizerState {
  double lr0 = 0.01;
  double momentum = 0.9;
  double progress = 0.0;  // in [0, 1]
  bool anneal = true;
  double anneal_gamma = 10.0;
  double anneal_power = 0.75;
  std::vector<std::vector<double>> buffers;  // one per parameter, zero-initialized lazily

  double learning_rate() const;
};

double annealed_learning_rate(double lr0, double progress, double gamma = 10.0, double power = 0.75);

/// b <- mu * b + g;  theta <- theta - lr(p) * b.
/// Throws if a parameter has no gradient or the parameter list changes size.
void sgd_step(std::span<const NamedParam> params, OptimizerState& state);

}  // namespace protoalign

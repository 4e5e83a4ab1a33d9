#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoalign/autodiff.hpp"
#include "protoalign/graph.hpp"

namespace protoalign {

enum class Domain { Source, Target };

/// Per-class source-biased and target-biased prototypes smoothed across
/// iterations by an exponential moving average with coefficient rho.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(std::size_t classes, std::size_t dim, double rho = 0.7);

  std::size_t classes() const { return classes_; }
  std::size_t dim() const { return dim_; }
  double rho() const { return rho_; }

  const Tensor& prototypes(Domain d) const { return d == Domain::Source ? source_ : target_; }
  Tensor& prototypes(Domain d) { return d == Domain::Source ? source_ : target_; }
  const std::vector<bool>& initialized(Domain d) const {
    return d == Domain::Source ? source_ready_ : target_ready_;
  }
  std::vector<bool>& initialized(Domain d) { return d == Domain::Source ? source_ready_ : target_ready_; }
  std::size_t initialized_count(Domain d) const;

 private:
  std::size_t classes_ = 0;
  std::size_t dim_ = 0;
  double rho_ = 0.7;
  Tensor source_;
  Tensor target_;
  std::vector<bool> source_ready_;
  std::vector<bool> target_ready_;
};

struct ClassMeans {
  Tensor means;                     // classes x dim; rows of absent classes are zero
  std::vector<std::size_t> counts;  // 0 = class absent from the batch
};

/// Mean feature row per class over rows whose `trusted` flag is set (all rows
/// when `trusted` is empty).
ClassMeans batch_class_means(const Tensor& features, std::span<const Label> labels,
                             const std::vector<bool>& trusted, std::size_t classes);

/// First observation of a class initializes it; later ones blend
/// c <- rho * c + (1 - rho) * mean. Absent classes are left untouched.
void ema_update(PrototypeBank& bank, Domain domain, const ClassMeans& batch);

/// Prototypes of one domain as differentiable functions of this batch's
/// features: the historical term is a constant, gradients flow through the
/// (1 - rho) * mean term (or the full mean on first observation).
struct PrototypeVars {
  Var prototypes;               // classes x dim
  std::vector<bool> available;  // initialized after this iteration's update
};

PrototypeVars blend_prototypes(const PrototypeBank& bank, Domain domain, const Var& features,
                               std::span<const Label> labels, const std::vector<bool>& trusted);

/// Constant (non-differentiable) view of the bank.
PrototypeVars bank_prototypes(Tape& tape, const PrototypeBank& bank, Domain domain);

nlohmann::json to_json(const PrototypeBank& bank);
PrototypeBank prototype_bank_from_json(const nlohmann::json& j);

}  // namespace protoalign

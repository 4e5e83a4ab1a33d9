#include "protoalign/prototypes.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace protoalign {

PrototypeBank::PrototypeBank(std::size_t classes, std::size_t dim, double rho)
    : classes_(classes),
      dim_(dim),
      rho_(rho),
      source_(Tensor::zeros({classes, dim})),
      target_(Tensor::zeros({classes, dim})),
      source_ready_(classes, false),
      target_ready_(classes, false) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("PrototypeBank: rho must lie in [0, 1]");
}

std::size_t PrototypeBank::initialized_count(Domain d) const {
  const auto& ready = initialized(d);
  return static_cast<std::size_t>(std::count(ready.begin(), ready.end(), true));
}

namespace {

void check_labels(const Tensor& features, std::span<const Label> labels, const std::vector<bool>& trusted,
                  std::size_t classes) {
  if (features.rank() != 2 || labels.size() != features.rows()) {
    throw std::invalid_argument("batch_class_means: " + std::to_string(labels.size()) +
                                " labels for features of shape " + shape_to_string(features.shape()));
  }
  if (!trusted.empty() && trusted.size() != labels.size()) {
    throw std::invalid_argument("batch_class_means: trust mask length mismatch");
  }
  for (Label y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::out_of_range("batch_class_means: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
}

}  // namespace

ClassMeans batch_class_means(const Tensor& features, std::span<const Label> labels,
                             const std::vector<bool>& trusted, std::size_t classes) {
  check_labels(features, labels, trusted, classes);
  const std::size_t d = features.cols();
  ClassMeans out{Tensor::zeros({classes, d}), std::vector<std::size_t>(classes, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!trusted.empty() && !trusted[i]) continue;
    const auto k = static_cast<std::size_t>(labels[i]);
    ++out.counts[k];
    for (std::size_t j = 0; j < d; ++j) out.means.at(k, j) += features.at(i, j);
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (out.counts[k] == 0) continue;
    const double inv = 1.0 / static_cast<double>(out.counts[k]);
    for (std::size_t j = 0; j < d; ++j) out.means.at(k, j) *= inv;
  }
  return out;
}

void ema_update(PrototypeBank& bank, Domain domain, const ClassMeans& batch) {
  if (batch.means.rank() != 2 || batch.means.rows() != bank.classes() || batch.means.cols() != bank.dim()) {
    throw shape_error("ema_update", batch.means.shape(), bank.prototypes(domain).shape());
  }
  Tensor& protos = bank.prototypes(domain);
  auto& ready = bank.initialized(domain);
  const double rho = bank.rho();
  for (std::size_t k = 0; k < bank.classes(); ++k) {
    if (batch.counts[k] == 0) continue;
    for (std::size_t j = 0; j < bank.dim(); ++j) {
      const double mean = batch.means.at(k, j);
      protos.at(k, j) = ready[k] ? rho * protos.at(k, j) + (1.0 - rho) * mean : mean;
    }
    ready[k] = true;
  }
}

PrototypeVars blend_prototypes(const PrototypeBank& bank, Domain domain, const Var& features,
                               std::span<const Label> labels, const std::vector<bool>& trusted) {
  const std::size_t classes = bank.classes();
  check_labels(features.value(), labels, trusted, classes);
  if (features.cols() != bank.dim()) {
    throw shape_error("blend_prototypes", features.shape(), bank.prototypes(domain).shape());
  }
  const std::size_t n = labels.size();
  const std::size_t d = bank.dim();
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < n; ++i)
    if (trusted.empty() || trusted[i]) ++counts[static_cast<std::size_t>(labels[i])];

  Tensor averaging = Tensor::zeros({classes, n});
  for (std::size_t i = 0; i < n; ++i) {
    if (!trusted.empty() && !trusted[i]) continue;
    const auto k = static_cast<std::size_t>(labels[i]);
    averaging.at(k, i) = 1.0 / static_cast<double>(counts[k]);
  }

  const Tensor& prev = bank.prototypes(domain);
  const auto& ready = bank.initialized(domain);
  const double rho = bank.rho();
  Tensor history = Tensor::zeros({classes, d});
  Tensor fresh_weight = Tensor::zeros({classes, 1});
  PrototypeVars out;
  out.available.assign(classes, false);
  for (std::size_t k = 0; k < classes; ++k) {
    out.available[k] = ready[k] || counts[k] > 0;
    if (counts[k] == 0) {
      if (ready[k])
        for (std::size_t j = 0; j < d; ++j) history.at(k, j) = prev.at(k, j);
      continue;
    }
    if (ready[k]) {
      for (std::size_t j = 0; j < d; ++j) history.at(k, j) = rho * prev.at(k, j);
      fresh_weight.at(k, 0) = 1.0 - rho;
    } else {
      fresh_weight.at(k, 0) = 1.0;
    }
  }
  Tape& tape = *features.tape();
  Var means = matmul(tape.constant(std::move(averaging)), features);
  out.prototypes = add(tape.constant(std::move(history)),
                       scale_rows(means, tape.constant(std::move(fresh_weight))));
  return out;
}

PrototypeVars bank_prototypes(Tape& tape, const PrototypeBank& bank, Domain domain) {
  return PrototypeVars{tape.constant(bank.prototypes(domain)), bank.initialized(domain)};
}

nlohmann::json to_json(const PrototypeBank& bank) {
  return {{"classes", bank.classes()},
          {"dim", bank.dim()},
          {"rho", bank.rho()},
          {"source", bank.prototypes(Domain::Source).storage()},
          {"target", bank.prototypes(Domain::Target).storage()},
          {"source_initialized", bank.initialized(Domain::Source)},
          {"target_initialized", bank.initialized(Domain::Target)}};
}

PrototypeBank prototype_bank_from_json(const nlohmann::json& j) {
  PrototypeBank bank(j.at("classes").get<std::size_t>(), j.at("dim").get<std::size_t>(),
                     j.at("rho").get<double>());
  for (Domain d : {Domain::Source, Domain::Target}) {
    const bool src = d == Domain::Source;
    auto values = j.at(src ? "source" : "target").get<std::vector<double>>();
    auto ready = j.at(src ? "source_initialized" : "target_initialized").get<std::vector<bool>>();
    if (values.size() != bank.classes() * bank.dim() || ready.size() != bank.classes()) {
      throw std::runtime_error("prototype bank: inconsistent sizes in serialized record");
    }
    bank.prototypes(d) = Tensor({bank.classes(), bank.dim()}, std::move(values));
    bank.initialized(d) = std::move(ready);
  }
  return bank;
}

}  // namespace protoalign

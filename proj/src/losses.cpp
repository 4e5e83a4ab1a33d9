#include "protoalign/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace protoalign {

Var cross_entropy(const Var& logits, std::span<const Label> labels) {
  if (logits.shape().size() != 2) {
    throw ShapeError("cross_entropy: expected (n x C) logits, got " + shape_to_string(logits.shape()));
  }
  const std::size_t n = logits.rows(), classes = logits.cols();
  if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  }
  std::vector<std::size_t> picks(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    picks[i] = i * classes + static_cast<std::size_t>(labels[i]);
  }
  return scale(sum(log(select(softmax(logits), picks))), -1.0 / static_cast<double>(n));
}

BceResult bce_affinity(const Var& a_hat, const Tensor& t, std::span<const std::size_t> pair_indices) {
  if (a_hat.shape() != t.shape()) throw shape_error("bce_affinity", a_hat.shape(), t.shape());
  Tape& tape = *a_hat.tape();
  if (pair_indices.empty()) return {tape.constant(Tensor::scalar(0.0)), true};
  const std::size_t k = pair_indices.size();
  std::vector<double> target(k), complement(k);
  for (std::size_t r = 0; r < k; ++r) {
    target[r] = t[pair_indices[r]];
    complement[r] = 1.0 - target[r];
  }
  Var p = select(a_hat, pair_indices);
  Var log_p = log(p);
  Var log_not_p = log(add_scalar(scale(p, -1.0), 1.0));
  Var ll = add(mul(tape.constant(Tensor::vector(std::move(target))), log_p),
               mul(tape.constant(Tensor::vector(std::move(complement))), log_not_p));
  return {scale(sum(ll), -1.0 / static_cast<double>(k)), false};
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ShapeError("cosine_distance: length " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw std::domain_error("cosine_distance: zero vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  return 1.0 - cosine_similarity(u, v);
}

double pronce_anchor_term(double phi_pos, std::span<const double> phi_neg, std::span<const double> w_neg,
                          double tau) {
  if (phi_neg.empty() || phi_neg.size() != w_neg.size()) {
    throw std::invalid_argument("pronce_anchor_term: need matching, non-empty negative lists");
  }
  double mx = -INFINITY;
  for (std::size_t j = 0; j < phi_neg.size(); ++j) mx = std::max(mx, w_neg[j] * phi_neg[j] / tau);
  double z = 0.0;
  for (std::size_t j = 0; j < phi_neg.size(); ++j) z += std::exp(w_neg[j] * phi_neg[j] / tau - mx);
  return mx + std::log(z) - phi_pos / tau;
}

namespace {

/// Anchor/positive/negative index layout over the stacked available
/// prototypes (source rows first, then target rows).
struct PairLayout {
  std::vector<std::size_t> rows;     // stacked row (k for source, C + k for target) per slot
  std::vector<std::size_t> classes;  // class per slot
  std::vector<bool> is_source;
  struct Anchor {
    std::size_t slot;
    std::size_t positive;
    std::vector<std::size_t> negatives;
  };
  std::vector<Anchor> anchors;
  std::size_t shared_classes = 0;
};

PairLayout make_layout(const PrototypeVars& source, const PrototypeVars& target, NegativePolicy policy) {
  const std::size_t classes = source.available.size();
  if (target.available.size() != classes) {
    throw std::invalid_argument("prototype banks disagree on the number of classes");
  }
  PairLayout layout;
  std::vector<std::size_t> source_slot(classes, SIZE_MAX), target_slot(classes, SIZE_MAX);
  for (std::size_t k = 0; k < classes; ++k)
    if (source.available[k]) {
      source_slot[k] = layout.rows.size();
      layout.rows.push_back(k);
      layout.classes.push_back(k);
      layout.is_source.push_back(true);
    }
  for (std::size_t k = 0; k < classes; ++k)
    if (target.available[k]) {
      target_slot[k] = layout.rows.size();
      layout.rows.push_back(classes + k);
      layout.classes.push_back(k);
      layout.is_source.push_back(false);
    }
  for (std::size_t k = 0; k < classes; ++k)
    if (source.available[k] && target.available[k]) ++layout.shared_classes;

  for (std::size_t a = 0; a < layout.rows.size(); ++a) {
    const std::size_t k = layout.classes[a];
    const std::size_t pos = layout.is_source[a] ? target_slot[k] : source_slot[k];
    if (pos == SIZE_MAX) continue;
    PairLayout::Anchor anchor{a, pos, {}};
    for (std::size_t b = 0; b < layout.rows.size(); ++b) {
      if (layout.classes[b] == k) continue;
      if (policy == NegativePolicy::CrossOnly && layout.is_source[b] == layout.is_source[a]) continue;
      anchor.negatives.push_back(b);
    }
    if (!anchor.negatives.empty()) layout.anchors.push_back(std::move(anchor));
  }
  return layout;
}

/// Row-normalized stack of the available prototypes.
Var unit_rows(const PrototypeVars& source, const PrototypeVars& target, const PairLayout& layout) {
  Var stacked = gather_rows(concat_rows(source.prototypes, target.prototypes), layout.rows);
  const Tensor& v = stacked.value();
  for (std::size_t i = 0; i < v.rows(); ++i) {
    double nn = 0.0;
    for (std::size_t j = 0; j < v.cols(); ++j) nn += v.at(i, j) * v.at(i, j);
    if (nn == 0.0) throw std::domain_error("prototype contrast: zero prototype vector");
  }
  return scale_rows(stacked, pow(row_sum(mul(stacked, stacked)), -0.5));
}

ContrastResult skipped_result(const PrototypeVars& source) {
  return {source.prototypes.tape()->constant(Tensor::scalar(0.0)), true, 0};
}

}  // namespace

ContrastResult pronce(const PrototypeVars& source, const PrototypeVars& target, const ContrastOptions& options) {
  if (!(options.tau > 0.0)) throw std::invalid_argument("pronce: temperature must be positive");
  const PairLayout layout = make_layout(source, target, options.negatives);
  if (layout.shared_classes < 2 || layout.anchors.empty()) return skipped_result(source);

  Tape& tape = *source.prototypes.tape();
  Var units = unit_rows(source, target, layout);
  Var cosines = matmul(units, transpose(units));
  Var distances = add_scalar(scale(cosines, -1.0), 1.0);
  Var weights = options.differentiate_weights ? cosines : tape.constant(cosines.value());
  Var logits = scale(mul(weights, distances), 1.0 / options.tau);

  const std::size_t slots = layout.rows.size();
  Var total;
  bool first = true;
  for (const auto& anchor : layout.anchors) {
    std::vector<std::size_t> neg(anchor.negatives.size());
    for (std::size_t r = 0; r < neg.size(); ++r) neg[r] = anchor.slot * slots + anchor.negatives[r];
    const std::size_t pos[] = {anchor.slot * slots + anchor.positive};
    Var term = sub(logsumexp(select(logits, neg)), scale(sum(select(distances, pos)), 1.0 / options.tau));
    total = first ? term : add(total, term);
    first = false;
  }
  const double inv = -1.0 / static_cast<double>(layout.anchors.size());
  return {scale(total, inv), false, layout.anchors.size()};
}

ContrastResult infonce(const PrototypeVars& source, const PrototypeVars& target, const ContrastOptions& options) {
  if (!(options.tau > 0.0)) throw std::invalid_argument("infonce: temperature must be positive");
  const PairLayout layout = make_layout(source, target, options.negatives);
  if (layout.shared_classes < 2 || layout.anchors.empty()) return skipped_result(source);

  Var units = unit_rows(source, target, layout);
  Var logits = scale(matmul(units, transpose(units)), 1.0 / options.tau);
  const std::size_t slots = layout.rows.size();
  Var total;
  bool first = true;
  for (const auto& anchor : layout.anchors) {
    std::vector<std::size_t> all{anchor.slot * slots + anchor.positive};
    for (std::size_t b : anchor.negatives) all.push_back(anchor.slot * slots + b);
    const std::size_t pos[] = {all.front()};
    Var term = sub(logsumexp(select(logits, all)), sum(select(logits, pos)));
    total = first ? term : add(total, term);
    first = false;
  }
  return {scale(total, 1.0 / static_cast<double>(layout.anchors.size())), false, layout.anchors.size()};
}

ContrastResult sm_loss(const PrototypeVars& source, const PrototypeVars& target) {
  const std::size_t classes = source.available.size();
  if (target.available.size() != classes) {
    throw std::invalid_argument("sm_loss: prototype banks disagree on the number of classes");
  }
  std::vector<std::size_t> shared;
  for (std::size_t k = 0; k < classes; ++k)
    if (source.available[k] && target.available[k]) shared.push_back(k);
  if (shared.empty()) return skipped_result(source);

  auto unit = [](const Var& rows) {
    const Tensor& v = rows.value();
    for (std::size_t i = 0; i < v.rows(); ++i) {
      double nn = 0.0;
      for (std::size_t j = 0; j < v.cols(); ++j) nn += v.at(i, j) * v.at(i, j);
      if (nn == 0.0) throw std::domain_error("sm_loss: zero prototype vector");
    }
    return scale_rows(rows, pow(row_sum(mul(rows, rows)), -0.5));
  };
  Var s = unit(gather_rows(source.prototypes, shared));
  Var t = unit(gather_rows(target.prototypes, shared));
  const double m = static_cast<double>(shared.size());
  Var mean_cos = scale(sum(mul(s, t)), 1.0 / m);
  return {add_scalar(scale(mean_cos, -1.0), 1.0), false, shared.size()};
}

Var mi_loss(const Var& probs) {
  if (probs.shape().size() != 2) throw ShapeError("mi_loss: expected (m x C), got " + shape_to_string(probs.shape()));
  const std::size_t m = probs.rows(), classes = probs.cols();
  if (m == 0) throw std::invalid_argument("mi_loss: empty target batch");
  const Tensor& p = probs.value();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < classes; ++k) s += p.at(i, k);
    if (std::fabs(s - 1.0) > 1e-9) {
      throw std::invalid_argument("mi_loss: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  Var marginal = mean_rows(probs);
  Var marginal_term = sum(mul(marginal, log(marginal)));
  Var conditional_term = scale(sum(mul(probs, log(probs))), 1.0 / static_cast<double>(m));
  return sub(marginal_term, conditional_term);
}

double gamma_schedule(double progress, double alpha) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw std::invalid_argument("gamma_schedule: progress " + std::to_string(progress) + " outside [0, 1]");
  }
  return 2.0 / (1.0 + std::exp(-alpha * progress)) - 1.0;
}

LossBreakdown total_loss(const LossComponents& c, const LossWeights& w, double progress) {
  const std::pair<const char*, double> parts[] = {
      {"ce", c.ce}, {"ce_gcn", c.ce_gcn}, {"bce", c.bce}, {"mi", c.mi}, {"pronce", c.pronce}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw std::domain_error(std::string("total_loss: non-finite component ") + name);
  LossBreakdown b;
  b.ce = c.ce;
  b.ce_gcn = c.ce_gcn;
  b.bce = c.bce;
  b.mi = c.mi;
  b.pronce = c.pronce;
  b.gamma = gamma_schedule(progress, w.alpha);
  b.total = c.ce + w.lambda_gcn * c.ce_gcn + w.lambda_bce * c.bce + w.lambda_mi * c.mi + b.gamma * c.pronce;
  return b;
}

}  // namespace protoalign
